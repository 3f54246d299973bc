#pragma once

#if defined(__GLIBC__)
#include <malloc.h>
#endif

namespace uqscale {

/// Keeps large temporaries on the heap instead of fresh mmap regions. The
/// batched network passes allocate multi-megabyte matrices per call, and
/// page-faulting them in dominates runtime otherwise.
inline void tune_allocator() {
#if defined(__GLIBC__)
  mallopt(M_MMAP_THRESHOLD, 1 << 30);
  mallopt(M_TRIM_THRESHOLD, 1 << 30);
#endif
}

}  // namespace uqscale
