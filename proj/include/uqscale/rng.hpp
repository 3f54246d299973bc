#pragma once

// Counter-based random streams (Philox4x32-10). A stream is fully determined
// by (seed, stream_id, position), so streams can be split without shared state
// and a stream can be saved and resumed exactly.

#include <array>
#include <cmath>
#include <cstdint>
#include <numbers>
#include <span>
#include <sstream>
#include <string>

#include "uqscale/errors.hpp"

namespace uqscale {

namespace detail {

inline std::array<std::uint32_t, 4> philox4x32_10(std::array<std::uint32_t, 4> ctr,
                                                  std::array<std::uint32_t, 2> key) {
  constexpr std::uint32_t kMul0 = 0xD2511F53u;
  constexpr std::uint32_t kMul1 = 0xCD9E8D57u;
  constexpr std::uint32_t kWeyl0 = 0x9E3779B9u;
  constexpr std::uint32_t kWeyl1 = 0xBB67AE85u;
  for (int round = 0; round < 10; ++round) {
    const std::uint64_t p0 = static_cast<std::uint64_t>(kMul0) * ctr[0];
    const std::uint64_t p1 = static_cast<std::uint64_t>(kMul1) * ctr[2];
    const auto hi0 = static_cast<std::uint32_t>(p0 >> 32);
    const auto lo0 = static_cast<std::uint32_t>(p0);
    const auto hi1 = static_cast<std::uint32_t>(p1 >> 32);
    const auto lo1 = static_cast<std::uint32_t>(p1);
    ctr = {hi1 ^ ctr[1] ^ key[0], lo1, hi0 ^ ctr[3] ^ key[1], lo0};
    key[0] += kWeyl0;
    key[1] += kWeyl1;
  }
  return ctr;
}

}  // namespace detail

/// Serializable position of an RngStream.
struct RngState {
  std::uint64_t seed = 0;
  std::uint64_t stream_id = 0;
  std::uint64_t counter = 0;  // next Philox block to generate
  std::uint32_t index = 2;    // consumed words of the current block (2 == empty)

  friend bool operator==(const RngState&, const RngState&) = default;
};

class RngStream {
 public:
  RngStream(std::uint64_t seed, std::uint64_t stream_id) {
    state_.seed = seed;
    state_.stream_id = stream_id;
  }

  explicit RngStream(const RngState& state) : state_(state) {
    require(state_.index <= 2, ErrorCode::InvalidArgument, "RngState index out of range");
    if (state_.index < 2) {
      // Regenerate the partially consumed block.
      --state_.counter;
      refill();
      state_.index = state.index;
    }
  }

  std::uint64_t seed() const { return state_.seed; }
  std::uint64_t stream_id() const { return state_.stream_id; }
  const RngState& state() const { return state_; }

  /// A fresh stream sharing this seed; stream ids are caller-assigned.
  RngStream split(std::uint64_t stream_id) const { return RngStream(state_.seed, stream_id); }

  std::uint64_t next_u64() {
    if (state_.index >= 2) refill();
    return block_[state_.index++];
  }

  /// Uniform on [0, 1) with 53 random bits.
  double uniform01() { return static_cast<double>(next_u64() >> 11) * 0x1.0p-53; }

  /// Uniform on (0, 1]; safe as a log argument.
  double uniform_open0() { return (static_cast<double>(next_u64() >> 11) + 1.0) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform01(); }

  /// Box-Muller; consumes exactly two words per draw.
  double standard_normal() {
    const double u1 = uniform_open0();
    const double u2 = uniform01();
    return std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * std::numbers::pi * u2);
  }

  std::size_t categorical(std::span<const double> weights) {
    double total = 0.0;
    for (double w : weights) {
      require(w >= 0.0 && std::isfinite(w), ErrorCode::InvalidWeights,
              "categorical weights must be finite and nonnegative");
      total += w;
    }
    require(total > 0.0, ErrorCode::InvalidWeights, "categorical weights sum to zero");
    const double u = uniform01() * total;
    double acc = 0.0;
    std::size_t last_positive = 0;
    for (std::size_t i = 0; i < weights.size(); ++i) {
      if (weights[i] <= 0.0) continue;
      last_positive = i;
      acc += weights[i];
      if (u < acc) return i;
    }
    return last_positive;
  }

  std::string serialize() const {
    std::ostringstream os;
    os << state_.seed << ' ' << state_.stream_id << ' ' << state_.counter << ' ' << state_.index;
    return os.str();
  }

  static RngStream deserialize(const std::string& text) {
    std::istringstream is(text);
    RngState s;
    is >> s.seed >> s.stream_id >> s.counter >> s.index;
    require(!is.fail(), ErrorCode::InvalidArgument, "malformed RngStream state");
    return RngStream(s);
  }

 private:
  void refill() {
    const std::array<std::uint32_t, 4> ctr{
        static_cast<std::uint32_t>(state_.counter), static_cast<std::uint32_t>(state_.counter >> 32),
        static_cast<std::uint32_t>(state_.stream_id),
        static_cast<std::uint32_t>(state_.stream_id >> 32)};
    const std::array<std::uint32_t, 2> key{static_cast<std::uint32_t>(state_.seed),
                                           static_cast<std::uint32_t>(state_.seed >> 32)};
    const auto out = detail::philox4x32_10(ctr, key);
    block_[0] = (static_cast<std::uint64_t>(out[0]) << 32) | out[1];
    block_[1] = (static_cast<std::uint64_t>(out[2]) << 32) | out[3];
    ++state_.counter;
    state_.index = 0;
  }

  RngState state_;
  std::array<std::uint64_t, 2> block_{};
};

}  // namespace uqscale
