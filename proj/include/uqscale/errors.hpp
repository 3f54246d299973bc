#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uqscale {

enum class ErrorCode {
  DimensionMismatch,
  NotPositiveDefinite,
  InvalidWeights,
  InvalidCount,
  InvalidSimplex,
  EmptyEnsemble,
  SingleMember,
  NonPositiveVariance,
  EmptyList,
  InvalidRate,
  DivergedLoss,
  ParameterCapExceeded,
  InvalidSampleCount,
  WrongHeadSize,
  NonFiniteGradient,
  ZeroAcceptance,
  NonPositiveValue,
  DegenerateAbscissa,
  InvalidArgument,
  ConfigError,
  SchemaError,
  IoError,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::DimensionMismatch: return "DimensionMismatch";
    case ErrorCode::NotPositiveDefinite: return "NotPositiveDefinite";
    case ErrorCode::InvalidWeights: return "InvalidWeights";
    case ErrorCode::InvalidCount: return "InvalidCount";
    case ErrorCode::InvalidSimplex: return "InvalidSimplex";
    case ErrorCode::EmptyEnsemble: return "EmptyEnsemble";
    case ErrorCode::SingleMember: return "SingleMember";
    case ErrorCode::NonPositiveVariance: return "NonPositiveVariance";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::InvalidRate: return "InvalidRate";
    case ErrorCode::DivergedLoss: return "DivergedLoss";
    case ErrorCode::ParameterCapExceeded: return "ParameterCapExceeded";
    case ErrorCode::InvalidSampleCount: return "InvalidSampleCount";
    case ErrorCode::WrongHeadSize: return "WrongHeadSize";
    case ErrorCode::NonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::ZeroAcceptance: return "ZeroAcceptance";
    case ErrorCode::NonPositiveValue: return "NonPositiveValue";
    case ErrorCode::DegenerateAbscissa: return "DegenerateAbscissa";
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::ConfigError: return "ConfigError";
    case ErrorCode::SchemaError: return "SchemaError";
    case ErrorCode::IoError: return "IoError";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` identifies the failure.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(std::string(to_string(code)) + ": " + what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

inline void require(bool cond, ErrorCode code, const std::string& what) {
  if (!cond) fail(code, what);
}

}  // namespace uqscale
