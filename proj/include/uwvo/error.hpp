#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace uwvo {

enum class ErrorCode {
  kBehindCamera,
  kLowParallax,
  kCheirality,
  kDegenerateConfiguration,
  kAmbiguousDecomposition,
  kInsufficientData,
  kEstimationFailure,
  kRefinementFailure,
  kNumeric,
  kPrecondition,
  kImageTooSmall,
  kAssociation,
  kInvalidWindow,
  kDimensionMismatch,
  kValidation,
  kIo,
};

std::string_view to_string(ErrorCode code);

/// All library failures are reported through this exception; `code()` lets
/// callers branch without string matching.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& what)
      : std::runtime_error(what), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& what) {
  throw Error(code, what);
}

}  // namespace uwvo
