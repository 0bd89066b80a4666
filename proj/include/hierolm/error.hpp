#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace hierolm {

enum class ErrorCode {
  kEmptyLine,
  kTooFewSentences,
  kShapeMismatch,
  kAllMasked,
  kSequenceTooShort,
  kCacheMismatch,
  kKOutOfRange,
  kNonFiniteGradient,
  kBadMagic,
  kVersionMismatch,
  kTruncatedFile,
  kChecksumMismatch,
  kEmptySplit,
  kDegenerateRank,
  kInvalidArgument,
  kParseError,
  kIoError,
};

/// Stable CamelCase name of an error code, e.g. "ChecksumMismatch".
std::string_view error_code_name(ErrorCode code);

/// Every recoverable failure in the library is reported as an Error carrying
/// a machine-readable code.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message);

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace hierolm
