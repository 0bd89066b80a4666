#include "hierolm/error.hpp"

namespace hierolm {

std::string_view error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kEmptyLine: return "EmptyLine";
    case ErrorCode::kTooFewSentences: return "TooFewSentences";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kAllMasked: return "AllMasked";
    case ErrorCode::kSequenceTooShort: return "SequenceTooShort";
    case ErrorCode::kCacheMismatch: return "CacheMismatch";
    case ErrorCode::kKOutOfRange: return "KOutOfRange";
    case ErrorCode::kNonFiniteGradient: return "NonFiniteGradient";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kTruncatedFile: return "TruncatedFile";
    case ErrorCode::kChecksumMismatch: return "ChecksumMismatch";
    case ErrorCode::kEmptySplit: return "EmptySplit";
    case ErrorCode::kDegenerateRank: return "DegenerateRank";
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kIoError: return "IoError";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& message)
    : std::runtime_error(std::string(error_code_name(code)) + ": " + message), code_(code) {}

}  // namespace hierolm
