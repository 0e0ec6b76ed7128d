#ifndef RELXFORGE_ERROR_HPP_
#define RELXFORGE_ERROR_HPP_

#include <stdexcept>
#include <string>
#include <string_view>

namespace relxforge {

enum class ErrorCode {
  kInvalidArgument,
  kIOError,
  kConfigError,
  kUnbalancedMarkup,
  kCyclicMergeMap,
  kMalformedRecord,
  kExhausted,
  kCorpusTooSmall,
  kSpansTooWide,
  kShapeMismatch,
  kNotScalarLoss,
  kSequenceTooLong,
  kTokenOutOfRange,
  kNoMaskedPositions,
  kSchemaMismatch,
  kBadMagic,
  kVersionMismatch,
  kChecksumFail,
  kLengthMismatch,
  kSizeTooLarge,
  kEmptyDataset,
};

constexpr std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "InvalidArgument";
    case ErrorCode::kIOError: return "IOError";
    case ErrorCode::kConfigError: return "ConfigError";
    case ErrorCode::kUnbalancedMarkup: return "UnbalancedMarkup";
    case ErrorCode::kCyclicMergeMap: return "CyclicMergeMap";
    case ErrorCode::kMalformedRecord: return "MalformedRecord";
    case ErrorCode::kExhausted: return "Exhausted";
    case ErrorCode::kCorpusTooSmall: return "CorpusTooSmall";
    case ErrorCode::kSpansTooWide: return "SpansTooWide";
    case ErrorCode::kShapeMismatch: return "ShapeMismatch";
    case ErrorCode::kNotScalarLoss: return "NotScalarLoss";
    case ErrorCode::kSequenceTooLong: return "SequenceTooLong";
    case ErrorCode::kTokenOutOfRange: return "TokenOutOfRange";
    case ErrorCode::kNoMaskedPositions: return "NoMaskedPositions";
    case ErrorCode::kSchemaMismatch: return "SchemaMismatch";
    case ErrorCode::kBadMagic: return "BadMagic";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kChecksumFail: return "ChecksumFail";
    case ErrorCode::kLengthMismatch: return "LengthMismatch";
    case ErrorCode::kSizeTooLarge: return "SizeTooLarge";
    case ErrorCode::kEmptyDataset: return "EmptyDataset";
  }
  return "Unknown";
}

// All library failures surface as this exception; the code identifies the
// failure class, the message carries the detail.
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(std::string(to_string(code)) + ": " + message),
        code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

}  // namespace relxforge

#endif  // RELXFORGE_ERROR_HPP_
