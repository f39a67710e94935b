#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace him {

enum class ErrorCode {
  // record validation
  kMissingField,
  kBadCoordinate,
  kEmptyTrajectory,
  kKindFieldMismatch,
  kUnknownKind,
  kBadLabel,
  kDuplicateRecord,
  // history splitting
  kTooFewRecords,
  kUnsortedInput,
  // text
  kEmptyText,
  kDimensionMismatch,
  kProviderUnavailable,
  kBadResponseShape,
  kDimensionDrift,
  // scoring
  kEmptyHistory,
  kEmptyTopK,
  kTooFewScenes,
  kTooFewScores,
  kDegenerateScores,
  kUnfittedMixture,
  // memory
  kUserMismatch,
  kOutOfOrderDay,
  kMixedUsers,
  kMissingMemberData,
  kEmptyPrototype,
  // evaluation
  kBadGamma,
  kNoPositives,
  kNoNegatives,
  kBadConfig,
  // storage
  kIoFailure,
  kParseError,
  kValidationError,
  kVersionMismatch,
  kProviderMismatch,
};

std::string_view to_string(ErrorCode code);

// Every failure in the library surfaces as this exception. `line` is set for
// errors raised while reading line-oriented files (1-based).
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message,
        std::optional<std::size_t> line = std::nullopt);

  ErrorCode code() const noexcept { return code_; }
  std::optional<std::size_t> line() const noexcept { return line_; }

 private:
  ErrorCode code_;
  std::optional<std::size_t> line_;
};

}  // namespace him
