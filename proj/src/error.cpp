#include "him/error.hpp"

namespace him {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::kMissingField: return "MissingField";
    case ErrorCode::kBadCoordinate: return "BadCoordinate";
    case ErrorCode::kEmptyTrajectory: return "EmptyTrajectory";
    case ErrorCode::kKindFieldMismatch: return "KindFieldMismatch";
    case ErrorCode::kUnknownKind: return "UnknownKind";
    case ErrorCode::kBadLabel: return "BadLabel";
    case ErrorCode::kDuplicateRecord: return "DuplicateRecord";
    case ErrorCode::kTooFewRecords: return "TooFewRecords";
    case ErrorCode::kUnsortedInput: return "UnsortedInput";
    case ErrorCode::kEmptyText: return "EmptyText";
    case ErrorCode::kDimensionMismatch: return "DimensionMismatch";
    case ErrorCode::kProviderUnavailable: return "ProviderUnavailable";
    case ErrorCode::kBadResponseShape: return "BadResponseShape";
    case ErrorCode::kDimensionDrift: return "DimensionDrift";
    case ErrorCode::kEmptyHistory: return "EmptyHistory";
    case ErrorCode::kEmptyTopK: return "EmptyTopK";
    case ErrorCode::kTooFewScenes: return "TooFewScenes";
    case ErrorCode::kTooFewScores: return "TooFewScores";
    case ErrorCode::kDegenerateScores: return "DegenerateScores";
    case ErrorCode::kUnfittedMixture: return "UnfittedMixture";
    case ErrorCode::kUserMismatch: return "UserMismatch";
    case ErrorCode::kOutOfOrderDay: return "OutOfOrderDay";
    case ErrorCode::kMixedUsers: return "MixedUsers";
    case ErrorCode::kMissingMemberData: return "MissingMemberData";
    case ErrorCode::kEmptyPrototype: return "EmptyPrototype";
    case ErrorCode::kBadGamma: return "BadGamma";
    case ErrorCode::kNoPositives: return "NoPositives";
    case ErrorCode::kNoNegatives: return "NoNegatives";
    case ErrorCode::kBadConfig: return "BadConfig";
    case ErrorCode::kIoFailure: return "IoFailure";
    case ErrorCode::kParseError: return "ParseError";
    case ErrorCode::kValidationError: return "ValidationError";
    case ErrorCode::kVersionMismatch: return "VersionMismatch";
    case ErrorCode::kProviderMismatch: return "ProviderMismatch";
  }
  return "Unknown";
}

namespace {

std::string format_message(ErrorCode code, const std::string& message,
                           std::optional<std::size_t> line) {
  std::string out(to_string(code));
  if (line) out += " (line " + std::to_string(*line) + ")";
  if (!message.empty()) out += ": " + message;
  return out;
}

}  // namespace

Error::Error(ErrorCode code, const std::string& message,
             std::optional<std::size_t> line)
    : std::runtime_error(format_message(code, message, line)),
      code_(code),
      line_(line) {}

}  // namespace him
