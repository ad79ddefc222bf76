#include "screenkit/error.hpp"

namespace screenkit {

std::string_view to_string(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::InvalidArgument: return "InvalidArgument";
    case ErrorCode::Io: return "Io";
    case ErrorCode::ConfigValidation: return "ConfigValidation";
    case ErrorCode::UnknownSubcommand: return "UnknownSubcommand";
    case ErrorCode::MissingTitleColumn: return "MissingTitleColumn";
    case ErrorCode::DuplicateRecordId: return "DuplicateRecordId";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::LabelConflict: return "LabelConflict";
    case ErrorCode::EmptyCriteria: return "EmptyCriteria";
    case ErrorCode::AlreadyBiased: return "AlreadyBiased";
    case ErrorCode::TokenCollision: return "TokenCollision";
    case ErrorCode::RunDirLocked: return "RunDirLocked";
    case ErrorCode::ProviderAuthError: return "ProviderAuthError";
    case ErrorCode::CorruptLedger: return "CorruptLedger";
    case ErrorCode::UnknownModelPrice: return "UnknownModelPrice";
    case ErrorCode::MissingDecisionLine: return "MissingDecisionLine";
    case ErrorCode::MissingConfidenceLine: return "MissingConfidenceLine";
    case ErrorCode::UnknownDecisionToken: return "UnknownDecisionToken";
    case ErrorCode::ConfidenceOutOfRange: return "ConfidenceOutOfRange";
    case ErrorCode::MixedRecordIds: return "MixedRecordIds";
    case ErrorCode::MissingCriticDecision: return "MissingCriticDecision";
    case ErrorCode::NoLabeledRecords: return "NoLabeledRecords";
    case ErrorCode::EmptyTargetSet: return "EmptyTargetSet";
    case ErrorCode::DegenerateLabels: return "DegenerateLabels";
    case ErrorCode::EmptySample: return "EmptySample";
    case ErrorCode::DegenerateMargins: return "DegenerateMargins";
    case ErrorCode::ClientUnreachable: return "ClientUnreachable";
  }
  return "Unknown";
}

bool is_validation_error(ErrorCode code) noexcept {
  switch (code) {
    case ErrorCode::Io:
    case ErrorCode::RunDirLocked:
    case ErrorCode::ProviderAuthError:
    case ErrorCode::CorruptLedger:
    case ErrorCode::ClientUnreachable:
      return false;
    default:
      return true;
  }
}

}  // namespace screenkit
