#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace screenkit {

enum class ErrorCode {
  InvalidArgument,
  Io,
  ConfigValidation,
  UnknownSubcommand,
  // corpus
  MissingTitleColumn,
  DuplicateRecordId,
  EmptyCorpus,
  LabelConflict,
  // prompts
  EmptyCriteria,
  AlreadyBiased,
  TokenCollision,
  // batch engine
  RunDirLocked,
  ProviderAuthError,
  CorruptLedger,
  UnknownModelPrice,
  // adjudication
  MissingDecisionLine,
  MissingConfidenceLine,
  UnknownDecisionToken,
  ConfidenceOutOfRange,
  MixedRecordIds,
  MissingCriticDecision,
  // evaluation
  NoLabeledRecords,
  EmptyTargetSet,
  DegenerateLabels,
  // diagnostics
  EmptySample,
  DegenerateMargins,
  ClientUnreachable,
};

std::string_view to_string(ErrorCode code) noexcept;

// Validation errors are caused by bad input; everything else is a runtime failure.
bool is_validation_error(ErrorCode code) noexcept;

class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& message)
      : std::runtime_error(message), code_(code) {}

  ErrorCode code() const noexcept { return code_; }

 private:
  ErrorCode code_;
};

[[noreturn]] inline void fail(ErrorCode code, const std::string& message) {
  throw Error(code, std::string(to_string(code)) + ": " + message);
}

}  // namespace screenkit
