#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace safeguard {

enum class ErrorCode {
  // lexicon_scorer
  UnknownCategory,
  EmptyPattern,
  DuplicateEntry,
  MalformedLine,
  EmptyCorpus,
  EmptyList,
  // persona_gate
  ResponderUnavailable,
  ResponderMisbehaved,
  InsufficientHistories,
  LexiconMissing,
  InvalidPolicy,
  InvalidPersona,
  InvalidHistory,
  InvalidTransition,
  // image_gate
  EmptyImage,
  ExternalClassifierFailure,
  // audit_trace
  StorageFailure,
  UnknownTarget,
  NotBotTurn,
  InvalidRating,
  PersonaMismatch,
  // safety_reporting
  InvalidWindow,
  UnsupportedFormat,
  InvalidDate,
  // shared
  ParseError,
  IoError,
  InvalidConfig,
};

std::string_view to_string(ErrorCode code);

/// Exception carrying a machine-readable code; what() is "<code>: <detail>".
class Error : public std::runtime_error {
 public:
  Error(ErrorCode code, const std::string& detail);

  ErrorCode code() const noexcept { return code_; }
  const std::string& detail() const noexcept { return detail_; }

 private:
  ErrorCode code_;
  std::string detail_;
};

}  // namespace safeguard
