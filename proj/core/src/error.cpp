#include "safeguard/error.hpp"

namespace safeguard {

std::string_view to_string(ErrorCode code) {
  switch (code) {
    case ErrorCode::UnknownCategory: return "UnknownCategory";
    case ErrorCode::EmptyPattern: return "EmptyPattern";
    case ErrorCode::DuplicateEntry: return "DuplicateEntry";
    case ErrorCode::MalformedLine: return "MalformedLine";
    case ErrorCode::EmptyCorpus: return "EmptyCorpus";
    case ErrorCode::EmptyList: return "EmptyList";
    case ErrorCode::ResponderUnavailable: return "ResponderUnavailable";
    case ErrorCode::ResponderMisbehaved: return "ResponderMisbehaved";
    case ErrorCode::InsufficientHistories: return "InsufficientHistories";
    case ErrorCode::LexiconMissing: return "LexiconMissing";
    case ErrorCode::InvalidPolicy: return "InvalidPolicy";
    case ErrorCode::InvalidPersona: return "InvalidPersona";
    case ErrorCode::InvalidHistory: return "InvalidHistory";
    case ErrorCode::InvalidTransition: return "InvalidTransition";
    case ErrorCode::EmptyImage: return "EmptyImage";
    case ErrorCode::ExternalClassifierFailure: return "ExternalClassifierFailure";
    case ErrorCode::StorageFailure: return "StorageFailure";
    case ErrorCode::UnknownTarget: return "UnknownTarget";
    case ErrorCode::NotBotTurn: return "NotBotTurn";
    case ErrorCode::InvalidRating: return "InvalidRating";
    case ErrorCode::PersonaMismatch: return "PersonaMismatch";
    case ErrorCode::InvalidWindow: return "InvalidWindow";
    case ErrorCode::UnsupportedFormat: return "UnsupportedFormat";
    case ErrorCode::InvalidDate: return "InvalidDate";
    case ErrorCode::ParseError: return "ParseError";
    case ErrorCode::IoError: return "IoError";
    case ErrorCode::InvalidConfig: return "InvalidConfig";
  }
  return "Unknown";
}

Error::Error(ErrorCode code, const std::string& detail)
    : std::runtime_error(std::string(to_string(code)) + ": " + detail),
      code_(code),
      detail_(detail) {}

}  // namespace safeguard
