#pragma once

#include <stdexcept>
#include <string>
#include <utility>

namespace aoip {

// Every failure the library can signal.  Callers branch on kind(); the
// message is for humans and logs.
enum class Err {
  MissingFlag,
  MalformedValue,
  DuplicateFlag,
  NonPositive,
  BadStorageUrl,
  BadScheme,
  EmptyBucket,
  NotFound,
  NotRiff,
  UnsupportedEncoding,
  FrameTooLarge,
  MixedStreams,
  IoFailure,
  Timeout,
  Refused,
  CallNotEstablished,
  ResolutionFailure,
  DuplicateKey,
  DuplicateGroup,
  QuotaExceeded,
  ConnectTimeout,
  UnknownCorpus,
  NoSource,
  EmptySource,
  MissingCleanPair,
  FileUnreadable,
  LengthMismatch,
  FaultInjected,
};

inline const char* to_string(Err e) {
  switch (e) {
    case Err::MissingFlag: return "MissingFlag";
    case Err::MalformedValue: return "MalformedValue";
    case Err::DuplicateFlag: return "DuplicateFlag";
    case Err::NonPositive: return "NonPositive";
    case Err::BadStorageUrl: return "BadStorageUrl";
    case Err::BadScheme: return "BadScheme";
    case Err::EmptyBucket: return "EmptyBucket";
    case Err::NotFound: return "NotFound";
    case Err::NotRiff: return "NotRiff";
    case Err::UnsupportedEncoding: return "UnsupportedEncoding";
    case Err::FrameTooLarge: return "FrameTooLarge";
    case Err::MixedStreams: return "MixedStreams";
    case Err::IoFailure: return "IoFailure";
    case Err::Timeout: return "Timeout";
    case Err::Refused: return "Refused";
    case Err::CallNotEstablished: return "CallNotEstablished";
    case Err::ResolutionFailure: return "ResolutionFailure";
    case Err::DuplicateKey: return "DuplicateKey";
    case Err::DuplicateGroup: return "DuplicateGroup";
    case Err::QuotaExceeded: return "QuotaExceeded";
    case Err::ConnectTimeout: return "ConnectTimeout";
    case Err::UnknownCorpus: return "UnknownCorpus";
    case Err::NoSource: return "NoSource";
    case Err::EmptySource: return "EmptySource";
    case Err::MissingCleanPair: return "MissingCleanPair";
    case Err::FileUnreadable: return "FileUnreadable";
    case Err::LengthMismatch: return "LengthMismatch";
    case Err::FaultInjected: return "FaultInjected";
  }
  return "Unknown";
}

class Error : public std::runtime_error {
 public:
  Error(Err kind, std::string detail)
      : std::runtime_error(std::string(to_string(kind)) +
                           (detail.empty() ? "" : ": " + detail)),
        kind_(kind),
        detail_(std::move(detail)) {}

  Err kind() const { return kind_; }
  const std::string& detail() const { return detail_; }

 private:
  Err kind_;
  std::string detail_;
};

[[noreturn]] inline void fail(Err kind, std::string detail = "") {
  throw Error(kind, std::move(detail));
}

}  // namespace aoip
