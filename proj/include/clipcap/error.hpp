#pragma once

#include <stdexcept>
#include <string>
#include <string_view>

namespace clipcap {

enum class Errc {
  EmptyCorpus,
  NoReferences,
  MissingReference,
  MissingInput,
  NonPositiveDuration,
  InvalidArgument,
  EmptyFeatureList,
  VocabMismatch,
  InvalidDistribution,
  EmptyCandidateSet,
  EmptyPool,
  VideoIdMismatch,
  ShapeMismatch,
  EmptyDataset,
  EmptyBatch,
  ParseError,
  DuplicateVideoId,
  BadMagic,
  TruncatedFile,
  NonFiniteValue,
  DistributionNotNormalized,
  IoError,
};

inline std::string_view errc_name(Errc c) {
  switch (c) {
    case Errc::EmptyCorpus: return "EmptyCorpus";
    case Errc::NoReferences: return "NoReferences";
    case Errc::MissingReference: return "MissingReference";
    case Errc::MissingInput: return "MissingInput";
    case Errc::NonPositiveDuration: return "NonPositiveDuration";
    case Errc::InvalidArgument: return "InvalidArgument";
    case Errc::EmptyFeatureList: return "EmptyFeatureList";
    case Errc::VocabMismatch: return "VocabMismatch";
    case Errc::InvalidDistribution: return "InvalidDistribution";
    case Errc::EmptyCandidateSet: return "EmptyCandidateSet";
    case Errc::EmptyPool: return "EmptyPool";
    case Errc::VideoIdMismatch: return "VideoIdMismatch";
    case Errc::ShapeMismatch: return "ShapeMismatch";
    case Errc::EmptyDataset: return "EmptyDataset";
    case Errc::EmptyBatch: return "EmptyBatch";
    case Errc::ParseError: return "ParseError";
    case Errc::DuplicateVideoId: return "DuplicateVideoId";
    case Errc::BadMagic: return "BadMagic";
    case Errc::TruncatedFile: return "TruncatedFile";
    case Errc::NonFiniteValue: return "NonFiniteValue";
    case Errc::DistributionNotNormalized: return "DistributionNotNormalized";
    case Errc::IoError: return "IoError";
  }
  return "Unknown";
}

/// Single exception type for the library; `code()` identifies the failure.
/// `line()` is the 1-based input line for text-format errors, 0 otherwise.
class Error : public std::runtime_error {
 public:
  Error(Errc code, const std::string& what, std::size_t line = 0)
      : std::runtime_error(std::string(errc_name(code)) + ": " + what),
        code_(code),
        line_(line) {}

  Errc code() const noexcept { return code_; }
  std::size_t line() const noexcept { return line_; }

 private:
  Errc code_;
  std::size_t line_;
};

}  // namespace clipcap
