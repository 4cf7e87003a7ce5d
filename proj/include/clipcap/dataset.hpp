#pragma once

// A captioning dataset on disk and its conversion to training inputs.
//
//   <dir>/refs.jsonl                       reference records
//   <dir>/subtitles.jsonl                  hypothesis records; the caption is the subtitle
//   <dir>/features/<extractor>/<id>.cff    one CFF1 file per video and extractor
//
// Extractors are fused in lexicographic order of their directory names.

#include <algorithm>
#include <filesystem>
#include <map>
#include <set>
#include <span>
#include <string>
#include <vector>

#include "clipcap/corpus_io.hpp"
#include "clipcap/feature_pipeline.hpp"
#include "clipcap/rng.hpp"
#include "clipcap/text_metrics.hpp"
#include "clipcap/toy_captioner.hpp"

namespace clipcap {

struct VideoRecord {
  std::string video_id;
  std::vector<FeatureSequence> features;  // one per extractor, fusion order
  std::string subtitle;
  std::vector<std::string> references;    // empty when not loaded
};

namespace detail {

inline std::vector<std::string> sorted_subdirs(const std::filesystem::path& dir) {
  std::vector<std::string> out;
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(dir, ec))
    if (e.is_directory()) out.push_back(e.path().filename().string());
  if (ec) throw Error(Errc::IoError, "cannot list '" + dir.string() + "'");
  std::sort(out.begin(), out.end());
  return out;
}

inline std::set<std::string> feature_ids(const std::filesystem::path& dir) {
  std::set<std::string> ids;
  std::error_code ec;
  for (const auto& e : std::filesystem::directory_iterator(dir, ec))
    if (e.is_regular_file() && e.path().extension() == ".cff") ids.insert(e.path().stem().string());
  if (ec) throw Error(Errc::IoError, "cannot list '" + dir.string() + "'");
  return ids;
}

}  // namespace detail

/// Loads every video of a data directory, sorted by id. References are read
/// only when `with_references` is set; every file must cover the same ids.
inline std::vector<VideoRecord> read_dataset(const std::filesystem::path& dir,
                                             bool with_references = true) {
  const auto feat_root = dir / "features";
  if (!std::filesystem::is_directory(feat_root))
    throw Error(Errc::IoError, "'" + feat_root.string() + "' is not a directory");
  const auto extractors = detail::sorted_subdirs(feat_root);
  if (extractors.empty()) throw Error(Errc::EmptyFeatureList, "no feature extractors in " + feat_root.string());

  const auto ids = detail::feature_ids(feat_root / extractors.front());
  if (ids.empty()) throw Error(Errc::EmptyDataset, "no feature files under " + feat_root.string());
  for (const auto& ex : extractors)
    if (detail::feature_ids(feat_root / ex) != ids)
      throw Error(Errc::VideoIdMismatch, "extractor '" + ex + "' covers a different set of videos");

  const auto check_ids = [&](const auto& m, const std::string& what) {
    for (const auto& id : ids)
      if (!m.contains(id)) throw Error(Errc::VideoIdMismatch, what + " has no entry for video '" + id + "'");
    for (const auto& [id, _] : m)
      if (!ids.contains(id)) throw Error(Errc::VideoIdMismatch, what + " names unknown video '" + id + "'");
  };
  const auto subtitles = to_caption_map(read_captions(dir / "subtitles.jsonl"));
  check_ids(subtitles, "subtitles.jsonl");
  std::map<std::string, std::vector<std::string>> refs;
  if (with_references) {
    refs = to_reference_map(read_captions(dir / "refs.jsonl"));
    check_ids(refs, "refs.jsonl");
  }

  std::vector<VideoRecord> out;
  for (const auto& id : ids) {
    VideoRecord r{id, {}, subtitles.at(id), {}};
    for (const auto& ex : extractors) {
      auto f = read_features(feat_root / ex / (id + ".cff"));
      f.name = ex;
      r.features.push_back(std::move(f));
    }
    if (with_references) r.references = refs.at(id);
    out.push_back(std::move(r));
  }
  return out;
}

inline void write_dataset(const std::filesystem::path& dir, std::span<const VideoRecord> videos) {
  if (videos.empty()) throw Error(Errc::EmptyDataset, "nothing to write");
  std::error_code ec;
  std::filesystem::create_directories(dir / "features", ec);
  if (ec) throw Error(Errc::IoError, "cannot create '" + dir.string() + "'");
  std::vector<CaptionRecord> subs, refs;
  for (const auto& v : videos) {
    for (const auto& f : v.features) {
      std::filesystem::create_directories(dir / "features" / f.name, ec);
      if (ec) throw Error(Errc::IoError, "cannot create feature directory for '" + f.name + "'");
      write_features(dir / "features" / f.name / (v.video_id + ".cff"), f);
    }
    subs.push_back(CaptionRecord::hypothesis(v.video_id, v.subtitle));
    refs.push_back(CaptionRecord::references(v.video_id, v.references));
  }
  write_captions(dir / "subtitles.jsonl", subs);
  write_captions(dir / "refs.jsonl", refs);
}

// ---------------------------------------------------------------------------
// Model inputs

inline Vocab vocab_from_references(std::span<const VideoRecord> videos) {
  std::vector<TokenSequence> all;
  for (const auto& v : videos)
    for (const auto& r : v.references) all.push_back(tokenize(r));
  return Vocab::build(all);
}

/// Fused-feature context of every video. In train mode video i (in the given
/// order) samples with derive_seed(seed, i).
inline std::map<std::string, VideoContext> build_contexts(std::span<const VideoRecord> videos,
                                                         const Vocab& vocab, std::size_t k,
                                                         SampleMode mode, std::uint64_t seed) {
  std::map<std::string, VideoContext> out;
  for (std::size_t i = 0; i < videos.size(); ++i) {
    const auto& v = videos[i];
    const auto fused = align_and_fuse(v.features, k, mode, derive_seed(seed, i));
    if (!out.emplace(v.video_id, make_context(fused, tokenize(v.subtitle), vocab)).second)
      throw Error(Errc::DuplicateVideoId, "duplicate video '" + v.video_id + "'");
  }
  return out;
}

inline std::vector<TrainingExample> xe_examples(std::span<const VideoRecord> videos,
                                                const std::map<std::string, VideoContext>& contexts,
                                                const Vocab& vocab) {
  std::vector<TrainingExample> out;
  for (const auto& v : videos) {
    TrainingExample ex{contexts.at(v.video_id), {}};
    for (const auto& r : v.references) ex.targets.push_back(vocab.encode(tokenize(r)));
    out.push_back(std::move(ex));
  }
  return out;
}

inline std::vector<ScstExample> scst_examples(std::span<const VideoRecord> videos,
                                              const std::map<std::string, VideoContext>& contexts) {
  std::vector<ScstExample> out;
  for (const auto& v : videos) {
    ScstExample ex{contexts.at(v.video_id), {}};
    for (const auto& r : v.references) ex.refs.push_back(tokenize(r));
    out.push_back(std::move(ex));
  }
  return out;
}

/// Document frequencies over the references, one document per video.
inline CorpusIdf reference_idf(std::span<const VideoRecord> videos) {
  std::vector<RefDocument> docs;
  for (const auto& v : videos) {
    std::vector<TokenSequence> toks;
    for (const auto& r : v.references) toks.push_back(tokenize(r));
    docs.emplace_back(v.video_id, std::move(toks));
  }
  return build_idf(docs);
}

/// Greedy caption text for every video.
inline CaptionMap greedy_captions(const ToyCaptioner& model,
                                  const std::map<std::string, VideoContext>& contexts,
                                  std::size_t max_len) {
  CaptionMap out;
  for (const auto& [id, ctx] : contexts)
    out.emplace(id, model.vocab.decode(greedy_decode(model.params, ctx, max_len)));
  return out;
}

}  // namespace clipcap
