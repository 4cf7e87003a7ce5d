#pragma once

// Caption ensembling. Word level: average the next-token distributions of
// several models at every greedy step. Sentence level: score each candidate
// caption by CIDEr-D against all the other candidates for the same video
// and keep the best. The full pipeline runs the word-level decode first and
// adds its output to the single-model candidates.

#include <cmath>
#include <cstddef>
#include <map>
#include <memory>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clipcap/error.hpp"
#include "clipcap/text_metrics.hpp"
#include "clipcap/toy_captioner.hpp"

namespace clipcap {

inline constexpr double kDistributionTolerance = 1e-6;

/// Anything that yields a next-token distribution for a decoded prefix.
/// An instance serves one decoding session at a time.
class StepModel {
 public:
  virtual ~StepModel() = default;
  virtual const Vocab& vocab() const = 0;
  /// Start decoding for `video_id`.
  virtual void reset(const std::string& video_id) = 0;
  /// `prefix` starts with BOS; returns a distribution over the vocabulary.
  virtual std::vector<double> step(std::span<const TokenId> prefix) = 0;
};

/// Live toy captioner over a table of per-video contexts.
class ToyStepModel final : public StepModel {
 public:
  ToyStepModel(ToyCaptioner model, std::map<std::string, VideoContext> contexts)
      : model_(std::move(model)), contexts_(std::move(contexts)) {}

  const Vocab& vocab() const override { return model_.vocab; }

  void reset(const std::string& video_id) override {
    auto it = contexts_.find(video_id);
    if (it == contexts_.end())
      throw Error(Errc::VideoIdMismatch, "no features for video '" + video_id + "'");
    ctx_logits_ = detail::context_logits(model_.params, it->second);
  }

  std::vector<double> step(std::span<const TokenId> prefix) override {
    if (prefix.empty()) throw Error(Errc::InvalidArgument, "prefix must start with BOS");
    return detail::step_probs(model_.params, ctx_logits_, prefix.back());
  }

  const ToyCaptioner& model() const noexcept { return model_; }

 private:
  ToyCaptioner model_;
  std::map<std::string, VideoContext> contexts_;
  std::vector<double> ctx_logits_;
};

/// Replays recorded per-step distributions by position, ignoring the prefix
/// contents. Past the end of a recording it emits EOS with certainty.
class ReplayStepModel final : public StepModel {
 public:
  using Trace = std::vector<std::vector<double>>;

  ReplayStepModel(Vocab vocab, std::map<std::string, Trace> traces)
      : vocab_(std::move(vocab)), traces_(std::move(traces)) {}

  const Vocab& vocab() const override { return vocab_; }

  void reset(const std::string& video_id) override {
    auto it = traces_.find(video_id);
    if (it == traces_.end())
      throw Error(Errc::VideoIdMismatch, "no trace for video '" + video_id + "'");
    current_ = &it->second;
  }

  std::vector<double> step(std::span<const TokenId> prefix) override {
    if (!current_) throw Error(Errc::InvalidArgument, "reset() not called");
    if (prefix.empty()) throw Error(Errc::InvalidArgument, "prefix must start with BOS");
    const std::size_t t = prefix.size() - 1;
    if (t < current_->size()) return (*current_)[t];
    std::vector<double> eos(vocab_.size(), 0.0);
    eos[Vocab::kEos] = 1.0;
    return eos;
  }

  const std::map<std::string, Trace>& traces() const noexcept { return traces_; }

 private:
  Vocab vocab_;
  std::map<std::string, Trace> traces_;
  const Trace* current_ = nullptr;
};

namespace detail {

inline void check_distribution(std::span<const double> probs, std::size_t vocab_size) {
  if (probs.size() != vocab_size)
    throw Error(Errc::InvalidDistribution, "distribution has " + std::to_string(probs.size()) +
                                               " entries, vocabulary has " +
                                               std::to_string(vocab_size));
  double sum = 0.0;
  for (double p : probs) {
    if (!(p >= 0.0) || !std::isfinite(p))
      throw Error(Errc::InvalidDistribution, "negative or non-finite probability");
    sum += p;
  }
  if (std::abs(sum - 1.0) > kDistributionTolerance)
    throw Error(Errc::InvalidDistribution, "probabilities sum to " + std::to_string(sum));
}

inline void check_shared_vocab(std::span<StepModel* const> models) {
  for (const auto* m : models)
    if (!(m->vocab() == models.front()->vocab()))
      throw Error(Errc::VocabMismatch, "ensemble members use different vocabularies");
}

}  // namespace detail

/// Greedy decode on the arithmetic mean of every model's distribution.
/// Ties go to the lowest token id; EOS ends the caption and is not emitted.
inline std::vector<TokenId> word_level_decode(std::span<StepModel* const> models,
                                              const std::string& video_id, std::size_t max_len) {
  if (models.empty()) throw Error(Errc::InvalidArgument, "word-level ensemble needs a model");
  if (max_len == 0) throw Error(Errc::InvalidArgument, "max_len must be positive");
  detail::check_shared_vocab(models);
  const std::size_t v = models.front()->vocab().size();
  for (auto* m : models) m->reset(video_id);

  std::vector<TokenId> prefix{Vocab::kBos};
  std::vector<double> mean(v);
  while (prefix.size() - 1 < max_len) {
    std::fill(mean.begin(), mean.end(), 0.0);
    for (auto* m : models) {
      const auto probs = m->step(prefix);
      detail::check_distribution(probs, v);
      for (std::size_t i = 0; i < v; ++i) mean[i] += probs[i];
    }
    for (double& x : mean) x /= static_cast<double>(models.size());
    const TokenId next = detail::argmax_lowest(mean);
    if (next == Vocab::kEos) break;
    prefix.push_back(next);
  }
  return {prefix.begin() + 1, prefix.end()};
}

// ---------------------------------------------------------------------------
// Sentence-level consensus

struct CandidateSet {
  std::string video_id;
  std::vector<std::string> candidates;
};

struct ConsensusResult {
  std::size_t winner_index = 0;
  std::string winner;
  std::vector<double> scores;
};

/// Leave-one-out CIDEr-D: candidate i is scored against every other
/// position, so duplicates of a caption count as agreeing references.
inline ConsensusResult sentence_consensus(const CandidateSet& set, const CorpusIdf& idf) {
  if (set.candidates.empty())
    throw Error(Errc::EmptyCandidateSet, "video '" + set.video_id + "' has no candidates");
  const std::size_t n = set.candidates.size();
  ConsensusResult res;
  res.scores.assign(n, 0.0);
  if (n == 1) {
    res.winner = set.candidates.front();
    return res;
  }
  std::vector<TokenSequence> toks;
  toks.reserve(n);
  for (const auto& c : set.candidates) toks.push_back(tokenize(c));

  std::vector<TokenSequence> others;
  for (std::size_t i = 0; i < n; ++i) {
    others.clear();
    for (std::size_t j = 0; j < n; ++j)
      if (j != i) others.push_back(toks[j]);
    res.scores[i] = cider_d(toks[i], others, idf);
    if (res.scores[i] > res.scores[res.winner_index]) res.winner_index = i;
  }
  res.winner = set.candidates[res.winner_index];
  return res;
}

/// Document frequencies over the candidate pool: one document per video.
inline CorpusIdf build_pool_idf(std::span<const CandidateSet> all_sets) {
  if (all_sets.empty()) throw Error(Errc::EmptyPool, "no candidate sets");
  std::vector<RefDocument> docs;
  docs.reserve(all_sets.size());
  for (const auto& s : all_sets) {
    std::vector<TokenSequence> toks;
    for (const auto& c : s.candidates) toks.push_back(tokenize(c));
    docs.emplace_back(s.video_id, std::move(toks));
  }
  return build_idf(docs);
}

using CaptionMap = std::map<std::string, std::string>;

struct EnsembleOutcome {
  std::vector<CandidateSet> pool;                  // sorted by video id
  std::map<std::string, ConsensusResult> results;  // keyed by video id

  CaptionMap captions() const {
    CaptionMap out;
    for (const auto& [id, r] : results) out.emplace(id, r.winner);
    return out;
  }
};

/// Word-level decode per video (when models are given), appended after the
/// single-model captions, then sentence-level consensus over the pool.
/// With no models this is a pure sentence-level ensemble.
inline EnsembleOutcome run_ensemble(std::span<StepModel* const> models,
                                    std::span<const CaptionMap> single_outputs,
                                    std::span<const std::string> video_ids, std::size_t max_len) {
  if (models.empty() && single_outputs.empty())
    throw Error(Errc::MissingInput, "nothing to ensemble");
  const std::set<std::string> ids(video_ids.begin(), video_ids.end());
  if (ids.size() != video_ids.size())
    throw Error(Errc::DuplicateVideoId, "duplicate video id in ensemble input");
  for (std::size_t m = 0; m < single_outputs.size(); ++m) {
    for (const auto& id : ids)
      if (!single_outputs[m].contains(id))
        throw Error(Errc::VideoIdMismatch,
                    "input " + std::to_string(m) + " has no caption for video '" + id + "'");
    if (single_outputs[m].size() != ids.size())
      throw Error(Errc::VideoIdMismatch,
                  "input " + std::to_string(m) + " covers videos outside the ensemble set");
  }
  if (!models.empty()) detail::check_shared_vocab(models);

  EnsembleOutcome out;
  out.pool.reserve(ids.size());
  for (const auto& id : ids) {
    CandidateSet cs{id, {}};
    for (const auto& o : single_outputs) cs.candidates.push_back(o.at(id));
    if (!models.empty())
      cs.candidates.push_back(models.front()->vocab().decode(word_level_decode(models, id, max_len)));
    out.pool.push_back(std::move(cs));
  }
  const CorpusIdf idf = build_pool_idf(out.pool);
  for (const auto& cs : out.pool) out.results.emplace(cs.video_id, sentence_consensus(cs, idf));
  return out;
}

inline CaptionMap full_ensemble(std::span<StepModel* const> models,
                                std::span<const CaptionMap> single_outputs,
                                std::span<const std::string> video_ids, std::size_t max_len) {
  return run_ensemble(models, single_outputs, video_ids, max_len).captions();
}

}  // namespace clipcap
