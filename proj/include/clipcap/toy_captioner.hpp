#pragma once

// A log-linear conditional caption generator. The next-token logits are
//
//   logits = b + W_prev[:, prev] + W_vid * v_mean + W_sub * sub_bow
//
// with PAD masked out of the softmax. The model is small enough for
// hand-written gradients, and the cross-entropy objective is convex in the
// parameters. Training runs in two stages: teacher-forced cross-entropy,
// then self-critical policy gradient on the CIDEr-D reward with the greedy
// decode of the current parameters as baseline.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <cstdint>
#include <limits>
#include <map>
#include <set>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clipcap/error.hpp"
#include "clipcap/feature_pipeline.hpp"
#include "clipcap/rng.hpp"
#include "clipcap/text_metrics.hpp"

namespace clipcap {

using TokenId = std::uint32_t;

class Vocab {
 public:
  static constexpr TokenId kPad = 0;
  static constexpr TokenId kBos = 1;
  static constexpr TokenId kEos = 2;
  static constexpr TokenId kUnk = 3;
  static constexpr std::size_t kReserved = 4;
  static constexpr std::size_t kMinSize = 5;

  Vocab() : Vocab(std::vector<std::string>{"<pad>", "<bos>", "<eos>", "<unk>", "<none>"}) {}

  /// Full id -> token table, reserved entries first.
  explicit Vocab(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {
    static const char* reserved[] = {"<pad>", "<bos>", "<eos>", "<unk>"};
    if (tokens_.size() < kMinSize)
      throw Error(Errc::InvalidArgument, "vocabulary needs at least 5 entries");
    for (std::size_t i = 0; i < kReserved; ++i)
      if (tokens_[i] != reserved[i])
        throw Error(Errc::InvalidArgument, "reserved vocabulary entry " + std::to_string(i) +
                                               " must be " + reserved[i]);
    for (std::size_t i = 0; i < tokens_.size(); ++i) {
      if (tokens_[i].empty()) throw Error(Errc::InvalidArgument, "empty vocabulary token");
      if (!index_.emplace(tokens_[i], static_cast<TokenId>(i)).second)
        throw Error(Errc::InvalidArgument, "duplicate vocabulary token '" + tokens_[i] + "'");
    }
  }

  /// Reserved ids followed by every distinct token, sorted.
  static Vocab build(std::span<const TokenSequence> corpus) {
    std::set<std::string> words;
    for (const auto& s : corpus)
      for (const auto& t : s) words.insert(t);
    std::vector<std::string> table{"<pad>", "<bos>", "<eos>", "<unk>"};
    table.insert(table.end(), words.begin(), words.end());
    if (table.size() < kMinSize) table.emplace_back("<none>");
    return Vocab(std::move(table));
  }

  std::size_t size() const noexcept { return tokens_.size(); }
  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  const std::string& token(TokenId id) const { return tokens_.at(id); }

  TokenId id(const std::string& token) const {
    auto it = index_.find(token);
    return it == index_.end() ? kUnk : it->second;
  }

  static bool is_reserved(TokenId id) noexcept { return id < kReserved; }

  std::vector<TokenId> encode(const TokenSequence& s) const {
    std::vector<TokenId> out;
    out.reserve(s.size());
    for (const auto& t : s) out.push_back(id(t));
    return out;
  }

  /// Caption text for a decoded id sequence; reserved ids are dropped.
  std::string decode(std::span<const TokenId> ids) const {
    std::string out;
    for (TokenId i : ids) {
      if (is_reserved(i)) continue;
      if (!out.empty()) out += ' ';
      out += token(i);
    }
    return out;
  }

  friend bool operator==(const Vocab& a, const Vocab& b) { return a.tokens_ == b.tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::map<std::string, TokenId> index_;
};

/// Conditioning inputs for one video.
struct VideoContext {
  std::vector<double> v_mean;   // column mean of the fused feature matrix
  std::vector<double> sub_bow;  // subtitle token counts over the vocabulary
};

inline VideoContext make_context(const Matrix& fused, const TokenSequence& subtitle,
                                 const Vocab& vocab) {
  VideoContext ctx;
  ctx.v_mean = fused.column_mean();
  ctx.sub_bow.assign(vocab.size(), 0.0);
  for (const auto& t : subtitle) ctx.sub_bow[vocab.id(t)] += 1.0;
  return ctx;
}

/// Model parameters; also used as the gradient accumulator.
struct ToyParams {
  Matrix w_prev;             // V x V, column = previous token
  Matrix w_vid;              // V x D
  Matrix w_sub;              // V x V
  std::vector<double> bias;  // V

  static ToyParams zeros(std::size_t vocab_size, std::size_t video_dim) {
    return ToyParams{Matrix(vocab_size, vocab_size), Matrix(vocab_size, video_dim),
                     Matrix(vocab_size, vocab_size), std::vector<double>(vocab_size, 0.0)};
  }

  std::size_t vocab_size() const noexcept { return bias.size(); }
  std::size_t video_dim() const noexcept { return w_vid.cols(); }

  std::size_t num_parameters() const noexcept {
    return w_prev.data().size() + w_vid.data().size() + w_sub.data().size() + bias.size();
  }

  /// Flat view index i over (w_prev, w_vid, w_sub, bias) in that order.
  double& flat(std::size_t i) {
    for (auto* m : {&w_prev, &w_vid, &w_sub}) {
      if (i < m->data().size()) return m->data()[i];
      i -= m->data().size();
    }
    return bias.at(i);
  }
  double flat(std::size_t i) const { return const_cast<ToyParams&>(*this).flat(i); }

  void validate() const {
    const std::size_t v = vocab_size();
    if (w_prev.rows() != v || w_prev.cols() != v || w_vid.rows() != v || w_sub.rows() != v ||
        w_sub.cols() != v)
      throw Error(Errc::ShapeMismatch, "inconsistent parameter shapes");
    for (std::size_t i = 0; i < num_parameters(); ++i)
      if (!std::isfinite(flat(i))) throw Error(Errc::NonFiniteValue, "non-finite parameter");
  }

  /// this -= rate * grad
  void descend(const ToyParams& grad, double rate) {
    for (std::size_t i = 0; i < num_parameters(); ++i) flat(i) -= rate * grad.flat(i);
  }

  friend bool operator==(const ToyParams&, const ToyParams&) = default;
};

/// Vocabulary, parameters and the number of TSN segments the video features
/// were fused with. This is what a checkpoint stores.
struct ToyCaptioner {
  Vocab vocab;
  ToyParams params;
  std::size_t segments = kDefaultSegments;

  friend bool operator==(const ToyCaptioner&, const ToyCaptioner&) = default;
};

// ---------------------------------------------------------------------------
// Forward pass

namespace detail {

inline void check_shapes(const ToyParams& p, const VideoContext& ctx) {
  if (ctx.v_mean.size() != p.video_dim())
    throw Error(Errc::ShapeMismatch, "video feature width " + std::to_string(ctx.v_mean.size()) +
                                         " does not match model width " +
                                         std::to_string(p.video_dim()));
  if (ctx.sub_bow.size() != p.vocab_size())
    throw Error(Errc::ShapeMismatch, "subtitle vector does not match vocabulary size");
  if (p.w_prev.rows() != p.vocab_size() || p.w_prev.cols() != p.vocab_size() ||
      p.w_sub.rows() != p.vocab_size() || p.w_sub.cols() != p.vocab_size() ||
      p.w_vid.rows() != p.vocab_size())
    throw Error(Errc::ShapeMismatch, "inconsistent parameter shapes");
}

// Logits that do not depend on the previous token: b + W_vid v + W_sub s.
inline std::vector<double> context_logits(const ToyParams& p, const VideoContext& ctx) {
  check_shapes(p, ctx);
  const std::size_t v = p.vocab_size();
  std::vector<double> z(p.bias);
  for (std::size_t w = 0; w < v; ++w) {
    double acc = 0.0;
    const auto vid_row = p.w_vid.row(w);
    for (std::size_t d = 0; d < vid_row.size(); ++d) acc += vid_row[d] * ctx.v_mean[d];
    const auto sub_row = p.w_sub.row(w);
    for (std::size_t u = 0; u < v; ++u)
      if (ctx.sub_bow[u] != 0.0) acc += sub_row[u] * ctx.sub_bow[u];
    z[w] += acc;
  }
  return z;
}

// Softmax over non-PAD ids of context logits plus the W_prev column.
inline std::vector<double> step_probs(const ToyParams& p, std::span<const double> ctx_logits,
                                      TokenId prev) {
  const std::size_t v = p.vocab_size();
  if (prev >= v) throw Error(Errc::ShapeMismatch, "previous token id out of range");
  std::vector<double> z(v);
  double zmax = -std::numeric_limits<double>::infinity();
  for (std::size_t w = 1; w < v; ++w) {
    z[w] = ctx_logits[w] + p.w_prev(w, prev);
    zmax = std::max(zmax, z[w]);
  }
  double sum = 0.0;
  z[Vocab::kPad] = 0.0;
  for (std::size_t w = 1; w < v; ++w) {
    z[w] = std::exp(z[w] - zmax);
    sum += z[w];
  }
  for (std::size_t w = 1; w < v; ++w) z[w] /= sum;
  return z;
}

// grad += scale * dlogits routed to every parameter block for one step.
inline void accumulate_step_grad(ToyParams& grad, TokenId prev, const VideoContext& ctx,
                                 std::span<const double> dlogits, double scale) {
  const std::size_t v = grad.vocab_size();
  for (std::size_t w = 1; w < v; ++w) {
    const double g = scale * dlogits[w];
    if (g == 0.0) continue;
    grad.bias[w] += g;
    grad.w_prev(w, prev) += g;
    auto vid_row = grad.w_vid.row(w);
    for (std::size_t d = 0; d < vid_row.size(); ++d) vid_row[d] += g * ctx.v_mean[d];
    auto sub_row = grad.w_sub.row(w);
    for (std::size_t u = 0; u < v; ++u)
      if (ctx.sub_bow[u] != 0.0) sub_row[u] += g * ctx.sub_bow[u];
  }
}

inline TokenId argmax_lowest(std::span<const double> probs) {
  TokenId best = 0;
  for (TokenId i = 1; i < probs.size(); ++i)
    if (probs[i] > probs[best]) best = i;
  return best;
}

}  // namespace detail

inline std::vector<double> forward_step(const ToyParams& p, TokenId prev_token,
                                        const VideoContext& ctx) {
  const auto z = detail::context_logits(p, ctx);
  return detail::step_probs(p, z, prev_token);
}

// ---------------------------------------------------------------------------
// Decoding

/// Argmax at each step (lowest id on ties). Stops at EOS, which is not
/// included, or after max_len tokens.
inline std::vector<TokenId> greedy_decode(const ToyParams& p, const VideoContext& ctx,
                                          std::size_t max_len) {
  if (max_len == 0) throw Error(Errc::InvalidArgument, "max_len must be positive");
  const auto z = detail::context_logits(p, ctx);
  std::vector<TokenId> out;
  TokenId prev = Vocab::kBos;
  while (out.size() < max_len) {
    const auto probs = detail::step_probs(p, z, prev);
    const TokenId next = detail::argmax_lowest(probs);
    if (next == Vocab::kEos) break;
    out.push_back(next);
    prev = next;
  }
  return out;
}

struct SampledCaption {
  std::vector<TokenId> path;       // every drawn id, EOS included when drawn
  std::vector<double> log_probs;   // log p of each entry of path
  bool terminated = false;         // EOS was drawn

  std::span<const TokenId> tokens() const {
    return {path.data(), terminated ? path.size() - 1 : path.size()};
  }
};

/// Multinomial draw per step by inverse CDF on one uniform from `rng`.
inline SampledCaption sample_decode(const ToyParams& p, const VideoContext& ctx,
                                    std::size_t max_len, SplitMix64& rng) {
  if (max_len == 0) throw Error(Errc::InvalidArgument, "max_len must be positive");
  const auto z = detail::context_logits(p, ctx);
  SampledCaption out;
  TokenId prev = Vocab::kBos;
  for (std::size_t t = 0; t < max_len; ++t) {
    const auto probs = detail::step_probs(p, z, prev);
    const double u = rng.uniform();
    // A rounding shortfall in the cumulative sum lands on the last non-zero id.
    TokenId pick = 0;
    double cum = 0.0;
    for (TokenId i = 1; i < probs.size(); ++i) {
      if (probs[i] == 0.0) continue;
      pick = i;
      cum += probs[i];
      if (u < cum) break;
    }
    out.path.push_back(pick);
    out.log_probs.push_back(std::log(probs[pick]));
    if (pick == Vocab::kEos) {
      out.terminated = true;
      break;
    }
    prev = pick;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Objectives and gradients

/// Σ_t log p(path_t | path_{t-1}) starting from BOS, and its gradient.
inline double path_log_prob(const ToyParams& p, const VideoContext& ctx,
                            std::span<const TokenId> path, ToyParams* grad = nullptr,
                            double grad_scale = 1.0) {
  const auto z = detail::context_logits(p, ctx);
  double total = 0.0;
  TokenId prev = Vocab::kBos;
  std::vector<double> d(p.vocab_size());
  for (TokenId tok : path) {
    const auto probs = detail::step_probs(p, z, prev);
    total += std::log(probs[tok]);
    if (grad) {
      // d log p(tok) / d logits = onehot(tok) - probs
      for (std::size_t w = 0; w < d.size(); ++w) d[w] = -probs[w];
      d[tok] += 1.0;
      detail::accumulate_step_grad(*grad, prev, ctx, d, grad_scale);
    }
    prev = tok;
  }
  return total;
}

struct TrainingExample {
  VideoContext ctx;
  std::vector<std::vector<TokenId>> targets;  // reference captions, no BOS/EOS
};

/// Mean token-level negative log-likelihood over every reference (each
/// EOS-terminated, BOS-prefixed) and its gradient.
inline double xe_loss(const ToyParams& p, std::span<const TrainingExample> data,
                      ToyParams* grad = nullptr) {
  std::size_t n_tokens = 0;
  for (const auto& ex : data)
    for (const auto& t : ex.targets) n_tokens += t.size() + 1;
  if (n_tokens == 0) throw Error(Errc::EmptyDataset, "no target tokens");
  if (grad) *grad = ToyParams::zeros(p.vocab_size(), p.video_dim());

  const double scale = 1.0 / static_cast<double>(n_tokens);
  double nll = 0.0;
  std::vector<TokenId> path;
  for (const auto& ex : data) {
    for (const auto& t : ex.targets) {
      path.assign(t.begin(), t.end());
      path.push_back(Vocab::kEos);
      // gradient of -log p is -(onehot - probs)
      nll -= path_log_prob(p, ex.ctx, path, grad, -scale);
    }
  }
  return nll * scale;
}

struct TrainConfig {
  double learning_rate = 2.0;
  std::size_t epochs = 1000;
  std::uint64_t seed = 0;  // drives train-mode TSN sampling of the inputs
  std::size_t max_len = 12;
};

struct XeResult {
  ToyParams params;
  std::vector<double> loss_curve;  // loss before each epoch, then the final loss
};

/// Full-batch gradient descent on the cross-entropy objective.
inline XeResult xe_train(ToyParams p, std::span<const TrainingExample> data,
                         const TrainConfig& cfg) {
  if (data.empty()) throw Error(Errc::EmptyDataset, "no training examples");
  if (!(cfg.learning_rate >= 0.0)) throw Error(Errc::InvalidArgument, "negative learning rate");
  XeResult res;
  ToyParams grad;
  for (std::size_t e = 0; e < cfg.epochs; ++e) {
    res.loss_curve.push_back(xe_loss(p, data, &grad));
    p.descend(grad, cfg.learning_rate);
  }
  res.loss_curve.push_back(xe_loss(p, data));
  res.params = std::move(p);
  return res;
}

// ---------------------------------------------------------------------------
// Self-critical sequence training

struct ScstExample {
  VideoContext ctx;
  std::vector<TokenSequence> refs;
};

struct SCSTConfig {
  std::size_t steps = 200;
  double learning_rate = 0.5;
  std::uint64_t seed = 0;
  std::size_t samples_per_video = 1;
  std::size_t max_len = 12;
};

struct ScstDiagnostics {
  double reward = 0.0;     // mean CIDEr-D of sampled captions
  double baseline = 0.0;   // mean CIDEr-D of greedy captions
  double advantage = 0.0;  // mean reward - baseline
};

struct ScstStep {
  ToyParams params;
  ScstDiagnostics diag;
};

inline double caption_reward(const Vocab& vocab, std::span<const TokenId> ids,
                             std::span<const TokenSequence> refs, const CorpusIdf& idf) {
  return cider_d(tokenize(vocab.decode(ids)), refs, idf);
}

/// One policy-gradient step: for every video and sample, advantage =
/// CIDEr-D(sample) - CIDEr-D(greedy), gradient = -advantage * ∇ Σ log p(sample),
/// averaged over the batch.
inline ScstStep scst_update(const ToyCaptioner& model, std::span<const ScstExample> batch,
                            const CorpusIdf& idf, const SCSTConfig& cfg, SplitMix64& rng) {
  if (batch.empty()) throw Error(Errc::EmptyBatch, "empty SCST batch");
  if (cfg.samples_per_video == 0) throw Error(Errc::InvalidArgument, "samples_per_video must be positive");
  const ToyParams& p = model.params;
  ToyParams grad = ToyParams::zeros(p.vocab_size(), p.video_dim());
  const double n = static_cast<double>(batch.size() * cfg.samples_per_video);
  ScstDiagnostics diag;
  bool any = false;
  for (const auto& ex : batch) {
    const auto greedy = greedy_decode(p, ex.ctx, cfg.max_len);
    const double r_g = caption_reward(model.vocab, greedy, ex.refs, idf);
    for (std::size_t s = 0; s < cfg.samples_per_video; ++s) {
      const auto sample = sample_decode(p, ex.ctx, cfg.max_len, rng);
      const double r_s = caption_reward(model.vocab, sample.tokens(), ex.refs, idf);
      const double adv = r_s - r_g;
      diag.reward += r_s;
      diag.baseline += r_g;
      diag.advantage += adv;
      if (adv == 0.0) continue;
      any = true;
      // descent on -adv * log p
      path_log_prob(p, ex.ctx, sample.path, &grad, -adv / n);
    }
  }
  diag.reward /= n;
  diag.baseline /= n;
  diag.advantage /= n;
  ScstStep out{p, diag};
  if (any) out.params.descend(grad, cfg.learning_rate);
  return out;
}

struct ScstResult {
  ToyParams params;
  std::vector<ScstDiagnostics> curve;
};

inline ScstResult scst_train(ToyCaptioner model, std::span<const ScstExample> batch,
                             const CorpusIdf& idf, const SCSTConfig& cfg) {
  if (cfg.steps == 0) throw Error(Errc::InvalidArgument, "SCST needs at least one step");
  SplitMix64 rng(cfg.seed);
  ScstResult res;
  for (std::size_t i = 0; i < cfg.steps; ++i) {
    auto step = scst_update(model, batch, idf, cfg, rng);
    model.params = std::move(step.params);
    res.curve.push_back(step.diag);
  }
  res.params = std::move(model.params);
  return res;
}

// ---------------------------------------------------------------------------
// Gradient verification

struct GradientCheckInstance {
  VideoContext ctx;
  std::vector<TokenId> target;  // XE target caption, EOS appended internally
  std::vector<TokenId> path;    // sampled path, taken as given
};

inline constexpr double kFiniteDifferenceStep = 1e-5;

/// Relative error |a - f| / max(|a|, |f|, floor); the floor keeps entries
/// whose true gradient is zero from dividing round-off by round-off.
inline double relative_error(double analytic, double numeric, double floor = 1e-6) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

/// Largest relative error between analytic gradients and central finite
/// differences, over every parameter, for both the XE loss on `target` and
/// the log-probability of `path`.
inline double gradient_check(const ToyParams& p, const GradientCheckInstance& inst,
                             double h = kFiniteDifferenceStep) {
  const TrainingExample ex{inst.ctx, {inst.target}};
  const std::span<const TrainingExample> data(&ex, 1);

  ToyParams g_xe;
  xe_loss(p, data, &g_xe);
  ToyParams g_path = ToyParams::zeros(p.vocab_size(), p.video_dim());
  path_log_prob(p, inst.ctx, inst.path, &g_path);

  ToyParams q = p;
  double worst = 0.0;
  for (std::size_t i = 0; i < q.num_parameters(); ++i) {
    const double orig = q.flat(i);
    q.flat(i) = orig + h;
    const double xe_plus = xe_loss(q, data);
    const double lp_plus = path_log_prob(q, inst.ctx, inst.path);
    q.flat(i) = orig - h;
    const double xe_minus = xe_loss(q, data);
    const double lp_minus = path_log_prob(q, inst.ctx, inst.path);
    q.flat(i) = orig;
    worst = std::max(worst, relative_error(g_xe.flat(i), (xe_plus - xe_minus) / (2 * h)));
    worst = std::max(worst, relative_error(g_path.flat(i), (lp_plus - lp_minus) / (2 * h)));
  }
  return worst;
}

}  // namespace clipcap
