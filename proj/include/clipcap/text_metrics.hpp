#pragma once

// Captioning metrics: BLEU-4, ROUGE-L and CIDEr-D over a single canonical
// tokenization, plus the document-frequency statistics CIDEr needs.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstddef>
#include <map>
#include <span>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

#include "clipcap/error.hpp"

namespace clipcap {

inline constexpr int kMaxOrder = 4;
inline constexpr double kCiderSigma = 6.0;
inline constexpr double kRougeBeta = 1.2;

/// Lowercased word tokens. Only `tokenize` creates non-empty sequences, so
/// every token is non-empty and free of whitespace.
class TokenSequence {
 public:
  TokenSequence() = default;

  const std::vector<std::string>& tokens() const noexcept { return tokens_; }
  std::size_t size() const noexcept { return tokens_.size(); }
  bool empty() const noexcept { return tokens_.empty(); }
  const std::string& operator[](std::size_t i) const { return tokens_[i]; }
  auto begin() const noexcept { return tokens_.begin(); }
  auto end() const noexcept { return tokens_.end(); }

  /// Tokens joined by single spaces.
  std::string text() const {
    std::string out;
    for (const auto& t : tokens_) {
      if (!out.empty()) out += ' ';
      out += t;
    }
    return out;
  }

  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
  friend TokenSequence tokenize(std::string_view raw);

 private:
  explicit TokenSequence(std::vector<std::string> tokens) : tokens_(std::move(tokens)) {}
  std::vector<std::string> tokens_;
};

/// Lowercase, map everything outside [a-z0-9'] to a space, split on spaces.
inline TokenSequence tokenize(std::string_view raw) {
  std::vector<std::string> out;
  std::string cur;
  for (char ch : raw) {
    char c = ch;
    if (c >= 'A' && c <= 'Z') c = static_cast<char>(c - 'A' + 'a');
    const bool keep = (c >= 'a' && c <= 'z') || (c >= '0' && c <= '9') || c == '\'';
    if (keep) {
      cur += c;
    } else if (!cur.empty()) {
      out.push_back(std::move(cur));
      cur.clear();
    }
  }
  if (!cur.empty()) out.push_back(std::move(cur));
  return TokenSequence(std::move(out));
}

/// N-gram keys are the tokens joined by single spaces; the order of a key is
/// recoverable from its space count because tokens never contain spaces.
using NGramKey = std::string;

inline int ngram_order(const NGramKey& key) {
  return 1 + static_cast<int>(std::count(key.begin(), key.end(), ' '));
}

/// Occurrence counts of every contiguous n-gram, n = 1..max_order.
struct NGramProfile {
  int max_order = kMaxOrder;
  std::array<std::map<NGramKey, std::size_t>, kMaxOrder> by_order;

  const std::map<NGramKey, std::size_t>& order(int n) const { return by_order[n - 1]; }

  std::size_t count(const NGramKey& key) const {
    const int n = ngram_order(key);
    if (n > max_order) return 0;
    const auto& m = by_order[n - 1];
    auto it = m.find(key);
    return it == m.end() ? 0 : it->second;
  }

  std::size_t distinct() const {
    std::size_t total = 0;
    for (const auto& m : by_order) total += m.size();
    return total;
  }
};

inline NGramProfile ngram_counts(const TokenSequence& s, int n_max = kMaxOrder) {
  if (n_max < 1 || n_max > kMaxOrder)
    throw Error(Errc::InvalidArgument, "n-gram order must be in 1..4");
  NGramProfile profile;
  profile.max_order = n_max;
  const auto& toks = s.tokens();
  for (int n = 1; n <= n_max; ++n) {
    auto& m = profile.by_order[n - 1];
    for (std::size_t i = 0; i + n <= toks.size(); ++i) {
      NGramKey key = toks[i];
      for (int j = 1; j < n; ++j) {
        key += ' ';
        key += toks[i + j];
      }
      ++m[key];
    }
  }
  return profile;
}

/// Document frequencies over a reference corpus; one document per video.
class CorpusIdf {
 public:
  CorpusIdf(std::size_t num_docs, std::map<NGramKey, std::size_t> doc_freq)
      : num_docs_(num_docs), doc_freq_(std::move(doc_freq)) {
    if (num_docs_ == 0) throw Error(Errc::EmptyCorpus, "corpus has no documents");
  }

  std::size_t num_docs() const noexcept { return num_docs_; }
  const std::map<NGramKey, std::size_t>& doc_freq() const noexcept { return doc_freq_; }

  std::size_t df(const NGramKey& g) const {
    auto it = doc_freq_.find(g);
    return it == doc_freq_.end() ? 0 : it->second;
  }

  /// ln(num_docs / df); n-grams absent from the corpus get 0.
  double idf(const NGramKey& g) const {
    auto it = doc_freq_.find(g);
    if (it == doc_freq_.end()) return 0.0;
    return std::log(static_cast<double>(num_docs_) / static_cast<double>(it->second));
  }

 private:
  std::size_t num_docs_;
  std::map<NGramKey, std::size_t> doc_freq_;
};

/// One document: a video id with its reference sentences.
using RefDocument = std::pair<std::string, std::vector<TokenSequence>>;

inline CorpusIdf build_idf(std::span<const RefDocument> ref_docs) {
  if (ref_docs.empty()) throw Error(Errc::EmptyCorpus, "no reference documents");
  std::map<NGramKey, std::size_t> df;
  for (const auto& [video_id, refs] : ref_docs) {
    std::map<NGramKey, bool> seen;
    for (const auto& r : refs) {
      const auto prof = ngram_counts(r, kMaxOrder);
      for (const auto& m : prof.by_order)
        for (const auto& [g, c] : m) seen[g] = true;
    }
    for (const auto& [g, present] : seen) ++df[g];
  }
  return CorpusIdf(ref_docs.size(), std::move(df));
}

// ---------------------------------------------------------------------------
// BLEU-4

/// Sufficient statistics for BLEU; sentence and corpus scores are both
/// computed from sums of these.
struct BleuStats {
  std::array<std::size_t, kMaxOrder> matches{};
  std::array<std::size_t, kMaxOrder> totals{};
  std::size_t hyp_len = 0;
  std::size_t ref_len = 0;

  BleuStats& operator+=(const BleuStats& o) {
    for (int n = 0; n < kMaxOrder; ++n) {
      matches[n] += o.matches[n];
      totals[n] += o.totals[n];
    }
    hyp_len += o.hyp_len;
    ref_len += o.ref_len;
    return *this;
  }
};

inline BleuStats bleu_stats(const TokenSequence& hyp, std::span<const TokenSequence> refs) {
  if (refs.empty()) throw Error(Errc::NoReferences, "BLEU needs at least one reference");
  BleuStats st;
  st.hyp_len = hyp.size();

  // Closest reference length, ties resolved to the shorter one.
  std::size_t best = refs.front().size();
  for (const auto& r : refs) {
    const auto d = [&](std::size_t len) {
      return len > hyp.size() ? len - hyp.size() : hyp.size() - len;
    };
    if (d(r.size()) < d(best) || (d(r.size()) == d(best) && r.size() < best)) best = r.size();
  }
  st.ref_len = best;

  const auto hp = ngram_counts(hyp);
  std::vector<NGramProfile> rps;
  rps.reserve(refs.size());
  for (const auto& r : refs) rps.push_back(ngram_counts(r));

  for (int n = 1; n <= kMaxOrder; ++n) {
    for (const auto& [g, c] : hp.order(n)) {
      std::size_t max_ref = 0;
      for (const auto& rp : rps) max_ref = std::max(max_ref, rp.count(g));
      st.matches[n - 1] += std::min(c, max_ref);
      st.totals[n - 1] += c;
    }
  }
  return st;
}

inline double bleu_from_stats(const BleuStats& st) {
  if (st.hyp_len == 0) return 0.0;
  double log_sum = 0.0;
  for (int n = 0; n < kMaxOrder; ++n) {
    if (st.matches[n] == 0 || st.totals[n] == 0) return 0.0;
    log_sum += std::log(static_cast<double>(st.matches[n]) / static_cast<double>(st.totals[n]));
  }
  const double c = static_cast<double>(st.hyp_len);
  const double r = static_cast<double>(st.ref_len);
  const double bp = c > r ? 1.0 : std::exp(1.0 - r / c);
  return bp * std::exp(log_sum / kMaxOrder);
}

inline double bleu4(const TokenSequence& hyp, std::span<const TokenSequence> refs) {
  return bleu_from_stats(bleu_stats(hyp, refs));
}

// ---------------------------------------------------------------------------
// ROUGE-L

inline std::size_t lcs_length(const TokenSequence& a, const TokenSequence& b) {
  std::vector<std::size_t> prev(b.size() + 1, 0), cur(b.size() + 1, 0);
  for (std::size_t i = 1; i <= a.size(); ++i) {
    for (std::size_t j = 1; j <= b.size(); ++j) {
      cur[j] = a[i - 1] == b[j - 1] ? prev[j - 1] + 1 : std::max(prev[j], cur[j - 1]);
    }
    std::swap(prev, cur);
  }
  return prev[b.size()];
}

inline double rouge_l(const TokenSequence& hyp, std::span<const TokenSequence> refs) {
  if (refs.empty()) throw Error(Errc::NoReferences, "ROUGE-L needs at least one reference");
  double best = 0.0;
  for (const auto& r : refs) {
    if (hyp.empty() || r.empty()) continue;
    const double lcs = static_cast<double>(lcs_length(hyp, r));
    const double p = lcs / static_cast<double>(hyp.size());
    const double rec = lcs / static_cast<double>(r.size());
    if (p == 0.0 && rec == 0.0) continue;
    const double b2 = kRougeBeta * kRougeBeta;
    best = std::max(best, (1.0 + b2) * p * rec / (rec + b2 * p));
  }
  return best;
}

// ---------------------------------------------------------------------------
// CIDEr-D

namespace detail {

struct TfIdf {
  std::array<std::map<NGramKey, double>, kMaxOrder> vec;
  std::array<double, kMaxOrder> norm{};
  std::size_t length = 0;
};

inline TfIdf tfidf(const TokenSequence& s, const CorpusIdf& idf) {
  TfIdf out;
  out.length = s.size();
  const auto prof = ngram_counts(s);
  for (int n = 0; n < kMaxOrder; ++n) {
    double sq = 0.0;
    for (const auto& [g, c] : prof.by_order[n]) {
      const double w = static_cast<double>(c) * idf.idf(g);
      out.vec[n].emplace(g, w);
      sq += w * w;
    }
    out.norm[n] = std::sqrt(sq);
  }
  return out;
}

// Per-order similarity for one (hyp, ref) pair: clipped dot product over
// unclipped norms, times the Gaussian length penalty.
inline std::array<double, kMaxOrder> cider_terms(const TfIdf& h, const TfIdf& r) {
  std::array<double, kMaxOrder> val{};
  const double delta = static_cast<double>(h.length) - static_cast<double>(r.length);
  const double penalty = std::exp(-(delta * delta) / (2.0 * kCiderSigma * kCiderSigma));
  for (int n = 0; n < kMaxOrder; ++n) {
    if (h.norm[n] == 0.0 || r.norm[n] == 0.0) continue;
    double dot = 0.0;
    for (const auto& [g, hw] : h.vec[n]) {
      auto it = r.vec[n].find(g);
      if (it == r.vec[n].end()) continue;
      dot += std::min(hw, it->second) * it->second;
    }
    val[n] = dot / (h.norm[n] * r.norm[n]) * penalty;
  }
  return val;
}

}  // namespace detail

inline double cider_d(const TokenSequence& hyp, std::span<const TokenSequence> refs,
                      const CorpusIdf& idf) {
  if (refs.empty()) throw Error(Errc::NoReferences, "CIDEr-D needs at least one reference");
  const auto h = detail::tfidf(hyp, idf);
  std::array<double, kMaxOrder> acc{};
  for (const auto& ref : refs) {
    const auto terms = detail::cider_terms(h, detail::tfidf(ref, idf));
    for (int n = 0; n < kMaxOrder; ++n) acc[n] += terms[n];
  }
  double mean = 0.0;
  for (double v : acc) mean += v;
  mean /= kMaxOrder;
  return mean / static_cast<double>(refs.size()) * 10.0;
}

// ---------------------------------------------------------------------------
// Corpus evaluation

struct VideoScores {
  double bleu4 = 0.0;
  double rouge_l = 0.0;
  double cider_d = 0.0;
};

struct MetricReport {
  double bleu4 = 0.0;    // corpus BLEU from pooled statistics
  double rouge_l = 0.0;  // mean of per-video scores
  double cider_d = 0.0;  // mean of per-video scores
  std::map<std::string, VideoScores> per_video;
};

/// Scores every hypothesis against its references. The CIDEr-D document
/// frequencies come from the references of the evaluated videos.
inline MetricReport corpus_eval(const std::map<std::string, TokenSequence>& hyps,
                                const std::map<std::string, std::vector<TokenSequence>>& refs) {
  if (hyps.empty()) throw Error(Errc::MissingInput, "no hypotheses to evaluate");
  std::vector<RefDocument> docs;
  docs.reserve(hyps.size());
  for (const auto& [vid, hyp] : hyps) {
    auto it = refs.find(vid);
    if (it == refs.end() || it->second.empty())
      throw Error(Errc::MissingReference, "no references for video '" + vid + "'");
    docs.emplace_back(vid, it->second);
  }
  const CorpusIdf idf = build_idf(docs);

  MetricReport report;
  BleuStats pooled;
  double rouge_sum = 0.0;
  double cider_sum = 0.0;
  for (const auto& [vid, vrefs] : docs) {
    const auto& hyp = hyps.at(vid);
    const BleuStats st = bleu_stats(hyp, vrefs);
    pooled += st;
    VideoScores vs;
    vs.bleu4 = bleu_from_stats(st);
    vs.rouge_l = rouge_l(hyp, vrefs);
    vs.cider_d = cider_d(hyp, vrefs, idf);
    rouge_sum += vs.rouge_l;
    cider_sum += vs.cider_d;
    report.per_video.emplace(vid, vs);
  }
  const double n = static_cast<double>(docs.size());
  report.bleu4 = bleu_from_stats(pooled);
  report.rouge_l = rouge_sum / n;
  report.cider_d = cider_sum / n;
  return report;
}

}  // namespace clipcap
