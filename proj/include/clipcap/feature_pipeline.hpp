#pragma once

// Frame and clip index arithmetic: the sliding-window clip schedule used for
// motion features, TSN segment sampling, multi-extractor concatenation and
// token-type assembly of the bimodal (video + subtitle) input.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "clipcap/error.hpp"
#include "clipcap/rng.hpp"
#include "clipcap/text_metrics.hpp"

namespace clipcap {

/// Dense row-major matrix of doubles.
class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}
  Matrix(std::size_t rows, std::size_t cols, std::vector<double> data)
      : rows_(rows), cols_(cols), data_(std::move(data)) {
    if (data_.size() != rows_ * cols_) throw Error(Errc::ShapeMismatch, "matrix data size");
  }

  std::size_t rows() const noexcept { return rows_; }
  std::size_t cols() const noexcept { return cols_; }
  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }
  std::span<const double> row(std::size_t r) const { return {data_.data() + r * cols_, cols_}; }
  std::span<double> row(std::size_t r) { return {data_.data() + r * cols_, cols_}; }
  const std::vector<double>& data() const noexcept { return data_; }
  std::vector<double>& data() noexcept { return data_; }

  /// Column-wise mean over rows.
  std::vector<double> column_mean() const {
    std::vector<double> m(cols_, 0.0);
    for (std::size_t r = 0; r < rows_; ++r)
      for (std::size_t c = 0; c < cols_; ++c) m[c] += (*this)(r, c);
    if (rows_ > 0)
      for (double& v : m) v /= static_cast<double>(rows_);
    return m;
  }

  friend bool operator==(const Matrix&, const Matrix&) = default;

 private:
  std::size_t rows_ = 0;
  std::size_t cols_ = 0;
  std::vector<double> data_;
};

/// Per-frame features from one extractor.
struct FeatureSequence {
  std::string name;
  double fps = 10.0;
  Matrix frames;  // n_frames x dim

  std::size_t n_frames() const noexcept { return frames.rows(); }
  std::size_t dim() const noexcept { return frames.cols(); }

  void validate() const {
    if (n_frames() == 0 || dim() == 0)
      throw Error(Errc::ShapeMismatch, "feature sequence '" + name + "' is empty");
    if (!(fps > 0.0)) throw Error(Errc::InvalidArgument, "fps must be positive");
    for (double v : frames.data())
      if (!std::isfinite(v))
        throw Error(Errc::NonFiniteValue, "feature sequence '" + name + "' has a non-finite value");
  }
};

// ---------------------------------------------------------------------------
// Sliding-window clip schedule

inline constexpr double kDefaultWindowSeconds = 1.5;
inline constexpr double kDefaultStrideSeconds = 0.3;
inline constexpr double kWindowTolerance = 1e-9;

struct ClipWindow {
  double start_s;
  double end_s;
};

struct ClipWindowSchedule {
  double window_s = kDefaultWindowSeconds;
  double stride_s = kDefaultStrideSeconds;
  std::vector<ClipWindow> clips;
};

/// Windows [t, t + window] for t = 0, stride, 2 stride, ... that fit inside
/// the duration. A video shorter than one window yields the single clip
/// [0, duration].
inline ClipWindowSchedule sliding_windows(double duration_s,
                                          double window_s = kDefaultWindowSeconds,
                                          double stride_s = kDefaultStrideSeconds) {
  if (!(duration_s > 0.0) || !std::isfinite(duration_s))
    throw Error(Errc::NonPositiveDuration, "duration must be positive");
  if (!(window_s > 0.0) || !(stride_s > 0.0) || !std::isfinite(window_s) || !std::isfinite(stride_s))
    throw Error(Errc::InvalidArgument, "window and stride must be positive");
  ClipWindowSchedule sched{window_s, stride_s, {}};
  if (duration_s < window_s) {
    sched.clips.push_back({0.0, duration_s});
    return sched;
  }
  for (std::size_t j = 0;; ++j) {
    const double t = static_cast<double>(j) * stride_s;
    if (t + window_s > duration_s + kWindowTolerance) break;
    sched.clips.push_back({t, t + window_s});
  }
  return sched;
}

// ---------------------------------------------------------------------------
// TSN sampling

inline constexpr std::size_t kDefaultSegments = 20;

struct TSNConfig {
  std::size_t k = kDefaultSegments;
  std::uint64_t seed = 0;
};

/// Segment centers: floor((i + 0.5) n / k), evaluated exactly in integers.
inline std::vector<std::size_t> tsn_test_indices(std::size_t n_frames, std::size_t k) {
  if (n_frames == 0) throw Error(Errc::InvalidArgument, "n_frames must be positive");
  if (k == 0) throw Error(Errc::InvalidArgument, "k must be positive");
  std::vector<std::size_t> idx(k);
  for (std::size_t i = 0; i < k; ++i) {
    const auto center = static_cast<std::size_t>(
        (static_cast<uint128_t>(2 * i + 1) * n_frames) / (2 * k));
    idx[i] = std::min(center, n_frames - 1);
  }
  return idx;
}

/// One uniformly drawn frame per segment [floor(i n/k), floor((i+1) n/k)).
/// With fewer frames than segments the last frame is repeated, which makes
/// the result the test-mode indices of the padded sequence.
inline std::vector<std::size_t> tsn_train_indices(std::size_t n_frames, const TSNConfig& cfg) {
  if (n_frames == 0) throw Error(Errc::InvalidArgument, "n_frames must be positive");
  const std::size_t k = cfg.k;
  if (k == 0) throw Error(Errc::InvalidArgument, "k must be positive");
  std::vector<std::size_t> idx(k);
  if (n_frames < k) {
    const auto padded = tsn_test_indices(k, k);
    for (std::size_t i = 0; i < k; ++i) idx[i] = std::min(padded[i], n_frames - 1);
    return idx;
  }
  SplitMix64 rng(cfg.seed);
  for (std::size_t i = 0; i < k; ++i) {
    const std::size_t lo = i * n_frames / k;
    const std::size_t hi = (i + 1) * n_frames / k;
    idx[i] = lo + static_cast<std::size_t>(rng.below(hi - lo));
  }
  return idx;
}

// ---------------------------------------------------------------------------
// Fusion

enum class SampleMode { Train, Test };

/// How train-mode sampling seeds each extractor: Independent derives one
/// stream per feature position, Shared reuses the run seed for all.
enum class SeedPolicy { Independent, Shared };

/// Samples each sequence to k rows and concatenates them column-wise in
/// input order.
inline Matrix align_and_fuse(std::span<const FeatureSequence> features, std::size_t k,
                             SampleMode mode, std::uint64_t seed,
                             SeedPolicy policy = SeedPolicy::Independent) {
  if (features.empty()) throw Error(Errc::EmptyFeatureList, "nothing to fuse");
  if (k == 0) throw Error(Errc::InvalidArgument, "k must be positive");
  std::size_t width = 0;
  for (const auto& f : features) {
    f.validate();
    width += f.dim();
  }
  Matrix fused(k, width);
  std::size_t col = 0;
  for (std::size_t pos = 0; pos < features.size(); ++pos) {
    const auto& f = features[pos];
    std::vector<std::size_t> rows;
    if (mode == SampleMode::Test) {
      rows = tsn_test_indices(f.n_frames(), k);
    } else {
      const std::uint64_t s = policy == SeedPolicy::Independent ? derive_seed(seed, pos) : seed;
      rows = tsn_train_indices(f.n_frames(), TSNConfig{k, s});
    }
    for (std::size_t r = 0; r < k; ++r) {
      const auto src = f.frames.row(rows[r]);
      for (std::size_t c = 0; c < src.size(); ++c) fused(r, col + c) = src[c];
    }
    col += f.dim();
  }
  return fused;
}

// ---------------------------------------------------------------------------
// Bimodal assembly

inline constexpr int kVideoTokenType = 0;
inline constexpr int kTextTokenType = 1;

struct TokenTypedSequence {
  Matrix video_part;
  TokenSequence subtitle_tokens;
  std::vector<int> type_ids;
};

inline TokenTypedSequence assemble_bimodal(Matrix fused, std::string_view subtitle) {
  if (fused.rows() == 0) throw Error(Errc::ShapeMismatch, "fused matrix has no rows");
  TokenTypedSequence out;
  out.subtitle_tokens = tokenize(subtitle);
  out.type_ids.assign(fused.rows(), kVideoTokenType);
  out.type_ids.insert(out.type_ids.end(), out.subtitle_tokens.size(), kTextTokenType);
  out.video_part = std::move(fused);
  return out;
}

}  // namespace clipcap
