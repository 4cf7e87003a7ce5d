#pragma once

// Deterministic synthetic captioning task. Every video has a subject, an
// action and an object; two feature extractors encode them as noisy one-hot
// frames, the subtitle names the object, and the reference captions are a
// fixed function of the three attributes.

#include <array>
#include <cstdint>
#include <cstdio>
#include <string>
#include <vector>

#include "clipcap/dataset.hpp"
#include "clipcap/feature_pipeline.hpp"
#include "clipcap/rng.hpp"

namespace clipcap {

struct SyntheticConfig {
  std::size_t num_videos = 50;
  std::uint64_t seed = 2021;
  std::size_t min_frames = 24;
  std::size_t max_frames = 64;
  double noise = 0.35;
};

namespace synthetic {

inline constexpr std::array<const char*, 6> kSubjects = {"man", "woman", "dog", "cat", "child", "bird"};
inline constexpr std::array<const char*, 6> kActions = {"runs", "jumps", "eats", "plays", "sits", "rolls"};
inline constexpr std::array<const char*, 6> kObjects = {"ball", "food", "grass", "table", "toy", "box"};

inline constexpr std::size_t kAppearanceDim = kSubjects.size() + kObjects.size();
inline constexpr std::size_t kMotionDim = kActions.size() + 2;

}  // namespace synthetic

/// Reference captions for one attribute triple.
inline std::vector<std::string> synthetic_references(std::size_t s, std::size_t a, std::size_t o) {
  using namespace synthetic;
  const std::string subj = kSubjects[s], act = kActions[a], obj = kObjects[o];
  return {
      "a " + subj + " " + act + " with the " + obj,
      "a " + subj + " " + act,
      subj + " " + act,
  };
}

inline std::vector<VideoRecord> make_synthetic_task(const SyntheticConfig& cfg = {}) {
  using namespace synthetic;
  SplitMix64 rng(cfg.seed);
  const auto noise = [&] { return cfg.noise * (2.0 * rng.uniform() - 1.0); };
  std::vector<VideoRecord> out;
  out.reserve(cfg.num_videos);
  for (std::size_t i = 0; i < cfg.num_videos; ++i) {
    VideoRecord v;
    char id[32];
    std::snprintf(id, sizeof id, "vid%03zu", i);
    v.video_id = id;
    const std::size_t subject = rng.below(kSubjects.size());
    const std::size_t action = rng.below(kActions.size());
    const std::size_t object = rng.below(kObjects.size());
    const std::size_t n = cfg.min_frames + rng.below(cfg.max_frames - cfg.min_frames + 1);

    Matrix app(n, kAppearanceDim), mot(n, kMotionDim);
    for (std::size_t f = 0; f < n; ++f) {
      for (std::size_t c = 0; c < kAppearanceDim; ++c) app(f, c) = noise();
      for (std::size_t c = 0; c < kMotionDim; ++c) mot(f, c) = noise();
      app(f, subject) += 1.0;
      app(f, kSubjects.size() + object) += 1.0;
      mot(f, action) += 1.0;
    }
    // Stored features are float32, so round here to keep files and memory equal.
    for (auto* m : {&app, &mot})
      for (double& x : m->data()) x = static_cast<float>(x);
    v.features.push_back({"appearance", 10.0, std::move(app)});
    v.features.push_back({"motion", 10.0, std::move(mot)});
    v.subtitle = std::string("the ") + kObjects[object];
    v.references = synthetic_references(subject, action, object);
    out.push_back(std::move(v));
  }
  return out;
}

}  // namespace clipcap
