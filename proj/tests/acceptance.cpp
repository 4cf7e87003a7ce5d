// Acceptance run: one PASS/FAIL line per criterion, non-zero exit on any failure.

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "clipcap/corpus_io.hpp"
#include "clipcap/dataset.hpp"
#include "clipcap/ensemble.hpp"
#include "clipcap/feature_pipeline.hpp"
#include "clipcap/synthetic.hpp"
#include "clipcap/text_metrics.hpp"
#include "clipcap/toy_captioner.hpp"
#include "oracle/brute_consensus.hpp"
#include "oracle/brute_metrics.hpp"

using namespace clipcap;
namespace fs = std::filesystem;

namespace {

struct Outcome {
  bool pass;
  std::string detail;
};

using Clock = std::chrono::steady_clock;

double seconds_since(Clock::time_point t0) {
  return std::chrono::duration<double>(Clock::now() - t0).count();
}

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof buf, f, args...);
  return buf;
}

template <typename Fn>
Errc error_code(Fn&& fn, bool& threw) {
  threw = false;
  try {
    fn();
  } catch (const Error& e) {
    threw = true;
    return e.code();
  }
  return Errc::IoError;
}

template <typename Fn>
bool raises(Errc want, Fn&& fn) {
  bool threw;
  const Errc got = error_code(fn, threw);
  return threw && got == want;
}

ToyParams random_params(std::size_t v, std::size_t d, SplitMix64& rng, double scale) {
  auto p = ToyParams::zeros(v, d);
  for (std::size_t i = 0; i < p.num_parameters(); ++i) p.flat(i) = scale * (2 * rng.uniform() - 1);
  return p;
}

VideoContext random_context(std::size_t v, std::size_t d, SplitMix64& rng) {
  VideoContext ctx;
  for (std::size_t i = 0; i < d; ++i) ctx.v_mean.push_back(2 * rng.uniform() - 1);
  ctx.sub_bow.assign(v, 0.0);
  ctx.sub_bow[4 + rng.below(v - 4)] += 1.0;
  return ctx;
}

Vocab letters_vocab(std::size_t words) {
  std::vector<std::string> t{"<pad>", "<bos>", "<eos>", "<unk>"};
  for (std::size_t i = 0; i < words; ++i) t.push_back("w" + std::to_string(i));
  return Vocab(t);
}

// ---------------------------------------------------------------------------

Outcome metric_oracle() {
  const auto t0 = Clock::now();
  const auto hyp_recs = read_captions(CLIPCAP_FIXTURES "/pairs_hyps.jsonl");
  const auto ref_recs = read_captions(CLIPCAP_FIXTURES "/pairs_refs.jsonl");
  std::map<std::string, TokenSequence> hyps;
  std::map<std::string, std::vector<TokenSequence>> refs;
  std::map<std::string, oracle::Tokens> o_hyps;
  std::map<std::string, std::vector<oracle::Tokens>> o_refs;
  for (const auto& r : hyp_recs) {
    hyps.emplace(r.video_id, tokenize(r.captions[0]));
    o_hyps.emplace(r.video_id, oracle::tokens(r.captions[0]));
  }
  for (const auto& r : ref_recs)
    for (const auto& c : r.captions) {
      refs[r.video_id].push_back(tokenize(c));
      o_refs[r.video_id].push_back(oracle::tokens(c));
    }
  const auto rep = corpus_eval(hyps, refs);

  oracle::Idf idf;
  for (const auto& [id, _] : o_hyps) idf.docs.push_back(o_refs.at(id));
  oracle::Bleu pooled;
  double rouge_sum = 0, cider_sum = 0, worst = 0;
  for (const auto& [id, h] : o_hyps) {
    const auto& r = o_refs.at(id);
    const auto b = oracle::bleu_counts(h, r);
    for (int n = 0; n < 4; ++n) {
      pooled.match[n] += b.match[n];
      pooled.total[n] += b.total[n];
    }
    pooled.c += b.c;
    pooled.r += b.r;
    const double rg = oracle::rouge(h, r), cd = oracle::cider(h, r, idf);
    rouge_sum += rg;
    cider_sum += cd;
    const auto& got = rep.per_video.at(id);
    worst = std::max({worst, std::abs(got.bleu4 - oracle::bleu_score(b)), std::abs(got.rouge_l - rg),
                      std::abs(got.cider_d - cd)});
  }
  const double n = static_cast<double>(o_hyps.size());
  worst = std::max({worst, std::abs(rep.bleu4 - oracle::bleu_score(pooled)),
                    std::abs(rep.rouge_l - rouge_sum / n), std::abs(rep.cider_d - cider_sum / n)});
  // frozen from the independent script
  const double frozen = std::max({std::abs(rep.bleu4 - 0.3417939812535829), std::abs(rep.rouge_l - 0.67366181957207816),
                                  std::abs(rep.cider_d - 2.7419208602653149)});
  const double secs = seconds_since(t0);
  return {hyps.size() == 20 && worst < 1e-6 && frozen < 1e-6 && secs < 1.0,
          fmt("%zu pairs, max |diff| %.2e vs oracle, %.2e vs frozen, %.3fs", hyps.size(), worst, frozen, secs)};
}

Outcome identity() {
  const std::vector<std::string> caps{"a man slices an onion in the kitchen", "two dogs chase a red ball",
                                      "a woman is singing on a big stage", "the child rides a blue bike"};
  std::map<std::string, TokenSequence> hyps;
  std::map<std::string, std::vector<TokenSequence>> refs;
  for (std::size_t i = 0; i < caps.size(); ++i) {
    hyps.emplace("v" + std::to_string(i), tokenize(caps[i]));
    refs["v" + std::to_string(i)] = {tokenize(caps[i])};
  }
  const auto rep = corpus_eval(hyps, refs);
  double worst = std::max({std::abs(rep.bleu4 - 1), std::abs(rep.rouge_l - 1), std::abs(rep.cider_d - 10)});
  for (const auto& [id, s] : rep.per_video)
    worst = std::max({worst, std::abs(s.bleu4 - 1), std::abs(s.rouge_l - 1), std::abs(s.cider_d - 10)});
  return {worst <= 1e-9, fmt("bleu4 %.12f rouge_l %.12f cider_d %.12f", rep.bleu4, rep.rouge_l, rep.cider_d)};
}

Outcome tsn_properties() {
  const auto t0 = Clock::now();
  SplitMix64 gen(1000);
  std::size_t violations = 0;
  for (int trial = 0; trial < 1000; ++trial) {
    const std::size_t k = 1 + gen.below(64);
    const std::size_t n = k + gen.below(1000);
    const auto idx = tsn_train_indices(n, {k, gen.next()});
    for (std::size_t i = 0; i < k; ++i)
      if (idx[i] < i * n / k || idx[i] >= (i + 1) * n / k) ++violations;
  }
  std::size_t mismatches = 0;
  for (std::size_t n = 1; n <= 64; ++n)
    for (std::size_t k = 1; k <= 64; ++k) {
      const auto idx = tsn_test_indices(n, k);
      for (std::size_t i = 0; i < k; ++i) {
        const std::size_t closed = (2 * i + 1) * n / (2 * k);
        if (idx[i] != closed) ++mismatches;
      }
    }
  const double secs = seconds_since(t0);
  return {violations == 0 && mismatches == 0 && secs < 5.0,
          fmt("train violations %zu, test mismatches %zu over 4096 (n,k), %.3fs", violations, mismatches, secs)};
}

Outcome fusion_width() {
  std::vector<FeatureSequence> feats;
  std::size_t n = 30;
  for (std::size_t d : {512, 512, 768, 2304}) feats.push_back({"f", 10.0, Matrix(n++, d, 0.5)});
  const auto fused = align_and_fuse(feats, kDefaultSegments, SampleMode::Test, 0);
  const auto fused_train = align_and_fuse(feats, kDefaultSegments, SampleMode::Train, 3);
  return {fused.cols() == 4096 && fused_train.cols() == 4096,
          fmt("512+512+768+2304 -> %zu", fused.cols())};
}

Outcome windows() {
  const auto six = sliding_windows(3.0, 1.5, 0.3);
  const auto one = sliding_windows(1.0, 1.5, 0.3);
  return {six.clips.size() == 6 && one.clips.size() == 1 && one.clips[0].end_s == 1.0,
          fmt("3.0s -> %zu clips, 1.0s -> %zu clip", six.clips.size(), one.clips.size())};
}

Outcome word_level_degeneracy() {
  SplitMix64 rng(606);
  std::size_t agree = 0;
  for (int m = 0; m < 50; ++m) {
    const std::size_t v = 6 + rng.below(20), d = 1 + rng.below(8);
    const auto vocab = letters_vocab(v - 4);
    std::map<std::string, VideoContext> ctxs;
    for (int i = 0; i < 3; ++i) ctxs["v" + std::to_string(i)] = random_context(v, d, rng);
    const ToyCaptioner model{vocab, random_params(v, d, rng, 3.0), 20};
    ToyStepModel sm(model, ctxs);
    StepModel* models[] = {&sm};
    bool same = true;
    for (const auto& [id, ctx] : ctxs)
      same = same && word_level_decode(models, id, 12) == greedy_decode(model.params, ctx, 12);
    agree += same;
  }
  return {agree == 50, fmt("%zu/50 models agree token-for-token", agree)};
}

Outcome consensus_majority() {
  SplitMix64 rng(707);
  std::size_t word = 0;
  const auto fresh = [&] { return "t" + std::to_string(word++); };
  std::size_t wins = 0, oracle_agree = 0;
  double worst = 0;
  for (int trial = 0; trial < 200; ++trial) {
    // Several videos so the pool IDF is non-trivial; every video has its own
    // majority caption and pairwise-disjoint others.
    const std::size_t n_videos = 2 + rng.below(3);
    std::vector<CandidateSet> pool;
    std::vector<std::string> majority;
    std::map<std::string, std::vector<std::string>> o_pool;
    for (std::size_t v = 0; v < n_videos; ++v) {
      std::string dup;
      for (std::size_t i = 0, len = 1 + rng.below(8); i < len; ++i) dup += (i ? " " : "") + fresh();
      std::vector<std::string> cands(2 + rng.below(3), dup);
      for (std::size_t o = 0, n_other = rng.below(6); o < n_other; ++o) {
        std::string c;
        for (std::size_t i = 0, len = 1 + rng.below(10); i < len; ++i) c += (i ? " " : "") + fresh();
        cands.push_back(c);
      }
      for (std::size_t i = cands.size(); i > 1; --i) std::swap(cands[i - 1], cands[rng.below(i)]);
      const std::string id = "v" + std::to_string(v);
      pool.push_back({id, cands});
      o_pool[id] = cands;
      majority.push_back(dup);
    }
    const auto idf = build_pool_idf(pool);
    const auto expect = oracle::consensus(o_pool);
    bool all_win = true, all_agree = true;
    for (std::size_t v = 0; v < n_videos; ++v) {
      const auto r = sentence_consensus(pool[v], idf);
      const auto& o = expect.at(pool[v].video_id);
      all_win = all_win && r.winner == majority[v];
      all_agree = all_agree && r.winner_index == o.winner;
      for (std::size_t i = 0; i < r.scores.size(); ++i) worst = std::max(worst, std::abs(r.scores[i] - o.scores[i]));
    }
    wins += all_win;
    oracle_agree += all_agree;
  }
  return {wins == 200 && oracle_agree == 200 && worst < 1e-9,
          fmt("majority won %zu/200 pools, oracle agreed %zu/200, max score diff %.2e", wins, oracle_agree, worst)};
}

Outcome gradient_check_suite() {
  SplitMix64 rng(808);
  double worst = 0;
  for (int i = 0; i < 20; ++i) {
    const std::size_t v = 5 + rng.below(5), d = 1 + rng.below(4);
    const auto p = random_params(v, d, rng, i % 2 ? 1.0 : 0.2);
    GradientCheckInstance inst{random_context(v, d, rng), {}, {}};
    for (std::size_t t = 0, n = 1 + rng.below(5); t < n; ++t)
      inst.target.push_back(static_cast<TokenId>(3 + rng.below(v - 3)));
    SplitMix64 srng(rng.next());
    inst.path = sample_decode(p, inst.ctx, 6, srng).path;
    worst = std::max(worst, gradient_check(p, inst, kFiniteDifferenceStep));
  }
  return {worst < 1e-4, fmt("max relative error %.2e over 20 instances", worst)};
}

double corpus_cider(const ToyCaptioner& m, const std::vector<VideoRecord>& videos,
                    const std::map<std::string, VideoContext>& ctxs, const CorpusIdf& idf) {
  const auto caps = greedy_captions(m, ctxs, 12);
  const auto ex = scst_examples(videos, ctxs);
  double total = 0;
  for (std::size_t i = 0; i < videos.size(); ++i) total += cider_d(tokenize(caps.at(videos[i].video_id)), ex[i].refs, idf);
  return total / static_cast<double>(videos.size());
}

Outcome scst_improvement() {
  const auto t0 = Clock::now();
  const auto videos = make_synthetic_task();
  const auto vocab = vocab_from_references(videos);
  const auto ctxs = build_contexts(videos, vocab, kDefaultSegments, SampleMode::Test, 0);
  const auto idf = reference_idf(videos);
  const std::size_t dim = ctxs.begin()->second.v_mean.size();
  ToyCaptioner model{vocab, ToyParams::zeros(vocab.size(), dim), kDefaultSegments};
  model.params = xe_train(model.params, xe_examples(videos, ctxs, vocab), TrainConfig{}).params;
  const double base = corpus_cider(model, videos, ctxs, idf);
  const auto batch = scst_examples(videos, ctxs);
  int improved = 0;
  double worst_drop = 0;
  std::string deltas;
  for (std::uint64_t seed = 1; seed <= 5; ++seed) {
    SCSTConfig cfg;
    cfg.seed = seed;
    ToyCaptioner after = model;
    after.params = scst_train(model, batch, idf, cfg).params;
    const double delta = corpus_cider(after, videos, ctxs, idf) - base;
    improved += delta > 0;
    worst_drop = std::max(worst_drop, -delta);
    deltas += fmt(" %+.4f", delta);
  }
  const double secs = seconds_since(t0);
  return {videos.size() == 50 && vocab.size() == 25 && improved >= 3 && worst_drop <= 0.1 && secs < 120,
          fmt("V=%zu, xe cider %.4f, deltas%s, %d/5 improved, %.1fs", vocab.size(), base, deltas.c_str(), improved,
              secs)};
}

Outcome determinism() {
  const auto run_once = [] {
    SyntheticConfig sc;
    sc.num_videos = 12;
    const auto videos = make_synthetic_task(sc);
    const auto vocab = vocab_from_references(videos);
    const auto ctxs = build_contexts(videos, vocab, kDefaultSegments, SampleMode::Train, 99);
    ToyCaptioner m{vocab, ToyParams::zeros(vocab.size(), ctxs.begin()->second.v_mean.size()), kDefaultSegments};
    TrainConfig tc;
    tc.epochs = 100;
    m.params = xe_train(m.params, xe_examples(videos, ctxs, vocab), tc).params;
    SCSTConfig cfg;
    cfg.steps = 30;
    cfg.seed = 5;
    m.params = scst_train(m, scst_examples(videos, ctxs), reference_idf(videos), cfg).params;
    const std::string ckpt = format_checkpoint(m);

    std::string indices;
    for (std::uint64_t s = 0; s < 50; ++s)
      for (auto i : tsn_train_indices(123, {20, s})) indices += std::to_string(i) + ' ';

    ToyStepModel sm(m, ctxs);
    StepModel* models[] = {&sm};
    const CaptionMap a = greedy_captions(m, ctxs, 12);
    CaptionMap b;
    for (const auto& v : videos) b[v.video_id] = v.references[1];
    std::vector<std::string> ids;
    for (const auto& v : videos) ids.push_back(v.video_id);
    const std::vector<CaptionMap> singles{a, b};
    const std::string ens = format_captions(from_caption_map(full_ensemble(models, singles, ids, 12)));
    return std::vector<std::string>{ckpt, indices, ens};
  };
  const auto first = run_once();
  const auto second = run_once();
  return {first == second, fmt("checkpoint %zu B, indices %zu B, ensemble %zu B identical across runs",
                               first[0].size(), first[1].size(), first[2].size())};
}

Outcome round_trips() {
  const fs::path dir = fs::temp_directory_path() / "clipcap_acceptance";
  fs::remove_all(dir);
  fs::create_directories(dir);
  std::vector<std::string> failed;
  const auto check = [&](bool ok, const char* what) {
    if (!ok) failed.push_back(what);
  };

  SplitMix64 rng(1111);
  Matrix m(7, 5);
  for (double& x : m.data()) x = static_cast<float>(rng.uniform() * 10 - 5);
  const FeatureSequence f{"feat", 10.0, m};
  write_features(dir / "feat.cff", f);
  const auto f2 = read_features(dir / "feat.cff");
  write_features(dir / "feat2.cff", f2);
  check(f2.frames == f.frames && detail::read_file(dir / "feat.cff") == detail::read_file(dir / "feat2.cff"),
        "cff1 round trip");

  const std::vector<CaptionRecord> caps{CaptionRecord::hypothesis("a", "one two"),
                                        CaptionRecord::references("b", {"x", "y z"})};
  write_captions(dir / "c.jsonl", caps);
  check(read_captions(dir / "c.jsonl") == caps, "caption round trip");

  const auto vocab = letters_vocab(4);
  const auto p = random_params(vocab.size(), 3, rng, 2.0);
  TraceFile tf{vocab, {}};
  for (int i = 0; i < 4; ++i) tf.traces["v" + std::to_string(i)] = record_greedy_trace(p, random_context(vocab.size(), 3, rng), 6);
  write_trace(dir / "t.jsonl", tf);
  check(read_trace(dir / "t.jsonl") == tf, "trace round trip");

  const ToyCaptioner model{vocab, p, 11};
  write_checkpoint(dir / "m.json", model);
  check(read_checkpoint(dir / "m.json") == model, "checkpoint round trip");

  const std::string good = encode_cff1(f);
  check(raises(Errc::BadMagic, [&] { decode_cff1("XFF1" + good.substr(4)); }), "bad magic");
  std::string more = good;
  more[4] = 8;
  check(raises(Errc::TruncatedFile, [&] { decode_cff1(more); }), "truncated cff1");
  std::string nan = good;
  nan[12] = 0, nan[13] = 0, nan[14] = static_cast<char>(0xc0), nan[15] = 0x7f;
  check(raises(Errc::NonFiniteValue, [&] { decode_cff1(nan); }), "non-finite cff1");
  check(raises(Errc::DuplicateVideoId, [] {
          parse_captions("{\"video_id\":\"a\",\"caption\":\"x\"}\n{\"video_id\":\"a\",\"caption\":\"y\"}\n");
        }),
        "duplicate caption id");
  check(raises(Errc::ParseError, [] { parse_captions("{\"video_id\": 3}\n"); }), "malformed caption");
  const std::string header = Json{{"vocab", vocab.tokens()}}.dump() + '\n';
  check(raises(Errc::DistributionNotNormalized,
               [&] { parse_trace(header + R"({"video_id":"v","steps":[[0,0,0.8,0,0,0,0,0]]})" + "\n"); }),
        "unnormalized trace");
  check(raises(Errc::ShapeMismatch, [&] { parse_trace(header + R"({"video_id":"v","steps":[[0,0,1]]})" + "\n"); }),
        "short trace step");
  auto j = Json::parse(format_checkpoint(model));
  j["w_vid"]["shape"] = {8, 2};
  check(raises(Errc::ShapeMismatch, [&] { parse_checkpoint(j.dump()); }), "checkpoint shape");
  check(raises(Errc::ParseError, [] { parse_checkpoint("{"); }), "checkpoint syntax");
  fs::remove_all(dir);

  std::string detail = failed.empty() ? "4 formats round-trip, 9 malformed inputs rejected" : "failed:";
  for (const auto& s : failed) detail += " [" + s + "]";
  return {failed.empty(), detail};
}

}  // namespace

int main() {
  const std::vector<std::pair<const char*, std::function<Outcome()>>> criteria{
      {"metric oracle equivalence", metric_oracle},
      {"identity suite", identity},
      {"TSN properties", tsn_properties},
      {"fusion width", fusion_width},
      {"sliding windows", windows},
      {"word-level ensemble degeneracy", word_level_degeneracy},
      {"sentence-level consensus majority", consensus_majority},
      {"gradient check", gradient_check_suite},
      {"SCST improvement", scst_improvement},
      {"determinism", determinism},
      {"format round-trips", round_trips},
  };
  int failures = 0;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    Outcome o;
    try {
      o = criteria[i].second();
    } catch (const std::exception& e) {
      o = {false, std::string("exception: ") + e.what()};
    }
    failures += !o.pass;
    std::printf("%s %2zu %s: %s\n", o.pass ? "PASS" : "FAIL", i + 1, criteria[i].first, o.detail.c_str());
    std::fflush(stdout);
  }
  std::printf("%zu/%zu criteria passed\n", criteria.size() - failures, criteria.size());
  return failures == 0 ? 0 : 1;
}
