// clipcap: command-line front end.
//
// Exit codes: 0 success, 2 I/O or malformed input, 3 video-id mismatch,
// 4 bad arguments, 5 missing prerequisite.

#include <chrono>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <memory>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "clipcap/corpus_io.hpp"
#include "clipcap/dataset.hpp"
#include "clipcap/ensemble.hpp"
#include "clipcap/feature_pipeline.hpp"
#include "clipcap/synthetic.hpp"
#include "clipcap/text_metrics.hpp"
#include "clipcap/toy_captioner.hpp"

namespace fs = std::filesystem;
using namespace clipcap;

namespace {

constexpr int kExitIo = 2;
constexpr int kExitIdMismatch = 3;
constexpr int kExitBadArgs = 4;
constexpr int kExitPrerequisite = 5;

struct Usage : std::runtime_error {
  using std::runtime_error::runtime_error;
};
struct MissingPrerequisite : std::runtime_error {
  using std::runtime_error::runtime_error;
};

int exit_code(Errc c) {
  switch (c) {
    case Errc::VideoIdMismatch:
    case Errc::MissingReference:
    case Errc::VocabMismatch:
      return kExitIdMismatch;
    case Errc::InvalidArgument:
    case Errc::NonPositiveDuration:
      return kExitBadArgs;
    default:
      return kExitIo;
  }
}

// Every command fills one report; it goes to stdout unless the command's
// primary output already lives there.
struct RunReport {
  Json doc;
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();

  RunReport(const std::string& command, const std::vector<std::string>& argv) {
    doc["command"] = command;
    doc["argv"] = argv;
    doc["config"] = Json::object();
    doc["seeds"] = Json::object();
  }

  void emit(std::ostream& os) {
    doc["wall_time_s"] = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    os << doc.dump(2) << '\n';
  }
};

SampleMode parse_mode(const std::string& m) { return m == "train" ? SampleMode::Train : SampleMode::Test; }

std::uint64_t seed_for(const std::optional<std::uint64_t>& seed, SampleMode mode) {
  if (mode == SampleMode::Train && !seed) throw Usage("--seed is required with --mode train");
  return seed.value_or(0);
}

std::size_t positive(long long v, const char* flag) {
  if (v <= 0) throw Usage(std::string(flag) + " must be positive");
  return static_cast<std::size_t>(v);
}

Json scores_json(const VideoScores& s, const std::set<std::string>& metrics) {
  Json j = Json::object();
  if (metrics.contains("bleu4")) j["bleu4"] = s.bleu4;
  if (metrics.contains("rouge_l")) j["rouge_l"] = s.rouge_l;
  if (metrics.contains("cider_d")) j["cider_d"] = s.cider_d;
  return j;
}

// ---------------------------------------------------------------------------

struct EvalArgs {
  std::string hyp, refs, metrics = "bleu4,rouge_l,cider_d";
};

int cmd_eval(const EvalArgs& a, RunReport& rep) {
  std::set<std::string> metrics;
  std::stringstream ss(a.metrics);
  for (std::string m; std::getline(ss, m, ',');) {
    if (m != "bleu4" && m != "rouge_l" && m != "cider_d") throw Usage("unknown metric '" + m + "'");
    metrics.insert(m);
  }
  if (metrics.empty()) throw Usage("--metrics selects nothing");
  rep.doc["config"] = {{"hyp", a.hyp}, {"refs", a.refs}, {"metrics", metrics}};

  std::map<std::string, TokenSequence> hyps;
  for (const auto& [id, cap] : to_caption_map(read_captions(a.hyp))) hyps.emplace(id, tokenize(cap));
  std::map<std::string, std::vector<TokenSequence>> refs;
  for (const auto& [id, caps] : to_reference_map(read_captions(a.refs))) {
    auto& v = refs[id];
    for (const auto& c : caps) v.push_back(tokenize(c));
  }
  const auto report = corpus_eval(hyps, refs);

  rep.doc["corpus"] = scores_json({report.bleu4, report.rouge_l, report.cider_d}, metrics);
  Json per = Json::array();
  for (const auto& [id, s] : report.per_video) {
    Json row = scores_json(s, metrics);
    row["video_id"] = id;
    per.push_back(row);
  }
  rep.doc["per_video"] = per;
  rep.emit(std::cout);
  std::fprintf(stderr, "eval: %zu videos  bleu4 %.4f  rouge_l %.4f  cider_d %.4f\n", hyps.size(),
               report.bleu4, report.rouge_l, report.cider_d);
  return 0;
}

// ---------------------------------------------------------------------------

struct EnsembleArgs {
  std::vector<std::string> inputs, models, traces;
  std::string data, out;
  long long max_len = 12;
};

int cmd_ensemble(const EnsembleArgs& a, RunReport& rep) {
  const std::size_t max_len = positive(a.max_len, "--max-len");
  if (!a.models.empty() && a.data.empty()) throw Usage("--model needs --data for video features");
  rep.doc["config"] = {{"inputs", a.inputs}, {"models", a.models}, {"traces", a.traces},
                       {"data", a.data},     {"out", a.out},       {"max_len", max_len}};

  std::vector<CaptionMap> singles;
  for (const auto& p : a.inputs) singles.push_back(to_caption_map(read_captions(p)));
  std::vector<std::string> ids;
  for (const auto& [id, _] : singles.front()) ids.push_back(id);

  std::vector<std::unique_ptr<StepModel>> owned;
  if (!a.models.empty()) {
    const auto videos = read_dataset(a.data, false);
    for (const auto& path : a.models) {
      auto model = read_checkpoint(path);
      auto ctxs = build_contexts(videos, model.vocab, model.segments, SampleMode::Test, 0);
      owned.push_back(std::make_unique<ToyStepModel>(std::move(model), std::move(ctxs)));
    }
  }
  for (const auto& path : a.traces) {
    auto tf = read_trace(path);
    owned.push_back(std::make_unique<ReplayStepModel>(std::move(tf.vocab), std::move(tf.traces)));
  }
  std::vector<StepModel*> models;
  for (auto& m : owned) models.push_back(m.get());

  const auto outcome = run_ensemble(models, singles, ids, max_len);
  write_captions(a.out, from_caption_map(outcome.captions()));

  Json per = Json::array();
  for (const auto& cs : outcome.pool) {
    const auto& r = outcome.results.at(cs.video_id);
    per.push_back({{"video_id", cs.video_id},
                   {"winner", r.winner},
                   {"winner_index", r.winner_index},
                   {"candidates", cs.candidates},
                   {"scores", r.scores}});
  }
  rep.doc["per_video"] = per;
  rep.doc["word_level"] = !models.empty();
  rep.emit(std::cout);
  std::fprintf(stderr, "ensemble: %zu videos, %zu caption inputs, %zu step models -> %s\n", ids.size(),
               singles.size(), models.size(), a.out.c_str());
  return 0;
}

// ---------------------------------------------------------------------------

struct SampleArgs {
  long long n = 0, k = kDefaultSegments;
  std::string mode = "test";
  std::optional<std::uint64_t> seed;
};

int cmd_sample(const SampleArgs& a, RunReport& rep) {
  const std::size_t n = positive(a.n, "--n"), k = positive(a.k, "--k");
  const SampleMode mode = parse_mode(a.mode);
  const std::uint64_t seed = seed_for(a.seed, mode);
  const auto idx = mode == SampleMode::Test ? tsn_test_indices(n, k) : tsn_train_indices(n, {k, seed});
  std::string line;
  for (std::size_t i = 0; i < idx.size(); ++i) line += (i ? " " : "") + std::to_string(idx[i]);
  std::cout << line << '\n';
  rep.doc["config"] = {{"n", n}, {"k", k}, {"mode", a.mode}};
  if (mode == SampleMode::Train) rep.doc["seeds"]["tsn"] = seed;
  rep.doc["indices"] = idx;
  rep.emit(std::cerr);
  return 0;
}

struct FuseArgs {
  std::vector<std::string> features;
  long long k = kDefaultSegments;
  std::string mode = "test", out;
  std::optional<std::uint64_t> seed;
};

int cmd_fuse(const FuseArgs& a, RunReport& rep) {
  const std::size_t k = positive(a.k, "--k");
  const SampleMode mode = parse_mode(a.mode);
  const std::uint64_t seed = seed_for(a.seed, mode);
  std::vector<FeatureSequence> feats;
  Json inputs = Json::array();
  for (const auto& p : a.features) {
    feats.push_back(read_features(p));
    inputs.push_back({{"path", p}, {"frames", feats.back().n_frames()}, {"dim", feats.back().dim()}});
  }
  const FeatureSequence fused{"fused", feats.front().fps, align_and_fuse(feats, k, mode, seed)};
  write_features(a.out, fused);
  rep.doc["config"] = {{"k", k}, {"mode", a.mode}, {"out", a.out}, {"inputs", inputs}};
  if (mode == SampleMode::Train) rep.doc["seeds"]["tsn"] = seed;
  rep.doc["fused"] = {{"frames", fused.n_frames()}, {"dim", fused.dim()}};
  rep.emit(std::cout);
  std::fprintf(stderr, "fuse: %zu inputs -> %zu x %zu\n", feats.size(), fused.n_frames(), fused.dim());
  return 0;
}

struct WindowsArgs {
  double duration = 0, window = kDefaultWindowSeconds, stride = kDefaultStrideSeconds;
};

int cmd_windows(const WindowsArgs& a, RunReport& rep) {
  const auto sched = sliding_windows(a.duration, a.window, a.stride);
  Json clips = Json::array();
  for (const auto& c : sched.clips) {
    std::printf("%.6f %.6f\n", c.start_s, c.end_s);
    clips.push_back({c.start_s, c.end_s});
  }
  std::fflush(stdout);
  rep.doc["config"] = {{"duration", a.duration}, {"window", a.window}, {"stride", a.stride}};
  rep.doc["clips"] = clips;
  rep.emit(std::cerr);
  return 0;
}

// ---------------------------------------------------------------------------

struct TrainArgs {
  std::string stage, data, out, init, curve, mode = "test";
  std::optional<std::uint64_t> seed;
  std::optional<double> lr;
  long long epochs = 1000, steps = 200, k = kDefaultSegments, max_len = 12, samples = 1;
};

int cmd_train(const TrainArgs& a, RunReport& rep) {
  if (a.stage == "scst" && a.init.empty())
    throw MissingPrerequisite("scst needs a stage-one checkpoint (--init)");
  if (!a.seed) throw Usage("--seed is required");
  const std::uint64_t seed = *a.seed;
  const SampleMode mode = parse_mode(a.mode);
  const std::size_t max_len = positive(a.max_len, "--max-len");
  const double lr = a.lr.value_or(a.stage == "xe" ? TrainConfig{}.learning_rate : SCSTConfig{}.learning_rate);
  if (!(lr > 0.0)) throw Usage("--lr must be positive");
  const std::string curve = a.curve.empty() ? a.out + ".curve.jsonl" : a.curve;

  const auto videos = read_dataset(a.data);
  ToyCaptioner model;
  if (!a.init.empty()) {
    model = read_checkpoint(a.init);
  } else {
    model.vocab = vocab_from_references(videos);
    model.segments = positive(a.k, "--k");
  }
  const auto ctxs = build_contexts(videos, model.vocab, model.segments, mode, seed);
  const std::size_t dim = ctxs.begin()->second.v_mean.size();
  if (a.init.empty()) model.params = ToyParams::zeros(model.vocab.size(), dim);
  if (model.params.video_dim() != dim)
    throw Error(Errc::ShapeMismatch, "features are " + std::to_string(dim) + " wide, the checkpoint expects " +
                                         std::to_string(model.params.video_dim()));

  std::string curve_text;
  Json summary;
  if (a.stage == "xe") {
    TrainConfig cfg{lr, positive(a.epochs, "--epochs"), seed, max_len};
    const auto res = xe_train(model.params, xe_examples(videos, ctxs, model.vocab), cfg);
    model.params = res.params;
    for (std::size_t e = 0; e < res.loss_curve.size(); ++e)
      curve_text += Json{{"epoch", e}, {"loss", res.loss_curve[e]}}.dump() + '\n';
    summary = {{"initial_loss", res.loss_curve.front()}, {"final_loss", res.loss_curve.back()}};
    rep.doc["config"] = {{"epochs", cfg.epochs}};
  } else {
    SCSTConfig cfg{positive(a.steps, "--steps"), lr, seed, positive(a.samples, "--samples-per-video"), max_len};
    const auto idf = reference_idf(videos);
    const auto res = scst_train(model, scst_examples(videos, ctxs), idf, cfg);
    model.params = res.params;
    for (std::size_t s = 0; s < res.curve.size(); ++s) {
      const auto& d = res.curve[s];
      curve_text += Json{{"step", s}, {"reward", d.reward}, {"baseline", d.baseline}, {"advantage", d.advantage}}
                        .dump() + '\n';
    }
    summary = {{"first_baseline", res.curve.front().baseline}, {"last_baseline", res.curve.back().baseline}};
    rep.doc["config"] = {{"steps", cfg.steps}, {"samples_per_video", cfg.samples_per_video}};
  }
  write_checkpoint(a.out, model);
  detail::write_file(curve, curve_text);

  // Greedy captions of the trained model on its own training videos.
  const auto caps = greedy_captions(model, ctxs, max_len);
  std::size_t exact = 0;
  for (const auto& v : videos)
    if (std::find(v.references.begin(), v.references.end(), caps.at(v.video_id)) != v.references.end()) ++exact;

  auto& cfgj = rep.doc["config"];
  cfgj["stage"] = a.stage;
  cfgj["data"] = a.data;
  cfgj["init"] = a.init;
  cfgj["out"] = a.out;
  cfgj["curve"] = curve;
  cfgj["learning_rate"] = lr;
  cfgj["segments"] = model.segments;
  cfgj["mode"] = a.mode;
  cfgj["max_len"] = max_len;
  rep.doc["seeds"]["train"] = seed;
  summary["videos"] = videos.size();
  summary["vocab_size"] = model.vocab.size();
  summary["train_exact_match"] = static_cast<double>(exact) / static_cast<double>(videos.size());
  rep.doc["result"] = summary;
  rep.emit(std::cout);
  std::fprintf(stderr, "train %s: %zu videos, exact match %.2f -> %s\n", a.stage.c_str(), videos.size(),
               summary["train_exact_match"].get<double>(), a.out.c_str());
  return 0;
}

struct DecodeArgs {
  std::string checkpoint, data, out, trace, mode = "test";
  std::optional<std::uint64_t> seed;
  long long max_len = 12;
};

int cmd_decode(const DecodeArgs& a, RunReport& rep) {
  const SampleMode mode = parse_mode(a.mode);
  const std::uint64_t seed = seed_for(a.seed, mode);
  const std::size_t max_len = positive(a.max_len, "--max-len");
  const auto model = read_checkpoint(a.checkpoint);
  const auto videos = read_dataset(a.data, false);
  const auto ctxs = build_contexts(videos, model.vocab, model.segments, mode, seed);
  const auto caps = greedy_captions(model, ctxs, max_len);
  write_captions(a.out, from_caption_map(caps));
  if (!a.trace.empty()) {
    TraceFile tf{model.vocab, {}};
    for (const auto& [id, ctx] : ctxs) tf.traces.emplace(id, record_greedy_trace(model.params, ctx, max_len));
    write_trace(a.trace, tf);
  }
  rep.doc["config"] = {{"checkpoint", a.checkpoint}, {"data", a.data},   {"out", a.out},
                       {"trace", a.trace},           {"mode", a.mode},   {"max_len", max_len},
                       {"segments", model.segments}};
  if (mode == SampleMode::Train) rep.doc["seeds"]["tsn"] = seed;
  Json per = Json::array();
  for (const auto& [id, c] : caps) per.push_back({{"video_id", id}, {"caption", c}});
  rep.doc["per_video"] = per;
  rep.emit(std::cout);
  std::fprintf(stderr, "decode: %zu videos -> %s\n", caps.size(), a.out.c_str());
  return 0;
}

struct SynthArgs {
  std::string out;
  long long videos = 50;
  std::uint64_t seed = SyntheticConfig{}.seed;
};

int cmd_synth(const SynthArgs& a, RunReport& rep) {
  SyntheticConfig cfg;
  cfg.num_videos = positive(a.videos, "--videos");
  cfg.seed = a.seed;
  const auto videos = make_synthetic_task(cfg);
  write_dataset(a.out, videos);
  rep.doc["config"] = {{"out", a.out}, {"videos", cfg.num_videos}};
  rep.doc["seeds"]["synth"] = cfg.seed;
  rep.doc["vocab_size"] = vocab_from_references(videos).size();
  rep.emit(std::cout);
  std::fprintf(stderr, "synth: %zu videos -> %s\n", videos.size(), a.out.c_str());
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"clipcap: caption metrics, feature sampling, ensembling and a toy captioner"};
  app.require_subcommand(1);
  const std::vector<std::string> modes{"test", "train"};

  EvalArgs eval;
  auto* e = app.add_subcommand("eval", "Score hypotheses against references");
  e->add_option("--hyp", eval.hyp, "hypothesis captions (JSON lines)")->required();
  e->add_option("--refs", eval.refs, "reference captions (JSON lines)")->required();
  e->add_option("--metrics", eval.metrics, "comma-separated subset of bleu4,rouge_l,cider_d");

  EnsembleArgs ens;
  auto* en = app.add_subcommand("ensemble", "Sentence-level (and optional word-level) ensemble");
  en->add_option("inputs", ens.inputs, "caption files of single models")->required();
  en->add_option("--model", ens.models, "toy checkpoint for the word-level ensemble");
  en->add_option("--trace", ens.traces, "recorded distribution trace for the word-level ensemble");
  en->add_option("--data", ens.data, "data directory with features and subtitles for --model");
  en->add_option("--out", ens.out, "output caption file")->required();
  en->add_option("--max-len", ens.max_len, "word-level caption length limit");

  SampleArgs sample;
  auto* sa = app.add_subcommand("sample", "Print TSN frame indices");
  sa->add_option("--n", sample.n, "number of frames")->required();
  sa->add_option("--k", sample.k, "number of segments");
  sa->add_option("--mode", sample.mode)->check(CLI::IsMember(modes));
  sa->add_option("--seed", sample.seed, "required with --mode train");

  FuseArgs fuse;
  auto* fu = app.add_subcommand("fuse", "Sample and concatenate CFF1 feature files");
  fu->add_option("features", fuse.features, "CFF1 files, fused in the given order")->required();
  fu->add_option("--k", fuse.k, "number of segments");
  fu->add_option("--mode", fuse.mode)->check(CLI::IsMember(modes));
  fu->add_option("--seed", fuse.seed, "required with --mode train");
  fu->add_option("--out", fuse.out, "output CFF1 file")->required();

  WindowsArgs win;
  auto* wi = app.add_subcommand("windows", "Print sliding-window clip boundaries");
  wi->add_option("--duration", win.duration, "video length in seconds")->required();
  wi->add_option("--window", win.window, "clip length in seconds");
  wi->add_option("--stride", win.stride, "clip stride in seconds");

  TrainArgs train;
  auto* tr = app.add_subcommand("train", "Train the toy captioner (xe, then scst)");
  tr->add_option("--stage", train.stage)->required()->check(CLI::IsMember({"xe", "scst"}));
  tr->add_option("--data", train.data, "data directory")->required();
  tr->add_option("--out", train.out, "output checkpoint")->required();
  tr->add_option("--init", train.init, "input checkpoint (required for scst)");
  tr->add_option("--curve", train.curve, "loss/reward curve file (default <out>.curve.jsonl)");
  tr->add_option("--seed", train.seed, "run seed");
  tr->add_option("--lr", train.lr, "learning rate (xe 2.0, scst 0.5)");
  tr->add_option("--epochs", train.epochs, "xe epochs");
  tr->add_option("--steps", train.steps, "scst steps");
  tr->add_option("--samples-per-video", train.samples, "scst samples per video");
  tr->add_option("--k", train.k, "TSN segments for a new model");
  tr->add_option("--mode", train.mode, "TSN sampling of the inputs")->check(CLI::IsMember(modes));
  tr->add_option("--max-len", train.max_len, "caption length limit");

  DecodeArgs dec;
  auto* de = app.add_subcommand("decode", "Greedy captions from a checkpoint");
  de->add_option("--checkpoint", dec.checkpoint)->required();
  de->add_option("--data", dec.data, "data directory with features and subtitles")->required();
  de->add_option("--out", dec.out, "output caption file")->required();
  de->add_option("--trace", dec.trace, "also record per-step distributions");
  de->add_option("--mode", dec.mode)->check(CLI::IsMember(modes));
  de->add_option("--seed", dec.seed, "required with --mode train");
  de->add_option("--max-len", dec.max_len, "caption length limit");

  SynthArgs syn;
  auto* sy = app.add_subcommand("synth", "Write the synthetic captioning task as a data directory");
  sy->add_option("--out", syn.out, "output directory")->required();
  sy->add_option("--videos", syn.videos, "number of videos");
  sy->add_option("--seed", syn.seed, "generator seed");

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& ex) {
    return app.exit(ex);
  } catch (const CLI::ParseError& ex) {
    app.exit(ex);
    return kExitBadArgs;
  }

  const std::vector<std::string> args(argv + 1, argv + argc);
  const std::string name = app.get_subcommands().front()->get_name();
  RunReport rep(name, args);
  try {
    if (*e) return cmd_eval(eval, rep);
    if (*en) return cmd_ensemble(ens, rep);
    if (*sa) return cmd_sample(sample, rep);
    if (*fu) return cmd_fuse(fuse, rep);
    if (*wi) return cmd_windows(win, rep);
    if (*tr) return cmd_train(train, rep);
    if (*de) return cmd_decode(dec, rep);
    if (*sy) return cmd_synth(syn, rep);
  } catch (const Usage& ex) {
    std::fprintf(stderr, "clipcap %s: %s\n", name.c_str(), ex.what());
    return kExitBadArgs;
  } catch (const MissingPrerequisite& ex) {
    std::fprintf(stderr, "clipcap %s: %s\n", name.c_str(), ex.what());
    return kExitPrerequisite;
  } catch (const Error& ex) {
    std::fprintf(stderr, "clipcap %s: %s\n", name.c_str(), ex.what());
    return exit_code(ex.code());
  } catch (const std::exception& ex) {
    std::fprintf(stderr, "clipcap %s: %s\n", name.c_str(), ex.what());
    return kExitIo;
  }
  return kExitBadArgs;
}
