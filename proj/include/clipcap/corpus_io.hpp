#pragma once

// File formats.
//
//   captions   JSON lines. Hypothesis: {"video_id": "v1", "caption": "..."}
//              Reference:  {"video_id": "v1", "captions": ["...", ...]}
//   features   CFF1 binary: "CFF1", u32le n_frames, u32le dim, then
//              n_frames*dim float32le values, row-major.
//   traces     JSON lines. First line {"vocab": [...]}, then one
//              {"video_id": "...", "steps": [[p_0, ..., p_V-1], ...]} per video.
//   checkpoint JSON document holding the vocabulary, segment count and every
//              weight array with its shape. Doubles are written in shortest
//              round-trip form, so reading back is exact.

#include <bit>
#include <cmath>
#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <map>
#include <set>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <json.hpp>

#include "clipcap/ensemble.hpp"
#include "clipcap/error.hpp"
#include "clipcap/feature_pipeline.hpp"
#include "clipcap/toy_captioner.hpp"

namespace clipcap {

using Json = nlohmann::json;

namespace detail {

inline std::string read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(Errc::IoError, "cannot open '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

inline void write_file(const std::filesystem::path& path, std::string_view bytes) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error(Errc::IoError, "cannot write '" + path.string() + "'");
  out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(Errc::IoError, "write failed for '" + path.string() + "'");
}

// Calls fn(line_number, line) for every non-blank line.
template <typename Fn>
void for_each_line(std::string_view text, Fn&& fn) {
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    ++line_no;
    std::string_view line = text.substr(pos, end - pos);
    if (!line.empty() && line.back() == '\r') line.remove_suffix(1);
    if (line.find_first_not_of(" \t") != std::string_view::npos) fn(line_no, line);
    pos = end + 1;
  }
}

inline Json parse_json_line(std::string_view line, std::size_t line_no) {
  try {
    return Json::parse(line);
  } catch (const Json::parse_error& e) {
    throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": " + e.what(), line_no);
  }
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Captions

struct CaptionRecord {
  enum class Kind { Hypothesis, References };

  std::string video_id;
  Kind kind = Kind::Hypothesis;
  std::vector<std::string> captions;  // exactly one for a hypothesis

  static CaptionRecord hypothesis(std::string id, std::string caption) {
    return {std::move(id), Kind::Hypothesis, {std::move(caption)}};
  }
  static CaptionRecord references(std::string id, std::vector<std::string> caps) {
    return {std::move(id), Kind::References, std::move(caps)};
  }

  friend bool operator==(const CaptionRecord&, const CaptionRecord&) = default;
};

inline std::vector<CaptionRecord> parse_captions(std::string_view text) {
  std::vector<CaptionRecord> out;
  std::set<std::string> seen;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto fail = [&](const std::string& why) {
      throw Error(Errc::ParseError, "line " + std::to_string(line_no) + ": " + why, line_no);
    };
    const Json j = detail::parse_json_line(line, line_no);
    if (!j.is_object()) fail("record is not an object");
    if (!j.contains("video_id") || !j["video_id"].is_string()) fail("missing string video_id");
    CaptionRecord rec;
    rec.video_id = j["video_id"].get<std::string>();
    if (rec.video_id.empty()) fail("empty video_id");
    const bool has_one = j.contains("caption");
    const bool has_many = j.contains("captions");
    if (has_one == has_many) fail("expected exactly one of 'caption' or 'captions'");
    if (has_one) {
      if (!j["caption"].is_string()) fail("'caption' must be a string");
      rec.kind = CaptionRecord::Kind::Hypothesis;
      rec.captions.push_back(j["caption"].get<std::string>());
    } else {
      const auto& arr = j["captions"];
      if (!arr.is_array() || arr.empty()) fail("'captions' must be a non-empty array");
      rec.kind = CaptionRecord::Kind::References;
      for (const auto& c : arr) {
        if (!c.is_string()) fail("'captions' entries must be strings");
        rec.captions.push_back(c.get<std::string>());
      }
    }
    if (!seen.insert(rec.video_id).second)
      throw Error(Errc::DuplicateVideoId,
                  "line " + std::to_string(line_no) + ": duplicate video_id '" + rec.video_id + "'",
                  line_no);
    out.push_back(std::move(rec));
  });
  return out;
}

inline std::string format_captions(std::span<const CaptionRecord> records) {
  std::string out;
  for (const auto& r : records) {
    if (r.video_id.empty()) throw Error(Errc::InvalidArgument, "empty video_id");
    Json j;
    j["video_id"] = r.video_id;
    if (r.kind == CaptionRecord::Kind::Hypothesis) {
      if (r.captions.size() != 1) throw Error(Errc::InvalidArgument, "hypothesis needs one caption");
      j["caption"] = r.captions.front();
    } else {
      if (r.captions.empty()) throw Error(Errc::InvalidArgument, "empty reference list");
      j["captions"] = r.captions;
    }
    out += j.dump();
    out += '\n';
  }
  return out;
}

inline std::vector<CaptionRecord> read_captions(const std::filesystem::path& path) {
  return parse_captions(detail::read_file(path));
}

inline void write_captions(const std::filesystem::path& path, std::span<const CaptionRecord> records) {
  detail::write_file(path, format_captions(records));
}

/// video_id -> caption, sorted by id. Reference records contribute their first caption.
inline CaptionMap to_caption_map(std::span<const CaptionRecord> records) {
  CaptionMap m;
  for (const auto& r : records) m.emplace(r.video_id, r.captions.front());
  return m;
}

inline std::map<std::string, std::vector<std::string>> to_reference_map(
    std::span<const CaptionRecord> records) {
  std::map<std::string, std::vector<std::string>> m;
  for (const auto& r : records) m.emplace(r.video_id, r.captions);
  return m;
}

inline std::vector<CaptionRecord> from_caption_map(const CaptionMap& m) {
  std::vector<CaptionRecord> out;
  for (const auto& [id, cap] : m) out.push_back(CaptionRecord::hypothesis(id, cap));
  return out;
}

// ---------------------------------------------------------------------------
// CFF1 features

inline constexpr std::string_view kCffMagic = "CFF1";

namespace detail {

inline void put_u32le(std::string& out, std::uint32_t v) {
  for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xffu));
}

inline std::uint32_t get_u32le(std::string_view in, std::size_t at) {
  std::uint32_t v = 0;
  for (int i = 0; i < 4; ++i)
    v |= static_cast<std::uint32_t>(static_cast<unsigned char>(in[at + i])) << (8 * i);
  return v;
}

}  // namespace detail

/// Values are narrowed to float32; anything that is not finite after
/// narrowing is rejected.
inline std::string encode_cff1(const FeatureSequence& f) {
  if (f.n_frames() == 0 || f.dim() == 0)
    throw Error(Errc::ShapeMismatch, "cannot encode an empty feature sequence");
  if (f.n_frames() > UINT32_MAX || f.dim() > UINT32_MAX)
    throw Error(Errc::ShapeMismatch, "feature sequence too large for CFF1");
  std::string out(kCffMagic);
  out.reserve(12 + 4 * f.frames.data().size());
  detail::put_u32le(out, static_cast<std::uint32_t>(f.n_frames()));
  detail::put_u32le(out, static_cast<std::uint32_t>(f.dim()));
  for (double v : f.frames.data()) {
    const float x = static_cast<float>(v);
    if (!std::isfinite(x)) throw Error(Errc::NonFiniteValue, "feature value not finite as float32");
    detail::put_u32le(out, std::bit_cast<std::uint32_t>(x));
  }
  return out;
}

inline FeatureSequence decode_cff1(std::string_view bytes, std::string name = "features") {
  if (bytes.size() >= 4 && bytes.substr(0, 4) != kCffMagic)
    throw Error(Errc::BadMagic, "not a CFF1 file");
  if (bytes.size() < 12) throw Error(Errc::TruncatedFile, "CFF1 header incomplete");
  const std::uint64_t n = detail::get_u32le(bytes, 4);
  const std::uint64_t dim = detail::get_u32le(bytes, 8);
  if (n == 0 || dim == 0) throw Error(Errc::ShapeMismatch, "CFF1 header declares an empty matrix");
  const std::uint64_t need = 12 + 4 * n * dim;
  if (bytes.size() < need)
    throw Error(Errc::TruncatedFile, "CFF1 payload has " + std::to_string(bytes.size() - 12) +
                                         " bytes, header requires " + std::to_string(need - 12));
  if (bytes.size() > need) throw Error(Errc::ParseError, "trailing bytes after CFF1 payload");
  std::vector<double> data(n * dim);
  for (std::size_t i = 0; i < data.size(); ++i) {
    const float x = std::bit_cast<float>(detail::get_u32le(bytes, 12 + 4 * i));
    if (!std::isfinite(x))
      throw Error(Errc::NonFiniteValue, "non-finite value at element " + std::to_string(i));
    data[i] = x;
  }
  return FeatureSequence{std::move(name), 10.0, Matrix(n, dim, std::move(data))};
}

inline FeatureSequence read_features(const std::filesystem::path& path) {
  return decode_cff1(detail::read_file(path), path.stem().string());
}

inline void write_features(const std::filesystem::path& path, const FeatureSequence& f) {
  detail::write_file(path, encode_cff1(f));
}

// ---------------------------------------------------------------------------
// Distribution traces

struct TraceFile {
  Vocab vocab;
  std::map<std::string, ReplayStepModel::Trace> traces;

  friend bool operator==(const TraceFile&, const TraceFile&) = default;
};

inline TraceFile parse_trace(std::string_view text) {
  TraceFile tf;
  bool have_header = false;
  detail::for_each_line(text, [&](std::size_t line_no, std::string_view line) {
    const auto fail = [&](Errc code, const std::string& why) {
      throw Error(code, "line " + std::to_string(line_no) + ": " + why, line_no);
    };
    const Json j = detail::parse_json_line(line, line_no);
    if (!j.is_object()) fail(Errc::ParseError, "record is not an object");
    if (!have_header) {
      if (!j.contains("vocab") || !j["vocab"].is_array())
        fail(Errc::ParseError, "first record must carry the vocabulary");
      try {
        tf.vocab = Vocab(j["vocab"].get<std::vector<std::string>>());
      } catch (const Json::exception& e) {
        fail(Errc::ParseError, e.what());
      } catch (const Error& e) {
        fail(Errc::ParseError, e.what());
      }
      have_header = true;
      return;
    }
    if (!j.contains("video_id") || !j["video_id"].is_string() ||
        j["video_id"].get<std::string>().empty())
      fail(Errc::ParseError, "missing video_id");
    if (!j.contains("steps") || !j["steps"].is_array()) fail(Errc::ParseError, "missing steps");
    ReplayStepModel::Trace trace;
    for (const auto& step : j["steps"]) {
      if (!step.is_array()) fail(Errc::ParseError, "step is not an array");
      std::vector<double> probs;
      double sum = 0.0;
      for (const auto& x : step) {
        if (!x.is_number()) fail(Errc::ParseError, "probability is not a number");
        const double p = x.get<double>();
        if (!(p >= 0.0) || !std::isfinite(p))
          fail(Errc::DistributionNotNormalized, "negative or non-finite probability");
        probs.push_back(p);
        sum += p;
      }
      if (probs.size() != tf.vocab.size())
        fail(Errc::ShapeMismatch, "step has " + std::to_string(probs.size()) +
                                      " entries, vocabulary has " + std::to_string(tf.vocab.size()));
      if (std::abs(sum - 1.0) > kDistributionTolerance)
        fail(Errc::DistributionNotNormalized, "step sums to " + std::to_string(sum));
      trace.push_back(std::move(probs));
    }
    const auto id = j["video_id"].get<std::string>();
    if (!tf.traces.emplace(id, std::move(trace)).second)
      fail(Errc::DuplicateVideoId, "duplicate video_id '" + id + "'");
  });
  if (!have_header) throw Error(Errc::ParseError, "trace file has no vocabulary header");
  return tf;
}

inline std::string format_trace(const TraceFile& tf) {
  std::string out = Json{{"vocab", tf.vocab.tokens()}}.dump() + '\n';
  for (const auto& [id, steps] : tf.traces) {
    out += Json{{"video_id", id}, {"steps", steps}}.dump();
    out += '\n';
  }
  return out;
}

inline TraceFile read_trace(const std::filesystem::path& path) {
  return parse_trace(detail::read_file(path));
}

inline void write_trace(const std::filesystem::path& path, const TraceFile& tf) {
  detail::write_file(path, format_trace(tf));
}

/// Distributions along the model's own greedy path, final EOS step included.
inline ReplayStepModel::Trace record_greedy_trace(const ToyParams& p, const VideoContext& ctx,
                                                  std::size_t max_len) {
  const auto z = detail::context_logits(p, ctx);
  ReplayStepModel::Trace trace;
  TokenId prev = Vocab::kBos;
  for (std::size_t t = 0; t < max_len; ++t) {
    auto probs = detail::step_probs(p, z, prev);
    const TokenId next = detail::argmax_lowest(probs);
    trace.push_back(std::move(probs));
    if (next == Vocab::kEos) break;
    prev = next;
  }
  return trace;
}

// ---------------------------------------------------------------------------
// Checkpoints

inline constexpr std::string_view kCheckpointFormat = "clipcap-toy-checkpoint";
inline constexpr int kCheckpointVersion = 1;

namespace detail {

inline Json matrix_json(const Matrix& m) {
  return Json{{"shape", {m.rows(), m.cols()}}, {"data", m.data()}};
}

inline Matrix matrix_from_json(const Json& j, std::size_t rows, std::size_t cols,
                               const std::string& name) {
  const auto shape = j.at("shape").get<std::vector<std::size_t>>();
  if (shape.size() != 2 || shape[0] != rows || shape[1] != cols)
    throw Error(Errc::ShapeMismatch, "'" + name + "' has the wrong shape");
  auto data = j.at("data").get<std::vector<double>>();
  if (data.size() != rows * cols)
    throw Error(Errc::ShapeMismatch, "'" + name + "' data length does not match its shape");
  return Matrix(rows, cols, std::move(data));
}

}  // namespace detail

inline std::string format_checkpoint(const ToyCaptioner& model) {
  model.params.validate();
  if (model.params.vocab_size() != model.vocab.size())
    throw Error(Errc::ShapeMismatch, "parameters do not match the vocabulary");
  Json j;
  j["format"] = kCheckpointFormat;
  j["version"] = kCheckpointVersion;
  j["vocab"] = model.vocab.tokens();
  j["vocab_size"] = model.vocab.size();
  j["video_dim"] = model.params.video_dim();
  j["segments"] = model.segments;
  j["w_prev"] = detail::matrix_json(model.params.w_prev);
  j["w_vid"] = detail::matrix_json(model.params.w_vid);
  j["w_sub"] = detail::matrix_json(model.params.w_sub);
  j["bias"] = Json{{"shape", {model.params.bias.size()}}, {"data", model.params.bias}};
  return j.dump(1) + '\n';
}

inline ToyCaptioner parse_checkpoint(std::string_view text) {
  Json j;
  try {
    j = Json::parse(text);
  } catch (const Json::parse_error& e) {
    throw Error(Errc::ParseError, std::string("checkpoint: ") + e.what());
  }
  try {
    if (j.at("format").get<std::string>() != kCheckpointFormat ||
        j.at("version").get<int>() != kCheckpointVersion)
      throw Error(Errc::ParseError, "unsupported checkpoint format");
    ToyCaptioner m;
    try {
      m.vocab = Vocab(j.at("vocab").get<std::vector<std::string>>());
    } catch (const Error& e) {
      throw Error(Errc::ParseError, e.what());
    }
    const std::size_t v = m.vocab.size();
    const std::size_t d = j.at("video_dim").get<std::size_t>();
    if (j.at("vocab_size").get<std::size_t>() != v)
      throw Error(Errc::ShapeMismatch, "vocab_size does not match the vocabulary");
    m.segments = j.at("segments").get<std::size_t>();
    if (m.segments == 0) throw Error(Errc::ParseError, "segments must be positive");
    m.params.w_prev = detail::matrix_from_json(j.at("w_prev"), v, v, "w_prev");
    m.params.w_vid = detail::matrix_from_json(j.at("w_vid"), v, d, "w_vid");
    m.params.w_sub = detail::matrix_from_json(j.at("w_sub"), v, v, "w_sub");
    const auto& b = j.at("bias");
    if (b.at("shape").get<std::vector<std::size_t>>() != std::vector<std::size_t>{v})
      throw Error(Errc::ShapeMismatch, "'bias' has the wrong shape");
    m.params.bias = b.at("data").get<std::vector<double>>();
    if (m.params.bias.size() != v)
      throw Error(Errc::ShapeMismatch, "'bias' data length does not match its shape");
    m.params.validate();
    return m;
  } catch (const Json::exception& e) {
    throw Error(Errc::ParseError, std::string("checkpoint: ") + e.what());
  }
}

inline ToyCaptioner read_checkpoint(const std::filesystem::path& path) {
  return parse_checkpoint(detail::read_file(path));
}

inline void write_checkpoint(const std::filesystem::path& path, const ToyCaptioner& model) {
  detail::write_file(path, format_checkpoint(model));
}

}  // namespace clipcap
