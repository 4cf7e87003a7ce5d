#include <gtest/gtest.h>

#include <cmath>
#include <cstring>
#include <string>
#include <vector>

#include "clipcap/corpus_io.hpp"
#include "clipcap/rng.hpp"
#include "clipcap/text_metrics.hpp"
#include "oracle/brute_metrics.hpp"

using namespace clipcap;

namespace {

std::vector<TokenSequence> toks(std::initializer_list<const char*> xs) {
  std::vector<TokenSequence> out;
  for (const char* x : xs) out.push_back(tokenize(x));
  return out;
}

std::vector<std::string> words(const TokenSequence& s) { return s.tokens(); }

// Random sentence over a small vocabulary so n-grams overlap often.
std::string random_sentence(SplitMix64& rng, std::size_t min_len, std::size_t max_len) {
  static const char* vocab[] = {"a", "the", "dog", "cat", "runs", "sits", "on", "mat"};
  const std::size_t len = min_len + rng.below(max_len - min_len + 1);
  std::string out;
  for (std::size_t i = 0; i < len; ++i) {
    if (i) out += ' ';
    out += vocab[rng.below(8)];
  }
  return out;
}

}  // namespace

TEST(Tokenize, Examples) {
  EXPECT_TRUE(tokenize("").empty());
  EXPECT_EQ(words(tokenize("A dog RUNS.")), (std::vector<std::string>{"a", "dog", "runs"}));
  EXPECT_EQ(words(tokenize("it's 10 o'clock!")),
            (std::vector<std::string>{"it's", "10", "o'clock"}));
  EXPECT_EQ(words(tokenize("  tabs\tand\nnewlines  ")),
            (std::vector<std::string>{"tabs", "and", "newlines"}));
  EXPECT_EQ(words(tokenize("caf\xc3\xa9-bar")), (std::vector<std::string>{"caf", "bar"}));
}

TEST(Tokenize, IdempotentOnRandomBytes) {
  SplitMix64 rng(7);
  for (int trial = 0; trial < 500; ++trial) {
    std::string raw;
    const auto len = rng.below(40);
    for (std::uint64_t i = 0; i < len; ++i) raw += static_cast<char>(rng.below(256));
    const auto once = tokenize(raw);
    EXPECT_EQ(tokenize(once.text()), once);
    for (const auto& t : once) {
      EXPECT_FALSE(t.empty());
      EXPECT_EQ(t.find_first_of(" \t\n"), std::string::npos);
    }
  }
}

TEST(NGramCounts, Examples) {
  const auto aa = ngram_counts(tokenize("a a"), 1);
  EXPECT_EQ(aa.order(1).size(), 1u);
  EXPECT_EQ(aa.count("a"), 2u);

  const auto aba = ngram_counts(tokenize("a b a"), 2);
  EXPECT_EQ(aba.distinct(), 4u);
  EXPECT_EQ(aba.count("a"), 2u);
  EXPECT_EQ(aba.count("b"), 1u);
  EXPECT_EQ(aba.count("a b"), 1u);
  EXPECT_EQ(aba.count("b a"), 1u);
  EXPECT_EQ(aba.count("a b a"), 0u);  // beyond n_max

  EXPECT_EQ(ngram_counts(tokenize(""), 4).distinct(), 0u);
  EXPECT_THROW(ngram_counts(tokenize("a"), 0), Error);
  EXPECT_THROW(ngram_counts(tokenize("a"), 5), Error);
}

TEST(BuildIdf, SingleDocumentHasZeroIdf) {
  const std::vector<RefDocument> docs{{"v", toks({"a b"})}};
  const auto idf = build_idf(docs);
  EXPECT_EQ(idf.num_docs(), 1u);
  for (const auto& [g, df] : idf.doc_freq()) {
    EXPECT_EQ(df, 1u);
    EXPECT_EQ(idf.idf(g), 0.0);
  }
  EXPECT_EQ(idf.doc_freq().size(), 3u);  // a, b, "a b"
}

TEST(BuildIdf, TwoDisjointDocuments) {
  const std::vector<RefDocument> docs{{"v1", toks({"a"})}, {"v2", toks({"b"})}};
  const auto idf = build_idf(docs);
  EXPECT_DOUBLE_EQ(idf.idf("a"), std::log(2.0));
  EXPECT_DOUBLE_EQ(idf.idf("b"), std::log(2.0));
  EXPECT_EQ(idf.idf("zebra"), 0.0);  // unseen
}

TEST(BuildIdf, CountsDocumentsNotOccurrences) {
  // "the" in all four videos (twice in v1), "zebra" only in v3.
  const std::vector<RefDocument> docs{{"v1", toks({"the the dog", "the cat"})},
                                      {"v2", toks({"the bird"})},
                                      {"v3", toks({"a zebra", "the zebra"})},
                                      {"v4", toks({"on the mat"})}};
  const auto idf = build_idf(docs);
  EXPECT_EQ(idf.df("the"), 4u);
  EXPECT_EQ(idf.df("zebra"), 1u);
  EXPECT_EQ(idf.idf("the"), 0.0);
  EXPECT_DOUBLE_EQ(idf.idf("zebra"), std::log(4.0));
  EXPECT_THROW(build_idf(std::vector<RefDocument>{}), Error);
}

TEST(Bleu4, Examples) {
  const auto s = tokenize("a man plays the guitar");
  EXPECT_EQ(bleu4(s, std::vector{s}), 1.0);
  EXPECT_EQ(bleu4(tokenize("x y z w"), toks({"a b c d"})), 0.0);
  // No shared 4-gram: unsmoothed BLEU is zero. The brute-force oracle agrees.
  const auto hyp = tokenize("the cat sat on the mat");
  const auto refs = toks({"the cat is on the mat"});
  EXPECT_EQ(bleu4(hyp, refs), 0.0);
  EXPECT_EQ(oracle::bleu(words(hyp), {words(refs[0])}), 0.0);
  EXPECT_THROW(bleu4(hyp, std::vector<TokenSequence>{}), Error);
}

TEST(Bleu4, BrevityPenaltyUsesClosestShorterOnTies) {
  // hyp length 5; refs of length 4 and 6 are equally close, so r = 4 and no penalty.
  const auto hyp = tokenize("a b c d e");
  const auto st = bleu_stats(hyp, toks({"a b c d e f", "a b c d"}));
  EXPECT_EQ(st.ref_len, 4u);
  // Shorter hypothesis gets exp(1 - r/c).
  const auto shorter = tokenize("a b c d");
  EXPECT_NEAR(bleu4(shorter, toks({"a b c d e f"})), std::exp(1.0 - 6.0 / 4.0), 1e-15);
}

TEST(RougeL, Examples) {
  const auto s = tokenize("a dog runs");
  EXPECT_EQ(rouge_l(s, std::vector{s}), 1.0);
  EXPECT_EQ(rouge_l(tokenize("x y"), toks({"a b"})), 0.0);
  const auto hyp = tokenize("a b c d");
  const auto refs = toks({"a c b d"});
  EXPECT_EQ(lcs_length(hyp, refs[0]), 3u);
  EXPECT_EQ(oracle::lcs(words(hyp), words(refs[0])), 3);
  EXPECT_NEAR(rouge_l(hyp, refs), 0.75, 1e-15);  // p = r = 3/4
  EXPECT_EQ(rouge_l(tokenize(""), refs), 0.0);
  EXPECT_THROW(rouge_l(hyp, std::vector<TokenSequence>{}), Error);
}

TEST(CiderD, Examples) {
  const std::vector<RefDocument> docs{{"v1", toks({"a man plays the guitar"})},
                                      {"v2", toks({"a dog runs in the park"})},
                                      {"v3", toks({"two women cook dinner"})}};
  const auto idf = build_idf(docs);
  const auto s = tokenize("a man plays the guitar");
  // every order has an n-gram with positive idf ("man", "man plays", ...)
  EXPECT_NEAR(cider_d(s, std::vector{s}, idf), 10.0, 1e-12);
  EXPECT_EQ(cider_d(tokenize("zebra zebra"), toks({"a man plays the guitar"}), idf), 0.0);

  const std::vector<RefDocument> one{{"v", toks({"a man plays", "a man sings"})}};
  const auto flat = build_idf(one);
  EXPECT_EQ(cider_d(tokenize("a man plays"), toks({"a man plays", "a man sings"}), flat), 0.0);
  EXPECT_THROW(cider_d(s, std::vector<TokenSequence>{}, idf), Error);
}

TEST(CiderD, LengthPenaltyAndClipping) {
  const std::vector<RefDocument> docs{{"v1", toks({"cat"})}, {"v2", toks({"dog"})}};
  const auto idf = build_idf(docs);
  // unigram cosine of "cat cat" against "cat": clipped dot = 1*1 idf^2, norms 2 idf and idf
  const double expect = (0.5 * std::exp(-1.0 / 72.0)) / 4.0 * 10.0;
  EXPECT_NEAR(cider_d(tokenize("cat cat"), toks({"cat"}), idf), expect, 1e-15);
}

TEST(CorpusEval, IdentityOverFiveVideos) {
  std::map<std::string, TokenSequence> hyps;
  std::map<std::string, std::vector<TokenSequence>> refs;
  const char* caps[] = {"a man is slicing a ripe tomato", "two dogs chase a red ball outside",
                        "a woman rides her bicycle down the hill",
                        "children play soccer on a muddy field",
                        "the chef stirs soup in a large pot"};
  for (int i = 0; i < 5; ++i) {
    const std::string id = "v" + std::to_string(i);
    hyps.emplace(id, tokenize(caps[i]));
    refs[id] = {tokenize(caps[i])};
  }
  const auto rep = corpus_eval(hyps, refs);
  EXPECT_NEAR(rep.cider_d, 10.0, 1e-9);
  EXPECT_NEAR(rep.bleu4, 1.0, 1e-12);
  EXPECT_NEAR(rep.rouge_l, 1.0, 1e-12);
  EXPECT_EQ(rep.per_video.size(), 5u);
}

TEST(CorpusEval, Errors) {
  std::map<std::string, TokenSequence> hyps;
  std::map<std::string, std::vector<TokenSequence>> refs{{"v1", toks({"a b"})}};
  try {
    corpus_eval(hyps, refs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingInput);
  }
  hyps.emplace("v2", tokenize("a b"));
  try {
    corpus_eval(hyps, refs);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), Errc::MissingReference);
    EXPECT_NE(std::string(e.what()).find("v2"), std::string::npos);
  }
}

TEST(CorpusEval, ToyFixtureMatchesFrozenOracleValues) {
  const auto hyp_recs = read_captions(CLIPCAP_FIXTURES "/toy_hyps.jsonl");
  const auto ref_recs = read_captions(CLIPCAP_FIXTURES "/toy_refs.jsonl");
  std::map<std::string, TokenSequence> hyps;
  std::map<std::string, std::vector<TokenSequence>> refs;
  for (const auto& r : hyp_recs) hyps.emplace(r.video_id, tokenize(r.captions[0]));
  for (const auto& r : ref_recs)
    for (const auto& c : r.captions) refs[r.video_id].push_back(tokenize(c));
  const auto rep = corpus_eval(hyps, refs);
  // Values from an independent script over the same files.
  EXPECT_NEAR(rep.bleu4, 0.43690437042072872, 1e-6);
  EXPECT_NEAR(rep.rouge_l, 0.62491359250713163, 1e-6);
  EXPECT_NEAR(rep.cider_d, 3.200719159796622, 1e-6);
  EXPECT_NEAR(rep.per_video.at("v1").cider_d, 3.6232296231989052, 1e-6);
  EXPECT_NEAR(rep.per_video.at("v2").bleu4, 0.51150781157932423, 1e-6);
  EXPECT_EQ(rep.per_video.at("v3").bleu4, 0.0);
}

// Random instances with <= 10 tokens and <= 5 references against the
// brute-force implementations.
TEST(MetricProperties, MatchBruteForceOracle) {
  SplitMix64 rng(99);
  for (int trial = 0; trial < 150; ++trial) {
    const std::size_t n_videos = 1 + rng.below(4);
    std::vector<RefDocument> docs;
    oracle::Idf oidf;
    std::vector<std::pair<TokenSequence, std::vector<TokenSequence>>> cases;
    for (std::size_t v = 0; v < n_videos; ++v) {
      const auto hyp = tokenize(random_sentence(rng, 0, 10));
      std::vector<TokenSequence> refs;
      std::vector<oracle::Tokens> orefs;
      const std::size_t n_refs = 1 + rng.below(5);
      for (std::size_t r = 0; r < n_refs; ++r) {
        refs.push_back(tokenize(random_sentence(rng, 1, 10)));
        orefs.push_back(words(refs.back()));
      }
      docs.emplace_back("v" + std::to_string(v), refs);
      oidf.docs.push_back(orefs);
      cases.emplace_back(hyp, refs);
    }
    const auto idf = build_idf(docs);
    for (const auto& [hyp, refs] : cases) {
      std::vector<oracle::Tokens> orefs;
      for (const auto& r : refs) orefs.push_back(words(r));
      const auto h = words(hyp);
      EXPECT_NEAR(bleu4(hyp, refs), oracle::bleu(h, orefs), 1e-9);
      EXPECT_NEAR(rouge_l(hyp, refs), oracle::rouge(h, orefs), 1e-9);
      EXPECT_NEAR(cider_d(hyp, refs, idf), oracle::cider(h, orefs, oidf), 1e-9);
    }
  }
}

TEST(MetricProperties, RangesIdentityAndMonotoneReferenceAddition) {
  SplitMix64 rng(5);
  const std::vector<RefDocument> docs{{"x", toks({"zebra"})}, {"y", toks({"lion"})}};
  for (int trial = 0; trial < 300; ++trial) {
    const auto hyp = tokenize(random_sentence(rng, 1, 10));
    std::vector<TokenSequence> refs;
    const std::size_t n_refs = 1 + rng.below(4);
    for (std::size_t r = 0; r < n_refs; ++r) refs.push_back(tokenize(random_sentence(rng, 1, 10)));
    std::vector<RefDocument> d = docs;
    d.emplace_back("h", refs);
    const auto idf = build_idf(d);

    const double b = bleu4(hyp, refs), r = rouge_l(hyp, refs), c = cider_d(hyp, refs, idf);
    EXPECT_GE(b, 0.0);
    EXPECT_LE(b, 1.0);
    EXPECT_GE(r, 0.0);
    EXPECT_LE(r, 1.0);
    EXPECT_GE(c, 0.0);
    EXPECT_LE(c, 10.0 + 1e-12);

    EXPECT_EQ(rouge_l(hyp, std::vector{hyp}), 1.0);
    if (hyp.size() >= 4) {
      EXPECT_EQ(bleu4(hyp, std::vector{hyp}), 1.0);
    }

    auto more = refs;
    more.push_back(hyp);
    EXPECT_GE(rouge_l(hyp, more), r);
    EXPECT_GE(bleu4(hyp, more) + 1e-15, b);
  }
}

TEST(MetricProperties, Deterministic) {
  const auto hyp_recs = read_captions(CLIPCAP_FIXTURES "/pairs_hyps.jsonl");
  const auto ref_recs = read_captions(CLIPCAP_FIXTURES "/pairs_refs.jsonl");
  std::map<std::string, TokenSequence> hyps;
  std::map<std::string, std::vector<TokenSequence>> refs;
  for (const auto& r : hyp_recs) hyps.emplace(r.video_id, tokenize(r.captions[0]));
  for (const auto& r : ref_recs)
    for (const auto& c : r.captions) refs[r.video_id].push_back(tokenize(c));
  const auto a = corpus_eval(hyps, refs);
  const auto b = corpus_eval(hyps, refs);
  EXPECT_EQ(std::memcmp(&a.cider_d, &b.cider_d, sizeof(double)), 0);
  EXPECT_EQ(a.bleu4, b.bleu4);
  EXPECT_EQ(a.rouge_l, b.rouge_l);
  for (const auto& [id, s] : a.per_video) EXPECT_EQ(s.cider_d, b.per_video.at(id).cider_d);
}
