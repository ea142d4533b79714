#include <gtest/gtest.h>

#include <cmath>
#include <fstream>

#include "bm25_oracle.hpp"
#include "prag/retriever.hpp"
#include "support.hpp"

namespace prag {
namespace {

using testing::BruteForceBm25;
using testing::TempDir;

TEST(Corpus, ContentIdsMakeIngestionIdempotent) {
  Corpus c;
  EXPECT_TRUE(c.add("t", "some text"));
  EXPECT_FALSE(c.add("t", "some text"));
  EXPECT_TRUE(c.add("t", "other text"));
  EXPECT_EQ(c.size(), 2u);
  EXPECT_EQ(content_id("t", "some text"), c[0].id);
  EXPECT_NE(content_id("ab", "c"), content_id("a", "bc"));
}

TEST(Corpus, JsonlRoundTripAndExplicitIds) {
  const std::string jsonl =
      "{\"title\":\"A\",\"text\":\"alpha beta\"}\n"
      "{\"id\":\"00000000000000ff\",\"title\":\"B\",\"text\":\"gamma\"}\n"
      "\n"
      "{\"id\":\"custom-name\",\"title\":\"C\",\"text\":\"delta\"}\n";
  const Corpus c = Corpus::parse_jsonl(jsonl);
  ASSERT_EQ(c.size(), 3u);
  EXPECT_EQ(c[0].id, content_id("A", "alpha beta"));
  EXPECT_EQ(c[1].id.value, 0xffu);
  EXPECT_EQ(c[2].id.value, fnv1a64("custom-name"));
  const Corpus back = Corpus::parse_jsonl(c.to_jsonl());
  EXPECT_EQ(back.docs(), c.docs());
}

TEST(BuildIndex, SingleDocCounts) {
  Corpus c;
  c.add("", "a a b");
  const auto idx = build_index(c);
  ASSERT_NE(idx.postings("a"), nullptr);
  EXPECT_EQ(idx.postings("a")->at(0).tf, 2u);
  EXPECT_EQ(idx.postings("b")->at(0).tf, 1u);
  EXPECT_EQ(idx.avg_doc_length(), 3.0);
  EXPECT_EQ(idx.doc_count(), 1u);
}

TEST(BuildIndex, IdenticalDocsShareEveryPosting) {
  Corpus c;
  c.add("one", "x y");
  c.add("two", "x y");
  const auto idx = build_index(c);
  for (const char* t : {"x", "y"}) {
    ASSERT_EQ(idx.postings(t)->size(), 2u);
    EXPECT_EQ(idx.postings(t)->at(0).doc, 0u);
    EXPECT_EQ(idx.postings(t)->at(1).doc, 1u);
  }
}

TEST(BuildIndex, EmptyCorpusAndBadParamsFail) {
  EXPECT_EQ(testing::error_code_of([] { build_index(Corpus{}); }), ErrorCode::kEmptyCorpus);
  Corpus c;
  c.add("", "x");
  EXPECT_EQ(testing::error_code_of([&] { build_index(c, 0.0, 0.5); }), ErrorCode::kInvalidArgument);
  EXPECT_EQ(testing::error_code_of([&] { build_index(c, 1.2, 1.5); }), ErrorCode::kInvalidArgument);
}

TEST(BuildIndex, DocumentFrequenciesMatchBruteForce) {
  const Corpus c = testing::random_corpus(100, 5);
  const auto idx = build_index(c);
  const BruteForceBm25 oracle(c, 1.2, 0.75);
  for (int w = 0; w < 60; ++w) {
    const std::string t = "w" + std::to_string(w);
    EXPECT_EQ(idx.doc_frequency(t), oracle.df(t)) << t;
  }
  double total = 0;
  for (auto len : idx.doc_lengths()) total += len;
  EXPECT_LE(std::abs(total / idx.doc_count() - idx.avg_doc_length()), 1e-12 * idx.avg_doc_length());
  std::size_t postings = 0;
  for (const auto& [term, plist] : idx.all_postings()) {
    for (const auto& p : plist) {
      EXPECT_LT(p.doc, idx.doc_count());
      postings += p.tf;
    }
  }
  EXPECT_EQ(static_cast<double>(postings), total);
}

TEST(Bm25Score, AbsentTermsScoreZero) {
  Corpus c;
  c.add("", "x y");
  const auto idx = build_index(c);
  const std::vector<std::string> q{"nope", "never"};
  EXPECT_EQ(bm25_score(idx, q, 0), 0.0);
}

TEST(Bm25Score, HandEvaluatedThreeDocCorpus) {
  Corpus c;
  c.add("d0", "x y");
  c.add("d1", "x");
  c.add("d2", "z");
  const auto idx = build_index(c, 1.2, 0.75);
  // N = 3, df(x) = 2, avgdl = 4/3.
  const double idf = std::log(1.0 + (3.0 - 2.0 + 0.5) / (2.0 + 0.5));
  const double s0 = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 2.0 / (4.0 / 3.0)));
  const double s1 = idf * 2.2 / (1.0 + 1.2 * (0.25 + 0.75 * 1.0 / (4.0 / 3.0)));
  const std::vector<std::string> q{"x"};
  EXPECT_NEAR(bm25_score(idx, q, 0), s0, 1e-15);
  EXPECT_NEAR(bm25_score(idx, q, 1), s1, 1e-15);
  EXPECT_EQ(bm25_score(idx, q, 2), 0.0);
  EXPECT_NEAR(s0, 0.390191692204007, 1e-12);
  EXPECT_NEAR(s1, 0.523548346501579, 1e-12);
}

TEST(Bm25Score, LargeK1NoLengthNormLimit) {
  for (std::uint32_t tf = 1; tf <= 4; ++tf) {
    Corpus c;
    std::string text;
    for (std::uint32_t i = 0; i < tf; ++i) text += "t ";
    c.add("", text);
    const double k1 = 1e6;
    const auto idx = build_index(c, k1, 0.0);
    const std::vector<std::string> q{"t"};
    const double expected = idx.idf("t") * tf * (k1 + 1) / (tf + k1);
    EXPECT_NEAR(bm25_score(idx, q, 0), expected, 1e-9);
  }
}

TEST(Bm25Score, MonotoneInTermFrequency) {
  // The formula itself, with N, df, len and avgdl held fixed.
  Corpus c;
  c.add("", "q a b c d");
  c.add("", "e f");
  const auto idx = build_index(c);
  double prev = 0.0;
  for (std::uint32_t tf = 1; tf <= 20; ++tf) {
    const double w = idx.term_weight(1, tf, 5);
    EXPECT_GE(w, prev);
    prev = w;
  }
}

TEST(RetrieveTopK, UniqueMatchRanksFirst) {
  Corpus c;
  c.add("", "apple banana");
  c.add("", "banana cherry");
  c.add("", "cherry date");
  const auto idx = build_index(c);
  const auto r = retrieve_top_k(idx, "apple", 3);
  ASSERT_EQ(r.ranked.size(), 1u);
  EXPECT_EQ(r.ranked[0].id, c[0].id);
}

TEST(RetrieveTopK, TiesBreakByAscendingId) {
  Corpus c;
  c.add("first", "same words here");
  c.add("second", "same words here");
  c.add("third", "unrelated");
  const auto idx = build_index(c);
  const auto r = retrieve_top_k(idx, "words", 5);
  ASSERT_EQ(r.ranked.size(), 2u);
  EXPECT_EQ(r.ranked[0].score, r.ranked[1].score);
  EXPECT_LT(r.ranked[0].id, r.ranked[1].id);
}

TEST(RetrieveTopK, ZeroScoreDocsExcludedAndKValidated) {
  Corpus c;
  c.add("", "x");
  c.add("", "y");
  const auto idx = build_index(c);
  EXPECT_TRUE(retrieve_top_k(idx, "zzz", 3).ranked.empty());
  EXPECT_EQ(testing::error_code_of([&] { retrieve_top_k(idx, "x", 0); }), ErrorCode::kInvalidArgument);
}

void expect_oracle_equal(std::size_t docs, int queries, std::uint64_t seed) {
  const Corpus c = testing::random_corpus(docs, seed);
  const auto idx = build_index(c);
  const BruteForceBm25 oracle(c, 1.2, 0.75);
  Rng rng(derive_seed(seed, 1));
  for (int i = 0; i < queries; ++i) {
    const std::string q = testing::random_query(rng);
    const std::size_t k = 1 + rng.below(12);
    const auto got = retrieve_top_k(idx, q, k).ranked;
    const auto want = oracle.rank(q, k);
    ASSERT_EQ(got.size(), want.size()) << q;
    for (std::size_t j = 0; j < got.size(); ++j) {
      EXPECT_EQ(got[j].id, want[j].id) << q << " rank " << j;
      EXPECT_EQ(got[j].score, want[j].score) << q << " rank " << j;  // bit-exact
    }
  }
}

TEST(RetrieveTopK, MatchesBruteForceOn100Docs) { expect_oracle_equal(100, 20, 11); }
TEST(RetrieveTopK, MatchesBruteForceOn1000Docs) { expect_oracle_equal(1000, 50, 12); }

TEST(RetrieveTopK, ScoresNonIncreasing) {
  const Corpus c = testing::random_corpus(200, 8);
  const auto idx = build_index(c);
  Rng rng(4);
  for (int i = 0; i < 30; ++i) {
    const auto r = retrieve_top_k(idx, testing::random_query(rng), 20).ranked;
    for (std::size_t j = 1; j < r.size(); ++j) EXPECT_GE(r[j - 1].score, r[j].score);
  }
}

TEST(InvertedIndex, SaveLoadPreservesRankings) {
  TempDir dir;
  const Corpus c = testing::random_corpus(80, 21);
  const auto idx = build_index(c, 1.5, 0.6);
  idx.save(dir / "index.json");
  const auto back = InvertedIndex::load(dir / "index.json");
  EXPECT_EQ(back.params().k1, 1.5);
  EXPECT_EQ(back.params().b, 0.6);
  EXPECT_EQ(back.avg_doc_length(), idx.avg_doc_length());
  Rng rng(2);
  for (int i = 0; i < 20; ++i) {
    const auto q = testing::random_query(rng);
    const auto a = idx.top_k(q, 5).ranked;
    const auto b = back.top_k(q, 5).ranked;
    ASSERT_EQ(a.size(), b.size());
    for (std::size_t j = 0; j < a.size(); ++j) {
      EXPECT_EQ(a[j].id, b[j].id);
      EXPECT_EQ(a[j].score, b[j].score);
    }
  }
}

}  // namespace
}  // namespace prag
