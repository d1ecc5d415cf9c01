#include <gtest/gtest.h>

#include <random>

#include "consformer/errors.hpp"
#include "consformer/metrics.hpp"
#include "support.hpp"

namespace cf {
namespace {

using metrics::AnswerPair;

AnswerPair pair(std::vector<std::string> p, std::vector<std::string> g) { return {std::move(p), std::move(g)}; }

TEST(TokenF1, Examples) {
  EXPECT_DOUBLE_EQ(metrics::f1_token(pair({"a", "b"}, {"b", "c"})), 0.5);
  EXPECT_NEAR(metrics::f1_token(pair({"a", "a", "b"}, {"a", "b", "b"})), 2.0 / 3.0, 1e-15);
  EXPECT_EQ(metrics::f1_token(pair({"x", "y"}, {"x", "y"})), 1.0);
  EXPECT_EQ(metrics::f1_token(pair({}, {})), 1.0);
  EXPECT_EQ(metrics::f1_token(pair({"a"}, {})), 0.0);
  EXPECT_EQ(metrics::f1_token(pair({}, {"a"})), 0.0);
  EXPECT_EQ(metrics::f1_token(pair({"a"}, {"b"})), 0.0);
}

TEST(ExactMatch, Examples) {
  EXPECT_EQ(metrics::exact_match(pair({"a", "b"}, {"a", "b"})), 1);
  EXPECT_EQ(metrics::exact_match(pair({"b", "a"}, {"a", "b"})), 0);
  EXPECT_EQ(metrics::exact_match(pair({}, {})), 1);
}

TEST(Normalize, CaseWhitespaceAndComposition) {
  EXPECT_EQ(metrics::normalize("  Hello \t  WORLD "), "hello world");
  // e + combining acute composes to é.
  EXPECT_EQ(metrics::normalize("Cafe\xCC\x81"), "caf\xC3\xA9");
  EXPECT_EQ(metrics::normalize("CAF\xC3\x89"), "caf\xC3\xA9");
  EXPECT_EQ(metrics::normalize("Stra\xC3\x9F" "e"), "strasse");
  EXPECT_EQ(metrics::tokenize("   "), std::vector<std::string>{});
  EXPECT_EQ(metrics::exact_match(AnswerPair::from_strings("Caf\xC3\xA9  Noir", "cafe\xCC\x81 noir")), 1);
}

TEST(MultipleGolds, BestScoreWins) {
  const std::vector<std::string> golds{"red car", "blue car"};
  EXPECT_EQ(metrics::exact_match_any("Blue Car", golds), 1);
  EXPECT_DOUBLE_EQ(metrics::f1_token_any("green car", golds), 0.5);
  EXPECT_EQ(metrics::exact_match_any("car", {}), 0);
}

TEST(BoundaryF1, Examples) {
  const std::vector<std::uint8_t> pred{1, 0, 1}, gold{1, 1, 1};
  EXPECT_NEAR(metrics::boundary_f1(pred, gold), 0.8, 1e-15);
  const std::vector<std::uint8_t> none{0, 0, 0};
  EXPECT_EQ(metrics::boundary_f1(none, none), 1.0);
  EXPECT_EQ(metrics::boundary_f1(none, gold), 0.0);
  const std::vector<std::uint8_t> short_pred{1};
  EXPECT_THROW(metrics::boundary_f1(short_pred, gold), DimensionError);
}

TEST(BoundaryF1, CountsAccumulateAcrossExamples) {
  metrics::BoundaryCounts counts;
  const std::vector<std::uint8_t> p1{1, 0}, g1{1, 1}, p2{1}, g2{0};
  counts.add(p1, g1);
  counts.add(p2, g2);
  EXPECT_EQ(counts.true_pos, 1u);
  EXPECT_EQ(counts.false_pos, 1u);
  EXPECT_EQ(counts.false_neg, 1u);
  EXPECT_DOUBLE_EQ(counts.f1(), 0.5);
}

TEST(CorpusScores, MeansAndEmptyCorpus) {
  const std::vector<AnswerPair> pairs{pair({"a"}, {"a"}), pair({"a", "b"}, {"b", "c"})};
  const auto s = metrics::corpus_scores(pairs);
  EXPECT_DOUBLE_EQ(s.em, 0.5);
  EXPECT_DOUBLE_EQ(s.f1, 0.75);
  EXPECT_THROW(metrics::corpus_scores({}), ValidationError);
}

std::vector<std::string> random_tokens(std::mt19937_64& rng) {
  static const char* vocab[] = {"a", "b", "c", "d", "e"};
  std::vector<std::string> out(rng() % 6);
  for (auto& t : out) t = vocab[rng() % 5];
  return out;
}

TEST(TokenF1, AgreesWithIndependentImplementation) {
  std::mt19937_64 rng(50);
  for (int i = 0; i < 100; ++i) {
    const auto p = random_tokens(rng), g = random_tokens(rng);
    EXPECT_NEAR(metrics::f1_token(pair(p, g)), test::oracle::token_f1(p, g), 1e-12);
  }
}

TEST(TokenF1, SymmetricAndBoundedWithExactMatchImplyingOne) {
  std::mt19937_64 rng(51);
  for (int i = 0; i < 10000; ++i) {
    const auto p = random_tokens(rng), g = random_tokens(rng);
    const double f = metrics::f1_token(pair(p, g));
    EXPECT_EQ(f, metrics::f1_token(pair(g, p)));
    EXPECT_GE(f, 0.0);
    EXPECT_LE(f, 1.0);
    if (metrics::exact_match(pair(p, g))) {
      EXPECT_EQ(f, 1.0);
    }
  }
}

}  // namespace
}  // namespace cf
