#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <string>
#include <string_view>
#include <vector>

// Answer metrics: Exact Match and token-level F1, corpus means, and F1 of
// predicted word-boundary links.
namespace cf::metrics {

// Unicode NFC, full case folding, whitespace runs collapsed to one space,
// leading/trailing whitespace dropped. Input must be UTF-8.
std::string normalize(std::string_view text);
// normalize() then split on spaces.
std::vector<std::string> tokenize(std::string_view text);

struct AnswerPair {
  std::vector<std::string> predicted;
  std::vector<std::string> gold;

  static AnswerPair from_strings(std::string_view predicted, std::string_view gold);
};

// 1 iff both token sequences are identical, else 0.
int exact_match(const AnswerPair& pair);

// Harmonic mean of token precision and recall under multiset intersection.
// Both empty -> 1, exactly one empty -> 0.
double f1_token(const AnswerPair& pair);

// Best score of `predicted` over several gold answers.
int exact_match_any(std::string_view predicted, std::span<const std::string> golds);
double f1_token_any(std::string_view predicted, std::span<const std::string> golds);

struct CorpusScores {
  double em = 0.0;
  double f1 = 0.0;
};

// Arithmetic means. Throws ValidationError on an empty corpus.
CorpusScores corpus_scores(std::span<const AnswerPair> pairs);

struct BoundaryCounts {
  std::size_t true_pos = 0;
  std::size_t false_pos = 0;
  std::size_t false_neg = 0;

  void add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gold);
  // Binary F1 on the positive (same-word) class; 1 when there are no positives
  // in either gold or prediction.
  double f1() const;
};

// Throws DimensionError on length mismatch.
double boundary_f1(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gold);

}  // namespace cf::metrics
