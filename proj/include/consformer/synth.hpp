#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "consformer/model.hpp"

// Synthetic scene-text VQA data where the answer is a multi-token word.
//
// Each image holds lines of words; every word is 1–3 syllable tokens drawn
// from a shared inventory, so a syllable alone does not identify its word.
// The question names one syllable (the anchor) that occurs exactly once in
// the image and asks for the whole word containing it. Tokens of one word
// share an appearance component with correlation rho; tokens of different
// words are independent. Within a line, word gaps equal syllable gaps. Some
// words are rotations of others, so syllable order inside a word matters.
namespace cf::synth {

struct SynthConfig {
  std::size_t n_train = 5000;
  std::size_t n_test = 1000;
  std::size_t vocab_size = 48;  // syllable tokens
  std::size_t n_words = 64;     // answer inventory
  std::array<double, 3> word_len_probs{0.2, 0.5, 0.3};  // P(len = 1, 2, 3)
  std::size_t words_per_line_min = 1;
  std::size_t words_per_line_max = 4;
  std::size_t lines_min = 1;
  std::size_t lines_max = 3;
  std::size_t n_objects = 2;
  std::size_t n_object_labels = 8;
  std::size_t d_fr = 16;
  double rho = 0.8;
  // Chance that a multi-syllable word also enters the lexicon rotated.
  double reorder_fraction = 0.5;
  std::string answer_scheme = "anchor_word";
  std::uint64_t seed = 7;

  // Throws ValidationError on an infeasible or malformed config.
  void validate() const;
};

// Question template tokens follow the syllables in the shared table, then
// object labels.
inline constexpr std::size_t kQuestionSpecials = 4;

struct Lexicon {
  std::vector<std::string> syllables;
  std::vector<std::vector<std::size_t>> words;  // syllable ids per word
  std::size_t n_object_labels = 0;

  std::size_t table_size() const { return syllables.size() + kQuestionSpecials + n_object_labels; }
  std::size_t special(std::size_t k) const { return syllables.size() + k; }
  std::size_t object_label(std::size_t k) const { return syllables.size() + kQuestionSpecials + k; }
  // Syllables of word w joined by single spaces.
  std::string word_text(std::size_t w) const;
};

using SyntheticExample = model::Example;

struct Dataset {
  SynthConfig config;
  Lexicon lexicon;
  std::vector<SyntheticExample> train;
  std::vector<SyntheticExample> test;
};

Lexicon build_lexicon(const SynthConfig& cfg);
// Deterministic for a given config; example i of each split draws from its
// own derived seed.
Dataset generate(const SynthConfig& cfg);

}  // namespace cf::synth
