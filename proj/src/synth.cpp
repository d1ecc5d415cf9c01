#include "consformer/synth.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <set>

#include "consformer/errors.hpp"

namespace cf::synth {
namespace {

// Signboard syllables; ids past the list get "s<id>".
constexpr const char* kSyllables[] = {
    "tạp", "hóa",  "thời", "công", "nghệ",  "nhà",  "ăn",   "quần", "áo",   "cà",    "phê",  "sữa",
    "bánh", "mì",  "phở",  "bò",   "gà",    "cơm",  "tấm",  "nước", "mía",  "chè",   "trà",  "đá",
    "kem", "bún",  "chả",  "giò",  "lụa",   "xôi",  "sách", "báo",  "văn",  "phòng", "phẩm", "điện",
    "thoại", "máy", "tính", "xe",  "đạp",   "sửa",  "chữa", "khóa", "cửa",  "hàng",  "thuốc", "tây",
    "bệnh", "viện", "trường", "học", "ngân", "chợ",  "siêu", "thị",  "khách", "sạn", "quán", "mới",
    "cũ",  "lớn",  "nhỏ",  "việt", "nam",   "hoa",  "quả",  "tươi"};
constexpr std::size_t kNamedSyllables = std::size(kSyllables);

constexpr std::uint64_t kTrainSplit = 0;
constexpr std::uint64_t kTestSplit = 1;

std::mt19937_64 derived_rng(std::uint64_t seed, std::uint64_t split, std::uint64_t index) {
  std::seed_seq seq{static_cast<std::uint32_t>(seed), static_cast<std::uint32_t>(seed >> 32),
                    static_cast<std::uint32_t>(split), static_cast<std::uint32_t>(index),
                    static_cast<std::uint32_t>(index >> 32)};
  return std::mt19937_64(seq);
}

std::size_t possible_words(const SynthConfig& cfg) {
  const std::size_t v = cfg.vocab_size;
  std::size_t total = 0;
  if (cfg.word_len_probs[0] > 0) total += v;
  if (cfg.word_len_probs[1] > 0 && v >= 2) total += v * (v - 1);
  if (cfg.word_len_probs[2] > 0 && v >= 3) total += v * (v - 1) * (v - 2);
  return total;
}

bool contains(const std::vector<std::size_t>& word, std::size_t syllable) {
  return std::find(word.begin(), word.end(), syllable) != word.end();
}

SyntheticExample make_example(const SynthConfig& cfg, const Lexicon& lex, std::uint64_t split, std::size_t index) {
  std::mt19937_64 rng = derived_rng(cfg.seed, split, index);
  auto uniform_int = [&rng](std::size_t lo, std::size_t hi) {
    return std::uniform_int_distribution<std::size_t>(lo, hi)(rng);
  };
  std::normal_distribution<double> normal(0.0, 1.0);
  std::uniform_real_distribution<double> unit(0.0, 1.0);

  SyntheticExample ex;
  ex.id = (split == kTrainSplit ? "train-" : "test-") + std::to_string(index);

  const std::size_t n_lines = uniform_int(cfg.lines_min, cfg.lines_max);
  std::vector<std::size_t> line_words(n_lines);
  std::size_t slots = 0;
  for (auto& w : line_words) {
    w = uniform_int(cfg.words_per_line_min, cfg.words_per_line_max);
    slots += w;
  }

  const std::size_t target = uniform_int(0, lex.words.size() - 1);
  const auto& target_word = lex.words[target];
  const std::size_t anchor = target_word[uniform_int(0, target_word.size() - 1)];
  const std::size_t target_slot = uniform_int(0, slots - 1);

  std::vector<std::size_t> others;
  for (std::size_t w = 0; w < lex.words.size(); ++w) {
    if (!contains(lex.words[w], anchor)) others.push_back(w);
  }
  if (others.empty()) throw ValidationError("synthetic config: every word shares anchor syllable");

  std::vector<std::size_t> slot_word(slots);
  for (std::size_t s = 0; s < slots; ++s) {
    slot_word[s] = s == target_slot ? target : others[uniform_int(0, others.size() - 1)];
  }

  const double shared = std::sqrt(cfg.rho);
  const double own = std::sqrt(1.0 - cfg.rho);
  std::size_t slot = 0;
  std::size_t prev_slot = 0;
  for (std::size_t line = 0; line < n_lines; ++line) {
    std::size_t line_tokens = 0;
    for (std::size_t k = 0; k < line_words[line]; ++k) line_tokens += lex.words[slot_word[slot + k]].size();
    const double y0 = (static_cast<double>(line) + 0.1) / static_cast<double>(n_lines);
    const double y1 = (static_cast<double>(line) + 0.9) / static_cast<double>(n_lines);
    std::size_t col = 0;
    for (std::size_t k = 0; k < line_words[line]; ++k, ++slot) {
      std::vector<double> common(cfg.d_fr);
      for (double& c : common) c = normal(rng);
      for (std::size_t syl : lex.words[slot_word[slot]]) {
        embeddings::RawSceneText t;
        t.appearance.resize(cfg.d_fr);
        for (std::size_t j = 0; j < cfg.d_fr; ++j) t.appearance[j] = shared * common[j] + own * normal(rng);
        const double width = 1.0 / static_cast<double>(line_tokens);
        t.box = {(static_cast<double>(col) + 0.05) * width, y0, (static_cast<double>(col) + 0.95) * width, y1};
        t.token = syl;
        if (!ex.scene_text.empty()) ex.gold_boundaries.push_back(prev_slot == slot ? 1 : 0);
        ex.scene_text.push_back(std::move(t));
        prev_slot = slot;
        ++col;
      }
    }
  }

  for (std::size_t o = 0; o < cfg.n_objects; ++o) {
    embeddings::RawObject obj;
    obj.appearance.resize(cfg.d_fr);
    for (double& a : obj.appearance) a = normal(rng);
    double xa = unit(rng), xb = unit(rng), ya = unit(rng), yb = unit(rng);
    obj.box = {std::min(xa, xb), std::min(ya, yb), std::max(xa, xb), std::max(ya, yb)};
    obj.label = lex.object_label(uniform_int(0, cfg.n_object_labels - 1));
    ex.objects.push_back(std::move(obj));
  }

  ex.question = {lex.special(uniform_int(0, kQuestionSpecials - 2)), anchor, lex.special(kQuestionSpecials - 1)};
  ex.gold_answer = target;
  return ex;
}

}  // namespace

void SynthConfig::validate() const {
  auto fail = [](const std::string& why) { throw ValidationError("synthetic config: " + why); };
  double total = 0.0;
  for (double p : word_len_probs) {
    if (p < 0.0) fail("negative word-length probability");
    total += p;
  }
  if (std::abs(total - 1.0) > 1e-9) fail("word-length probabilities must sum to 1");
  if (!(rho >= 0.0 && rho <= 1.0)) fail("rho must lie in [0,1]");
  if (!(reorder_fraction >= 0.0 && reorder_fraction <= 1.0)) fail("reorder_fraction must lie in [0,1]");
  if (words_per_line_min == 0 || words_per_line_min > words_per_line_max) fail("bad words-per-line range");
  if (lines_min == 0 || lines_min > lines_max) fail("bad lines-per-image range");
  if (d_fr == 0) fail("d_fr must be positive");
  if (n_object_labels == 0) fail("n_object_labels must be positive");
  if (n_words < 2) fail("need at least two words");
  if (answer_scheme != "anchor_word") fail("unknown answer_scheme '" + answer_scheme + "'");
  if (word_len_probs[2] > 0 && vocab_size < 3) fail("3-syllable words need vocab_size >= 3");
  if (word_len_probs[1] > 0 && vocab_size < 2) fail("2-syllable words need vocab_size >= 2");
  // Leave room for rejection sampling and for anchors absent from other words.
  if (possible_words(*this) < 2 * n_words) {
    fail("vocab_size " + std::to_string(vocab_size) + " too small for " + std::to_string(n_words) + " words");
  }
}

std::string Lexicon::word_text(std::size_t w) const {
  std::string out;
  for (std::size_t s : words.at(w)) {
    if (!out.empty()) out += ' ';
    out += syllables.at(s);
  }
  return out;
}

Lexicon build_lexicon(const SynthConfig& cfg) {
  cfg.validate();
  Lexicon lex;
  lex.n_object_labels = cfg.n_object_labels;
  for (std::size_t i = 0; i < cfg.vocab_size; ++i) {
    lex.syllables.push_back(i < kNamedSyllables ? std::string(kSyllables[i]) : "s" + std::to_string(i));
  }
  std::mt19937_64 rng = derived_rng(cfg.seed, 2, 0);
  std::discrete_distribution<std::size_t> length(cfg.word_len_probs.begin(), cfg.word_len_probs.end());
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::set<std::vector<std::size_t>> seen;
  std::vector<std::size_t> pool(cfg.vocab_size);
  for (std::size_t i = 0; i < pool.size(); ++i) pool[i] = i;
  while (lex.words.size() < cfg.n_words) {
    const std::size_t len = length(rng) + 1;
    std::shuffle(pool.begin(), pool.end(), rng);
    std::vector<std::size_t> word(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(len));
    if (!seen.insert(word).second) continue;
    lex.words.push_back(word);
    // Same syllables in another order, as a separate answer.
    if (len > 1 && lex.words.size() < cfg.n_words && unit(rng) < cfg.reorder_fraction) {
      std::rotate(word.begin(), word.begin() + 1, word.end());
      if (seen.insert(word).second) lex.words.push_back(std::move(word));
    }
  }
  return lex;
}

Dataset generate(const SynthConfig& cfg) {
  Dataset ds;
  ds.config = cfg;
  ds.lexicon = build_lexicon(cfg);
  ds.train.reserve(cfg.n_train);
  for (std::size_t i = 0; i < cfg.n_train; ++i) ds.train.push_back(make_example(cfg, ds.lexicon, kTrainSplit, i));
  ds.test.reserve(cfg.n_test);
  for (std::size_t i = 0; i < cfg.n_test; ++i) ds.test.push_back(make_example(cfg, ds.lexicon, kTestSplit, i));
  return ds;
}

}  // namespace cf::synth
