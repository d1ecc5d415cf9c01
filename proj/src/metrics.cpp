#include "consformer/metrics.hpp"

#include <unicode/normalizer2.h>
#include <unicode/uchar.h>
#include <unicode/unistr.h>

#include <algorithm>
#include <map>

#include "consformer/errors.hpp"

namespace cf::metrics {

std::string normalize(std::string_view text) {
  UErrorCode status = U_ZERO_ERROR;
  const icu::Normalizer2* nfc = icu::Normalizer2::getNFCInstance(status);
  if (U_FAILURE(status)) throw ValidationError("metrics: NFC normalizer unavailable");
  icu::UnicodeString s = icu::UnicodeString::fromUTF8(icu::StringPiece(text.data(), static_cast<int32_t>(text.size())));
  // Case folding can denormalise (e.g. precomposed capitals), so fold first,
  // then compose.
  s.foldCase();
  icu::UnicodeString composed = nfc->normalize(s, status);
  if (U_FAILURE(status)) throw ValidationError("metrics: normalization failed");

  icu::UnicodeString collapsed;
  bool pending_space = false;
  for (int32_t i = 0; i < composed.length();) {
    const UChar32 c = composed.char32At(i);
    i += U16_LENGTH(c);
    if (u_isUWhiteSpace(c)) {
      pending_space = !collapsed.isEmpty();
      continue;
    }
    if (pending_space) collapsed.append(static_cast<UChar>(' '));
    pending_space = false;
    collapsed.append(c);
  }
  std::string out;
  collapsed.toUTF8String(out);
  return out;
}

std::vector<std::string> tokenize(std::string_view text) {
  const std::string norm = normalize(text);
  std::vector<std::string> tokens;
  std::size_t start = 0;
  while (start < norm.size()) {
    std::size_t end = norm.find(' ', start);
    if (end == std::string::npos) end = norm.size();
    tokens.push_back(norm.substr(start, end - start));
    start = end + 1;
  }
  return tokens;
}

AnswerPair AnswerPair::from_strings(std::string_view predicted, std::string_view gold) {
  return {tokenize(predicted), tokenize(gold)};
}

int exact_match(const AnswerPair& pair) { return pair.predicted == pair.gold ? 1 : 0; }

double f1_token(const AnswerPair& pair) {
  const auto& p = pair.predicted;
  const auto& g = pair.gold;
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::map<std::string_view, std::size_t> gold_counts;
  for (const auto& t : g) ++gold_counts[t];
  std::size_t common = 0;
  for (const auto& t : p) {
    auto it = gold_counts.find(t);
    if (it != gold_counts.end() && it->second > 0) {
      --it->second;
      ++common;
    }
  }
  if (common == 0) return 0.0;
  const double precision = static_cast<double>(common) / static_cast<double>(p.size());
  const double recall = static_cast<double>(common) / static_cast<double>(g.size());
  return 2.0 * precision * recall / (precision + recall);
}

int exact_match_any(std::string_view predicted, std::span<const std::string> golds) {
  int best = 0;
  for (const auto& g : golds) best = std::max(best, exact_match(AnswerPair::from_strings(predicted, g)));
  return best;
}

double f1_token_any(std::string_view predicted, std::span<const std::string> golds) {
  double best = 0.0;
  for (const auto& g : golds) best = std::max(best, f1_token(AnswerPair::from_strings(predicted, g)));
  return best;
}

CorpusScores corpus_scores(std::span<const AnswerPair> pairs) {
  if (pairs.empty()) throw ValidationError("corpus_scores: empty corpus");
  double em = 0.0, f1 = 0.0;
  for (const auto& p : pairs) {
    em += exact_match(p);
    f1 += f1_token(p);
  }
  const double n = static_cast<double>(pairs.size());
  return {em / n, f1 / n};
}

void BoundaryCounts::add(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gold) {
  if (pred.size() != gold.size()) {
    throw DimensionError("boundary_f1: " + std::to_string(pred.size()) + " predicted links vs " +
                         std::to_string(gold.size()) + " gold links");
  }
  for (std::size_t i = 0; i < pred.size(); ++i) {
    const bool p = pred[i] != 0, g = gold[i] != 0;
    true_pos += p && g;
    false_pos += p && !g;
    false_neg += !p && g;
  }
}

double BoundaryCounts::f1() const {
  if (true_pos + false_pos + false_neg == 0) return 1.0;
  return 2.0 * static_cast<double>(true_pos) /
         static_cast<double>(2 * true_pos + false_pos + false_neg);
}

double boundary_f1(std::span<const std::uint8_t> pred, std::span<const std::uint8_t> gold) {
  BoundaryCounts c;
  c.add(pred, gold);
  return c.f1();
}

}  // namespace cf::metrics
