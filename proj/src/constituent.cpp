#include "consformer/constituent.hpp"

#include <string>
#include <vector>

#include "consformer/errors.hpp"

namespace cf::constituent {

PairRelations pair_scores(Var f_ocr, Var w) {
  return {ops::bilinear_adjacent(f_ocr, w), f_ocr.shape()[0]};
}

NeighborProbs neighbor_softmax(const PairRelations& relations) {
  return {ops::neighbor_left(relations.r, relations.tokens),
          ops::neighbor_right(relations.r, relations.tokens)};
}

Var link_probability(const NeighborProbs& probs, std::optional<std::size_t> valid_len) {
  const std::size_t n = probs.right.shape()[0];
  if (!(probs.left.shape() == probs.right.shape())) {
    throw DimensionError("link_probability: left " + probs.left.shape().str() + " vs right " +
                         probs.right.shape().str());
  }
  // Clamping the product at floor² is the same as clamping its square root
  // at floor, and keeps sqrt away from zero.
  Var product = ops::mul(ops::slice_rows(probs.right, 0, n - 1), ops::slice_rows(probs.left, 1, n));
  Var p = ops::sqrt(ops::clamp(product, kLinkFloor * kLinkFloor, 1.0));
  if (valid_len) {
    std::vector<std::uint8_t> keep(n - 1);
    for (std::size_t k = 0; k + 1 < n; ++k) keep[k] = (k + 1 < *valid_len) ? 1 : 0;
    p = ops::mask_fill(p, keep, kLinkFloor);
  }
  return p;
}

ConstituentScores constituent_matrix(Var link_prob) {
  for (double v : link_prob.value().data()) {
    if (!(v >= kLinkFloor && v <= 1.0)) {
      throw DomainError("constituent_matrix: link probability " + std::to_string(v) + " outside [1e-9, 1]");
    }
  }
  return {link_prob, ops::span_log_sums(ops::log(link_prob))};
}

ConstituentScores constituent_scores(Var f_ocr, Var w, std::optional<std::size_t> valid_len) {
  return constituent_matrix(link_probability(neighbor_softmax(pair_scores(f_ocr, w)), valid_len));
}

}  // namespace cf::constituent
