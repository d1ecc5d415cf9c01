#pragma once

#include <cstddef>
#include <optional>

#include "consformer/ops.hpp"

// Constituent scores over a sequence of scene-text token features.
//
// Adjacent tokens are scored with a learned bilinear form, each token splits
// one unit of mass between its two neighbours, and the link probability of a
// pair is the geometric mean of the two tokens' mutual masses. The score of a
// span is the product of its link probabilities, held in log space so long
// spans keep a usable gradient.
namespace cf::constituent {

// Floor applied to link probabilities before taking logs.
inline constexpr double kLinkFloor = 1e-9;

// r[k] = f_k · W · f_{k+1}ᵀ, length n−1 (empty for n = 1).
struct PairRelations {
  Var r;
  std::size_t tokens = 0;
};

// Token i's mass toward its left and right neighbour. Interior tokens sum to
// one; a boundary token gives its single neighbour everything.
struct NeighborProbs {
  Var left;
  Var right;
};

struct ConstituentScores {
  Var link_prob;  // [n−1], each in [kLinkFloor, 1]
  Var log_c;      // [n×n], symmetric with zero diagonal
};

PairRelations pair_scores(Var f_ocr, Var w);

NeighborProbs neighbor_softmax(const PairRelations& relations);

// P[k] = sqrt(right[k] · left[k+1]) clamped to [kLinkFloor, 1]. With
// `valid_len` set, links touching or inside padding (k + 1 >= valid_len) are
// pinned to kLinkFloor.
Var link_probability(const NeighborProbs& probs, std::optional<std::size_t> valid_len = std::nullopt);

// logC[i][j] = Σ_{k=min(i,j)}^{max(i,j)−1} log P[k]. Requires P in [kLinkFloor, 1].
ConstituentScores constituent_matrix(Var link_prob);

// Full pipeline from token features to constituent scores.
ConstituentScores constituent_scores(Var f_ocr, Var w, std::optional<std::size_t> valid_len = std::nullopt);

}  // namespace cf::constituent
