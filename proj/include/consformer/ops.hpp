#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "consformer/graph.hpp"

// Differentiable operations recorded on a Graph. Every op validates shapes
// and throws DimensionError naming both shapes on mismatch.
namespace cf::ops {

// Boolean keep-mask over the trailing two axes of a softmax input.
struct Mask {
  std::size_t rows = 0;
  std::size_t cols = 0;
  std::vector<std::uint8_t> keep;

  Mask() = default;
  Mask(std::size_t rows, std::size_t cols, std::vector<std::uint8_t> keep);
  // Same key mask repeated on every row.
  static Mask keys(std::size_t rows, std::span<const std::uint8_t> key_keep);

  bool allowed(std::size_t i, std::size_t j) const { return keep[i * cols + j] != 0; }
};

struct RowRange {
  std::size_t begin = 0;
  std::size_t end = 0;

  std::size_t size() const { return end - begin; }
  friend bool operator==(const RowRange&, const RowRange&) = default;
};

struct Stacked {
  Var rows;
  std::vector<RowRange> segments;
};

// [m×k]·[k×n], or batched [h×m×k]·[h×k×n].
Var matmul(Var a, Var b);
// a·bᵀ with b given as [n×k] (or [h×n×k]).
Var matmul_nt(Var a, Var b);

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double factor);
// x[m×n] + bias[n] on every row.
Var add_row_bias(Var x, Var bias);

Var exp(Var x);
// Throws DomainError on any entry <= 0.
Var log(Var x);
// Throws DomainError on any entry <= 0.
Var sqrt(Var x);
// Gradient passes only where lo <= x <= hi.
Var clamp(Var x, double lo, double hi);
// tanh approximation
Var gelu(Var x);

// Softmax over the last axis with max subtraction. Masked positions are
// exactly 0. A row with no unmasked position throws DegenerateRowError.
Var softmax_rows(Var x, const Mask* mask = nullptr);

Var layer_norm(Var x, Var gain, Var bias, double eps = 1e-6);

Stacked concat_rows(std::span<const Var> parts);
// Rows [begin, end) along the leading axis.
Var slice_rows(Var x, std::size_t begin, std::size_t end);

// [n×d] -> [h×n×d/h], head k holding feature columns [k·d/h, (k+1)·d/h).
Var split_heads(Var x, std::size_t heads);
// Inverse of split_heads.
Var merge_heads(Var x);
// [n×n] -> [h×n×n], identical copy per head.
Var broadcast_heads(Var x, std::size_t heads);

// Embedding lookup. Throws IndexError on an id >= rows(table).
Var gather_rows(Var table, std::span<const std::size_t> ids);
Var reshape(Var x, Shape shape);
Var sum(Var x);
// [m×d] -> [1×d]
Var mean_rows(Var x);
// Replaces entries where keep == 0 with fill; those receive no gradient.
Var mask_fill(Var x, std::span<const std::uint8_t> keep, double fill);
Var dropout(Var x, double rate, std::mt19937_64& rng);

// -log softmax(logits)[target]; logits of any rank, flattened.
Var cross_entropy(Var logits, std::size_t target);
// Mean binary cross-entropy over the elements of logits. Empty input -> 0.
Var bce_with_logits(Var logits, std::span<const std::uint8_t> targets);

// r[k] = f[k]·W·f[k+1]ᵀ for k = 0..n-2. f is [n×d], W is [d×d].
Var bilinear_adjacent(Var f, Var w);
// Neighbour softmax over pair scores r[n-1]. Token i splits one unit of
// mass between r[i-1] (left) and r[i] (right). A token with one neighbour
// gives it all the mass.
Var neighbor_left(Var r, std::size_t n);
Var neighbor_right(Var r, std::size_t n);
// out[i][j] = sum of log_p[k] for k in [min(i,j), max(i,j)); via prefix sums.
Var span_log_sums(Var log_p);

}  // namespace cf::ops
