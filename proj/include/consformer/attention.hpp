#pragma once

#include <cstddef>
#include <cstdint>
#include <span>

#include "consformer/constituent.hpp"
#include "consformer/ops.hpp"

namespace cf::attention {

enum class ScaleMode {
  kModel,  // QKᵀ / sqrt(d_model)
  kHead,   // QKᵀ / sqrt(d_model / n_heads)
};

struct AttentionConfig {
  std::size_t d_model = 0;
  std::size_t n_heads = 1;
  bool use_a = true;
  bool use_c = true;
  ScaleMode scale_mode = ScaleMode::kModel;
  // With both flags, divide each row of A ⊙ C by its sum. Off by default.
  bool renormalize = false;

  // Throws ContractError when d_model % n_heads != 0 or both flags are off.
  void validate() const;
  double scale() const;
};

struct Projections {
  Var q, k, v;  // each [h×n×d/h]
};

// Q = f·W_q etc., split into heads along contiguous feature slices.
Projections project_qkv(Var f, Var w_q, Var w_k, Var w_v, std::size_t heads);

// softmax(QKᵀ / scale) per head, excluding keys with key_keep[j] == 0.
// An empty key_keep keeps every key.
Var attention_scores(Var q, Var k, double scale, std::span<const std::uint8_t> key_keep = {});

// Final per-head scores [h×n×n]. Entries are >= 0 and masked keys are 0.
// Rows are not renormalised after gating.
struct GatedScores {
  Var s;
};

// Both flags: S = A ⊙ exp(logC) with C shared by every head.
// use_a only: S = A. use_c only: S = exp(logC) with masked key columns zeroed.
// `a` is ignored when cfg.use_a is false.
GatedScores gate(Var a, Var log_c, const AttentionConfig& cfg, std::span<const std::uint8_t> key_keep = {});

// Per-head S·V, heads concatenated back along features, then ·W_o.
Var attend(const GatedScores& scores, Var v, Var w_o);

struct LayerParams {
  Var w;    // bilinear relation matrix [d×d]
  Var w_q;  // [d×d]
  Var w_k;
  Var w_v;
  Var w_o;
};

struct LayerOutput {
  Var out;  // [n×d]
  constituent::ConstituentScores constituents;
  GatedScores scores;
};

// Constituent-gated multi-head self-attention over scene-text features.
// key_keep marks real (non-padding) tokens; padding must be a suffix.
LayerOutput constituent_attention(Var f_ocr, const LayerParams& params, const AttentionConfig& cfg,
                                  std::span<const std::uint8_t> key_keep = {});

// Ungated multi-head self-attention with output projection.
Var self_attention(Var x, Var w_q, Var w_k, Var w_v, Var w_o, std::size_t heads, double scale,
                   std::span<const std::uint8_t> key_keep = {});

}  // namespace cf::attention
