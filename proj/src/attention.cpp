#include "consformer/attention.hpp"

#include <cmath>
#include <optional>
#include <vector>

#include "consformer/errors.hpp"

namespace cf::attention {

void AttentionConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_model % n_heads != 0) {
    throw ContractError("attention: d_model " + std::to_string(d_model) + " not divisible by n_heads " +
                        std::to_string(n_heads));
  }
  if (!use_a && !use_c) throw ContractError("attention: at least one of use_A, use_C must be set");
}

double AttentionConfig::scale() const {
  const double d = scale_mode == ScaleMode::kModel ? static_cast<double>(d_model)
                                                   : static_cast<double>(d_model / n_heads);
  return std::sqrt(d);
}

Projections project_qkv(Var f, Var w_q, Var w_k, Var w_v, std::size_t heads) {
  return {ops::split_heads(ops::matmul(f, w_q), heads), ops::split_heads(ops::matmul(f, w_k), heads),
          ops::split_heads(ops::matmul(f, w_v), heads)};
}

Var attention_scores(Var q, Var k, double scale, std::span<const std::uint8_t> key_keep) {
  if (!(q.shape() == k.shape()) || q.shape().rank() != 3) {
    throw DimensionError("attention_scores: Q " + q.shape().str() + " vs K " + k.shape().str());
  }
  Var logits = ops::scale(ops::matmul_nt(q, k), 1.0 / scale);
  if (key_keep.empty()) return ops::softmax_rows(logits);
  const std::size_t n = q.shape()[1];
  if (key_keep.size() != n) {
    throw DimensionError("attention_scores: key mask of " + std::to_string(key_keep.size()) + " for " +
                         std::to_string(n) + " tokens");
  }
  const ops::Mask mask = ops::Mask::keys(n, key_keep);
  return ops::softmax_rows(logits, &mask);
}

GatedScores gate(Var a, Var log_c, const AttentionConfig& cfg, std::span<const std::uint8_t> key_keep) {
  cfg.validate();
  if (!cfg.use_c) return {a};
  const std::size_t n = log_c.shape()[0];
  Var c = ops::broadcast_heads(ops::exp(log_c), cfg.n_heads);
  if (cfg.use_a) {
    if (!(a.shape() == c.shape())) throw DimensionError("gate: A " + a.shape().str() + " vs C " + c.shape().str());
    return {ops::mul(a, c)};
  }
  if (key_keep.empty()) return {c};
  std::vector<std::uint8_t> keep(cfg.n_heads * n * n);
  for (std::size_t i = 0; i < keep.size(); ++i) keep[i] = key_keep[i % n];
  return {ops::mask_fill(c, keep, 0.0)};
}

Var attend(const GatedScores& scores, Var v, Var w_o) {
  return ops::matmul(ops::merge_heads(ops::matmul(scores.s, v)), w_o);
}

LayerOutput constituent_attention(Var f_ocr, const LayerParams& params, const AttentionConfig& cfg,
                                  std::span<const std::uint8_t> key_keep) {
  cfg.validate();
  std::optional<std::size_t> valid_len;
  if (!key_keep.empty()) {
    std::size_t len = 0;
    while (len < key_keep.size() && key_keep[len]) ++len;
    for (std::size_t i = len; i < key_keep.size(); ++i) {
      if (key_keep[i]) throw ContractError("constituent_attention: padding must be a suffix");
    }
    valid_len = len;
  }
  auto scores = constituent::constituent_scores(f_ocr, params.w, valid_len);
  const std::size_t heads = cfg.n_heads;
  Var v = ops::split_heads(ops::matmul(f_ocr, params.w_v), heads);
  Var a{};
  GatedScores gated;
  if (cfg.use_a) {
    Var q = ops::split_heads(ops::matmul(f_ocr, params.w_q), heads);
    Var k = ops::split_heads(ops::matmul(f_ocr, params.w_k), heads);
    if (cfg.use_c && cfg.renormalize) {
      // A ⊙ C over its row sum is softmax(QKᵀ/scale + logC).
      Var logits = ops::add(ops::scale(ops::matmul_nt(q, k), 1.0 / cfg.scale()),
                            ops::broadcast_heads(scores.log_c, heads));
      if (key_keep.empty()) {
        gated = {ops::softmax_rows(logits)};
      } else {
        const ops::Mask mask = ops::Mask::keys(key_keep.size(), key_keep);
        gated = {ops::softmax_rows(logits, &mask)};
      }
      return {attend(gated, v, params.w_o), scores, gated};
    }
    a = attention_scores(q, k, cfg.scale(), key_keep);
  }
  gated = gate(a, scores.log_c, cfg, key_keep);
  return {attend(gated, v, params.w_o), scores, gated};
}

Var self_attention(Var x, Var w_q, Var w_k, Var w_v, Var w_o, std::size_t heads, double scale,
                   std::span<const std::uint8_t> key_keep) {
  Projections p = project_qkv(x, w_q, w_k, w_v, heads);
  return attend({attention_scores(p.q, p.k, scale, key_keep)}, p.v, w_o);
}

}  // namespace cf::attention
