#pragma once

#include <array>
#include <cstddef>
#include <cstdint>
#include <optional>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "consformer/ops.hpp"

// Feature rows for detected objects, scene-text tokens and the question, and
// their fusion into one sequence ordered objects → scene text → question.
namespace cf::embeddings {

// Normalised (x_min, y_min, x_max, y_max).
using Box = std::array<double, 4>;

struct RawObject {
  std::vector<double> appearance;  // [d_fr]
  Box box{};
  std::size_t label = 0;  // vocabulary id; read only when labels are enabled
};

struct RawSceneText {
  std::vector<double> appearance;  // [d_fr]
  Box box{};
  std::size_t token = 0;  // vocabulary id looked up in the token table
};

// Throws DomainError unless 0 <= x_min <= x_max <= 1 and likewise for y.
void validate_box(const Box& box);

// Projection followed by its own layer norm.
struct NormedProjection {
  Var w;
  Var gain;
  Var bias;
};

struct ObjectParams {
  NormedProjection appearance;
  NormedProjection box;
  std::optional<Var> w_label;  // present only with object labels enabled
};

struct LayerNormParams {
  Var gain;
  Var bias;
};

struct SceneTextParams {
  NormedProjection appearance;
  NormedProjection box;
  Var w_token;  // [d_model×d_model]
  // Layer norm on the token term; absent by default.
  std::optional<LayerNormParams> token_norm;
};

// Registers parameters under `prefix` (W, ln.gain, ln.bias).
void add_normed_projection(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                           std::mt19937_64& rng);
NormedProjection bind_normed_projection(Graph& g, ParamStore& store, const std::string& prefix);

// f_i = LN(W_fr·appearance_i) + LN(W_bx·box_i) [+ W_label·table[label_i]]
Var embed_objects(Graph& g, std::span<const RawObject> objects, const ObjectParams& params, Var table,
                  std::size_t d_fr, double ln_eps = 1e-6);

// f_i = LN(W_fr·appearance_i) + LN(W_bx·box_i) + W_tok·table[token_i]
// The third term is not normalised unless token_norm is given.
Var embed_scene_texts(Graph& g, std::span<const RawSceneText> texts, const SceneTextParams& params, Var table,
                      std::size_t d_fr, double ln_eps = 1e-6);

// Row i = table[ids[i]]. Throws IndexError for ids outside the table.
Var embed_question(std::span<const std::size_t> ids, Var table);

struct FusedSequence {
  Var features;  // [(n_obj + n_ocr + L)×d_model]
  ops::RowRange objects;
  ops::RowRange scene_text;
  ops::RowRange question;
  std::vector<std::uint8_t> mask;  // 1 for real rows
};

FusedSequence fuse(Var objects, Var scene_text, Var question);

}  // namespace cf::embeddings
