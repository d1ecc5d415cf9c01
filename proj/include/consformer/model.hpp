#pragma once

#include <cstddef>
#include <cstdint>
#include <random>
#include <span>
#include <string>
#include <vector>

#include "consformer/adam.hpp"
#include "consformer/attention.hpp"
#include "consformer/embeddings.hpp"

namespace cf::model {

enum class Pooling {
  kQuestion,  // mean over question rows (all rows when the question is empty)
  kAll,       // mean over every fused row
};

struct ModelConfig {
  std::size_t d_model = 32;
  std::size_t n_heads = 2;
  std::size_t n_layers = 1;
  std::size_t d_fr = 16;
  std::size_t vocab_size = 64;  // rows of the shared token table
  std::size_t n_answers = 16;
  std::size_t ffn_mult = 4;
  double dropout = 0.0;
  bool use_a = true;
  bool use_c = true;
  attention::ScaleMode scale_mode = attention::ScaleMode::kModel;
  bool renormalize = false;  // row-normalise A ⊙ C
  // Scene-text rows after the constituent layer: layer(f), or f + layer(f).
  bool ocr_residual = false;
  bool use_object_labels = false;
  bool normalize_token_term = false;
  Pooling pooling = Pooling::kQuestion;
  double ln_eps = 1e-6;
  double table_std = 0.02;  // token table init
  std::uint64_t seed = 0;

  // Throws ContractError on zero extents, d_model % n_heads != 0, or no
  // attention flag set.
  void validate() const;
  attention::AttentionConfig attention() const;
};

struct Example {
  std::string id;
  std::vector<embeddings::RawObject> objects;
  std::vector<embeddings::RawSceneText> scene_text;
  std::vector<std::size_t> question;
  std::vector<std::uint8_t> gold_boundaries;  // [n_ocr − 1], 1 = same word
  std::size_t gold_answer = 0;
};

struct ModelOutput {
  Var answer_logits;    // [n_answers]
  Var boundary_logits;  // [n_ocr − 1], logit of the link probabilities
  Var link_prob;        // [n_ocr − 1]
};

// Upper bound of link probabilities fed to the boundary logit.
inline constexpr double kLogitCeiling = 1.0 - 1e-9;

class Model {
 public:
  explicit Model(ModelConfig cfg);

  const ModelConfig& config() const { return cfg_; }
  ParamStore& params() { return params_; }
  const ParamStore& params() const { return params_; }

  // Builds the forward pass on `g`. Dropout applies only when `rng` is given.
  ModelOutput forward(Graph& g, const Example& ex, std::mt19937_64* rng = nullptr) const;

 private:
  ModelConfig cfg_;
  // Forward passes copy parameter values into each Graph and never write
  // here, so a const Model is safe to evaluate from several threads.
  mutable ParamStore params_;
};

// Cross-entropy on the answer plus λ times the mean binary cross-entropy of
// boundary_logits against gold links.
Var loss(const ModelOutput& out, std::size_t gold_answer, std::span<const std::uint8_t> gold_boundaries,
         double lambda);

struct Prediction {
  std::size_t answer = 0;
  std::vector<double> answer_logits;
  std::vector<double> link_prob;
};

Prediction predict(const Model& model, const Example& ex);

// Mean loss over `batch`, one Adam update. Throws NonFiniteError (with the
// offending example id) if any loss or gradient is not finite.
double train_step(Model& model, Adam& optimizer, std::span<const Example* const> batch, double lambda,
                  std::mt19937_64* rng = nullptr);

}  // namespace cf::model
