#include "consformer/model.hpp"

#include <algorithm>
#include <cmath>
#include <sstream>

#include "consformer/errors.hpp"
#include "consformer/init.hpp"

namespace cf::model {
namespace {

std::string layer(std::size_t l) { return "enc" + std::to_string(l); }

template <class Row>
bool finite_rows(const std::vector<Row>& rows) {
  for (const auto& r : rows) {
    for (double x : r.appearance) {
      if (!std::isfinite(x)) return false;
    }
    for (double x : r.box) {
      if (!std::isfinite(x)) return false;
    }
  }
  return true;
}

bool finite_inputs(const Example& ex) { return finite_rows(ex.objects) && finite_rows(ex.scene_text); }

}  // namespace

void ModelConfig::validate() const {
  if (d_model == 0 || n_heads == 0 || d_fr == 0 || vocab_size == 0 || n_answers == 0 || ffn_mult == 0) {
    throw ContractError("model config: all extents must be positive");
  }
  attention().validate();
  if (dropout < 0.0 || dropout >= 1.0) throw ContractError("model config: dropout must lie in [0,1)");
  if (!(ln_eps > 0.0)) throw ContractError("model config: ln_eps must be positive");
  if (!(table_std > 0.0)) throw ContractError("model config: table_std must be positive");
}

attention::AttentionConfig ModelConfig::attention() const {
  return {d_model, n_heads, use_a, use_c, scale_mode, renormalize};
}

Model::Model(ModelConfig cfg) : cfg_(cfg) {
  cfg_.validate();
  std::mt19937_64 rng(cfg_.seed);
  const std::size_t d = cfg_.d_model;
  auto& p = params_;
  p.add("table", init::gaussian(Shape{cfg_.vocab_size, d}, cfg_.table_std, rng));

  embeddings::add_normed_projection(p, "obj.fr", cfg_.d_fr, d, rng);
  embeddings::add_normed_projection(p, "obj.bx", 4, d, rng);
  if (cfg_.use_object_labels) p.add("obj.W_label", init::uniform_fan_in(Shape{d, d}, rng));

  embeddings::add_normed_projection(p, "ocr.fr", cfg_.d_fr, d, rng);
  embeddings::add_normed_projection(p, "ocr.bx", 4, d, rng);
  p.add("ocr.tok.W", init::uniform_fan_in(Shape{d, d}, rng));
  if (cfg_.normalize_token_term) {
    p.add("ocr.tok.ln.gain", Tensor::filled(Shape{d}, 1.0));
    p.add("ocr.tok.ln.bias", Tensor(Shape{d}));
  }

  for (const char* name : {"cons.W", "cons.W_q", "cons.W_k", "cons.W_v", "cons.W_o"}) {
    p.add(name, init::uniform_fan_in(Shape{d, d}, rng));
  }

  const std::size_t hidden = cfg_.ffn_mult * d;
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string pre = layer(l);
    p.add(pre + ".ln1.gain", Tensor::filled(Shape{d}, 1.0));
    p.add(pre + ".ln1.bias", Tensor(Shape{d}));
    for (const char* w : {".attn.W_q", ".attn.W_k", ".attn.W_v", ".attn.W_o"}) {
      p.add(pre + w, init::uniform_fan_in(Shape{d, d}, rng));
    }
    p.add(pre + ".ln2.gain", Tensor::filled(Shape{d}, 1.0));
    p.add(pre + ".ln2.bias", Tensor(Shape{d}));
    p.add(pre + ".ff.W1", init::uniform_fan_in(Shape{d, hidden}, rng));
    p.add(pre + ".ff.b1", Tensor(Shape{hidden}));
    p.add(pre + ".ff.W2", init::uniform_fan_in(Shape{hidden, d}, rng));
    p.add(pre + ".ff.b2", Tensor(Shape{d}));
  }
  p.add("out.ln.gain", Tensor::filled(Shape{d}, 1.0));
  p.add("out.ln.bias", Tensor(Shape{d}));
  p.add("head.W", init::uniform_fan_in(Shape{d, cfg_.n_answers}, rng));
  p.add("head.b", Tensor(Shape{cfg_.n_answers}));
}

ModelOutput Model::forward(Graph& g, const Example& ex, std::mt19937_64* rng) const {
  auto& p = params_;
  const double eps = cfg_.ln_eps;
  const double drop = rng ? cfg_.dropout : 0.0;
  auto dropout = [&](Var x) { return drop > 0.0 ? ops::dropout(x, drop, *rng) : x; };
  auto param = [&](const std::string& name) { return g.param(p, name); };

  if (ex.scene_text.empty()) throw DimensionError("forward: example '" + ex.id + "' has no scene-text tokens");
  Var table = param("table");

  embeddings::ObjectParams obj{embeddings::bind_normed_projection(g, p, "obj.fr"),
                               embeddings::bind_normed_projection(g, p, "obj.bx"), std::nullopt};
  if (cfg_.use_object_labels) obj.w_label = param("obj.W_label");
  Var f_obj = embeddings::embed_objects(g, ex.objects, obj, table, cfg_.d_fr, eps);

  embeddings::SceneTextParams ocr{embeddings::bind_normed_projection(g, p, "ocr.fr"),
                                  embeddings::bind_normed_projection(g, p, "ocr.bx"), param("ocr.tok.W"),
                                  std::nullopt};
  if (cfg_.normalize_token_term) ocr.token_norm = embeddings::LayerNormParams{param("ocr.tok.ln.gain"), param("ocr.tok.ln.bias")};
  Var f_ocr = embeddings::embed_scene_texts(g, ex.scene_text, ocr, table, cfg_.d_fr, eps);

  Var f_q = embeddings::embed_question(ex.question, table);

  attention::LayerParams cons{param("cons.W"), param("cons.W_q"), param("cons.W_k"), param("cons.W_v"),
                              param("cons.W_o")};
  attention::LayerOutput gated = attention::constituent_attention(f_ocr, cons, cfg_.attention());
  Var ocr_out = cfg_.ocr_residual ? ops::add(f_ocr, dropout(gated.out)) : dropout(gated.out);

  embeddings::FusedSequence fused = embeddings::fuse(f_obj, ocr_out, f_q);
  Var h = fused.features;
  const double enc_scale = std::sqrt(static_cast<double>(cfg_.d_model / cfg_.n_heads));
  for (std::size_t l = 0; l < cfg_.n_layers; ++l) {
    const std::string pre = layer(l);
    Var x = ops::layer_norm(h, param(pre + ".ln1.gain"), param(pre + ".ln1.bias"), eps);
    Var att = attention::self_attention(x, param(pre + ".attn.W_q"), param(pre + ".attn.W_k"),
                                        param(pre + ".attn.W_v"), param(pre + ".attn.W_o"), cfg_.n_heads,
                                        enc_scale);
    h = ops::add(h, dropout(att));
    x = ops::layer_norm(h, param(pre + ".ln2.gain"), param(pre + ".ln2.bias"), eps);
    Var ff = ops::add_row_bias(ops::matmul(x, param(pre + ".ff.W1")), param(pre + ".ff.b1"));
    ff = ops::add_row_bias(ops::matmul(ops::gelu(ff), param(pre + ".ff.W2")), param(pre + ".ff.b2"));
    h = ops::add(h, dropout(ff));
  }
  h = ops::layer_norm(h, param("out.ln.gain"), param("out.ln.bias"), eps);

  Var pooled = (cfg_.pooling == Pooling::kQuestion && fused.question.size() > 0)
                   ? ops::mean_rows(ops::slice_rows(h, fused.question.begin, fused.question.end))
                   : ops::mean_rows(h);
  Var logits = ops::add_row_bias(ops::matmul(pooled, param("head.W")), param("head.b"));
  logits = ops::reshape(logits, Shape{cfg_.n_answers});

  Var link = gated.constituents.link_prob;
  const std::size_t links = link.shape()[0];
  Var one = g.constant(Tensor::filled(Shape{links}, 1.0));
  Var complement = ops::clamp(ops::sub(one, link), 1.0 - kLogitCeiling, 1.0);
  Var boundary = ops::sub(ops::log(link), ops::log(complement));
  return {logits, boundary, link};
}

Var loss(const ModelOutput& out, std::size_t gold_answer, std::span<const std::uint8_t> gold_boundaries,
         double lambda) {
  if (lambda < 0.0) throw ContractError("loss: lambda must be non-negative");
  Var answer = ops::cross_entropy(out.answer_logits, gold_answer);
  if (lambda == 0.0) return answer;
  Var links = ops::bce_with_logits(out.boundary_logits, gold_boundaries);
  return ops::add(answer, ops::scale(links, lambda));
}

Prediction predict(const Model& model, const Example& ex) {
  Graph g;
  ModelOutput out = model.forward(g, ex);
  Prediction p;
  const auto& z = out.answer_logits.value().values();
  p.answer_logits = z;
  p.answer = static_cast<std::size_t>(std::max_element(z.begin(), z.end()) - z.begin());
  p.link_prob = out.link_prob.value().values();
  return p;
}

double train_step(Model& model, Adam& optimizer, std::span<const Example* const> batch, double lambda,
                  std::mt19937_64* rng) {
  if (batch.empty()) throw ContractError("train_step: empty batch");
  ParamStore& params = model.params();
  params.zero_grad();
  const double inv = 1.0 / static_cast<double>(batch.size());
  double total = 0.0;
  for (const Example* ex : batch) {
    if (!finite_inputs(*ex)) {
      throw NonFiniteError("non-finite input features in example '" + ex->id + "' after " +
                           std::to_string(optimizer.steps()) + " optimizer steps");
    }
    Graph g;
    ModelOutput out = model.forward(g, *ex, rng);
    Var l = loss(out, ex->gold_answer, ex->gold_boundaries, lambda);
    const double value = l.value().item();
    if (!std::isfinite(value)) {
      std::ostringstream os;
      os << "non-finite loss " << value << " on example '" << ex->id << "' after " << optimizer.steps()
         << " optimizer steps";
      throw NonFiniteError(os.str());
    }
    total += value;
    g.backward(ops::scale(l, inv));
  }
  for (const auto& [name, e] : params) {
    if (!e.grad.all_finite()) {
      throw NonFiniteError("non-finite gradient for '" + name + "' after " + std::to_string(optimizer.steps()) +
                           " optimizer steps");
    }
  }
  optimizer.step(params);
  return total * inv;
}

}  // namespace cf::model
