#include "consformer/embeddings.hpp"

#include <array>

#include "consformer/errors.hpp"
#include "consformer/init.hpp"

namespace cf::embeddings {
namespace {

Var stack_features(Graph& g, std::size_t rows, std::size_t cols, const auto& rows_of) {
  std::vector<double> data;
  data.reserve(rows * cols);
  for (std::size_t i = 0; i < rows; ++i) {
    const auto& r = rows_of(i);
    if (r.size() != cols) {
      throw DimensionError("feature row of length " + std::to_string(r.size()) + " where " +
                           std::to_string(cols) + " expected");
    }
    data.insert(data.end(), r.begin(), r.end());
  }
  return g.constant(Tensor(Shape{rows, cols}, std::move(data)));
}

Var normed(const NormedProjection& p, Var x, double eps) {
  return ops::layer_norm(ops::matmul(x, p.w), p.gain, p.bias, eps);
}

}  // namespace

void validate_box(const Box& b) {
  const bool ok = b[0] >= 0.0 && b[1] >= 0.0 && b[2] <= 1.0 && b[3] <= 1.0 && b[0] <= b[2] && b[1] <= b[3];
  if (!ok) {
    throw DomainError("bounding box (" + std::to_string(b[0]) + ", " + std::to_string(b[1]) + ", " +
                      std::to_string(b[2]) + ", " + std::to_string(b[3]) + ") is not normalised");
  }
}

void add_normed_projection(ParamStore& store, const std::string& prefix, std::size_t in, std::size_t out,
                           std::mt19937_64& rng) {
  store.add(prefix + ".W", init::uniform_fan_in(Shape{in, out}, rng));
  store.add(prefix + ".ln.gain", Tensor::filled(Shape{out}, 1.0));
  store.add(prefix + ".ln.bias", Tensor(Shape{out}));
}

NormedProjection bind_normed_projection(Graph& g, ParamStore& store, const std::string& prefix) {
  return {g.param(store, prefix + ".W"), g.param(store, prefix + ".ln.gain"), g.param(store, prefix + ".ln.bias")};
}

Var embed_objects(Graph& g, std::span<const RawObject> objects, const ObjectParams& params, Var table,
                  std::size_t d_fr, double ln_eps) {
  const std::size_t n = objects.size();
  for (const auto& o : objects) validate_box(o.box);
  Var app = stack_features(g, n, d_fr, [&](std::size_t i) -> const std::vector<double>& { return objects[i].appearance; });
  Var box = stack_features(g, n, 4, [&](std::size_t i) -> const Box& { return objects[i].box; });
  Var f = ops::add(normed(params.appearance, app, ln_eps), normed(params.box, box, ln_eps));
  if (params.w_label) {
    std::vector<std::size_t> labels;
    for (const auto& o : objects) labels.push_back(o.label);
    f = ops::add(f, ops::matmul(ops::gather_rows(table, labels), *params.w_label));
  }
  return f;
}

Var embed_scene_texts(Graph& g, std::span<const RawSceneText> texts, const SceneTextParams& params, Var table,
                      std::size_t d_fr, double ln_eps) {
  const std::size_t n = texts.size();
  for (const auto& t : texts) validate_box(t.box);
  Var app = stack_features(g, n, d_fr, [&](std::size_t i) -> const std::vector<double>& { return texts[i].appearance; });
  Var box = stack_features(g, n, 4, [&](std::size_t i) -> const Box& { return texts[i].box; });
  std::vector<std::size_t> tokens;
  tokens.reserve(n);
  for (const auto& t : texts) tokens.push_back(t.token);
  Var tok = ops::gather_rows(table, tokens);
  Var tok_term = params.token_norm ? ops::layer_norm(ops::matmul(tok, params.w_token), params.token_norm->gain,
                                                     params.token_norm->bias, ln_eps)
                                   : ops::matmul(tok, params.w_token);
  return ops::add(ops::add(normed(params.appearance, app, ln_eps), normed(params.box, box, ln_eps)), tok_term);
}

Var embed_question(std::span<const std::size_t> ids, Var table) { return ops::gather_rows(table, ids); }

FusedSequence fuse(Var objects, Var scene_text, Var question) {
  const std::array<Var, 3> parts{objects, scene_text, question};
  ops::Stacked stacked = ops::concat_rows(parts);
  const std::size_t rows = stacked.rows.shape()[0];
  return {stacked.rows, stacked.segments[0], stacked.segments[1], stacked.segments[2],
          std::vector<std::uint8_t>(rows, 1)};
}

}  // namespace cf::embeddings
