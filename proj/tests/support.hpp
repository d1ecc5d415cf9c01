#pragma once

#include <cmath>
#include <cstddef>
#include <functional>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "consformer/gradcheck.hpp"
#include "consformer/graph.hpp"
#include "consformer/ops.hpp"

namespace cf::test {

inline Tensor random_tensor(Shape shape, std::mt19937_64& rng, double lo = -1.0, double hi = 1.0) {
  Tensor t(shape);
  std::uniform_real_distribution<double> dist(lo, hi);
  for (double& x : t.data()) x = dist(rng);
  return t;
}

// Contracts an op's output with fixed random weights so every output entry
// contributes a distinct gradient.
inline Var weighted_sum(Var y, const Tensor& weights) {
  Graph& g = *y.graph;
  return ops::sum(ops::mul(y, g.constant(weights)));
}

// Gradient check of `op` applied to the named inputs, each a parameter.
inline std::vector<GroupCheck> check_op(const std::map<std::string, Tensor>& inputs,
                                        const std::function<Var(Graph&, std::vector<Var>&)>& op,
                                        std::mt19937_64& rng, double tolerance = 1e-4) {
  ParamStore store;
  std::vector<std::string> names;
  for (const auto& [name, value] : inputs) {
    store.add(name, value);
    names.push_back(name);
  }
  Tensor weights;
  bool have_weights = false;
  return check_gradients(
      [&](Graph& g, ParamStore& s) {
        std::vector<Var> vars;
        for (const auto& n : names) vars.push_back(g.param(s, n));
        Var y = op(g, vars);
        if (!have_weights) {
          weights = random_tensor(y.shape(), rng, 0.5, 1.5);
          have_weights = true;
        }
        return weighted_sum(y, weights);
      },
      store, 1e-6, tolerance, 1e-5);
}

inline bool all_passed(const std::vector<GroupCheck>& groups) {
  for (const auto& g : groups) {
    if (!g.passed) return false;
  }
  return !groups.empty();
}

namespace oracle {

// r[k] = Σ_a Σ_b f[k][a] W[a][b] f[k+1][b]
inline std::vector<double> bilinear(const std::vector<std::vector<double>>& f,
                                    const std::vector<std::vector<double>>& w) {
  std::vector<double> r;
  for (std::size_t k = 0; k + 1 < f.size(); ++k) {
    double acc = 0.0;
    for (std::size_t a = 0; a < w.size(); ++a) {
      for (std::size_t b = 0; b < w[a].size(); ++b) acc += f[k][a] * w[a][b] * f[k + 1][b];
    }
    r.push_back(acc);
  }
  return r;
}

// C[i][j] by repeated multiplication across the span.
inline double direct_product(const std::vector<double>& p, std::size_t i, std::size_t j) {
  double c = 1.0;
  for (std::size_t k = std::min(i, j); k < std::max(i, j); ++k) c *= p[k];
  return c;
}

inline std::vector<double> softmax(const std::vector<double>& x) {
  double m = x[0];
  for (double v : x) m = std::max(m, v);
  double z = 0.0;
  for (double v : x) z += std::exp(v - m);
  std::vector<double> out;
  for (double v : x) out.push_back(std::exp(v - m) / z);
  return out;
}

// Token F1 with bag intersection, written independently of the library.
inline double token_f1(const std::vector<std::string>& p, const std::vector<std::string>& g) {
  if (p.empty() && g.empty()) return 1.0;
  if (p.empty() || g.empty()) return 0.0;
  std::vector<bool> used(g.size(), false);
  std::size_t common = 0;
  for (const auto& t : p) {
    for (std::size_t j = 0; j < g.size(); ++j) {
      if (!used[j] && g[j] == t) {
        used[j] = true;
        ++common;
        break;
      }
    }
  }
  if (common == 0) return 0.0;
  const double pr = double(common) / double(p.size());
  const double re = double(common) / double(g.size());
  return 2 * pr * re / (pr + re);
}

// Textbook Adam on a flat parameter vector.
struct Adam {
  double lr, b1, b2, eps;
  std::vector<double> m, v;
  int t = 0;
  void step(std::vector<double>& theta, const std::vector<double>& grad) {
    if (m.empty()) {
      m.assign(theta.size(), 0.0);
      v.assign(theta.size(), 0.0);
    }
    ++t;
    for (std::size_t i = 0; i < theta.size(); ++i) {
      m[i] = b1 * m[i] + (1 - b1) * grad[i];
      v[i] = b2 * v[i] + (1 - b2) * grad[i] * grad[i];
      const double mh = m[i] / (1 - std::pow(b1, t));
      const double vh = v[i] / (1 - std::pow(b2, t));
      theta[i] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
};

}  // namespace oracle
}  // namespace cf::test
