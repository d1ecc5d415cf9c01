#pragma once

#include <functional>
#include <map>
#include <string>
#include <vector>

#include "consformer/graph.hpp"

namespace cf {

using Gradients = std::map<std::string, Tensor>;

// Central differences (f(θ+h) − f(θ−h)) / 2h for every coordinate of every
// parameter. `store` is perturbed in place and restored bit-exactly.
Gradients finite_diff_grad(const std::function<double(const ParamStore&)>& f, ParamStore& store,
                           double h = 1e-6);

// Coordinate-wise |a − n| / max(|a|, |n|, floor), maximised over the tensor.
// The floor keeps coordinates whose true gradient is ~0 from being judged by
// finite-difference round-off alone.
double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor = 1e-6);

struct GroupCheck {
  std::string name;
  double max_rel_error = 0.0;
  double max_abs_analytic = 0.0;
  bool passed = false;
};

// Runs `loss` once on a fresh Graph (via backward) and once per coordinate
// through finite differences, comparing per parameter.
// `loss` must build its forward pass on the supplied Graph.
std::vector<GroupCheck> check_gradients(const std::function<Var(Graph&, ParamStore&)>& loss,
                                        ParamStore& store, double h = 1e-6, double tolerance = 1e-4,
                                        double floor = 1e-6, Fault fault = Fault::kNone);

}  // namespace cf
