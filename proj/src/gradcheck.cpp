#include "consformer/gradcheck.hpp"

#include <algorithm>
#include <cmath>

#include "consformer/errors.hpp"

namespace cf {

Gradients finite_diff_grad(const std::function<double(const ParamStore&)>& f, ParamStore& store,
                           double h) {
  if (!(h > 0.0)) throw DomainError("finite_diff_grad: step must be positive");
  Gradients out;
  for (auto& [name, entry] : store) {
    Tensor estimate(entry.value.shape());
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double original = entry.value[i];
      entry.value[i] = original + h;
      const double up = f(store);
      entry.value[i] = original - h;
      const double down = f(store);
      entry.value[i] = original;
      estimate[i] = (up - down) / (2.0 * h);
    }
    out.emplace(name, std::move(estimate));
  }
  return out;
}

double max_relative_error(const Tensor& analytic, const Tensor& numeric, double floor) {
  require_same_shape(analytic.shape(), numeric.shape(), "max_relative_error");
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double a = analytic[i];
    const double n = numeric[i];
    const double denom = std::max({std::abs(a), std::abs(n), floor});
    worst = std::max(worst, std::abs(a - n) / denom);
  }
  return worst;
}

std::vector<GroupCheck> check_gradients(const std::function<Var(Graph&, ParamStore&)>& loss,
                                        ParamStore& store, double h, double tolerance, double floor,
                                        Fault fault) {
  store.zero_grad();
  {
    Graph g;
    g.set_fault(fault);
    Var l = loss(g, store);
    g.backward(l);
  }
  Gradients numeric = finite_diff_grad(
      [&loss](const ParamStore& s) {
        Graph g;
        // The forward pass never writes to the store; params are copied in.
        return loss(g, const_cast<ParamStore&>(s)).value().item();
      },
      store, h);
  std::vector<GroupCheck> report;
  for (const auto& [name, entry] : store) {
    GroupCheck c;
    c.name = name;
    c.max_rel_error = max_relative_error(entry.grad, numeric.at(name), floor);
    for (double v : entry.grad.data()) c.max_abs_analytic = std::max(c.max_abs_analytic, std::abs(v));
    c.passed = c.max_rel_error < tolerance;
    report.push_back(std::move(c));
  }
  return report;
}

}  // namespace cf
