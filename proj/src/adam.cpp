#include "consformer/adam.hpp"

#include <cmath>

#include "consformer/errors.hpp"

namespace cf {

void Adam::step(ParamStore& params) {
  ++steps_;
  const double t = static_cast<double>(steps_);
  const double bc1 = 1.0 - std::pow(cfg_.beta1, t);
  const double bc2 = 1.0 - std::pow(cfg_.beta2, t);
  for (auto& [name, entry] : params) {
    const std::string mk = "m/" + name;
    const std::string vk = "v/" + name;
    if (!moments_.contains(mk)) {
      moments_.add(mk, Tensor(entry.value.shape()));
      moments_.add(vk, Tensor(entry.value.shape()));
    }
    Tensor& m = moments_.value(mk);
    Tensor& v = moments_.value(vk);
    for (std::size_t i = 0; i < entry.value.size(); ++i) {
      const double g = entry.grad[i];
      m[i] = cfg_.beta1 * m[i] + (1.0 - cfg_.beta1) * g;
      v[i] = cfg_.beta2 * v[i] + (1.0 - cfg_.beta2) * g * g;
      const double m_hat = m[i] / bc1;
      const double v_hat = v[i] / bc2;
      entry.value[i] -= cfg_.lr * m_hat / (std::sqrt(v_hat) + cfg_.eps);
    }
  }
}

ParamStore Adam::state() const {
  ParamStore out;
  for (const auto& [name, e] : moments_) out.add(name, e.value);
  out.add("step", Tensor::scalar(static_cast<double>(steps_)));
  return out;
}

void Adam::load_state(const ParamStore& state, const ParamStore& params) {
  moments_ = ParamStore();
  for (const auto& [name, e] : state) {
    if (name == "step") continue;
    const std::string param = name.substr(2);
    if (!params.contains(param)) throw ValidationError("optimizer state for unknown parameter '" + param + "'");
    require_same_shape(params.value(param).shape(), e.value.shape(), name.c_str());
    moments_.add(name, e.value);
  }
  steps_ = state.contains("step") ? static_cast<std::size_t>(state.value("step").item()) : 0;
}

}  // namespace cf
