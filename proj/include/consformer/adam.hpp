#pragma once

#include <cstddef>

#include "consformer/graph.hpp"

namespace cf {

struct AdamConfig {
  double lr = 1e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// Adam with bias correction. Moments live in a ParamStore ("m/<name>",
// "v/<name>", plus a scalar "step") so they checkpoint in the same format as
// the parameters.
class Adam {
 public:
  explicit Adam(AdamConfig cfg = {}) : cfg_(cfg) {}

  // Applies one update from the gradients currently held in `params`.
  void step(ParamStore& params);

  std::size_t steps() const { return steps_; }
  const AdamConfig& config() const { return cfg_; }

  ParamStore state() const;
  void load_state(const ParamStore& state, const ParamStore& params);

 private:
  AdamConfig cfg_;
  std::size_t steps_ = 0;
  ParamStore moments_;
};

}  // namespace cf
