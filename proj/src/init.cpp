#include "consformer/init.hpp"

#include <cmath>

namespace cf::init {

Tensor uniform_fan_in(Shape shape, std::mt19937_64& rng) {
  const double fan_in = static_cast<double>(shape.rank() == 0 ? 1 : shape[0]);
  const double bound = 1.0 / std::sqrt(fan_in);
  std::uniform_real_distribution<double> dist(-bound, bound);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng) {
  std::normal_distribution<double> dist(0.0, stddev);
  Tensor t(shape);
  for (double& v : t.data()) v = dist(rng);
  return t;
}

}  // namespace cf::init
