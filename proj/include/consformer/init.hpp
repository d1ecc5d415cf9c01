#pragma once

#include <random>

#include "consformer/tensor.hpp"

namespace cf::init {

// Zero-mean uniform with bound 1/sqrt(fan_in), fan_in = rows of a [in×out] matrix.
Tensor uniform_fan_in(Shape shape, std::mt19937_64& rng);
Tensor gaussian(Shape shape, double stddev, std::mt19937_64& rng);

}  // namespace cf::init
