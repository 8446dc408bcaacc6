#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>

#include "fedprobe/dataset.hpp"
#include "fedprobe/nn/layers.hpp"
#include "fedprobe/tensor.hpp"

namespace fedprobe::test {

inline Tensor random_tensor(Shape shape, std::uint64_t seed, double lo = -1.0,
                            double hi = 1.0) {
  Tensor t(std::move(shape));
  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> u(lo, hi);
  for (double& v : t.data()) v = u(rng);
  return t;
}

/// Init weights plus random (nonzero) biases, so bias paths are exercised.
inline nn::ModelParams random_model(const nn::Architecture& arch,
                                    const Shape& sample, std::uint64_t seed) {
  nn::ModelParams m = nn::init_params(arch, sample, seed);
  std::mt19937_64 rng(seed ^ 0x5bd1e995ULL);
  std::uniform_real_distribution<double> u(-0.3, 0.3);
  for (auto& layer : m.layers) {
    for (double& b : layer.bias.data()) b = u(rng);
  }
  return m;
}

inline double max_abs_diff(const Tensor& a, const Tensor& b) {
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

inline Shape with_batch(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

inline Tensor one_hot_random(std::size_t n, std::size_t classes,
                             std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  std::vector<std::size_t> labels(n);
  for (auto& l : labels) l = rng() % classes;
  return one_hot(labels, classes);
}

}  // namespace fedprobe::test
