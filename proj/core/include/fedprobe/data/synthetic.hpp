#pragma once

#include <cstddef>
#include <cstdint>

#include "fedprobe/dataset.hpp"

namespace fedprobe::data {

/// Desk-scale stand-in for CIFAR-10. Every class has a fixed pattern: a
/// class-specific mean intensity blended with a class-specific pixel texture.
/// The pattern depends only on (class, num_classes, image_shape), so sets drawn
/// with different seeds (train vs test) share it; `seed` drives the per-sample
/// Gaussian noise (std `noise`). Pixels are clamped to [0, 1]. Labels come out
/// class-major: 0 x samples_per_class, then 1, ...
Dataset gen_synthetic(std::size_t num_classes, std::size_t samples_per_class,
                      const Shape& image_shape, std::uint64_t seed,
                      double noise = 0.25);

}  // namespace fedprobe::data
