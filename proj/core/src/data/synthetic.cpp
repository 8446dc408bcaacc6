#include "fedprobe/data/synthetic.hpp"

#include <algorithm>
#include <random>
#include <stdexcept>

#include "fedprobe/seed.hpp"

namespace fedprobe::data {
namespace {

constexpr std::uint64_t kPatternSalt = 0x7a3c5e11d2f04b69ULL;

std::vector<double> class_pattern(std::size_t cls, std::size_t num_classes,
                                  std::size_t volume) {
  std::mt19937_64 rng(mix64(kPatternSalt ^ (cls * 0x9e3779b97f4a7c15ULL)));
  std::uniform_real_distribution<double> texture(0.0, 1.0);
  const double mean =
      (static_cast<double>(cls) + 0.5) / static_cast<double>(num_classes);
  std::vector<double> pattern(volume);
  // Half class brightness, half per-pixel texture; both keep pixels in [0, 1].
  for (double& p : pattern) p = 0.5 + 0.5 * (mean - 0.5) + 0.5 * (texture(rng) - 0.5);
  return pattern;
}

}  // namespace

Dataset gen_synthetic(std::size_t num_classes, std::size_t samples_per_class,
                      const Shape& image_shape, std::uint64_t seed,
                      double noise) {
  if (num_classes == 0 || samples_per_class == 0 || image_shape.empty() ||
      shape_volume(image_shape) == 0) {
    throw std::invalid_argument("gen_synthetic arguments must be positive");
  }
  const std::size_t volume = shape_volume(image_shape);
  const std::size_t n = num_classes * samples_per_class;
  Shape shape{n};
  shape.insert(shape.end(), image_shape.begin(), image_shape.end());
  Dataset out{Tensor(shape), std::vector<std::size_t>(n), num_classes};

  std::mt19937_64 rng(seed);
  std::normal_distribution<double> jitter(0.0, noise);
  auto pixels = out.images.data();
  for (std::size_t c = 0; c < num_classes; ++c) {
    const auto pattern = class_pattern(c, num_classes, volume);
    for (std::size_t s = 0; s < samples_per_class; ++s) {
      const std::size_t i = c * samples_per_class + s;
      out.labels[i] = c;
      double* dst = pixels.data() + i * volume;
      for (std::size_t p = 0; p < volume; ++p) {
        dst[p] = std::clamp(pattern[p] + jitter(rng), 0.0, 1.0);
      }
    }
  }
  return out;
}

}  // namespace fedprobe::data
