#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "fedprobe/tensor.hpp"

namespace fedprobe {

/// Labelled image set. `images` is [n, ...sample_shape] with values in [0, 1].
struct Dataset {
  Tensor images;
  std::vector<std::size_t> labels;
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  bool empty() const noexcept { return labels.empty(); }
  Shape sample_shape() const;
  std::size_t sample_volume() const;

  std::span<const double> sample(std::size_t i) const;
  std::span<double> sample(std::size_t i);

  /// Copies the listed samples, in the listed order (repeats allowed).
  Dataset subset(std::span<const std::size_t> indices) const;
  Tensor batch_images(std::span<const std::size_t> indices) const;

  /// Throws DataError if counts disagree or a label is out of range.
  void validate() const;

  bool operator==(const Dataset&) const = default;
};

/// Concatenates datasets with identical sample shape and class count.
Dataset concat(std::span<const Dataset> parts);

/// [n, num_classes] one-hot matrix.
Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes);

}  // namespace fedprobe
