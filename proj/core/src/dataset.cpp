#include "fedprobe/dataset.hpp"

#include <algorithm>

#include <fmt/format.h>

#include "fedprobe/error.hpp"

namespace fedprobe {

Shape Dataset::sample_shape() const {
  const Shape& s = images.shape();
  if (s.empty()) return {};
  return Shape(s.begin() + 1, s.end());
}

std::size_t Dataset::sample_volume() const {
  return shape_volume(sample_shape());
}

std::span<const double> Dataset::sample(std::size_t i) const {
  const std::size_t v = sample_volume();
  return images.data().subspan(i * v, v);
}

std::span<double> Dataset::sample(std::size_t i) {
  const std::size_t v = sample_volume();
  return images.data().subspan(i * v, v);
}

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
  Dataset out;
  out.images = batch_images(indices);
  out.num_classes = num_classes;
  out.labels.reserve(indices.size());
  for (std::size_t i : indices) out.labels.push_back(labels.at(i));
  return out;
}

Tensor Dataset::batch_images(std::span<const std::size_t> indices) const {
  Shape shape = images.shape();
  if (shape.empty()) throw DataError("dataset has no image tensor");
  shape[0] = indices.size();
  Tensor out(shape);
  auto dst = out.data().begin();
  for (std::size_t i : indices) {
    if (i >= size()) {
      throw DataError(fmt::format("sample index {} out of range ({} samples)",
                                  i, size()));
    }
    auto src = sample(i);
    dst = std::copy(src.begin(), src.end(), dst);
  }
  return out;
}

void Dataset::validate() const {
  if (images.rank() < 2) {
    throw DataError(fmt::format("image tensor must be [n, ...], got {}",
                                to_string(images.shape())));
  }
  if (images.dim(0) != labels.size()) {
    throw DataError(fmt::format("{} images but {} labels", images.dim(0),
                                labels.size()));
  }
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DataError(fmt::format("label {} at sample {} is not below {}",
                                  labels[i], i, num_classes));
    }
  }
}

Dataset concat(std::span<const Dataset> parts) {
  if (parts.empty()) throw DataError("concat of zero datasets");
  const Shape sample_shape = parts.front().sample_shape();
  const std::size_t num_classes = parts.front().num_classes;
  std::size_t n = 0;
  for (const auto& p : parts) {
    if (p.sample_shape() != sample_shape || p.num_classes != num_classes) {
      throw ShapeError("concat of datasets with different sample layouts");
    }
    n += p.size();
  }
  Shape shape{n};
  shape.insert(shape.end(), sample_shape.begin(), sample_shape.end());
  Dataset out{Tensor(shape), {}, num_classes};
  out.labels.reserve(n);
  auto dst = out.images.data().begin();
  for (const auto& p : parts) {
    dst = std::copy(p.images.data().begin(), p.images.data().end(), dst);
    out.labels.insert(out.labels.end(), p.labels.begin(), p.labels.end());
  }
  return out;
}

Tensor one_hot(std::span<const std::size_t> labels, std::size_t num_classes) {
  Tensor out({labels.size(), num_classes});
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (labels[i] >= num_classes) {
      throw DataError(fmt::format("label {} is not below {}", labels[i],
                                  num_classes));
    }
    out[i * num_classes + labels[i]] = 1.0;
  }
  return out;
}

}  // namespace fedprobe
