#pragma once

#include <cstddef>
#include <vector>

#include "fedprobe/nn/layers.hpp"
#include "fedprobe/weight_group.hpp"

namespace fedprobe::nn {

/// Denominator floor for relative_error. Below it the comparison is absolute:
/// central differences at h = 1e-5 carry ~1e-11 of round-off, which would make
/// vanishing gradients look arbitrarily wrong in relative terms.
inline constexpr double kRelativeErrorFloor = 1e-6;

/// |a - b| / max(|a|, |b|, kRelativeErrorFloor)
double relative_error(double a, double b) noexcept;

struct GroupCheck {
  WeightGroup group;
  double max_relative_error = 0.0;
  std::size_t worst_index = 0;  // flat index into the group tensor
  Shape worst_coordinates;
  double analytic = 0.0;
  double numeric = 0.0;
};

struct GradCheckReport {
  std::vector<GroupCheck> groups;

  double max_relative_error() const noexcept;
  const GroupCheck& worst() const;
  bool passed(double tolerance) const noexcept {
    return max_relative_error() < tolerance;
  }
};

GradCheckReport compare_gradients(const Gradients& analytic,
                                  const Gradients& numeric);

Shape unravel_index(std::size_t flat, const Shape& shape);

}  // namespace fedprobe::nn
