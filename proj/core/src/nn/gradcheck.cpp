#include "fedprobe/nn/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "fedprobe/error.hpp"

namespace fedprobe::nn {

double relative_error(double a, double b) noexcept {
  const double scale = std::max({std::abs(a), std::abs(b), kRelativeErrorFloor});
  return std::abs(a - b) / scale;
}

Shape unravel_index(std::size_t flat, const Shape& shape) {
  Shape coords(shape.size());
  for (std::size_t d = shape.size(); d-- > 0;) {
    coords[d] = flat % shape[d];
    flat /= shape[d];
  }
  return coords;
}

double GradCheckReport::max_relative_error() const noexcept {
  double worst = 0.0;
  for (const auto& g : groups) worst = std::max(worst, g.max_relative_error);
  return worst;
}

const GroupCheck& GradCheckReport::worst() const {
  if (groups.empty()) throw std::logic_error("empty gradient check report");
  return *std::max_element(groups.begin(), groups.end(),
                           [](const GroupCheck& a, const GroupCheck& b) {
                             return a.max_relative_error < b.max_relative_error;
                           });
}

GradCheckReport compare_gradients(const Gradients& analytic,
                                  const Gradients& numeric) {
  if (!analytic.same_shape(numeric)) {
    throw ShapeError("compare_gradients: gradient shapes differ");
  }
  GradCheckReport report;
  for (const WeightGroup& group : weight_groups(analytic)) {
    const Tensor& a = group_tensor(analytic, group);
    const Tensor& b = group_tensor(numeric, group);
    GroupCheck check;
    check.group = group;
    for (std::size_t i = 0; i < a.size(); ++i) {
      const double err = relative_error(a[i], b[i]);
      if (err > check.max_relative_error || i == 0) {
        check.max_relative_error = err;
        check.worst_index = i;
        check.analytic = a[i];
        check.numeric = b[i];
      }
    }
    check.worst_coordinates = unravel_index(check.worst_index, a.shape());
    report.groups.push_back(std::move(check));
  }
  return report;
}

}  // namespace fedprobe::nn
