#pragma once

#include <cstddef>
#include <cstdint>
#include <string>
#include <variant>
#include <vector>

#include "fedprobe/tensor.hpp"

namespace fedprobe::nn {

struct Dense {
  std::size_t units = 0;
  bool operator==(const Dense&) const = default;
};

/// Valid convolution, stride 1.
struct Conv2D {
  std::size_t filters = 0;
  std::size_t kernel_h = 0;
  std::size_t kernel_w = 0;
  bool operator==(const Conv2D&) const = default;
};

/// Non-overlapping pooling: stride equals the pool size.
struct MaxPool2D {
  std::size_t pool_h = 0;
  std::size_t pool_w = 0;
  bool operator==(const MaxPool2D&) const = default;
};

struct Flatten {
  bool operator==(const Flatten&) const = default;
};

using LayerKind = std::variant<Dense, Conv2D, MaxPool2D, Flatten>;

enum class Activation { kLinear, kSigmoid, kReLU, kSoftmax };

struct LayerSpec {
  LayerKind kind;
  Activation activation = Activation::kLinear;

  bool trainable() const noexcept {
    return std::holds_alternative<Dense>(kind) ||
           std::holds_alternative<Conv2D>(kind);
  }
  bool operator==(const LayerSpec&) const = default;
};

using Architecture = std::vector<LayerSpec>;

using ::fedprobe::to_string;
std::string to_string(Activation a);
std::string to_string(const LayerSpec& spec);

/// Throws ShapeError when a spec breaks the layer rules: parameter-free layers
/// must be Linear, Softmax only on the last layer, and all sizes positive.
void validate_architecture(const Architecture& arch);

/// Per-sample output shape of every layer, given the per-sample input shape.
/// Dense takes rank-1 input; Conv2D and MaxPool2D take [channels, h, w].
std::vector<Shape> infer_shapes(const Architecture& arch,
                                const Shape& sample_shape);

/// Weights and bias of one trainable layer.
/// Dense: weights [inputs, units], bias [units].
/// Conv2D: weights [filters, channels, kernel_h, kernel_w], bias [filters].
struct LayerParams {
  Tensor weights;
  Tensor bias;
  bool operator==(const LayerParams&) const = default;
};

/// Ordered per-layer tensors, one entry per trainable layer.
struct ParamTensors {
  std::vector<LayerParams> layers;

  std::size_t num_parameters() const noexcept;
  bool same_shape(const ParamTensors& other) const noexcept;
  bool operator==(const ParamTensors&) const = default;
};

struct ModelParams : ParamTensors {};
struct Gradients : ParamTensors {};

/// Glorot-uniform weights, limit sqrt(6 / (fan_in + fan_out)); zero biases.
ModelParams init_params(const Architecture& arch, const Shape& sample_shape,
                        std::uint64_t seed);

/// Throws ShapeError unless `params` has exactly the tensors `arch` needs.
void check_params(const ParamTensors& params, const Architecture& arch,
                  const Shape& sample_shape);

/// Zero tensors shaped like `like`.
Gradients zeros_like(const ParamTensors& like);

}  // namespace fedprobe::nn
