#include "fedprobe/nn/layers.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>

#include "fedprobe/error.hpp"

namespace fedprobe::nn {
namespace {

template <class... Ts>
struct Overloaded : Ts... {
  using Ts::operator()...;
};
template <class... Ts>
Overloaded(Ts...) -> Overloaded<Ts...>;

struct ParamShapes {
  Shape weights;
  Shape bias;
  std::size_t fan_in = 0;
  std::size_t fan_out = 0;
};

std::vector<ParamShapes> param_shapes(const Architecture& arch,
                                      const Shape& sample_shape) {
  const auto outputs = infer_shapes(arch, sample_shape);
  std::vector<ParamShapes> result;
  Shape in = sample_shape;
  for (std::size_t k = 0; k < arch.size(); ++k) {
    if (const auto* d = std::get_if<Dense>(&arch[k].kind)) {
      result.push_back({{in[0], d->units}, {d->units}, in[0], d->units});
    } else if (const auto* c = std::get_if<Conv2D>(&arch[k].kind)) {
      const std::size_t area = c->kernel_h * c->kernel_w;
      result.push_back({{c->filters, in[0], c->kernel_h, c->kernel_w},
                        {c->filters},
                        in[0] * area,
                        c->filters * area});
    }
    in = outputs[k];
  }
  return result;
}

}  // namespace

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kLinear: return "linear";
    case Activation::kSigmoid: return "sigmoid";
    case Activation::kReLU: return "relu";
    case Activation::kSoftmax: return "softmax";
  }
  return "?";
}

std::string to_string(const LayerSpec& spec) {
  const std::string act = to_string(spec.activation);
  return std::visit(
      Overloaded{
          [&](const Dense& d) { return fmt::format("dense({}, {})", d.units, act); },
          [&](const Conv2D& c) {
            return fmt::format("conv2d({}, {}x{}, {})", c.filters, c.kernel_h,
                               c.kernel_w, act);
          },
          [](const MaxPool2D& p) {
            return fmt::format("maxpool2d({}x{})", p.pool_h, p.pool_w);
          },
          [](const Flatten&) { return std::string("flatten"); },
      },
      spec.kind);
}

void validate_architecture(const Architecture& arch) {
  if (arch.empty()) throw ShapeError("architecture has no layers");
  for (std::size_t k = 0; k < arch.size(); ++k) {
    const LayerSpec& spec = arch[k];
    const bool sizes_ok = std::visit(
        Overloaded{
            [](const Dense& d) { return d.units > 0; },
            [](const Conv2D& c) {
              return c.filters > 0 && c.kernel_h > 0 && c.kernel_w > 0;
            },
            [](const MaxPool2D& p) { return p.pool_h > 0 && p.pool_w > 0; },
            [](const Flatten&) { return true; },
        },
        spec.kind);
    if (!sizes_ok) {
      throw ShapeError(fmt::format("layer {} ({}) has a zero size", k + 1,
                                   to_string(spec)));
    }
    if (!spec.trainable() && spec.activation != Activation::kLinear) {
      throw ShapeError(fmt::format(
          "layer {} ({}) has no parameters and must use a linear activation",
          k + 1, to_string(spec)));
    }
    if (spec.activation == Activation::kSoftmax && k + 1 != arch.size()) {
      throw ShapeError(fmt::format(
          "softmax is only allowed on the final layer, found on layer {}",
          k + 1));
    }
  }
}

std::vector<Shape> infer_shapes(const Architecture& arch,
                                const Shape& sample_shape) {
  validate_architecture(arch);
  std::vector<Shape> shapes;
  shapes.reserve(arch.size());
  Shape in = sample_shape;
  for (std::size_t k = 0; k < arch.size(); ++k) {
    const auto fail = [&](std::string_view need) {
      return ShapeError(fmt::format("layer {} ({}) expects {} input, got {}",
                                    k + 1, to_string(arch[k]), need,
                                    to_string(in)));
    };
    Shape out = std::visit(
        Overloaded{
            [&](const Dense& d) -> Shape {
              if (in.size() != 1) throw fail("rank-1");
              return {d.units};
            },
            [&](const Conv2D& c) -> Shape {
              if (in.size() != 3) throw fail("[channels, height, width]");
              if (c.kernel_h > in[1] || c.kernel_w > in[2]) {
                throw fail("spatial size at least the kernel");
              }
              return {c.filters, in[1] - c.kernel_h + 1,
                      in[2] - c.kernel_w + 1};
            },
            [&](const MaxPool2D& p) -> Shape {
              if (in.size() != 3) throw fail("[channels, height, width]");
              if (p.pool_h > in[1] || p.pool_w > in[2]) {
                throw fail("spatial size at least the pool");
              }
              return {in[0], in[1] / p.pool_h, in[2] / p.pool_w};
            },
            [&](const Flatten&) -> Shape { return {shape_volume(in)}; },
        },
        arch[k].kind);
    if (arch[k].activation == Activation::kSoftmax && out.size() != 1) {
      throw fail("softmax over a rank-1");
    }
    shapes.push_back(out);
    in = std::move(out);
  }
  return shapes;
}

std::size_t ParamTensors::num_parameters() const noexcept {
  std::size_t n = 0;
  for (const auto& l : layers) n += l.weights.size() + l.bias.size();
  return n;
}

bool ParamTensors::same_shape(const ParamTensors& other) const noexcept {
  if (layers.size() != other.layers.size()) return false;
  for (std::size_t i = 0; i < layers.size(); ++i) {
    if (layers[i].weights.shape() != other.layers[i].weights.shape() ||
        layers[i].bias.shape() != other.layers[i].bias.shape()) {
      return false;
    }
  }
  return true;
}

ModelParams init_params(const Architecture& arch, const Shape& sample_shape,
                        std::uint64_t seed) {
  std::mt19937_64 rng(seed);
  ModelParams model;
  for (const auto& ps : param_shapes(arch, sample_shape)) {
    const double limit =
        std::sqrt(6.0 / static_cast<double>(ps.fan_in + ps.fan_out));
    std::uniform_real_distribution<double> dist(-limit, limit);
    LayerParams layer{Tensor(ps.weights), Tensor(ps.bias)};
    for (double& w : layer.weights.data()) w = dist(rng);
    model.layers.push_back(std::move(layer));
  }
  return model;
}

void check_params(const ParamTensors& params, const Architecture& arch,
                  const Shape& sample_shape) {
  const auto expected = param_shapes(arch, sample_shape);
  if (expected.size() != params.layers.size()) {
    throw ShapeError(fmt::format("architecture has {} trainable layers, "
                                 "parameters have {}",
                                 expected.size(), params.layers.size()));
  }
  for (std::size_t i = 0; i < expected.size(); ++i) {
    const auto& got = params.layers[i];
    if (got.weights.shape() != expected[i].weights ||
        got.bias.shape() != expected[i].bias) {
      throw ShapeError(fmt::format(
          "trainable layer {}: expected weights {} and bias {}, got {} and {}",
          i + 1, to_string(expected[i].weights), to_string(expected[i].bias),
          to_string(got.weights.shape()), to_string(got.bias.shape())));
    }
  }
}

Gradients zeros_like(const ParamTensors& like) {
  Gradients g;
  g.layers.reserve(like.layers.size());
  for (const auto& l : like.layers) {
    g.layers.push_back({Tensor(l.weights.shape()), Tensor(l.bias.shape())});
  }
  return g;
}

}  // namespace fedprobe::nn
