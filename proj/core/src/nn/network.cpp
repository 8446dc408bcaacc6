#include "fedprobe/nn/network.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <limits>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "fedprobe/error.hpp"

namespace fedprobe::nn {
namespace {

Shape batch_shape(std::size_t n, const Shape& sample) {
  Shape s{n};
  s.insert(s.end(), sample.begin(), sample.end());
  return s;
}

double sigmoid(double x) noexcept {
  if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
  const double e = std::exp(x);
  return e / (1.0 + e);
}

// a = x W + b, x: [n, in], W: [in, out]
Tensor dense_forward(const Tensor& x, const LayerParams& p) {
  const std::size_t n = x.dim(0);
  const std::size_t in = p.weights.dim(0);
  const std::size_t out = p.weights.dim(1);
  Tensor a({n, out});
  const auto w = p.weights.data();
  const auto b = p.bias.data();
  for (std::size_t s = 0; s < n; ++s) {
    double* row = a.data().data() + s * out;
    std::copy(b.begin(), b.end(), row);
    const double* xs = x.data().data() + s * in;
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xs[i];
      const double* wi = w.data() + i * out;
      for (std::size_t j = 0; j < out; ++j) row[j] += xi * wi[j];
    }
  }
  return a;
}

Tensor conv_forward(const Tensor& x, const LayerParams& p) {
  const std::size_t n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t f = p.weights.dim(0), kh = p.weights.dim(2),
                    kw = p.weights.dim(3);
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  Tensor a({n, f, oh, ow});
  const double* in = x.data().data();
  const double* wt = p.weights.data().data();
  double* out = a.data().data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t fi = 0; fi < f; ++fi) {
      double* plane = out + (s * f + fi) * oh * ow;
      std::fill(plane, plane + oh * ow, p.bias[fi]);
      for (std::size_t c = 0; c < ch; ++c) {
        const double* src = in + (s * ch + c) * h * w;
        const double* ker = wt + ((fi * ch + c) * kh) * kw;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double wv = ker[ky * kw + kx];
            for (std::size_t y = 0; y < oh; ++y) {
              const double* srow = src + (y + ky) * w + kx;
              double* orow = plane + y * ow;
              for (std::size_t xo = 0; xo < ow; ++xo) orow[xo] += wv * srow[xo];
            }
          }
        }
      }
    }
  }
  return a;
}

Tensor pool_forward(const Tensor& x, const MaxPool2D& pool,
                    std::vector<std::size_t>& argmax) {
  const std::size_t n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t oh = h / pool.pool_h, ow = w / pool.pool_w;
  Tensor out({n, ch, oh, ow});
  argmax.assign(out.size(), 0);
  std::size_t o = 0;
  for (std::size_t plane = 0; plane < n * ch; ++plane) {
    const std::size_t base = plane * h * w;
    for (std::size_t y = 0; y < oh; ++y) {
      for (std::size_t xo = 0; xo < ow; ++xo, ++o) {
        std::size_t best = base + (y * pool.pool_h) * w + xo * pool.pool_w;
        for (std::size_t py = 0; py < pool.pool_h; ++py) {
          for (std::size_t px = 0; px < pool.pool_w; ++px) {
            const std::size_t idx =
                base + (y * pool.pool_h + py) * w + xo * pool.pool_w + px;
            if (x[idx] > x[best]) best = idx;
          }
        }
        argmax[o] = best;
        out[o] = x[best];
      }
    }
  }
  return out;
}

Tensor activate(const Tensor& a, Activation act) {
  Tensor o = a;
  switch (act) {
    case Activation::kLinear: break;
    case Activation::kSigmoid:
      for (double& v : o.data()) v = sigmoid(v);
      break;
    case Activation::kReLU:
      for (double& v : o.data()) if (v <= 0.0) v = 0.0;  // NaN passes through
      break;
    case Activation::kSoftmax: {
      const std::size_t n = a.dim(0), c = a.size() / n;
      for (std::size_t s = 0; s < n; ++s) {
        double* row = o.data().data() + s * c;
        const double mx = *std::max_element(row, row + c);
        double sum = 0.0;
        for (std::size_t j = 0; j < c; ++j) {
          row[j] = std::exp(row[j] - mx);
          sum += row[j];
        }
        for (std::size_t j = 0; j < c; ++j) row[j] /= sum;
      }
      break;
    }
  }
  return o;
}

// delta = dE/da given dE/do, for a layer with activation `act`.
Tensor activation_backward(const Tensor& grad_out, const LayerCache& lc,
                           Activation act) {
  Tensor delta = grad_out;
  auto d = delta.data();
  const auto a = lc.pre_activation.data();
  const auto o = lc.output.data();
  switch (act) {
    case Activation::kLinear: break;
    case Activation::kSigmoid:
      for (std::size_t i = 0; i < d.size(); ++i) d[i] *= o[i] * (1.0 - o[i]);
      break;
    case Activation::kReLU:
      for (std::size_t i = 0; i < d.size(); ++i) {
        if (!(a[i] > 0.0)) d[i] = 0.0;
      }
      break;
    case Activation::kSoftmax: {
      // Jacobian-vector product: delta_j = o_j (g_j - sum_i g_i o_i).
      const std::size_t n = grad_out.dim(0), c = grad_out.size() / n;
      const auto g = grad_out.data();
      for (std::size_t s = 0; s < n; ++s) {
        double dot = 0.0;
        for (std::size_t j = 0; j < c; ++j) dot += g[s * c + j] * o[s * c + j];
        for (std::size_t j = 0; j < c; ++j) {
          d[s * c + j] = o[s * c + j] * (g[s * c + j] - dot);
        }
      }
      break;
    }
  }
  return delta;
}

// Accumulates per-sample sums into grads, divides by n, and returns dE/dx.
Tensor dense_backward(const Tensor& x, const Tensor& delta,
                      const LayerParams& p, LayerParams& grad,
                      bool need_input_grad) {
  const std::size_t n = x.dim(0);
  const std::size_t in = p.weights.dim(0), out = p.weights.dim(1);
  auto gw = grad.weights.data();
  auto gb = grad.bias.data();
  const auto w = p.weights.data();
  Tensor dx;
  if (need_input_grad) dx = Tensor(x.shape());
  for (std::size_t s = 0; s < n; ++s) {
    const double* ds = delta.data().data() + s * out;
    const double* xs = x.data().data() + s * in;
    for (std::size_t j = 0; j < out; ++j) gb[j] += ds[j];
    for (std::size_t i = 0; i < in; ++i) {
      const double xi = xs[i];
      double* gwi = gw.data() + i * out;
      for (std::size_t j = 0; j < out; ++j) gwi[j] += xi * ds[j];
    }
    if (need_input_grad) {
      double* dxs = dx.data().data() + s * in;
      for (std::size_t i = 0; i < in; ++i) {
        const double* wi = w.data() + i * out;
        double acc = 0.0;
        for (std::size_t j = 0; j < out; ++j) acc += wi[j] * ds[j];
        dxs[i] = acc;
      }
    }
  }
  const double nd = static_cast<double>(n);
  for (double& v : gw) v /= nd;
  for (double& v : gb) v /= nd;
  return dx;
}

Tensor conv_backward(const Tensor& x, const Tensor& delta,
                     const LayerParams& p, LayerParams& grad,
                     bool need_input_grad) {
  const std::size_t n = x.dim(0), ch = x.dim(1), h = x.dim(2), w = x.dim(3);
  const std::size_t f = p.weights.dim(0), kh = p.weights.dim(2),
                    kw = p.weights.dim(3);
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  Tensor dx;
  if (need_input_grad) dx = Tensor(x.shape());
  const double* in = x.data().data();
  const double* wt = p.weights.data().data();
  double* gw = grad.weights.data().data();
  double* gb = grad.bias.data().data();
  for (std::size_t s = 0; s < n; ++s) {
    for (std::size_t fi = 0; fi < f; ++fi) {
      const double* dplane = delta.data().data() + (s * f + fi) * oh * ow;
      for (std::size_t i = 0; i < oh * ow; ++i) gb[fi] += dplane[i];
      for (std::size_t c = 0; c < ch; ++c) {
        const double* src = in + (s * ch + c) * h * w;
        const double* ker = wt + ((fi * ch + c) * kh) * kw;
        double* gker = gw + ((fi * ch + c) * kh) * kw;
        double* dsrc =
            need_input_grad ? dx.data().data() + (s * ch + c) * h * w : nullptr;
        for (std::size_t ky = 0; ky < kh; ++ky) {
          for (std::size_t kx = 0; kx < kw; ++kx) {
            const double wv = ker[ky * kw + kx];
            double acc = gker[ky * kw + kx];
            for (std::size_t y = 0; y < oh; ++y) {
              const double* srow = src + (y + ky) * w + kx;
              const double* drow = dplane + y * ow;
              for (std::size_t xo = 0; xo < ow; ++xo) acc += drow[xo] * srow[xo];
              if (dsrc != nullptr) {
                double* dxrow = dsrc + (y + ky) * w + kx;
                for (std::size_t xo = 0; xo < ow; ++xo) dxrow[xo] += wv * drow[xo];
              }
            }
            gker[ky * kw + kx] = acc;
          }
        }
      }
    }
  }
  const double nd = static_cast<double>(n);
  for (double& v : grad.weights.data()) v /= nd;
  for (double& v : grad.bias.data()) v /= nd;
  return dx;
}

void require_same_shape(const Tensor& a, const Tensor& b, const char* what) {
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shapes {} and {} differ", what,
                                 to_string(a.shape()), to_string(b.shape())));
  }
}

}  // namespace

void Hyperparams::validate() const {
  if (!(learning_rate > 0.0) || !std::isfinite(learning_rate)) {
    throw std::invalid_argument(
        fmt::format("learning rate must be positive, got {}", learning_rate));
  }
  if (batch_size == 0) throw std::invalid_argument("batch size must be >= 1");
  if (epochs == 0) throw std::invalid_argument("epochs must be >= 1");
}

std::uint64_t fingerprint(const ParamTensors& params) noexcept {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  const auto feed = [&h](std::uint64_t v) {
    h ^= v;
    h *= 0x100000001b3ULL;
  };
  for (const auto& layer : params.layers) {
    for (const Tensor* t : {&layer.weights, &layer.bias}) {
      feed(t->size());
      for (double v : t->data()) feed(std::bit_cast<std::uint64_t>(v));
    }
  }
  return h;
}

ForwardResult forward(const ModelParams& model, const Architecture& arch,
                      const Tensor& input) {
  if (input.rank() < 2) {
    throw ShapeError(fmt::format("input must be [batch, ...], got {}",
                                 to_string(input.shape())));
  }
  const std::size_t n = input.dim(0);
  const Shape sample(input.shape().begin() + 1, input.shape().end());
  const auto shapes = infer_shapes(arch, sample);
  check_params(model, arch, sample);

  ForwardResult result;
  result.cache.layers.resize(arch.size());
  result.cache.model_fingerprint = fingerprint(model);
  Tensor x = input;
  std::size_t p = 0;
  for (std::size_t k = 0; k < arch.size(); ++k) {
    const LayerSpec& spec = arch[k];
    LayerCache& lc = result.cache.layers[k];
    lc.input = x;
    if (std::holds_alternative<Dense>(spec.kind)) {
      lc.pre_activation = dense_forward(x, model.layers[p++]);
    } else if (std::holds_alternative<Conv2D>(spec.kind)) {
      lc.pre_activation = conv_forward(x, model.layers[p++]);
    } else if (const auto* pool = std::get_if<MaxPool2D>(&spec.kind)) {
      lc.output = pool_forward(x, *pool, lc.argmax);
    } else {
      lc.output = x.reshaped(batch_shape(n, shapes[k]));
    }
    if (spec.trainable()) lc.output = activate(lc.pre_activation, spec.activation);
    x = lc.output;
  }
  if (!x.all_finite()) throw NumericError("forward produced a non-finite value");
  result.output = std::move(x);
  return result;
}

double compute_loss(const Tensor& predicted, const Tensor& target,
                    LossKind loss) {
  require_same_shape(predicted, target, "compute_loss");
  if (predicted.empty()) throw ShapeError("compute_loss on an empty tensor");
  const std::size_t n = predicted.rank() >= 2 ? predicted.dim(0) : 1;
  const std::size_t c = predicted.size() / n;
  const auto yh = predicted.data();
  const auto y = target.data();
  double total = 0.0;
  if (loss == LossKind::kMSE) {
    for (std::size_t i = 0; i < yh.size(); ++i) {
      const double e = yh[i] - y[i];
      total += e * e;
    }
    return total / (2.0 * static_cast<double>(n));
  }
  for (std::size_t s = 0; s < n; ++s) {
    double row_sum = 0.0;
    int ones = 0;
    for (std::size_t j = 0; j < c; ++j) {
      const double p = yh[s * c + j];
      if (p < 0.0) {
        throw std::invalid_argument(
            fmt::format("cross-entropy: negative probability in row {}", s));
      }
      row_sum += p;
      const double t = y[s * c + j];
      if (t != 0.0 && t != 1.0) {
        throw std::invalid_argument(
            fmt::format("cross-entropy: target row {} is not one-hot", s));
      }
      ones += t == 1.0 ? 1 : 0;
    }
    if (std::abs(row_sum - 1.0) > 1e-9) {
      throw std::invalid_argument(fmt::format(
          "cross-entropy: predicted row {} sums to {}, not 1", s, row_sum));
    }
    if (ones != 1) {
      throw std::invalid_argument(
          fmt::format("cross-entropy: target row {} is not one-hot", s));
    }
    for (std::size_t j = 0; j < c; ++j) {
      if (y[s * c + j] == 1.0) {
        total -= std::log(
            std::max(yh[s * c + j], std::numeric_limits<double>::min()));
      }
    }
  }
  return total / static_cast<double>(n);
}

Gradients backward(const ModelParams& model, const Architecture& arch,
                   const ForwardCache& cache, const Tensor& target,
                   LossKind loss) {
  if (cache.layers.size() != arch.size() || cache.layers.empty()) {
    throw std::invalid_argument(
        fmt::format("forward cache has {} layers, architecture has {}",
                    cache.layers.size(), arch.size()));
  }
  if (cache.model_fingerprint != fingerprint(model)) {
    throw std::invalid_argument(
        "forward cache is stale: it was computed for different parameters");
  }
  const Tensor& output = cache.layers.back().output;
  require_same_shape(output, target, "backward target");

  const bool fused = loss == LossKind::kCrossEntropy;
  if (fused && arch.back().activation != Activation::kSoftmax) {
    throw std::invalid_argument(
        "cross-entropy backward needs a softmax output layer");
  }

  Gradients grads = zeros_like(model);
  // dE_d/do for the final output, per sample: (y_hat - y).
  Tensor grad_out = output;
  {
    auto g = grad_out.data();
    const auto y = target.data();
    for (std::size_t i = 0; i < g.size(); ++i) g[i] -= y[i];
  }

  std::size_t p = model.layers.size();
  for (std::size_t k = arch.size(); k-- > 0;) {
    const LayerSpec& spec = arch[k];
    const LayerCache& lc = cache.layers[k];
    const bool need_input_grad = k > 0;
    if (spec.trainable()) {
      --p;
      // Fused softmax + cross-entropy: delta = y_hat - y directly.
      Tensor delta = (fused && k + 1 == arch.size())
                         ? std::move(grad_out)
                         : activation_backward(grad_out, lc, spec.activation);
      if (std::holds_alternative<Dense>(spec.kind)) {
        grad_out = dense_backward(lc.input, delta, model.layers[p],
                                  grads.layers[p], need_input_grad);
      } else {
        grad_out = conv_backward(lc.input, delta, model.layers[p],
                                 grads.layers[p], need_input_grad);
      }
    } else if (std::holds_alternative<MaxPool2D>(spec.kind)) {
      if (lc.argmax.size() != grad_out.size()) {
        throw std::invalid_argument("forward cache pooling indices mismatch");
      }
      Tensor dx(lc.input.shape());
      for (std::size_t o = 0; o < grad_out.size(); ++o) {
        dx[lc.argmax[o]] += grad_out[o];
      }
      grad_out = std::move(dx);
    } else {
      grad_out = grad_out.reshaped(lc.input.shape());
    }
  }
  return grads;
}

Gradients finite_diff_gradient(const ModelParams& model,
                               const Architecture& arch, const Tensor& input,
                               const Tensor& target, LossKind loss, double h) {
  if (!(h > 0.0)) {
    throw std::invalid_argument(fmt::format("step size must be positive, got {}", h));
  }
  Gradients grads = zeros_like(model);
  ModelParams probe = model;
  const auto loss_at = [&]() {
    return compute_loss(forward(probe, arch, input).output, target, loss);
  };
  for (std::size_t l = 0; l < probe.layers.size(); ++l) {
    auto& layer = probe.layers[l];
    for (auto [param, grad] :
         {std::pair{&layer.weights, &grads.layers[l].weights},
          std::pair{&layer.bias, &grads.layers[l].bias}}) {
      for (std::size_t i = 0; i < param->size(); ++i) {
        const double original = (*param)[i];
        (*param)[i] = original + h;
        const double plus = loss_at();
        (*param)[i] = original - h;
        const double minus = loss_at();
        (*param)[i] = original;
        (*grad)[i] = (plus - minus) / (2.0 * h);
      }
    }
  }
  return grads;
}

ModelParams sgd_step(const ModelParams& model, const Gradients& grads,
                     double learning_rate) {
  if (!model.same_shape(grads)) {
    throw ShapeError("sgd_step: gradients do not match the model's shapes");
  }
  ModelParams next = model;
  for (std::size_t l = 0; l < next.layers.size(); ++l) {
    auto& layer = next.layers[l];
    const auto& g = grads.layers[l];
    for (auto [param, grad] : {std::pair{&layer.weights, &g.weights},
                               std::pair{&layer.bias, &g.bias}}) {
      auto w = param->data();
      const auto d = grad->data();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] -= learning_rate * d[i];
    }
  }
  return next;
}

TrainResult train_epochs(const ModelParams& model, const Architecture& arch,
                         const Dataset& data, const Hyperparams& hyper) {
  hyper.validate();
  if (data.empty()) throw DataError("train_epochs on an empty dataset");
  const std::size_t n = data.size();
  const std::size_t classes = infer_shapes(arch, data.sample_shape()).back()[0];

  std::mt19937_64 rng(hyper.seed);
  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), std::size_t{0});

  TrainResult result{model, 0.0};
  std::vector<std::size_t> labels;
  for (std::size_t epoch = 0; epoch < hyper.epochs; ++epoch) {
    if (hyper.batch_size < n) std::shuffle(order.begin(), order.end(), rng);
    double weighted_loss = 0.0;
    for (std::size_t start = 0; start < n; start += hyper.batch_size) {
      const std::size_t stop = std::min(n, start + hyper.batch_size);
      const std::span<const std::size_t> idx(order.data() + start, stop - start);
      labels.clear();
      for (std::size_t i : idx) labels.push_back(data.labels[i]);
      const Tensor target = one_hot(labels, classes);
      const auto fr = forward(result.model, arch, data.batch_images(idx));
      weighted_loss += compute_loss(fr.output, target, hyper.loss) *
                       static_cast<double>(idx.size());
      const Gradients g =
          backward(result.model, arch, fr.cache, target, hyper.loss);
      result.model = sgd_step(result.model, g, hyper.learning_rate);
    }
    result.final_epoch_loss = weighted_loss / static_cast<double>(n);
  }
  return result;
}

std::size_t argmax_row(std::span<const double> row) noexcept {
  std::size_t best = 0;
  for (std::size_t j = 1; j < row.size(); ++j) {
    if (row[j] > row[best]) best = j;
  }
  return best;
}

std::vector<std::size_t> predict(const ModelParams& model,
                                 const Architecture& arch, const Tensor& input) {
  const Tensor out = forward(model, arch, input).output;
  const std::size_t n = out.dim(0), c = out.size() / n;
  std::vector<std::size_t> classes(n);
  for (std::size_t s = 0; s < n; ++s) {
    classes[s] = argmax_row(out.data().subspan(s * c, c));
  }
  return classes;
}

}  // namespace fedprobe::nn
