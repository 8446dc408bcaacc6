#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedprobe/dataset.hpp"
#include "fedprobe/nn/layers.hpp"
#include "fedprobe/tensor.hpp"

namespace fedprobe::nn {

enum class LossKind { kMSE, kCrossEntropy };

struct Hyperparams {
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t epochs = 1;
  LossKind loss = LossKind::kCrossEntropy;
  std::uint64_t seed = 0;

  /// Throws std::invalid_argument on a non-positive rate, batch or epochs.
  void validate() const;
};

/// What backward needs from one layer's forward evaluation.
///   input          o^{k-1}, the layer input
///   pre_activation a^k (empty for parameter-free layers)
///   output         o^k = g(a^k)
///   argmax         flat input index selected by each pooled output
struct LayerCache {
  Tensor input;
  Tensor pre_activation;
  Tensor output;
  std::vector<std::size_t> argmax;
};

struct ForwardCache {
  std::vector<LayerCache> layers;
  std::uint64_t model_fingerprint = 0;
};

struct ForwardResult {
  Tensor output;
  ForwardCache cache;
};

/// Hash of every parameter bit; backward uses it to reject stale caches.
std::uint64_t fingerprint(const ParamTensors& params) noexcept;

/// `input` is [batch, ...sample_shape]. Pure.
ForwardResult forward(const ModelParams& model, const Architecture& arch,
                      const Tensor& input);

/// MSE: 1/(2N) * sum (y_hat - y)^2 over the batch.
/// CrossEntropy: mean over samples of -sum y log(y_hat); rows of `predicted`
/// must be probability vectors and `target` rows one-hot.
double compute_loss(const Tensor& predicted, const Tensor& target,
                    LossKind loss);

/// Batch-mean gradients of compute_loss. For every trainable layer the bias
/// gradient is the mean error term delta_j and the weight gradient the mean of
/// delta_j * o_i. CrossEntropy requires a Softmax output layer and uses the
/// fused error term (y_hat - y).
Gradients backward(const ModelParams& model, const Architecture& arch,
                   const ForwardCache& cache, const Tensor& target,
                   LossKind loss);

/// Central differences (E(w + h) - E(w - h)) / 2h for every parameter.
Gradients finite_diff_gradient(const ModelParams& model,
                               const Architecture& arch, const Tensor& input,
                               const Tensor& target, LossKind loss,
                               double h = 1e-5);

/// w - learning_rate * g for every weight and bias. Returns a new model.
ModelParams sgd_step(const ModelParams& model, const Gradients& grads,
                     double learning_rate);

struct TrainResult {
  ModelParams model;
  /// Sample-weighted mean of the pre-update batch losses in the last epoch.
  double final_epoch_loss = 0.0;
};

/// Minibatch SGD. Each epoch draws a fresh permutation from `hyper.seed`;
/// when one batch covers the whole dataset the order is left as is, so a
/// single epoch equals exactly one sgd_step on the full-batch gradient.
TrainResult train_epochs(const ModelParams& model, const Architecture& arch,
                         const Dataset& data, const Hyperparams& hyper);

/// Argmax per sample of the final-layer output; ties go to the lowest index.
std::vector<std::size_t> predict(const ModelParams& model,
                                 const Architecture& arch, const Tensor& input);

std::size_t argmax_row(std::span<const double> row) noexcept;

}  // namespace fedprobe::nn
