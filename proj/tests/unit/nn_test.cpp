#include <gtest/gtest.h>

#include <cmath>
#include <numeric>

#include "fedprobe/error.hpp"
#include "fedprobe/nn/network.hpp"
#include "support.hpp"

using namespace fedprobe;
using namespace fedprobe::nn;
using fedprobe::test::max_abs_diff;
using fedprobe::test::random_model;
using fedprobe::test::random_tensor;
using fedprobe::test::with_batch;

namespace {

const Architecture kMlp{
    {Flatten{}, Activation::kLinear},
    {Dense{5}, Activation::kSigmoid},
    {Dense{4}, Activation::kReLU},
    {Dense{3}, Activation::kSoftmax},
};

const Architecture kCnn{
    {Conv2D{3, 3, 3}, Activation::kReLU},
    {MaxPool2D{2, 2}, Activation::kLinear},
    {Conv2D{2, 2, 2}, Activation::kSigmoid},
    {Flatten{}, Activation::kLinear},
    {Dense{4}, Activation::kSoftmax},
};

double act(double v, Activation a) {
  switch (a) {
    case Activation::kSigmoid: return 1.0 / (1.0 + std::exp(-v));
    case Activation::kReLU: return std::max(v, 0.0);
    default: return v;
  }
}

std::vector<double> softmax(std::vector<double> v) {
  double z = 0.0;
  for (double x : v) z += std::exp(x);
  for (double& x : v) x = std::exp(x) / z;
  return v;
}

// Straight-line per-sample evaluation, one output neuron at a time.
std::vector<double> dense_oracle(const std::vector<double>& x,
                                 const LayerParams& p, Activation a) {
  const std::size_t out = p.bias.size();
  std::vector<double> y(out);
  for (std::size_t j = 0; j < out; ++j) {
    double s = p.bias[j];
    for (std::size_t i = 0; i < x.size(); ++i) s += p.weights[i * out + j] * x[i];
    y[j] = act(s, a);
  }
  return a == Activation::kSoftmax ? softmax(y) : y;
}

// x: [c][h][w] flattened
std::vector<double> conv_oracle(const std::vector<double>& x, std::size_t c,
                                std::size_t h, std::size_t w,
                                const LayerParams& p, Activation a) {
  const std::size_t f = p.weights.dim(0), kh = p.weights.dim(2),
                    kw = p.weights.dim(3);
  const std::size_t oh = h - kh + 1, ow = w - kw + 1;
  std::vector<double> y(f * oh * ow);
  for (std::size_t fi = 0; fi < f; ++fi)
    for (std::size_t r = 0; r < oh; ++r)
      for (std::size_t q = 0; q < ow; ++q) {
        double s = p.bias[fi];
        for (std::size_t ci = 0; ci < c; ++ci)
          for (std::size_t u = 0; u < kh; ++u)
            for (std::size_t v = 0; v < kw; ++v)
              s += p.weights[((fi * c + ci) * kh + u) * kw + v] *
                   x[(ci * h + r + u) * w + q + v];
        y[(fi * oh + r) * ow + q] = act(s, a);
      }
  return y;
}

std::vector<double> pool_oracle(const std::vector<double>& x, std::size_t c,
                                std::size_t h, std::size_t w, std::size_t k) {
  std::vector<double> y;
  for (std::size_t ci = 0; ci < c; ++ci)
    for (std::size_t r = 0; r + k <= h; r += k)
      for (std::size_t q = 0; q + k <= w; q += k) {
        double m = -INFINITY;
        for (std::size_t u = 0; u < k; ++u)
          for (std::size_t v = 0; v < k; ++v)
            m = std::max(m, x[(ci * h + r + u) * w + q + v]);
        y.push_back(m);
      }
  return y;
}

std::vector<double> sample_of(const Tensor& t, std::size_t s) {
  const std::size_t v = t.size() / t.dim(0);
  return {t.data().begin() + s * v, t.data().begin() + (s + 1) * v};
}

}  // namespace

TEST(Architecture, Validation) {
  EXPECT_THROW(validate_architecture({}), ShapeError);
  EXPECT_THROW(validate_architecture({{Dense{0}, Activation::kLinear}}),
               ShapeError);
  EXPECT_THROW(validate_architecture({{Flatten{}, Activation::kReLU},
                                      {Dense{2}, Activation::kLinear}}),
               ShapeError);
  EXPECT_THROW(validate_architecture({{Dense{2}, Activation::kSoftmax},
                                      {Dense{2}, Activation::kLinear}}),
               ShapeError);
  EXPECT_NO_THROW(validate_architecture(kCnn));
}

TEST(Architecture, InferShapes) {
  const auto shapes = infer_shapes(kCnn, {3, 8, 8});
  ASSERT_EQ(shapes.size(), 5u);
  EXPECT_EQ(shapes[0], (Shape{3, 6, 6}));
  EXPECT_EQ(shapes[1], (Shape{3, 3, 3}));
  EXPECT_EQ(shapes[2], (Shape{2, 2, 2}));
  EXPECT_EQ(shapes[3], (Shape{8}));
  EXPECT_EQ(shapes[4], (Shape{4}));
  EXPECT_EQ(infer_shapes({{MaxPool2D{2, 2}, Activation::kLinear}}, {1, 5, 5})[0],
            (Shape{1, 2, 2}));
  EXPECT_THROW(infer_shapes(kCnn, {3, 2, 2}), ShapeError);
  EXPECT_THROW(infer_shapes({{Dense{2}, Activation::kLinear}}, {2, 2}),
               ShapeError);
}

TEST(InitParams, GlorotBoundsAndZeroBias) {
  const ModelParams m = init_params(kMlp, {2, 3}, 7);
  ASSERT_EQ(m.layers.size(), 3u);
  EXPECT_EQ(m.layers[0].weights.shape(), (Shape{6, 5}));
  EXPECT_EQ(m.layers[2].bias.shape(), (Shape{3}));
  const std::size_t fans[3][2] = {{6, 5}, {5, 4}, {4, 3}};
  for (std::size_t l = 0; l < 3; ++l) {
    const double limit = std::sqrt(6.0 / double(fans[l][0] + fans[l][1]));
    for (double w : m.layers[l].weights.data()) EXPECT_LE(std::abs(w), limit);
    for (double b : m.layers[l].bias.data()) EXPECT_EQ(b, 0.0);
  }
  EXPECT_EQ(m, init_params(kMlp, {2, 3}, 7));
  EXPECT_NE(m, init_params(kMlp, {2, 3}, 8));
  EXPECT_EQ(m.num_parameters(), 30u + 5 + 20 + 4 + 12 + 3);

  const ModelParams c = init_params(kCnn, {3, 8, 8}, 1);
  EXPECT_EQ(c.layers[0].weights.shape(), (Shape{3, 3, 3, 3}));
  const double limit = std::sqrt(6.0 / (27.0 + 27.0));
  for (double w : c.layers[0].weights.data()) EXPECT_LE(std::abs(w), limit);
}

TEST(InitParams, CheckParamsRejectsMismatch) {
  ModelParams m = init_params(kMlp, {6}, 1);
  EXPECT_NO_THROW(check_params(m, kMlp, {6}));
  EXPECT_THROW(check_params(m, kMlp, {7}), ShapeError);
  m.layers.pop_back();
  EXPECT_THROW(check_params(m, kMlp, {6}), ShapeError);
}

TEST(Forward, ZeroWeightsSigmoidGivesHalf) {
  const Architecture arch{{Dense{3}, Activation::kSigmoid}};
  ModelParams m = init_params(arch, {4}, 0);
  for (double& w : m.layers[0].weights.data()) w = 0.0;
  const auto out = forward(m, arch, random_tensor({2, 4}, 1)).output;
  for (double v : out.data()) EXPECT_EQ(v, 0.5);
}

TEST(Forward, MlpMatchesPerNeuronOracle) {
  for (std::uint64_t seed = 0; seed < 20; ++seed) {
    const ModelParams m = random_model(kMlp, {2, 3}, seed);
    const Tensor x = random_tensor({4, 2, 3}, seed + 100, 0.0, 1.0);
    const Tensor out = forward(m, kMlp, x).output;
    for (std::size_t s = 0; s < 4; ++s) {
      auto h = sample_of(x, s);
      h = dense_oracle(h, m.layers[0], Activation::kSigmoid);
      h = dense_oracle(h, m.layers[1], Activation::kReLU);
      h = dense_oracle(h, m.layers[2], Activation::kSoftmax);
      for (std::size_t j = 0; j < 3; ++j) {
        EXPECT_NEAR(out[s * 3 + j], h[j], 1e-12);
      }
    }
  }
}

TEST(Forward, CnnMatchesDirectConvolutionOracle) {
  for (std::uint64_t seed = 0; seed < 10; ++seed) {
    const ModelParams m = random_model(kCnn, {3, 8, 8}, seed);
    const Tensor x = random_tensor({2, 3, 8, 8}, seed + 50, 0.0, 1.0);
    const Tensor out = forward(m, kCnn, x).output;
    for (std::size_t s = 0; s < 2; ++s) {
      auto h = conv_oracle(sample_of(x, s), 3, 8, 8, m.layers[0],
                           Activation::kReLU);
      h = pool_oracle(h, 3, 6, 6, 2);
      h = conv_oracle(h, 3, 3, 3, m.layers[1], Activation::kSigmoid);
      h = dense_oracle(h, m.layers[2], Activation::kSoftmax);
      for (std::size_t j = 0; j < 4; ++j) {
        EXPECT_NEAR(out[s * 4 + j], h[j], 1e-12);
      }
    }
  }
}

TEST(Forward, OutputRangesAndPurity) {
  const ModelParams m = random_model(kMlp, {6}, 3);
  const ModelParams before = m;
  const Tensor x = random_tensor({5, 6}, 4, -5.0, 5.0);
  const auto r1 = forward(m, kMlp, x);
  const auto r2 = forward(m, kMlp, x);
  EXPECT_EQ(m, before);
  EXPECT_EQ(r1.output, r2.output);
  for (std::size_t s = 0; s < 5; ++s) {
    double sum = 0.0;
    for (std::size_t j = 0; j < 3; ++j) sum += r1.output[s * 3 + j];
    EXPECT_NEAR(sum, 1.0, 1e-12);
  }
  for (double v : r1.cache.layers[1].output.data()) {
    EXPECT_GT(v, 0.0);
    EXPECT_LT(v, 1.0);
  }
  for (double v : r1.cache.layers[2].output.data()) EXPECT_GE(v, 0.0);
}

TEST(Forward, RejectsBadInputAndNonFinite) {
  ModelParams m = random_model(kMlp, {6}, 3);
  EXPECT_THROW(forward(m, kMlp, Tensor({6})), ShapeError);
  EXPECT_THROW(forward(m, kMlp, Tensor({2, 7})), ShapeError);
  m.layers[0].weights[0] = std::numeric_limits<double>::infinity();
  EXPECT_NO_THROW(forward(m, kMlp, random_tensor({2, 6}, 1)));  // sigmoid saturates
  m.layers[0].weights[0] = std::numeric_limits<double>::quiet_NaN();
  EXPECT_THROW(forward(m, kMlp, random_tensor({2, 6}, 1)), NumericError);
}

TEST(Loss, Examples) {
  const Tensor y({1, 2}, std::vector<double>{1, 0});
  EXPECT_EQ(compute_loss(y, y, LossKind::kMSE), 0.0);
  EXPECT_EQ(compute_loss(y, y, LossKind::kCrossEntropy), 0.0);
  const Tensor half({1, 2}, std::vector<double>{0.5, 0.5});
  EXPECT_DOUBLE_EQ(compute_loss(half, y, LossKind::kMSE), 0.25);
  EXPECT_DOUBLE_EQ(compute_loss(half, y, LossKind::kCrossEntropy),
                   std::log(2.0));
}

TEST(Loss, BatchMatchesBruteForce) {
  const Tensor logits = random_tensor({6, 4}, 9, -2.0, 2.0);
  Tensor p = logits;
  for (std::size_t s = 0; s < 6; ++s) {
    const auto row = softmax(sample_of(logits, s));
    std::copy(row.begin(), row.end(), p.data().begin() + s * 4);
  }
  const Tensor y = fedprobe::test::one_hot_random(6, 4, 10);
  double mse = 0.0, ce = 0.0;
  for (std::size_t i = 0; i < 24; ++i) {
    mse += (p[i] - y[i]) * (p[i] - y[i]);
    if (y[i] == 1.0) ce -= std::log(p[i]);
  }
  EXPECT_NEAR(compute_loss(p, y, LossKind::kMSE), mse / 12.0, 1e-15);
  EXPECT_NEAR(compute_loss(p, y, LossKind::kCrossEntropy), ce / 6.0, 1e-14);
}

TEST(Loss, Errors) {
  const Tensor y({1, 2}, std::vector<double>{1, 0});
  EXPECT_THROW(compute_loss(Tensor({1, 3}), y, LossKind::kMSE), ShapeError);
  const Tensor not_prob({1, 2}, std::vector<double>{0.7, 0.7});
  EXPECT_THROW(compute_loss(not_prob, y, LossKind::kCrossEntropy),
               std::invalid_argument);
  const Tensor soft_target({1, 2}, std::vector<double>{0.5, 0.5});
  EXPECT_THROW(compute_loss(y, soft_target, LossKind::kCrossEntropy),
               std::invalid_argument);
}

TEST(Backward, OutputBiasHandCase) {
  const Architecture arch{{Dense{1}, Activation::kSigmoid}};
  ModelParams m = init_params(arch, {3}, 0);
  for (double& w : m.layers[0].weights.data()) w = 0.0;
  const Tensor x({1, 3}, std::vector<double>{0.2, 0.4, 0.8});
  const Tensor y({1, 1}, 1.0);
  const auto fr = forward(m, arch, x);
  const Gradients g = backward(m, arch, fr.cache, y, LossKind::kMSE);
  EXPECT_EQ(g.layers[0].bias[0], -0.125);
  EXPECT_EQ(g.layers[0].weights[1], -0.125 * 0.4);
}

TEST(Backward, BatchOfOneFactorizes) {
  const Architecture one_by_one{
      {Conv2D{3, 4, 4}, Activation::kSigmoid},
      {Flatten{}, Activation::kLinear},
      {Dense{2}, Activation::kSoftmax},
  };
  for (const auto& [arch, sample] :
       {std::pair{kMlp, Shape{2, 3}}, std::pair{one_by_one, Shape{2, 4, 4}}}) {
    for (std::uint64_t seed = 0; seed < 10; ++seed) {
      const ModelParams m = random_model(arch, sample, seed);
      const auto fr = forward(m, arch, random_tensor(with_batch(1, sample), seed));
      const std::size_t classes = fr.output.size();
      for (LossKind loss : {LossKind::kMSE, LossKind::kCrossEntropy}) {
        const Tensor y = fedprobe::test::one_hot_random(1, classes, seed);
        const Gradients g = backward(m, arch, fr.cache, y, loss);
        std::size_t p = 0;
        for (std::size_t k = 0; k < arch.size(); ++k) {
          if (!arch[k].trainable()) continue;
          const Tensor& in = fr.cache.layers[k].input;
          const auto& gl = g.layers[p++];
          const std::size_t units = gl.bias.size();
          ASSERT_EQ(gl.weights.size(), in.size() * units);
          for (std::size_t i = 0; i < in.size(); ++i) {
            for (std::size_t j = 0; j < units; ++j) {
              // Dense stores [in, out]; a 1x1-output conv stores [out, in].
              const double gw = std::holds_alternative<Dense>(arch[k].kind)
                                    ? gl.weights[i * units + j]
                                    : gl.weights[j * in.size() + i];
              EXPECT_EQ(gw, gl.bias[j] * in[i]);
            }
          }
        }
      }
    }
  }
}

TEST(Backward, ZeroErrorIsFixedPoint) {
  const Architecture arch{{Dense{4}, Activation::kSigmoid},
                          {Dense{3}, Activation::kSigmoid}};
  const ModelParams m = random_model(arch, {5}, 2);
  const auto fr = forward(m, arch, random_tensor({3, 5}, 3));
  const Gradients g = backward(m, arch, fr.cache, fr.output, LossKind::kMSE);
  EXPECT_EQ(g, zeros_like(m));
  EXPECT_EQ(sgd_step(m, g, 0.5), m);
}

TEST(Backward, RejectsStaleCacheAndWrongLoss) {
  ModelParams m = random_model(kMlp, {6}, 2);
  const auto fr = forward(m, kMlp, random_tensor({2, 6}, 3));
  const Tensor y = fedprobe::test::one_hot_random(2, 3, 4);
  m.layers[1].bias[0] += 1e-9;
  EXPECT_THROW(backward(m, kMlp, fr.cache, y, LossKind::kMSE),
               std::invalid_argument);

  const Architecture sig{{Dense{3}, Activation::kSigmoid}};
  const ModelParams s = random_model(sig, {6}, 2);
  const auto fs = forward(s, sig, random_tensor({2, 6}, 3));
  EXPECT_THROW(backward(s, sig, fs.cache, y, LossKind::kCrossEntropy),
               std::invalid_argument);
  EXPECT_THROW(backward(s, sig, fs.cache, Tensor({2, 4}), LossKind::kMSE),
               ShapeError);
}

TEST(FiniteDiff, LinearModelIsExactSlope) {
  const Architecture arch{{Dense{1}, Activation::kLinear}};
  ModelParams m = init_params(arch, {1}, 0);
  m.layers[0].weights[0] = 0.0;
  const Tensor x({1, 1}, 2.0);
  const Tensor y({1, 1}, 0.0);
  // E = 0.5 (2w + b)^2, dE/dw = 2 (2w + b) = 0 at the origin; shift b to 1.
  m.layers[0].bias[0] = 1.0;
  const Gradients g = finite_diff_gradient(m, arch, x, y, LossKind::kMSE);
  EXPECT_NEAR(g.layers[0].weights[0], 2.0, 1e-9);
  EXPECT_NEAR(g.layers[0].bias[0], 1.0, 1e-9);
  EXPECT_THROW(finite_diff_gradient(m, arch, x, y, LossKind::kMSE, 0.0),
               std::invalid_argument);
}

TEST(Sgd, Examples) {
  const Architecture arch{{Dense{1}, Activation::kLinear}};
  ModelParams m = init_params(arch, {1}, 0);
  m.layers[0].weights[0] = 1.0;
  Gradients g = zeros_like(m);
  g.layers[0].weights[0] = 0.5;
  g.layers[0].bias[0] = -2.0;
  const ModelParams next = sgd_step(m, g, 0.1);
  EXPECT_DOUBLE_EQ(next.layers[0].weights[0], 0.95);
  EXPECT_DOUBLE_EQ(next.layers[0].bias[0], 0.2);
  EXPECT_EQ(m.layers[0].weights[0], 1.0);
  EXPECT_EQ(sgd_step(m, zeros_like(m), 0.1), m);
  Gradients wrong = zeros_like(init_params(arch, {2}, 0));
  EXPECT_THROW(sgd_step(m, wrong, 0.1), ShapeError);
}

namespace {

Dataset separable_2d(std::size_t n, std::uint64_t seed) {
  Dataset d{random_tensor({n, 2}, seed), std::vector<std::size_t>(n), 2};
  for (std::size_t i = 0; i < n; ++i) {
    d.labels[i] = d.images[2 * i] + d.images[2 * i + 1] > 0.0 ? 1 : 0;
  }
  return d;
}

}  // namespace

TEST(Train, FullBatchEpochIsOneStep) {
  const Architecture arch{{Dense{3}, Activation::kSigmoid},
                          {Dense{2}, Activation::kSoftmax}};
  const Dataset d = separable_2d(8, 1);
  const ModelParams m = random_model(arch, {2}, 5);
  Hyperparams h;
  h.batch_size = 8;
  h.learning_rate = 0.3;
  const TrainResult r = train_epochs(m, arch, d, h);
  const auto fr = forward(m, arch, d.images);
  const Tensor y = one_hot(d.labels, 2);
  const Gradients g = backward(m, arch, fr.cache, y, h.loss);
  EXPECT_EQ(r.model, sgd_step(m, g, 0.3));
  EXPECT_DOUBLE_EQ(r.final_epoch_loss,
                   compute_loss(fr.output, y, LossKind::kCrossEntropy));
}

TEST(Train, DeterministicPerSeed) {
  const Dataset d = separable_2d(50, 2);
  const Architecture arch{{Dense{4}, Activation::kReLU},
                          {Dense{2}, Activation::kSoftmax}};
  const ModelParams m = init_params(arch, {2}, 1);
  Hyperparams h;
  h.batch_size = 7;
  h.epochs = 3;
  h.seed = 11;
  EXPECT_EQ(train_epochs(m, arch, d, h).model, train_epochs(m, arch, d, h).model);
  Hyperparams other = h;
  other.seed = 12;
  EXPECT_NE(train_epochs(m, arch, d, h).model,
            train_epochs(m, arch, d, other).model);
}

TEST(Train, LossDecreasesOnSeparableData) {
  const Dataset d = separable_2d(200, 3);
  const Architecture arch{{Dense{8}, Activation::kSigmoid},
                          {Dense{2}, Activation::kSoftmax}};
  const ModelParams m = init_params(arch, {2}, 4);
  Hyperparams h;
  h.learning_rate = 0.5;
  h.batch_size = 10;
  h.epochs = 1;
  const double first = train_epochs(m, arch, d, h).final_epoch_loss;
  h.epochs = 30;
  const TrainResult r = train_epochs(m, arch, d, h);
  EXPECT_LT(r.final_epoch_loss, 0.5 * first);
  const auto pred = predict(r.model, arch, d.images);
  std::size_t hits = 0;
  for (std::size_t i = 0; i < d.size(); ++i) hits += pred[i] == d.labels[i];
  EXPECT_GE(hits, 190u);
}

TEST(Train, Errors) {
  const Architecture arch{{Dense{2}, Activation::kSoftmax}};
  const ModelParams m = init_params(arch, {2}, 0);
  Hyperparams h;
  EXPECT_THROW(train_epochs(m, arch, Dataset{Tensor({0, 2}), {}, 2}, h),
               DataError);
  h.learning_rate = 0.0;
  EXPECT_THROW(train_epochs(m, arch, separable_2d(4, 0), h),
               std::invalid_argument);
  h = Hyperparams{};
  h.batch_size = 0;
  EXPECT_THROW(h.validate(), std::invalid_argument);
  h = Hyperparams{};
  h.epochs = 0;
  EXPECT_THROW(h.validate(), std::invalid_argument);
}

TEST(Predict, ArgmaxWithLowestIndexTies) {
  const std::vector<double> tie{0.2, 0.4, 0.4};
  EXPECT_EQ(argmax_row(tie), 1u);
  const std::vector<double> flat{0.0, 0.0};
  EXPECT_EQ(argmax_row(flat), 0u);

  const Architecture arch{{Dense{3}, Activation::kLinear}};
  ModelParams m = init_params(arch, {2}, 0);
  for (double& w : m.layers[0].weights.data()) w = 0.0;
  EXPECT_EQ(predict(m, arch, random_tensor({4, 2}, 1)),
            (std::vector<std::size_t>(4, 0)));

  const ModelParams r = random_model(kMlp, {6}, 8);
  const Tensor x = random_tensor({20, 6}, 9);
  const Tensor out = forward(r, kMlp, x).output;
  const auto pred = predict(r, kMlp, x);
  for (std::size_t s = 0; s < 20; ++s) {
    const auto row = sample_of(out, s);
    EXPECT_EQ(pred[s], std::size_t(std::max_element(row.begin(), row.end()) -
                                   row.begin()));
  }
}

TEST(Fingerprint, TracksEveryBit) {
  ModelParams m = random_model(kMlp, {6}, 1);
  const auto f = fingerprint(m);
  EXPECT_EQ(f, fingerprint(ModelParams(m)));
  m.layers[2].bias[2] = std::nextafter(m.layers[2].bias[2], 1.0);
  EXPECT_NE(f, fingerprint(m));
  EXPECT_LT(max_abs_diff(m.layers[2].bias, random_model(kMlp, {6}, 1).layers[2].bias),
            1e-15);
}
