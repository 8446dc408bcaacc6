#include "fedprobe/cli/commands.hpp"

#include <cmath>
#include <random>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <fmt/ranges.h>

#include "fedprobe/cli/experiment.hpp"
#include "fedprobe/error.hpp"
#include "fedprobe/seed.hpp"

namespace fedprobe::cli {
namespace {

using nn::Activation;

template <typename F>
int guarded(std::ostream& err, F&& body) {
  try {
    return body();
  } catch (const ConfigError& e) {
    fmt::print(err, "config error: {}\n", e.what());
    return kExitConfig;
  } catch (const std::exception& e) {
    fmt::print(err, "error: {}\n", e.what());
    return kExitFailure;
  }
}

}  // namespace

std::vector<GradCheckCase> gradcheck_cases(ArchPreset preset) {
  const Shape shape{3, 8, 8};
  const auto ce = nn::LossKind::kCrossEntropy;
  const auto mse = nn::LossKind::kMSE;
  if (preset == ArchPreset::kMlp) {
    return {
        {"mlp relu/softmax cross_entropy", mlp_preset({12}, Activation::kReLU, 10), shape, ce},
        {"mlp sigmoid/softmax cross_entropy", mlp_preset({12}, Activation::kSigmoid, 10), shape, ce},
        {"mlp linear/softmax mse", mlp_preset({12}, Activation::kLinear, 10), shape, mse},
        {"mlp sigmoid/sigmoid mse",
         {{nn::Flatten{}, Activation::kLinear},
          {nn::Dense{12}, Activation::kSigmoid},
          {nn::Dense{6}, Activation::kReLU},
          {nn::Dense{4}, Activation::kSigmoid}},
         shape, mse},
    };
  }
  return {
      {"cnn relu/softmax cross_entropy", cnn_preset(4, 8, 10), shape, ce},
      {"cnn relu/softmax mse", cnn_preset(4, 8, 10), shape, mse},
      {"cnn sigmoid/sigmoid mse",
       {{nn::Conv2D{3, 3, 3}, Activation::kSigmoid},
        {nn::MaxPool2D{2, 2}, Activation::kLinear},
        {nn::Conv2D{2, 2, 2}, Activation::kLinear},
        {nn::Flatten{}, Activation::kLinear},
        {nn::Dense{5}, Activation::kSigmoid}},
       shape, mse},
  };
}

std::vector<GradCheckOutcome> run_gradcheck(ArchPreset preset, std::uint64_t seed,
                                            std::optional<WeightGroup> corrupt) {
  constexpr std::size_t kBatch = 3;
  std::vector<GradCheckOutcome> outcomes;
  const auto cases = gradcheck_cases(preset);
  for (std::size_t k = 0; k < cases.size(); ++k) {
    const auto& c = cases[k];
    const auto out_shape = nn::infer_shapes(c.architecture, c.sample_shape).back();
    const std::size_t classes = out_shape[0];
    const auto model =
        nn::init_params(c.architecture, c.sample_shape, derive_seed(seed, Stream::kInit, k));

    std::mt19937_64 rng(derive_seed(seed, Stream::kSyntheticTrain, k));
    std::uniform_real_distribution<double> pixel(0.0, 1.0);
    std::uniform_int_distribution<std::size_t> label(0, classes - 1);
    Shape batch_shape{kBatch};
    batch_shape.insert(batch_shape.end(), c.sample_shape.begin(), c.sample_shape.end());
    Tensor input(batch_shape);
    for (double& v : input.data()) v = pixel(rng);
    std::vector<std::size_t> labels(kBatch);
    for (auto& l : labels) l = label(rng);
    const Tensor target = one_hot(labels, classes);

    const auto fr = nn::forward(model, c.architecture, input);
    auto analytic = nn::backward(model, c.architecture, fr.cache, target, c.loss);
    const auto numeric =
        nn::finite_diff_gradient(model, c.architecture, input, target, c.loss);
    if (corrupt) {
      Tensor& t = group_tensor(analytic, *corrupt);
      t[0] += 1e-3 + 0.5 * std::abs(t[0]);
    }
    outcomes.push_back({c, nn::compare_gradients(analytic, numeric)});
  }
  return outcomes;
}

WeightGroup parse_group(std::string_view text) {
  const auto colon = text.find(':');
  if (colon == std::string_view::npos) {
    throw std::invalid_argument(fmt::format("'{}' is not layer:kind", text));
  }
  std::size_t layer = 0;
  const auto digits = text.substr(0, colon);
  for (char ch : digits) {
    if (ch < '0' || ch > '9') throw std::invalid_argument(fmt::format("bad layer in '{}'", text));
    layer = layer * 10 + static_cast<std::size_t>(ch - '0');
  }
  if (digits.empty() || layer == 0) {
    throw std::invalid_argument(fmt::format("layer in '{}' must be >= 1", text));
  }
  const auto kind = parse_group_kind(text.substr(colon + 1));
  if (!kind) throw std::invalid_argument(fmt::format("bad kind in '{}'", text));
  return {layer, *kind};
}

int cmd_run(const std::filesystem::path& config_path, std::ostream& out,
            std::ostream& err) {
  return guarded(err, [&] {
    ExperimentConfig config = load_config(config_path);
    apply_environment(config);
    const auto summary = run_to_directory(config, &out);
    fmt::print(out, "wrote {} rounds to {}\n", summary.rounds.size(),
               summary.directory.string());
    return kExitOk;
  });
}

int cmd_gradcheck(ArchPreset preset, std::uint64_t seed,
                  std::optional<WeightGroup> corrupt, std::ostream& out,
                  std::ostream& err) {
  return guarded(err, [&] {
    const auto outcomes = run_gradcheck(preset, seed, corrupt);
    bool ok = true;
    for (const auto& o : outcomes) {
      fmt::print(out, "{}\n", o.test_case.name);
      for (const auto& g : o.report.groups) {
        fmt::print(out, "  {:<16} max relative error {:.3e}\n", to_string(g.group),
                   g.max_relative_error);
      }
      if (!o.report.passed(kGradCheckTolerance)) {
        ok = false;
        const auto& w = o.report.worst();
        fmt::print(err,
                   "FAIL {}: {} at [{}]: analytic {:.10g} vs numeric {:.10g} "
                   "(relative error {:.3e} >= {:.0e})\n",
                   o.test_case.name, to_string(w.group), fmt::join(w.worst_coordinates, ","),
                   w.analytic, w.numeric, w.max_relative_error, kGradCheckTolerance);
      }
    }
    return ok ? kExitOk : kExitFailure;
  });
}

int cmd_sweep(const std::filesystem::path& config_path, const std::string& axis,
              const std::vector<std::string>& values, std::ostream& out,
              std::ostream& err) {
  return guarded(err, [&] {
    SweepAxis parsed;
    try {
      parsed = parse_sweep_axis(axis);
    } catch (const std::invalid_argument& e) {
      throw ConfigError("--axis", 0, axis, e.what());
    }
    ExperimentConfig config = load_config(config_path);
    apply_environment(config);
    const auto runs = run_sweep(config, parsed, values, &out);
    fmt::print(out, "wrote {} runs and {}\n", runs.size(),
               (config.output_dir / "sweep_summary.csv").string());
    return kExitOk;
  });
}

}  // namespace fedprobe::cli
