#include "fedprobe/cli/experiment.hpp"

#include <fstream>
#include <stdexcept>

#include <fmt/format.h>
#include <fmt/ostream.h>
#include <fmt/ranges.h>
#include <nlohmann/json.hpp>

#include "fedprobe/anomaly/deviation.hpp"
#include "fedprobe/data/cifar10.hpp"
#include "fedprobe/data/partition.hpp"
#include "fedprobe/data/synthetic.hpp"
#include "fedprobe/seed.hpp"

namespace fedprobe::cli {
namespace {

std::ofstream open_output(const std::filesystem::path& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw std::runtime_error(fmt::format("cannot write {}", path.string()));
  }
  return out;
}

WeightGroup flag_group_of(const ExperimentConfig& config,
                          const nn::ModelParams& model) {
  const std::size_t layers = model.layers.size();
  const std::size_t layer = config.flag_layer == 0 ? layers : config.flag_layer;
  if (layer > layers) {
    throw ConfigError("<config>", 0, "anomaly.flag_layer",
                      fmt::format("model has {} trainable layers", layers));
  }
  return {layer, config.flag_kind};
}

nlohmann::json flags_line(const anomaly::DeviationReport& report,
                          const std::vector<std::size_t>& malicious) {
  nlohmann::json scores = nlohmann::json::array();
  for (const auto& s : report.scores) {
    scores.push_back({{"client", s.client_id}, {"ratio_to_median", s.ratio_to_median}});
  }
  nlohmann::json ranking = nlohmann::json::array();
  for (const auto& g : report.ranking) {
    ranking.push_back({{"layer", g.group.layer_index},
                       {"kind", to_string(g.group.kind)},
                       {"score", g.score}});
  }
  return {{"round", report.round_index},
          {"flag_group",
           {{"layer", report.flag_group.layer_index},
            {"kind", to_string(report.flag_group.kind)}}},
          {"factor", report.flag_factor},
          {"median", report.median},
          {"flagged", report.flagged},
          {"malicious", malicious},
          {"scores", scores},
          {"ranking", ranking}};
}

double benign_median(const anomaly::DeviationMatrix& m, const WeightGroup& g,
                     const std::vector<std::size_t>& malicious) {
  std::vector<double> benign;
  const auto col = m.column(g);
  for (std::size_t r = 0; r < m.clients().size(); ++r) {
    if (std::find(malicious.begin(), malicious.end(), m.clients()[r]) == malicious.end()) {
      benign.push_back(col[r]);
    }
  }
  return benign.empty() ? 0.0 : anomaly::median(benign);
}

}  // namespace

nn::Architecture mlp_preset(const std::vector<std::size_t>& hidden,
                            nn::Activation activation, std::size_t num_classes) {
  nn::Architecture arch{{nn::Flatten{}, nn::Activation::kLinear}};
  for (std::size_t width : hidden) arch.push_back({nn::Dense{width}, activation});
  arch.push_back({nn::Dense{num_classes}, nn::Activation::kSoftmax});
  return arch;
}

nn::Architecture cnn_preset(std::size_t filters, std::size_t dense,
                            std::size_t num_classes) {
  return {{nn::Conv2D{filters, 3, 3}, nn::Activation::kReLU},
          {nn::Conv2D{filters, 3, 3}, nn::Activation::kReLU},
          {nn::MaxPool2D{2, 2}, nn::Activation::kLinear},
          {nn::Flatten{}, nn::Activation::kLinear},
          {nn::Dense{dense}, nn::Activation::kReLU},
          {nn::Dense{num_classes}, nn::Activation::kSoftmax}};
}

nn::Architecture architecture_of(const ExperimentConfig& config) {
  if (config.architecture == ArchPreset::kMlp) {
    return mlp_preset(config.hidden, config.hidden_activation, config.num_classes());
  }
  return cnn_preset(config.cnn_filters, config.cnn_dense, config.num_classes());
}

fl::FLConfig fl_config_of(const ExperimentConfig& config) {
  fl::FLConfig fc;
  fc.num_clients = config.num_clients;
  fc.malicious_ids = config.resolved_malicious_ids();
  fc.rounds = config.rounds;
  fc.local_epochs = config.local_epochs;
  fc.server_init_epochs = config.server_init_epochs;
  fc.hyper.learning_rate = config.learning_rate;
  fc.hyper.batch_size = config.batch_size;
  fc.hyper.loss = config.loss;
  fc.hyper.seed = config.seed;
  fc.architecture = architecture_of(config);
  fc.parallel_clients = config.parallel_clients;
  return fc;
}

fl::ExperimentData load_experiment_data(const ExperimentConfig& config) {
  Dataset train;
  Dataset test;
  if (config.source == DataSource::kCifar10) {
    auto split = data::load_cifar10(config.cifar_path);
    train = std::move(split.train);
    test = std::move(split.test);
  } else {
    const auto& s = config.synthetic;
    train = data::gen_synthetic(s.num_classes, s.samples_per_class, s.image_shape,
                                derive_seed(config.seed, Stream::kSyntheticTrain),
                                s.noise);
    test = data::gen_synthetic(s.num_classes, s.test_samples_per_class, s.image_shape,
                               derive_seed(config.seed, Stream::kSyntheticTest),
                               s.noise);
  }
  auto parts = data::partition(train, config.partition_plan());
  return {std::move(parts.server), std::move(parts.clients), std::move(test)};
}

RunSummary run_to_directory(const ExperimentConfig& config, std::ostream* log) {
  const fl::FLConfig fc = fl_config_of(config);
  const auto data = load_experiment_data(config);
  data::BackdoorSpec spec = config.backdoor;
  spec.num_malicious_clients = std::max<std::size_t>(1, fc.malicious_ids.size());
  spec.validate(config.sample_shape(), config.num_classes());
  const auto prepared = fl::prepare_experiment(fc, data, spec);

  RunSummary summary;
  summary.directory = config.output_dir;
  summary.malicious_ids = fc.malicious_ids;
  summary.injection = prepared.injection;

  std::filesystem::create_directories(config.output_dir);
  {
    auto resolved = open_output(config.output_dir / kResolvedFile);
    resolved << to_ini(config);
  }
  auto rounds = open_output(config.output_dir / kRoundsFile);
  auto deviations = open_output(config.output_dir / kDeviationsFile);
  auto flags = open_output(config.output_dir / kFlagsFile);
  rounds << kRoundsHeader << '\n' << std::flush;
  deviations << kDeviationsHeader << '\n' << std::flush;
  flags << std::flush;
  if (config.rounds == 0) return summary;

  nn::ModelParams joint = fl::init_server_model(fc, data.server);
  const WeightGroup flag_group = flag_group_of(config, joint);
  summary.rounds = fl::run_rounds(fc, prepared, std::move(joint), [&](const fl::RoundRecord& r) {
    const auto& m = r.metrics;
    fmt::print(rounds, "{},{},{},{},{}\n", r.round_index, m.main_loss, m.main_accuracy,
               m.backdoor_loss, m.backdoor_accuracy);
    const auto& dev = r.deviations;
    for (std::size_t client : dev.clients()) {
      for (const auto& g : dev.groups()) {
        fmt::print(deviations, "{},{},{},{},{}\n", r.round_index, client, g.layer_index,
                   to_string(g.kind), dev.at(client, g));
      }
    }
    const auto report = anomaly::build_report(r.round_index, dev, flag_group,
                                              config.flag_factor);
    flags << flags_line(report, fc.malicious_ids).dump() << '\n';
    rounds.flush();
    deviations.flush();
    flags.flush();
    if (log != nullptr) {
      fmt::print(*log, "round {:>3}  main acc {:.4f}  backdoor acc {:.4f}  flagged [{}]\n",
                 r.round_index, m.main_accuracy, m.backdoor_accuracy,
                 fmt::join(report.flagged, ","));
    }
  });
  return summary;
}

SweepAxis parse_sweep_axis(std::string_view name) {
  if (name == "malicious_clients") return SweepAxis::kMaliciousClients;
  if (name == "learning_rate") return SweepAxis::kLearningRate;
  if (name == "malicious_rate") return SweepAxis::kMaliciousRate;
  throw std::invalid_argument(fmt::format(
      "unknown sweep axis '{}' (malicious_clients, learning_rate, malicious_rate)", name));
}

std::string_view to_string(SweepAxis axis) {
  switch (axis) {
    case SweepAxis::kMaliciousClients: return "malicious_clients";
    case SweepAxis::kLearningRate: return "learning_rate";
    case SweepAxis::kMaliciousRate: return "malicious_rate";
  }
  return "";
}

std::vector<RunSummary> run_sweep(const ExperimentConfig& base, SweepAxis axis,
                                  const std::vector<std::string>& values,
                                  std::ostream* log) {
  std::vector<ExperimentConfig> configs;
  for (const auto& value : values) {
    ExperimentConfig c = base;
    switch (axis) {
      case SweepAxis::kMaliciousClients:
        c.malicious_ids.reset();
        set_field(c, "federation.num_malicious", value);
        break;
      case SweepAxis::kLearningRate:
        set_field(c, "training.learning_rate", value);
        break;
      case SweepAxis::kMaliciousRate:
        set_field(c, "backdoor.malicious_rate", value);
        break;
    }
    std::string name = fmt::format("{}_{}", to_string(axis), value);
    std::replace(name.begin(), name.end(), '/', '-');
    c.output_dir = base.output_dir / name;
    configs.push_back(std::move(c));
  }

  std::filesystem::create_directories(base.output_dir);
  auto summary_csv = open_output(base.output_dir / "sweep_summary.csv");
  summary_csv << kSweepHeader << '\n' << std::flush;

  std::vector<RunSummary> runs;
  for (std::size_t i = 0; i < configs.size(); ++i) {
    if (log != nullptr) {
      fmt::print(*log, "== {} = {} -> {}\n", to_string(axis), values[i],
                 configs[i].output_dir.string());
    }
    RunSummary run = run_to_directory(configs[i], log);
    const auto& inj = run.injection;
    std::size_t base_poisoned = 0;
    std::size_t total_poisoned = 0;
    for (const auto& p : inj.malicious) {
      base_poisoned += p.base;
      total_poisoned += p.poisoned;
    }
    const std::string per_client =
        run.malicious_ids.empty()
            ? std::string("0")
            : format_rate(data::per_client_rate(configs[i].backdoor.malicious_rate,
                                                run.malicious_ids.size()));
    std::string r1_mal, r1_med, r1_max, acc, bd;
    if (!run.rounds.empty()) {
      const auto& first = run.rounds.front().deviations;
      const WeightGroup final_bias{first.groups().back().layer_index, GroupKind::kBias};
      const auto col = first.column(final_bias);
      double mal = 0.0;
      for (std::size_t r = 0; r < first.clients().size(); ++r) {
        if (std::find(run.malicious_ids.begin(), run.malicious_ids.end(),
                      first.clients()[r]) != run.malicious_ids.end()) {
          mal = std::max(mal, col[r]);
        }
      }
      r1_mal = run.malicious_ids.empty() ? "" : fmt::format("{}", mal);
      r1_med = fmt::format("{}", benign_median(first, final_bias, run.malicious_ids));
      r1_max = fmt::format("{}", *std::max_element(col.begin(), col.end()));
      acc = fmt::format("{}", run.rounds.back().metrics.main_accuracy);
      bd = fmt::format("{}", run.rounds.back().metrics.backdoor_accuracy);
    }
    fmt::print(summary_csv, "{},{},{},{},{},{},{},{},{},{},{},{},{}\n", to_string(axis),
               values[i], configs[i].output_dir.filename().string(), run.malicious_ids.size(),
               per_client, inj.pool_size, base_poisoned, total_poisoned, r1_mal, r1_med,
               r1_max, acc, bd);
    summary_csv.flush();
    runs.push_back(std::move(run));
  }
  return runs;
}

}  // namespace fedprobe::cli
