#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <vector>

#include "fedprobe/data/backdoor.hpp"
#include "fedprobe/data/partition.hpp"
#include "fedprobe/nn/layers.hpp"
#include "fedprobe/nn/network.hpp"
#include "fedprobe/tensor.hpp"
#include "fedprobe/weight_group.hpp"

namespace fedprobe::cli {

/// Overrides [experiment] output_dir when set.
inline constexpr const char* kOutputDirEnv = "FEDPROBE_OUTPUT_DIR";

class ConfigError : public std::runtime_error {
 public:
  ConfigError(std::string origin, std::size_t line, std::string field,
              const std::string& message);

  const std::string& origin() const noexcept { return origin_; }
  std::size_t line() const noexcept { return line_; }  // 0 when not tied to a line
  const std::string& field() const noexcept { return field_; }

 private:
  std::string origin_;
  std::size_t line_;
  std::string field_;
};

enum class DataSource { kSynthetic, kCifar10 };
enum class ArchPreset { kMlp, kCnn };
enum class PartitionScheme { kSharded, kDirichlet };

struct SyntheticParams {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 1000;
  std::size_t test_samples_per_class = 100;
  Shape image_shape{3, 16, 16};
  double noise = 0.25;
};

struct ExperimentConfig {
  // [experiment]
  std::uint64_t seed = 0;
  std::size_t rounds = 25;
  std::filesystem::path output_dir = "out";

  // [data]
  DataSource source = DataSource::kSynthetic;
  std::filesystem::path cifar_path;
  SyntheticParams synthetic;

  // [partition]
  PartitionScheme partition_scheme = PartitionScheme::kSharded;
  std::size_t shards_per_client = 2;
  double dirichlet_beta = 0.5;
  double server_share = 0.1;

  // [model]
  ArchPreset architecture = ArchPreset::kMlp;
  std::vector<std::size_t> hidden{32};
  nn::Activation hidden_activation = nn::Activation::kReLU;
  std::size_t cnn_filters = 32;
  std::size_t cnn_dense = 128;
  nn::LossKind loss = nn::LossKind::kCrossEntropy;

  // [training]
  double learning_rate = 0.01;
  std::size_t batch_size = 32;
  std::size_t local_epochs = 2;
  std::size_t server_init_epochs = 2;
  bool parallel_clients = false;

  // [federation]
  std::size_t num_clients = 10;
  std::size_t num_malicious = 1;
  std::optional<std::vector<std::size_t>> malicious_ids;  // nullopt: 0..k-1

  // [backdoor]; num_malicious_clients and seed are filled in at run time
  data::BackdoorSpec backdoor;

  // [anomaly]
  std::size_t flag_layer = 0;  // 0: final trainable layer
  GroupKind flag_kind = GroupKind::kBias;
  double flag_factor = 3.0;

  std::size_t num_classes() const;
  Shape sample_shape() const;
  std::vector<std::size_t> resolved_malicious_ids() const;
  /// Plan with the partition stream of `seed`.
  data::PartitionPlan partition_plan() const;
};

/// Parses the sectioned key = value format. `origin` names the source in
/// diagnostics. Unknown sections or keys, duplicates, and out-of-range values
/// raise ConfigError carrying the line and the section.key field.
ExperimentConfig parse_config(std::string_view text,
                              const std::string& origin = "<config>");

/// parse_config on a file's contents; also checks that cifar_path exists.
ExperimentConfig load_config(const std::filesystem::path& path);

/// Canonical text for `config`: every key, in a fixed order, with values that
/// parse back to the same config.
std::string to_ini(const ExperimentConfig& config);

/// Replaces output_dir with $FEDPROBE_OUTPUT_DIR when that is set and non-empty.
void apply_environment(ExperimentConfig& config);

/// Applies `section.key = value` on top of an existing config, with the same
/// validation as the file parser.
void set_field(ExperimentConfig& config, std::string_view field,
               std::string_view value);

std::string format_rate(const data::Rate& rate);

}  // namespace fedprobe::cli
