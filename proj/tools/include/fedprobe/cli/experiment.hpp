#pragma once

#include <cstddef>
#include <filesystem>
#include <optional>
#include <ostream>
#include <string>
#include <vector>

#include "fedprobe/cli/config.hpp"
#include "fedprobe/fl/engine.hpp"

namespace fedprobe::cli {

/// Flatten, Dense(h) per hidden width with `activation`, Dense(classes) softmax.
nn::Architecture mlp_preset(const std::vector<std::size_t>& hidden,
                            nn::Activation activation, std::size_t num_classes);

/// Conv(filters, 3x3) ReLU, Conv(filters, 3x3) ReLU, MaxPool 2x2, Flatten,
/// Dense(dense) ReLU, Dense(classes) softmax.
nn::Architecture cnn_preset(std::size_t filters, std::size_t dense,
                            std::size_t num_classes);

nn::Architecture architecture_of(const ExperimentConfig& config);
fl::FLConfig fl_config_of(const ExperimentConfig& config);

/// Generates or loads the data and partitions it.
fl::ExperimentData load_experiment_data(const ExperimentConfig& config);

/// Column headers, in order.
inline constexpr const char* kRoundsHeader =
    "round,main_loss,main_acc,backdoor_loss,backdoor_acc";
inline constexpr const char* kDeviationsHeader =
    "round,client_id,layer_index,group_kind,max_abs_deviation";
inline constexpr const char* kSweepHeader =
    "axis,value,directory,num_malicious,per_client_rate,pool_size,base_poisoned,"
    "total_poisoned,round1_malicious_final_bias,round1_benign_median_final_bias,"
    "round1_max_final_bias,final_main_acc,final_backdoor_acc";

inline constexpr const char* kRoundsFile = "rounds.csv";
inline constexpr const char* kDeviationsFile = "deviations.csv";
inline constexpr const char* kFlagsFile = "flags.jsonl";
inline constexpr const char* kResolvedFile = "resolved.ini";

struct RunSummary {
  std::filesystem::path directory;
  std::vector<std::size_t> malicious_ids;
  data::Injection injection;
  std::vector<fl::RoundRecord> rounds;
};

/// Runs the experiment and writes rounds.csv, deviations.csv, flags.jsonl and
/// resolved.ini into config.output_dir. Rows are appended and flushed as each
/// round completes. `log` gets one progress line per round when non-null.
RunSummary run_to_directory(const ExperimentConfig& config,
                            std::ostream* log = nullptr);

enum class SweepAxis { kMaliciousClients, kLearningRate, kMaliciousRate };

SweepAxis parse_sweep_axis(std::string_view name);
std::string_view to_string(SweepAxis axis);

/// One run per value in <output_dir>/<axis>_<value>, all with the base seed,
/// then <output_dir>/sweep_summary.csv. Every value is validated before any
/// run starts.
std::vector<RunSummary> run_sweep(const ExperimentConfig& base, SweepAxis axis,
                                  const std::vector<std::string>& values,
                                  std::ostream* log = nullptr);

}  // namespace fedprobe::cli
