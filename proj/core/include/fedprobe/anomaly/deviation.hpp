#pragma once

#include <cstddef>
#include <map>
#include <span>
#include <vector>

#include "fedprobe/nn/layers.hpp"
#include "fedprobe/weight_group.hpp"

namespace fedprobe::anomaly {

/// Added to the benign median in rank_groups so all-zero groups score 0.
inline constexpr double kScoreEpsilon = 1e-12;
inline constexpr double kDefaultFlagFactor = 3.0;

/// max |local - joint| over the elements of one weight group.
double max_abs_deviation(const nn::ParamTensors& local,
                         const nn::ParamTensors& joint,
                         const WeightGroup& group);

/// Clients x weight groups table of max_abs_deviation values.
class DeviationMatrix {
 public:
  DeviationMatrix() = default;
  DeviationMatrix(std::vector<std::size_t> clients,
                  std::vector<WeightGroup> groups);

  const std::vector<std::size_t>& clients() const noexcept { return clients_; }
  const std::vector<WeightGroup>& groups() const noexcept { return groups_; }

  double at(std::size_t client_id, const WeightGroup& group) const;
  double& at(std::size_t client_id, const WeightGroup& group);

  /// Values of one group, in client order.
  std::vector<double> column(const WeightGroup& group) const;

  bool operator==(const DeviationMatrix&) const = default;

 private:
  std::size_t row_of(std::size_t client_id) const;
  std::size_t col_of(const WeightGroup& group) const;

  std::vector<std::size_t> clients_;  // ascending
  std::vector<WeightGroup> groups_;   // canonical order
  std::vector<double> values_;        // row-major, clients x groups
};

DeviationMatrix deviation_matrix(
    const std::map<std::size_t, nn::ModelParams>& locals,
    const nn::ModelParams& joint);

/// Median; the mean of the two middle values for an even count.
double median(std::vector<double> values);

struct GroupScore {
  WeightGroup group;
  double score = 0.0;
};

/// score = (max - median) / (median + kScoreEpsilon) across clients, sorted
/// descending; ties keep (layer_index, kind) order. Needs >= 2 clients.
std::vector<GroupScore> rank_groups(const DeviationMatrix& matrix);

/// Clients whose value in `group` exceeds factor x the median over clients.
/// Needs >= 3 clients. An all-zero column flags nobody.
std::vector<std::size_t> flag_clients(const DeviationMatrix& matrix,
                                      const WeightGroup& group,
                                      double factor = kDefaultFlagFactor);

struct ClientScore {
  std::size_t client_id = 0;
  double ratio_to_median = 0.0;
};

/// Everything the anomaly step concludes about one round.
struct DeviationReport {
  std::size_t round_index = 0;
  DeviationMatrix matrix;
  std::vector<GroupScore> ranking;
  WeightGroup flag_group;
  double flag_factor = kDefaultFlagFactor;
  double median = 0.0;
  std::vector<std::size_t> flagged;
  std::vector<ClientScore> scores;
};

DeviationReport build_report(std::size_t round_index, DeviationMatrix matrix,
                             const WeightGroup& flag_group,
                             double factor = kDefaultFlagFactor);

}  // namespace fedprobe::anomaly
