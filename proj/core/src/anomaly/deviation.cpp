#include "fedprobe/anomaly/deviation.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include <fmt/format.h>

#include "fedprobe/error.hpp"

namespace fedprobe::anomaly {

double max_abs_deviation(const nn::ParamTensors& local,
                         const nn::ParamTensors& joint,
                         const WeightGroup& group) {
  const Tensor& a = group_tensor(local, group);
  const Tensor& b = group_tensor(joint, group);
  if (a.shape() != b.shape()) {
    throw ShapeError(fmt::format("{}: shapes {} and {} differ",
                                 to_string(group), to_string(a.shape()),
                                 to_string(b.shape())));
  }
  double worst = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    worst = std::max(worst, std::abs(a[i] - b[i]));
  }
  return worst;
}

DeviationMatrix::DeviationMatrix(std::vector<std::size_t> clients,
                                 std::vector<WeightGroup> groups)
    : clients_(std::move(clients)),
      groups_(std::move(groups)),
      values_(clients_.size() * groups_.size(), 0.0) {
  if (!std::is_sorted(clients_.begin(), clients_.end()) ||
      std::adjacent_find(clients_.begin(), clients_.end()) != clients_.end()) {
    throw std::invalid_argument("client ids must be unique and ascending");
  }
}

std::size_t DeviationMatrix::row_of(std::size_t client_id) const {
  const auto it = std::lower_bound(clients_.begin(), clients_.end(), client_id);
  if (it == clients_.end() || *it != client_id) {
    throw std::out_of_range(fmt::format("no client {} in deviation matrix", client_id));
  }
  return static_cast<std::size_t>(it - clients_.begin());
}

std::size_t DeviationMatrix::col_of(const WeightGroup& group) const {
  const auto it = std::find(groups_.begin(), groups_.end(), group);
  if (it == groups_.end()) {
    throw std::out_of_range(fmt::format("no {} in deviation matrix", to_string(group)));
  }
  return static_cast<std::size_t>(it - groups_.begin());
}

double DeviationMatrix::at(std::size_t client_id, const WeightGroup& group) const {
  return values_[row_of(client_id) * groups_.size() + col_of(group)];
}

double& DeviationMatrix::at(std::size_t client_id, const WeightGroup& group) {
  return values_[row_of(client_id) * groups_.size() + col_of(group)];
}

std::vector<double> DeviationMatrix::column(const WeightGroup& group) const {
  const std::size_t col = col_of(group);
  std::vector<double> out(clients_.size());
  for (std::size_t r = 0; r < clients_.size(); ++r) {
    out[r] = values_[r * groups_.size() + col];
  }
  return out;
}

DeviationMatrix deviation_matrix(
    const std::map<std::size_t, nn::ModelParams>& locals,
    const nn::ModelParams& joint) {
  std::vector<std::size_t> clients;
  for (const auto& [id, model] : locals) {
    if (!model.same_shape(joint)) {
      throw ShapeError(fmt::format("client {} update does not match the joint model", id));
    }
    clients.push_back(id);
  }
  const auto groups = weight_groups(joint);
  DeviationMatrix matrix(std::move(clients), groups);
  for (const auto& [id, model] : locals) {
    for (const auto& g : groups) matrix.at(id, g) = max_abs_deviation(model, joint, g);
  }
  return matrix;
}

double median(std::vector<double> values) {
  if (values.empty()) throw std::invalid_argument("median of nothing");
  std::sort(values.begin(), values.end());
  const std::size_t n = values.size();
  return n % 2 == 1 ? values[n / 2] : 0.5 * (values[n / 2 - 1] + values[n / 2]);
}

std::vector<GroupScore> rank_groups(const DeviationMatrix& matrix) {
  if (matrix.clients().size() < 2) {
    throw std::invalid_argument("rank_groups needs at least 2 clients");
  }
  std::vector<GroupScore> scores;
  for (const auto& g : matrix.groups()) {
    const auto col = matrix.column(g);
    const double mx = *std::max_element(col.begin(), col.end());
    const double med = median(col);
    scores.push_back({g, (mx - med) / (med + kScoreEpsilon)});
  }
  std::stable_sort(scores.begin(), scores.end(),
                   [](const GroupScore& a, const GroupScore& b) {
                     if (a.score != b.score) return a.score > b.score;
                     return a.group < b.group;
                   });
  return scores;
}

std::vector<std::size_t> flag_clients(const DeviationMatrix& matrix,
                                      const WeightGroup& group, double factor) {
  if (matrix.clients().size() < 3) {
    throw std::invalid_argument("flag_clients needs at least 3 clients");
  }
  const auto col = matrix.column(group);
  std::vector<std::size_t> flagged;
  if (std::all_of(col.begin(), col.end(), [](double v) { return v == 0.0; })) {
    return flagged;
  }
  const double threshold = factor * median(col);
  for (std::size_t r = 0; r < col.size(); ++r) {
    if (col[r] > threshold) flagged.push_back(matrix.clients()[r]);
  }
  return flagged;
}

DeviationReport build_report(std::size_t round_index, DeviationMatrix matrix,
                             const WeightGroup& flag_group, double factor) {
  DeviationReport report;
  report.round_index = round_index;
  report.flag_group = flag_group;
  report.flag_factor = factor;
  report.ranking = rank_groups(matrix);
  report.flagged = flag_clients(matrix, flag_group, factor);
  const auto col = matrix.column(flag_group);
  report.median = median(col);
  for (std::size_t r = 0; r < col.size(); ++r) {
    const double ratio = col[r] / (report.median + kScoreEpsilon);
    report.scores.push_back({matrix.clients()[r], ratio});
  }
  report.matrix = std::move(matrix);
  return report;
}

}  // namespace fedprobe::anomaly
