#include "fedprobe/weight_group.hpp"

#include <stdexcept>

#include <fmt/format.h>

namespace fedprobe {

std::string_view to_string(GroupKind kind) noexcept {
  return kind == GroupKind::kBias ? "bias" : "weights";
}

std::optional<GroupKind> parse_group_kind(std::string_view text) noexcept {
  if (text == "bias") return GroupKind::kBias;
  if (text == "weights") return GroupKind::kWeights;
  return std::nullopt;
}

std::string to_string(const WeightGroup& group) {
  return fmt::format("layer {} {}", group.layer_index, to_string(group.kind));
}

std::vector<WeightGroup> weight_groups(const nn::ParamTensors& params) {
  std::vector<WeightGroup> groups;
  groups.reserve(params.layers.size() * 2);
  for (std::size_t k = 1; k <= params.layers.size(); ++k) {
    groups.push_back({k, GroupKind::kBias});
    groups.push_back({k, GroupKind::kWeights});
  }
  return groups;
}

const Tensor& group_tensor(const nn::ParamTensors& params,
                           const WeightGroup& group) {
  if (group.layer_index == 0 || group.layer_index > params.layers.size()) {
    throw std::out_of_range(fmt::format("no trainable layer {} (model has {})",
                                        group.layer_index,
                                        params.layers.size()));
  }
  const auto& layer = params.layers[group.layer_index - 1];
  return group.kind == GroupKind::kBias ? layer.bias : layer.weights;
}

Tensor& group_tensor(nn::ParamTensors& params, const WeightGroup& group) {
  return const_cast<Tensor&>(
      group_tensor(static_cast<const nn::ParamTensors&>(params), group));
}

WeightGroup final_bias(const nn::ParamTensors& params) {
  if (params.layers.empty()) {
    throw std::out_of_range("model has no trainable layers");
  }
  return {params.layers.size(), GroupKind::kBias};
}

}  // namespace fedprobe
