#pragma once

#include <compare>
#include <cstddef>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "fedprobe/nn/layers.hpp"

namespace fedprobe {

enum class GroupKind { kBias = 0, kWeights = 1 };

/// One trainable tensor: the bias or the weights of trainable layer
/// `layer_index` (1-based, counting trainable layers only).
struct WeightGroup {
  std::size_t layer_index = 1;
  GroupKind kind = GroupKind::kBias;

  auto operator<=>(const WeightGroup&) const = default;
};

std::string_view to_string(GroupKind kind) noexcept;
std::optional<GroupKind> parse_group_kind(std::string_view text) noexcept;
std::string to_string(const WeightGroup& group);

/// (1, Bias), (1, Weights), ..., (m, Bias), (m, Weights).
std::vector<WeightGroup> weight_groups(const nn::ParamTensors& params);

/// Throws std::out_of_range for a group the parameters do not have.
const Tensor& group_tensor(const nn::ParamTensors& params,
                           const WeightGroup& group);
Tensor& group_tensor(nn::ParamTensors& params, const WeightGroup& group);

WeightGroup final_bias(const nn::ParamTensors& params);

}  // namespace fedprobe
