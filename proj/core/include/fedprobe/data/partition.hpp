#pragma once

#include <cstddef>
#include <cstdint>
#include <variant>
#include <vector>

#include "fedprobe/dataset.hpp"

namespace fedprobe::data {

struct Sharded {
  std::size_t shards_per_client = 2;
};

struct Dirichlet {
  double beta = 0.5;
};

struct PartitionPlan {
  std::variant<Sharded, Dirichlet> scheme = Sharded{};
  std::size_t num_clients = 10;
  double server_share = 0.1;  // in [0, 1)
  std::uint64_t seed = 0;
};

struct Partition {
  Dataset server;
  std::vector<Dataset> clients;
  std::vector<std::size_t> server_indices;  // ascending
  std::vector<std::vector<std::size_t>> client_indices;
};

/// Splits `dataset` into a server share and num_clients disjoint client sets.
///
/// One std::mt19937_64 seeded with plan.seed drives every draw, in this order:
///  1. Server share, stratified: for each class c in ascending order, shuffle
///     the class's indices and move the first floor(server_share * count) to
///     the server.
///  2. Sharded: stable-sort the rest by label, cut into num_clients *
///     shards_per_client contiguous shards (shard s spans [s*m/S, (s+1)*m/S)),
///     shuffle the shard ids, deal shards_per_client consecutive ids per client.
///     Dirichlet: for each class in ascending order, shuffle its remaining
///     indices, draw num_clients values from a fresh
///     std::gamma_distribution(beta, 1), normalize them to proportions, and
///     give client k the slice ending at floor(cumulative_k * count).
Partition partition(const Dataset& dataset, const PartitionPlan& plan);

}  // namespace fedprobe::data
