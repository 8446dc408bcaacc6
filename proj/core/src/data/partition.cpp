#include "fedprobe/data/partition.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <stdexcept>

#include <fmt/format.h>

#include "fedprobe/error.hpp"

namespace fedprobe::data {
namespace {

std::vector<std::vector<std::size_t>> by_class(
    const Dataset& d, std::span<const std::size_t> indices) {
  std::vector<std::vector<std::size_t>> classes(d.num_classes);
  for (std::size_t i : indices) classes[d.labels[i]].push_back(i);
  return classes;
}

std::vector<std::vector<std::size_t>> shard(
    const Dataset& d, std::vector<std::size_t> pool, std::size_t clients,
    std::size_t per_client, std::mt19937_64& rng) {
  const std::size_t shards = clients * per_client;
  if (shards > pool.size()) {
    throw DataError(fmt::format(
        "{} clients x {} shards need at least {} samples, only {} remain",
        clients, per_client, shards, pool.size()));
  }
  std::stable_sort(pool.begin(), pool.end(), [&](std::size_t a, std::size_t b) {
    return d.labels[a] < d.labels[b];
  });
  std::vector<std::size_t> ids(shards);
  std::iota(ids.begin(), ids.end(), std::size_t{0});
  std::shuffle(ids.begin(), ids.end(), rng);

  const std::size_t m = pool.size();
  std::vector<std::vector<std::size_t>> parts(clients);
  for (std::size_t c = 0; c < clients; ++c) {
    for (std::size_t t = 0; t < per_client; ++t) {
      const std::size_t s = ids[c * per_client + t];
      parts[c].insert(parts[c].end(), pool.begin() + s * m / shards,
                      pool.begin() + (s + 1) * m / shards);
    }
  }
  return parts;
}

std::vector<std::vector<std::size_t>> dirichlet(
    const Dataset& d, const std::vector<std::size_t>& pool,
    std::size_t clients, double beta, std::mt19937_64& rng) {
  if (!(beta > 0.0)) {
    throw std::invalid_argument(fmt::format("Dirichlet beta must be positive, got {}", beta));
  }
  std::vector<std::vector<std::size_t>> parts(clients);
  for (auto& members : by_class(d, pool)) {
    std::shuffle(members.begin(), members.end(), rng);
    std::gamma_distribution<double> gamma(beta, 1.0);
    std::vector<double> draws(clients);
    for (double& g : draws) g = gamma(rng);
    double total = std::accumulate(draws.begin(), draws.end(), 0.0);
    if (!(total > 0.0)) {
      std::fill(draws.begin(), draws.end(), 1.0);
      total = static_cast<double>(clients);
    }
    const std::size_t count = members.size();
    double cumulative = 0.0;
    std::size_t start = 0;
    for (std::size_t c = 0; c < clients; ++c) {
      cumulative += draws[c];
      const std::size_t stop =
          c + 1 == clients
              ? count
              : std::min(count, static_cast<std::size_t>(std::floor(
                                    cumulative / total * static_cast<double>(count))));
      parts[c].insert(parts[c].end(), members.begin() + start,
                      members.begin() + std::max(start, stop));
      start = std::max(start, stop);
    }
  }
  return parts;
}

}  // namespace

Partition partition(const Dataset& dataset, const PartitionPlan& plan) {
  if (dataset.empty()) throw DataError("cannot partition an empty dataset");
  if (plan.num_clients == 0) throw std::invalid_argument("num_clients must be >= 1");
  if (!(plan.server_share >= 0.0 && plan.server_share < 1.0)) {
    throw std::invalid_argument(
        fmt::format("server share must lie in [0, 1), got {}", plan.server_share));
  }
  if (dataset.size() < plan.num_clients) {
    throw DataError(fmt::format("{} samples cannot cover {} clients",
                                dataset.size(), plan.num_clients));
  }
  dataset.validate();

  std::mt19937_64 rng(plan.seed);
  std::vector<std::size_t> all(dataset.size());
  std::iota(all.begin(), all.end(), std::size_t{0});

  Partition out;
  std::vector<char> to_server(dataset.size(), 0);
  for (auto& members : by_class(dataset, all)) {
    std::shuffle(members.begin(), members.end(), rng);
    const auto take = static_cast<std::size_t>(
        std::floor(plan.server_share * static_cast<double>(members.size())));
    for (std::size_t t = 0; t < take; ++t) to_server[members[t]] = 1;
  }
  std::vector<std::size_t> rest;
  for (std::size_t i : all) {
    (to_server[i] ? out.server_indices : rest).push_back(i);
  }

  if (const auto* s = std::get_if<Sharded>(&plan.scheme)) {
    if (s->shards_per_client == 0) {
      throw std::invalid_argument("shards_per_client must be >= 1");
    }
    out.client_indices =
        shard(dataset, std::move(rest), plan.num_clients, s->shards_per_client, rng);
  } else {
    out.client_indices = dirichlet(dataset, rest, plan.num_clients,
                                   std::get<Dirichlet>(plan.scheme).beta, rng);
  }

  out.server = dataset.subset(out.server_indices);
  out.clients.reserve(plan.num_clients);
  for (const auto& idx : out.client_indices) out.clients.push_back(dataset.subset(idx));
  return out;
}

}  // namespace fedprobe::data
