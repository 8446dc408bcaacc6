#include "fedprobe/data/backdoor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <random>
#include <set>
#include <stdexcept>

#include <fmt/format.h>

#include "fedprobe/error.hpp"

namespace fedprobe::data {
namespace {

struct Held {
  std::size_t client;
  std::size_t index;
};

}  // namespace

void BackdoorSpec::validate(const Shape& sample_shape,
                            std::size_t num_classes) const {
  if (source_class >= num_classes || target_class >= num_classes) {
    throw std::invalid_argument(fmt::format(
        "source class {} and target class {} must be below {}", source_class,
        target_class, num_classes));
  }
  if (source_class == target_class) {
    throw std::invalid_argument("source and target class must differ");
  }
  if (sample_shape.size() != 3) {
    throw std::invalid_argument(fmt::format(
        "trigger needs [channels, height, width] samples, got {}",
        to_string(sample_shape)));
  }
  if (trigger.height == 0 || trigger.width == 0 ||
      trigger.row + trigger.height > sample_shape[1] ||
      trigger.col + trigger.width > sample_shape[2]) {
    throw std::invalid_argument(fmt::format(
        "trigger {}x{} at ({}, {}) does not fit a {}x{} image", trigger.height,
        trigger.width, trigger.row, trigger.col, sample_shape[1],
        sample_shape[2]));
  }
  if (!(trigger.value >= 0.0 && trigger.value <= 1.0)) {
    throw std::invalid_argument("trigger fill value must lie in [0, 1]");
  }
  if (malicious_rate.num == 0 || malicious_rate.den == 0 ||
      malicious_rate.num > malicious_rate.den) {
    throw std::invalid_argument(
        fmt::format("malicious rate {}/{} must lie in (0, 1]",
                    malicious_rate.num, malicious_rate.den));
  }
  if (num_malicious_clients == 0) {
    throw std::invalid_argument("at least one malicious client is required");
  }
  if (!(trigger_fraction >= 0.0 && trigger_fraction <= 1.0)) {
    throw std::invalid_argument("trigger fraction must lie in [0, 1]");
  }
}

void apply_trigger(std::span<double> sample, const Shape& sample_shape,
                   const TriggerPatch& patch) {
  const std::size_t channels = sample_shape.at(0), h = sample_shape.at(1),
                    w = sample_shape.at(2);
  if (patch.row + patch.height > h || patch.col + patch.width > w ||
      sample.size() != channels * h * w) {
    throw ShapeError("trigger patch does not fit the sample");
  }
  for (std::size_t c = 0; c < channels; ++c) {
    for (std::size_t y = patch.row; y < patch.row + patch.height; ++y) {
      for (std::size_t x = patch.col; x < patch.col + patch.width; ++x) {
        sample[(c * h + y) * w + x] = patch.value;
      }
    }
  }
}

Rate per_client_rate(const Rate& rate, std::size_t count) {
  if (count == 0) throw std::invalid_argument("per_client_rate over zero clients");
  const std::uint64_t den = rate.den * count;
  const std::uint64_t g = std::gcd(rate.num, den);
  return {rate.num / g, den / g};
}

Injection inject_backdoor(std::span<const Dataset> clients,
                          const BackdoorSpec& spec,
                          std::span<const std::size_t> malicious_ids) {
  if (clients.empty()) throw DataError("inject_backdoor needs client datasets");
  const Shape sample_shape = clients.front().sample_shape();
  const std::size_t num_classes = clients.front().num_classes;
  spec.validate(sample_shape, num_classes);

  std::vector<std::size_t> ids(malicious_ids.begin(), malicious_ids.end());
  std::sort(ids.begin(), ids.end());
  if (ids.empty()) throw std::invalid_argument("no malicious client ids given");
  if (std::adjacent_find(ids.begin(), ids.end()) != ids.end()) {
    throw std::invalid_argument("duplicate malicious client id");
  }
  if (ids.back() >= clients.size()) {
    throw std::invalid_argument(fmt::format(
        "malicious client {} does not exist ({} clients)", ids.back(),
        clients.size()));
  }
  if (ids.size() != spec.num_malicious_clients) {
    throw std::invalid_argument(fmt::format(
        "{} malicious ids given, backdoor spec expects {}", ids.size(),
        spec.num_malicious_clients));
  }

  Injection out;
  out.clients.assign(clients.begin(), clients.end());
  if (spec.trigger_fraction == 0.0) return out;

  std::vector<Held> candidates;
  for (std::size_t c = 0; c < clients.size(); ++c) {
    for (std::size_t i = 0; i < clients[c].size(); ++i) {
      if (clients[c].labels[i] == spec.source_class) candidates.push_back({c, i});
    }
  }
  if (candidates.empty()) {
    throw DataError(fmt::format("no client holds a sample of source class {}",
                                spec.source_class));
  }
  std::mt19937_64 rng(spec.seed);
  std::shuffle(candidates.begin(), candidates.end(), rng);
  const auto pool_size = std::max<std::size_t>(
      1, static_cast<std::size_t>(std::floor(
             spec.trigger_fraction * static_cast<double>(candidates.size()))));
  if (pool_size < ids.size()) {
    throw DataError(fmt::format(
        "{} trigger samples cannot give each of {} malicious clients one",
        pool_size, ids.size()));
  }
  candidates.resize(pool_size);
  out.pool_size = pool_size;

  std::vector<std::set<std::size_t>> removed(clients.size());
  for (const Held& h : candidates) removed[h.client].insert(h.index);

  std::vector<std::vector<Held>> shares(ids.size());
  for (std::size_t j = 0; j < candidates.size(); ++j) {
    shares[j % ids.size()].push_back(candidates[j]);
  }

  const Rate target = per_client_rate(spec.malicious_rate, ids.size());
  std::vector<std::size_t> keep;
  for (std::size_t c = 0; c < clients.size(); ++c) {
    keep.clear();
    for (std::size_t i = 0; i < clients[c].size(); ++i) {
      if (!removed[c].contains(i)) keep.push_back(i);
    }
    const auto it = std::lower_bound(ids.begin(), ids.end(), c);
    if (it == ids.end() || *it != c) {
      out.clients[c] = clients[c].subset(keep);
      continue;
    }

    const auto& share = shares[static_cast<std::size_t>(it - ids.begin())];
    ClientPoisoning report;
    report.client_id = c;
    report.target_rate = target;
    std::size_t poisoned = 0;
    if (target.num == target.den) {
      keep.clear();
      poisoned = std::max(share.size(), clients[c].size());
    } else {
      const double t = target.value();
      poisoned = static_cast<std::size_t>(
          std::llround(t * static_cast<double>(keep.size()) / (1.0 - t)));
    }
    report.clean = keep.size();
    report.base = std::min(poisoned, share.size());
    report.poisoned = poisoned;

    Dataset base;
    {
      std::vector<Dataset> picked;
      for (std::size_t b = 0; b < report.base; ++b) {
        const Held& h = share[b];
        const std::size_t one[] = {h.index};
        picked.push_back(clients[h.client].subset(one));
      }
      if (!picked.empty()) base = concat(picked);
    }
    for (std::size_t b = 0; b < base.size(); ++b) {
      apply_trigger(base.sample(b), sample_shape, spec.trigger);
      base.labels[b] = spec.target_class;
    }

    std::vector<Dataset> parts{clients[c].subset(keep)};
    if (report.base > 0) {
      std::vector<std::size_t> cycle(poisoned);
      for (std::size_t p = 0; p < poisoned; ++p) cycle[p] = p % report.base;
      parts.push_back(base.subset(cycle));
    }
    out.clients[c] = concat(parts);
    for (std::size_t p = 0; p < (report.base > 0 ? poisoned : 0); ++p) {
      report.poisoned_indices.push_back(keep.size() + p);
    }
    if (report.base == 0) report.poisoned = 0;
    out.malicious.push_back(std::move(report));
  }
  return out;
}

Dataset make_backdoor_testset(const Dataset& test, const BackdoorSpec& spec) {
  spec.validate(test.sample_shape(), test.num_classes);
  std::vector<std::size_t> source;
  for (std::size_t i = 0; i < test.size(); ++i) {
    if (test.labels[i] == spec.source_class) source.push_back(i);
  }
  if (source.empty()) {
    throw DataError(fmt::format("test set has no samples of source class {}",
                                spec.source_class));
  }
  Dataset out = test.subset(source);
  const Shape sample_shape = out.sample_shape();
  for (std::size_t i = 0; i < out.size(); ++i) {
    apply_trigger(out.sample(i), sample_shape, spec.trigger);
    out.labels[i] = spec.target_class;
  }
  return out;
}

}  // namespace fedprobe::data
