#pragma once

#include <cstddef>
#include <cstdint>
#include <span>
#include <vector>

#include "fedprobe/dataset.hpp"

namespace fedprobe::data {

/// Rectangle stamped onto every channel of an image.
struct TriggerPatch {
  std::size_t row = 0;
  std::size_t col = 0;
  std::size_t height = 3;
  std::size_t width = 3;
  double value = 1.0;
};

struct Rate {
  std::uint64_t num = 1;
  std::uint64_t den = 3;

  double value() const noexcept {
    return static_cast<double>(num) / static_cast<double>(den);
  }
  bool operator==(const Rate&) const = default;
};

struct BackdoorSpec {
  std::size_t source_class = 1;  // automobile
  std::size_t target_class = 2;  // bird
  TriggerPatch trigger;
  /// poisoned / (poisoned + clean) for a single malicious client.
  Rate malicious_rate{1, 3};
  std::size_t num_malicious_clients = 1;
  /// Fraction of all client-held source-class samples that carry the trigger.
  double trigger_fraction = 0.5;
  std::uint64_t seed = 0;

  void validate(const Shape& sample_shape, std::size_t num_classes) const;
};

/// Writes the patch into one [channels, height, width] sample.
void apply_trigger(std::span<double> sample, const Shape& sample_shape,
                   const TriggerPatch& patch);

/// Per-client target when `count` malicious clients share the attack:
/// malicious_rate / count.
Rate per_client_rate(const Rate& rate, std::size_t count);

struct ClientPoisoning {
  std::size_t client_id = 0;
  std::size_t clean = 0;
  std::size_t base = 0;      // distinct triggered samples used
  std::size_t poisoned = 0;  // base plus copies
  Rate target_rate;
  std::vector<std::size_t> poisoned_indices;  // positions in the new dataset

  double achieved_rate() const noexcept {
    const std::size_t total = clean + poisoned;
    return total == 0 ? 0.0
                      : static_cast<double>(poisoned) / static_cast<double>(total);
  }
};

struct Injection {
  std::vector<Dataset> clients;
  std::vector<ClientPoisoning> malicious;  // ascending client id
  std::size_t pool_size = 0;               // distinct trigger-bearing samples
};

/// Label-flip backdoor.
///
/// The trigger subpopulation is a seeded trigger_fraction of the source-class
/// samples held by all clients; it is the same set whatever the number of
/// malicious clients. Those samples leave their holders, get the patch and the
/// target label, and are dealt round-robin to the malicious clients. Each
/// malicious client then copies its share cyclically until
/// poisoned / (poisoned + clean) is within one sample of
/// malicious_rate / number of malicious clients; it uses only a prefix of its
/// share when the rate needs fewer. At rate 1 its clean samples are dropped
/// and its share is copied up to its original size. Other samples keep their
/// order; a malicious client lists clean samples first, then poisoned ones.
///
/// trigger_fraction == 0 returns the input unchanged.
Injection inject_backdoor(std::span<const Dataset> clients,
                          const BackdoorSpec& spec,
                          std::span<const std::size_t> malicious_ids);

/// Every source-class test sample, triggered and relabelled to the target.
Dataset make_backdoor_testset(const Dataset& test, const BackdoorSpec& spec);

}  // namespace fedprobe::data
