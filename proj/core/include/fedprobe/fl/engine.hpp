#pragma once

#include <cstddef>
#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "fedprobe/anomaly/deviation.hpp"
#include "fedprobe/data/backdoor.hpp"
#include "fedprobe/dataset.hpp"
#include "fedprobe/nn/network.hpp"

namespace fedprobe::fl {

struct FLConfig {
  std::size_t num_clients = 10;
  std::vector<std::size_t> malicious_ids;
  std::size_t rounds = 25;
  std::size_t local_epochs = 2;
  std::size_t server_init_epochs = 2;
  /// learning rate, batch size, loss, and the global seed. `epochs` is
  /// ignored: local_epochs and server_init_epochs apply instead.
  nn::Hyperparams hyper;
  nn::Architecture architecture;
  /// Train clients of a round on separate threads. Results do not depend on it.
  bool parallel_clients = false;

  void validate() const;
  std::uint64_t seed() const noexcept { return hyper.seed; }
};

struct ClientState {
  std::size_t id = 0;
  Dataset data;
  /// Base of the client's shuffle stream; round r trains with
  /// derive-from(stream_seed, r).
  std::uint64_t stream_seed = 0;
};

ClientState make_client(std::size_t id, Dataset data, std::uint64_t global_seed);

struct Evaluation {
  double main_loss = 0.0;
  double main_accuracy = 0.0;
  double backdoor_loss = 0.0;
  double backdoor_accuracy = 0.0;

  bool operator==(const Evaluation&) const = default;
};

struct EvalSets {
  Dataset clean;
  Dataset backdoor;  // triggered source-class samples labelled as the target
};

struct RoundRecord {
  std::size_t round_index = 0;  // 1-based
  anomaly::DeviationMatrix deviations;
  Evaluation metrics;

  bool operator==(const RoundRecord&) const = default;
};

/// Seeded initialization trained server_init_epochs on the server's data
/// (no training when server_init_epochs is 0).
nn::ModelParams init_server_model(const FLConfig& config, const Dataset& server);

/// train_epochs(joint, client data, local_epochs) with the client's stream for
/// this round.
nn::ModelParams run_local_training(const nn::ModelParams& joint,
                                   const ClientState& client,
                                   const FLConfig& config,
                                   std::size_t round_index);

/// Elementwise mean, accumulated in the given order as a running mean, so
/// identical updates average to themselves bit for bit.
nn::ModelParams fedavg_aggregate(std::span<const nn::ModelParams> updates);

/// Accuracy is the fraction of argmax predictions equal to the label; the
/// backdoor set's labels are the target class, so its accuracy is the attack
/// success rate.
Evaluation evaluate(const nn::ModelParams& model, const nn::Architecture& arch,
                    nn::LossKind loss, const Dataset& clean,
                    const Dataset& backdoor);

struct RoundOutcome {
  nn::ModelParams joint;
  RoundRecord record;
};

/// Every client trains from `joint`; deviations are measured against `joint`
/// (never the aggregate); the aggregate over all clients in ascending id order
/// becomes the new joint model, which is then evaluated.
RoundOutcome run_round(const nn::ModelParams& joint,
                       std::span<const ClientState> clients,
                       const FLConfig& config, std::size_t round_index,
                       const EvalSets& eval);

struct ExperimentData {
  Dataset server;
  std::vector<Dataset> clients;  // before poisoning
  Dataset test;
};

struct PreparedExperiment {
  std::vector<ClientState> clients;
  data::Injection injection;
  EvalSets eval;
};

/// Poisons the malicious clients (trigger stream of the global seed), builds
/// the backdoor test set, and seeds every client's stream.
PreparedExperiment prepare_experiment(const FLConfig& config,
                                      const ExperimentData& data,
                                      const data::BackdoorSpec& backdoor);

using RoundObserver = std::function<void(const RoundRecord&)>;

std::vector<RoundRecord> run_experiment(const FLConfig& config,
                                        const ExperimentData& data,
                                        const data::BackdoorSpec& backdoor,
                                        const RoundObserver& on_round = {});

/// Same, from an already prepared experiment and initial joint model.
std::vector<RoundRecord> run_rounds(const FLConfig& config,
                                    const PreparedExperiment& prepared,
                                    nn::ModelParams joint,
                                    const RoundObserver& on_round = {});

}  // namespace fedprobe::fl
