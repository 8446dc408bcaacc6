#include "fedprobe/fl/engine.hpp"

#include <algorithm>
#include <future>
#include <map>
#include <stdexcept>

#include <fmt/format.h>

#include "fedprobe/error.hpp"
#include "fedprobe/seed.hpp"

namespace fedprobe::fl {
namespace {

constexpr std::size_t kEvalChunk = 256;

}  // namespace

void FLConfig::validate() const {
  if (num_clients == 0) throw std::invalid_argument("num_clients must be >= 1");
  if (local_epochs == 0) throw std::invalid_argument("local_epochs must be >= 1");
  for (std::size_t id : malicious_ids) {
    if (id >= num_clients) {
      throw std::invalid_argument(fmt::format(
          "malicious client {} is outside 0..{}", id, num_clients - 1));
    }
  }
  auto sorted = malicious_ids;
  std::sort(sorted.begin(), sorted.end());
  if (std::adjacent_find(sorted.begin(), sorted.end()) != sorted.end()) {
    throw std::invalid_argument("duplicate malicious client id");
  }
  nn::validate_architecture(architecture);
  nn::Hyperparams h = hyper;
  h.epochs = 1;
  h.validate();
}

ClientState make_client(std::size_t id, Dataset data, std::uint64_t global_seed) {
  return {id, std::move(data), derive_seed(global_seed, Stream::kClientShuffle, id)};
}

nn::ModelParams init_server_model(const FLConfig& config, const Dataset& server) {
  if (server.empty()) throw DataError("server dataset is empty");
  nn::ModelParams model = nn::init_params(
      config.architecture, server.sample_shape(),
      derive_seed(config.seed(), Stream::kInit));
  if (config.server_init_epochs == 0) return model;
  nn::Hyperparams h = config.hyper;
  h.epochs = config.server_init_epochs;
  h.seed = derive_seed(config.seed(), Stream::kServerShuffle);
  return nn::train_epochs(model, config.architecture, server, h).model;
}

nn::ModelParams run_local_training(const nn::ModelParams& joint,
                                   const ClientState& client,
                                   const FLConfig& config,
                                   std::size_t round_index) {
  nn::Hyperparams h = config.hyper;
  h.epochs = config.local_epochs;
  h.seed = mix64(client.stream_seed ^ mix64(round_index));
  return nn::train_epochs(joint, config.architecture, client.data, h).model;
}

nn::ModelParams fedavg_aggregate(std::span<const nn::ModelParams> updates) {
  if (updates.empty()) throw std::invalid_argument("fedavg over zero updates");
  nn::ModelParams mean = updates.front();
  for (std::size_t k = 1; k < updates.size(); ++k) {
    if (!updates[k].same_shape(mean)) {
      throw ShapeError(fmt::format("update {} does not match update 0's shapes", k));
    }
    const double weight = 1.0 / static_cast<double>(k + 1);
    for (std::size_t l = 0; l < mean.layers.size(); ++l) {
      for (auto [acc, next] :
           {std::pair{&mean.layers[l].weights, &updates[k].layers[l].weights},
            std::pair{&mean.layers[l].bias, &updates[k].layers[l].bias}}) {
        auto m = acc->data();
        const auto u = next->data();
        for (std::size_t i = 0; i < m.size(); ++i) m[i] += (u[i] - m[i]) * weight;
      }
    }
  }
  return mean;
}

Evaluation evaluate(const nn::ModelParams& model, const nn::Architecture& arch,
                    nn::LossKind loss, const Dataset& clean,
                    const Dataset& backdoor) {
  const auto score = [&](const Dataset& set, double& mean_loss, double& accuracy) {
    if (set.empty()) throw DataError("evaluation on an empty test set");
    double loss_sum = 0.0;
    std::size_t correct = 0;
    std::vector<std::size_t> idx;
    for (std::size_t start = 0; start < set.size(); start += kEvalChunk) {
      const std::size_t stop = std::min(set.size(), start + kEvalChunk);
      idx.resize(stop - start);
      for (std::size_t i = start; i < stop; ++i) idx[i - start] = i;
      const auto out = nn::forward(model, arch, set.batch_images(idx)).output;
      const std::size_t classes = out.size() / idx.size();
      std::vector<std::size_t> labels(set.labels.begin() + start,
                                      set.labels.begin() + stop);
      loss_sum += nn::compute_loss(out, one_hot(labels, classes), loss) *
                  static_cast<double>(idx.size());
      for (std::size_t s = 0; s < idx.size(); ++s) {
        if (nn::argmax_row(out.data().subspan(s * classes, classes)) == labels[s]) {
          ++correct;
        }
      }
    }
    mean_loss = loss_sum / static_cast<double>(set.size());
    accuracy = static_cast<double>(correct) / static_cast<double>(set.size());
  };
  Evaluation e;
  score(clean, e.main_loss, e.main_accuracy);
  score(backdoor, e.backdoor_loss, e.backdoor_accuracy);
  return e;
}

RoundOutcome run_round(const nn::ModelParams& joint,
                       std::span<const ClientState> clients,
                       const FLConfig& config, std::size_t round_index,
                       const EvalSets& eval) {
  if (clients.empty()) throw std::invalid_argument("a round needs clients");
  std::vector<const ClientState*> order;
  for (const auto& c : clients) order.push_back(&c);
  std::sort(order.begin(), order.end(),
            [](const ClientState* a, const ClientState* b) { return a->id < b->id; });

  std::vector<nn::ModelParams> updates(order.size());
  if (config.parallel_clients && order.size() > 1) {
    std::vector<std::future<nn::ModelParams>> pending;
    for (const ClientState* c : order) {
      pending.push_back(std::async(std::launch::async, [&, c] {
        return run_local_training(joint, *c, config, round_index);
      }));
    }
    for (std::size_t i = 0; i < pending.size(); ++i) updates[i] = pending[i].get();
  } else {
    for (std::size_t i = 0; i < order.size(); ++i) {
      updates[i] = run_local_training(joint, *order[i], config, round_index);
    }
  }

  std::map<std::size_t, nn::ModelParams> locals;
  for (std::size_t i = 0; i < order.size(); ++i) {
    if (!locals.emplace(order[i]->id, updates[i]).second) {
      throw std::invalid_argument(fmt::format("duplicate client id {}", order[i]->id));
    }
  }

  RoundOutcome out;
  out.record.round_index = round_index;
  out.record.deviations = anomaly::deviation_matrix(locals, joint);
  out.joint = fedavg_aggregate(updates);
  out.record.metrics = evaluate(out.joint, config.architecture,
                                config.hyper.loss, eval.clean, eval.backdoor);
  return out;
}

PreparedExperiment prepare_experiment(const FLConfig& config,
                                      const ExperimentData& data,
                                      const data::BackdoorSpec& backdoor) {
  config.validate();
  if (data.clients.size() != config.num_clients) {
    throw std::invalid_argument(fmt::format("config has {} clients, data has {}",
                                            config.num_clients, data.clients.size()));
  }
  PreparedExperiment prepared;
  data::BackdoorSpec spec = backdoor;
  spec.seed = derive_seed(config.seed(), Stream::kTrigger);
  if (config.malicious_ids.empty()) {
    prepared.injection.clients = data.clients;
  } else {
    spec.num_malicious_clients = config.malicious_ids.size();
    prepared.injection = data::inject_backdoor(data.clients, spec, config.malicious_ids);
  }
  for (std::size_t id = 0; id < config.num_clients; ++id) {
    prepared.clients.push_back(
        make_client(id, prepared.injection.clients[id], config.seed()));
  }
  prepared.eval.clean = data.test;
  prepared.eval.backdoor = data::make_backdoor_testset(data.test, spec);
  return prepared;
}

std::vector<RoundRecord> run_rounds(const FLConfig& config,
                                    const PreparedExperiment& prepared,
                                    nn::ModelParams joint,
                                    const RoundObserver& on_round) {
  std::vector<RoundRecord> records;
  records.reserve(config.rounds);
  for (std::size_t r = 1; r <= config.rounds; ++r) {
    auto outcome = run_round(joint, prepared.clients, config, r, prepared.eval);
    joint = std::move(outcome.joint);
    if (on_round) on_round(outcome.record);
    records.push_back(std::move(outcome.record));
  }
  return records;
}

std::vector<RoundRecord> run_experiment(const FLConfig& config,
                                        const ExperimentData& data,
                                        const data::BackdoorSpec& backdoor,
                                        const RoundObserver& on_round) {
  const auto prepared = prepare_experiment(config, data, backdoor);
  if (config.rounds == 0) return {};
  return run_rounds(config, prepared, init_server_model(config, data.server),
                    on_round);
}

}  // namespace fedprobe::fl
