#pragma once

// The federated round loop.
//
// Each round: pick K participants, train them locally, build their uploads
// (all layers for FedAvg, a Bernoulli layer mask for homogeneous FedLP,
// layers 1..L_k for heterogeneous FedLP), aggregate layer by layer, then
// broadcast the new global model to every client. Every random choice comes
// from a stream keyed by (master seed, purpose, client, round), so serial and
// parallel execution give bit-identical results.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <thread>
#include <vector>

#include "aggregation.hpp"
#include "client.hpp"
#include "data.hpp"
#include "errors.hpp"
#include "metrics.hpp"
#include "model.hpp"
#include "partition.hpp"
#include "pruning.hpp"
#include "rng.hpp"

namespace fedlp {

enum class Scheme { fedavg, fedlp_homo, fedlp_hetero };
enum class WeightMode { dataset_size, uniform };

struct ExperimentConfig {
  std::size_t num_clients = 20;
  double participation_rate = 0.25;
  std::size_t local_epochs = 5;
  std::size_t batch_size = 32;
  double lr = 0.05;
  std::size_t max_global_epochs = 50;
  Scheme scheme = Scheme::fedavg;
  std::vector<double> lpr{1.0};          // one value for every layer, or one per layer
  std::vector<double> lc_distribution;   // hetero: P(L_k = l), l = 1..L
  WeightMode weights = WeightMode::dataset_size;
  PartitionSpec partition;               // num_clients and seed are filled from this config
  std::vector<std::size_t> hidden{64, 64, 64, 32};
  std::size_t eval_every = 1;
  std::uint64_t master_seed = 0;
  unsigned workers = 1;
  bool timing = false;

  std::size_t num_layers() const noexcept { return hidden.size() + 1; }

  /// K = round-half-up(rate * N), at least 1.
  std::size_t participants_per_round() const noexcept {
    const auto k = static_cast<std::size_t>(std::floor(participation_rate * static_cast<double>(num_clients) + 0.5));
    return std::max<std::size_t>(1, std::min(k, num_clients));
  }

  LprConfig lpr_config() const {
    if (lpr.size() == 1) return LprConfig::uniform(num_layers(), lpr.front());
    return {lpr};
  }

  PartitionSpec resolved_partition() const {
    PartitionSpec p = partition;
    p.num_clients = num_clients;
    p.seed = derive_seed(master_seed, Purpose::partition);
    return p;
  }

  /// Every violation, not just the first.
  std::vector<std::string> validate() const {
    std::vector<std::string> errs;
    if (num_clients < 1) errs.emplace_back("num_clients must be >= 1");
    if (!(participation_rate > 0.0 && participation_rate <= 1.0))
      errs.emplace_back("participation_rate must be in (0, 1]");
    if (max_global_epochs < 1) errs.emplace_back("max_global_epochs must be >= 1");
    if (batch_size < 1) errs.emplace_back("batch_size must be >= 1");
    if (!(lr >= 0.0) || !std::isfinite(lr)) errs.emplace_back("lr must be finite and >= 0");
    if (eval_every < 1) errs.emplace_back("eval_every must be >= 1");
    if (workers < 1) errs.emplace_back("workers must be >= 1");
    for (std::size_t w : hidden)
      if (w == 0) errs.emplace_back("hidden widths must be positive");
    if (scheme == Scheme::fedlp_homo) {
      if (lpr.size() != 1 && lpr.size() != num_layers())
        errs.push_back("lpr needs 1 or " + std::to_string(num_layers()) + " values, got " +
                       std::to_string(lpr.size()));
      for (double p : lpr)
        if (!(p >= 0.0 && p <= 1.0)) errs.emplace_back("lpr values must be in [0, 1]");
    }
    if (scheme == Scheme::fedlp_hetero && lc_distribution.empty()) {
      errs.emplace_back("lc_distribution is required for scheme fedlp_hetero");
    } else if (scheme == Scheme::fedlp_hetero) {
      try {
        validate_lc_distribution(lc_distribution, num_layers());
      } catch (const ContractError& e) {
        errs.emplace_back(e.what());
      }
    }
    switch (partition.scheme) {
      case PartitionScheme::iid:
        break;
      case PartitionScheme::mixed_shard:
        if (partition.shard_size < 1) errs.emplace_back("shard_size must be >= 1");
        if (partition.shards_per_client < 1) errs.emplace_back("shards_per_client must be >= 1");
        if (!(partition.uniform_fraction >= 0.0 && partition.uniform_fraction <= 1.0))
          errs.emplace_back("uniform_fraction must be in [0, 1]");
        break;
      case PartitionScheme::dirichlet:
        if (!(partition.alpha > 0.0) || !std::isfinite(partition.alpha)) errs.emplace_back("alpha must be > 0");
        break;
    }
    return errs;
  }

  /// Checks that need the data: client count vs samples, shard budget.
  std::vector<std::string> validate_against(const Dataset& train, const Dataset& test) const {
    std::vector<std::string> errs;
    if (train.size() == 0) errs.emplace_back("training set is empty");
    if (test.size() == 0) errs.emplace_back("test set is empty");
    if (train.dim() != test.dim()) errs.emplace_back("train and test feature dimensions differ");
    if (partition.scheme == PartitionScheme::iid && num_clients > train.size())
      errs.push_back("num_clients (" + std::to_string(num_clients) + ") exceeds training samples (" +
                     std::to_string(train.size()) + ")");
    if (partition.scheme == PartitionScheme::mixed_shard &&
        num_clients * partition.shards_per_client * partition.shard_size > train.size())
      errs.push_back("shards need " + std::to_string(num_clients * partition.shards_per_client * partition.shard_size) +
                     " samples, training set has " + std::to_string(train.size()));
    return errs;
  }
};

/// Uniform sample of K distinct client ids out of N, returned sorted.
inline std::vector<std::size_t> select_participants(std::size_t N, std::size_t K, Rng& rng) {
  if (K < 1 || K > N) throw ContractError("select_participants: need 1 <= K <= N");
  std::vector<std::size_t> ids(N);
  for (std::size_t i = 0; i < N; ++i) ids[i] = i;
  for (std::size_t i = 0; i < K; ++i) std::swap(ids[i], ids[i + rng.below(N - i)]);
  ids.resize(K);
  std::sort(ids.begin(), ids.end());
  return ids;
}

struct LocalTrainResult {
  std::size_t samples = 0;
  std::uint64_t flops = 0;  // forward FLOPs * samples * 3
  bool skipped = false;
};

/// Mini-batch SGD over the client's shard for `epochs` passes.
inline LocalTrainResult local_train(ClientState& client, const Dataset& train, std::size_t epochs,
                                    std::size_t batch_size, double lr, Rng& rng) {
  LocalTrainResult result;
  if (client.data_indices.empty()) {
    result.skipped = true;
    return result;
  }
  std::vector<std::size_t> order = client.data_indices;
  std::vector<std::size_t> labels;
  for (std::size_t e = 0; e < epochs; ++e) {
    rng.shuffle(order.begin(), order.end());
    for (std::size_t start = 0; start < order.size(); start += batch_size) {
      const std::size_t end = std::min(order.size(), start + batch_size);
      const std::span<const std::size_t> idx(order.data() + start, end - start);
      Matrix batch(idx.size(), train.dim());
      labels.resize(idx.size());
      for (std::size_t r = 0; r < idx.size(); ++r) {
        const auto src = train.features.row(idx[r]);
        std::copy(src.begin(), src.end(), batch.row(r).begin());
        labels[r] = train.labels[idx[r]];
      }
      const auto fwd = forward(client.model, batch);
      const auto grads = backward(client.model, fwd.cache, labels);
      sgd_step(client.model, grads, lr);
      result.samples += idx.size();
    }
  }
  result.flops = flops_count(client.model) * result.samples * 3;
  return result;
}

inline double accuracy(const LayeredModel& model, const Dataset& data) {
  if (data.size() == 0) return 0.0;
  const auto pred = predict(model, data.features);
  std::size_t hit = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) hit += pred[i] == data.labels[i] ? 1 : 0;
  return static_cast<double>(hit) / static_cast<double>(data.size());
}

/// What happened in the most recent round, for inspection and assertions.
struct RoundTrace {
  std::size_t round = 0;
  std::vector<std::size_t> participants;
  std::vector<std::size_t> skipped;        // participants with an empty shard
  std::vector<PrunedPayload> payloads;
  std::vector<LayerMask> masks;            // parallel to payloads
  AggregationReport aggregation;
};

using MaskHook = std::function<void(std::size_t round, std::size_t client, LayerMask& mask)>;

class Simulation {
 public:
  Simulation(ExperimentConfig config, Dataset train, Dataset test)
      : config_(std::move(config)), train_(std::move(train)), test_(std::move(test)) {
    auto errs = config_.validate();
    const auto data_errs = config_.validate_against(train_, test_);
    errs.insert(errs.end(), data_errs.begin(), data_errs.end());
    if (!errs.empty()) throw ConfigError(std::move(errs));

    std::vector<std::size_t> widths{train_.dim()};
    widths.insert(widths.end(), config_.hidden.begin(), config_.hidden.end());
    widths.push_back(train_.num_classes);
    auto init_rng = make_stream(config_.master_seed, Purpose::model_init);
    global_.model = make_mlp(widths, init_rng);

    const auto partition = make_partition(train_, config_.resolved_partition());
    const std::size_t L = global_.model.num_prunable();
    std::vector<HeteroAssignment> hetero;
    if (config_.scheme == Scheme::fedlp_hetero) {
      auto rng = make_stream(config_.master_seed, Purpose::hetero_assign);
      hetero = assign_hetero(config_.lc_distribution, config_.num_clients, L, rng);
    }
    clients_.resize(config_.num_clients);
    std::vector<std::size_t> sizes(config_.num_clients);
    for (std::size_t k = 0; k < config_.num_clients; ++k) {
      auto& c = clients_[k];
      c.id = k;
      c.data_indices = partition.assignments[k];
      sizes[k] = c.data_indices.size();
      if (config_.scheme == Scheme::fedlp_hetero) {
        auto head_rng = make_stream(config_.master_seed, Purpose::head_init, k);
        c.model = build_hetero_model(global_.model, hetero[k], head_rng);
        c.scheme_state = hetero[k];
      } else {
        c.model = global_.model;
        c.scheme_state = config_.scheme == Scheme::fedlp_homo ? config_.lpr_config() : LprConfig::uniform(L, 1.0);
      }
    }
    weights_ = config_.weights == WeightMode::uniform ? AggregationWeights::uniform(config_.num_clients)
                                                      : AggregationWeights::by_size(sizes);
  }

  void set_mask_hook(MaskHook hook) { mask_hook_ = std::move(hook); }

  const ExperimentConfig& config() const noexcept { return config_; }
  const GlobalModelState& global() const noexcept { return global_; }
  const std::vector<ClientState>& clients() const noexcept { return clients_; }
  const Dataset& train() const noexcept { return train_; }
  const Dataset& test() const noexcept { return test_; }
  const RoundTrace& last_trace() const noexcept { return trace_; }
  const CommLedger& comm() const noexcept { return ledger_; }
  const AggregationWeights& weights() const noexcept { return weights_; }
  bool finished() const noexcept { return global_.round >= config_.max_global_epochs; }

  RoundMetrics run_round() {
    const auto started = std::chrono::steady_clock::now();
    const std::size_t t = global_.round + 1;
    const std::uint64_t seed = config_.master_seed;

    RoundTrace trace;
    trace.round = t;
    auto select_rng = make_stream(seed, Purpose::select, 0, t);
    trace.participants = select_participants(config_.num_clients, config_.participants_per_round(), select_rng);

    const std::size_t K = trace.participants.size();
    std::vector<LocalTrainResult> trained(K);
    std::vector<std::optional<PrunedPayload>> uploads(K);
    std::vector<LayerMask> masks(K);
    auto work = [&](std::size_t i) {
      auto& client = clients_[trace.participants[i]];
      auto shuffle_rng = make_stream(seed, Purpose::shuffle, client.id, t);
      trained[i] = local_train(client, train_, config_.local_epochs, config_.batch_size, config_.lr, shuffle_rng);
      if (trained[i].skipped) return;
      masks[i] = upload_mask(client, t);
      uploads[i] = prune_model(client.model, masks[i], client.id, t);
    };
    const unsigned workers = std::max(1u, config_.workers);
    if (workers == 1 || K == 1) {
      for (std::size_t i = 0; i < K; ++i) work(i);
    } else {
      std::vector<std::jthread> pool;
      for (unsigned w = 0; w < workers; ++w)
        pool.emplace_back([&, w] {
          for (std::size_t i = w; i < K; i += workers) work(i);
        });
    }

    RoundMetrics metrics;
    metrics.round = t;
    std::vector<std::size_t> layer_counts;
    for (std::size_t i = 0; i < K; ++i) {
      const auto& client = clients_[trace.participants[i]];
      if (trained[i].skipped) {
        trace.skipped.push_back(client.id);
        continue;
      }
      check_upload(client, *uploads[i]);
      trace.payloads.push_back(std::move(*uploads[i]));
      trace.masks.push_back(std::move(masks[i]));
      metrics.per_client_flops.push_back(trained[i].flops);
      layer_counts.push_back(client.shared_layers());
    }

    global_ = aggregate_layerwise(trace.payloads, weights_, global_, &trace.aggregation);

    const auto comm = comm_accounting(trace.payloads, global_.model, layer_counts);
    ledger_.record(comm, layer_counts.size());
    metrics.upload_params = comm.upload;
    metrics.download_params = comm.download;

    for (auto& client : clients_) distribute(global_, client);

    metrics.evaluated = t % config_.eval_every == 0 || t == config_.max_global_epochs;
    if (metrics.evaluated) {
      metrics.test_accuracy = accuracy(global_.model, test_);
      if (config_.scheme == Scheme::fedlp_hetero && !trace.participants.empty()) {
        double sum = 0.0;
        for (std::size_t id : trace.participants) sum += accuracy(clients_[id].model, test_);
        metrics.personal_accuracy = sum / static_cast<double>(trace.participants.size());
      }
    }
    if (config_.timing)
      metrics.wallclock = std::chrono::duration<double>(std::chrono::steady_clock::now() - started).count();
    trace_ = std::move(trace);
    return metrics;
  }

 private:
  LayerMask upload_mask(const ClientState& client, std::size_t t) const {
    const std::size_t L = client.model.num_prunable();
    LayerMask mask;
    switch (config_.scheme) {
      case Scheme::fedavg:
        mask = LayerMask::ones(L);
        break;
      case Scheme::fedlp_homo: {
        auto rng = make_stream(config_.master_seed, Purpose::mask, client.id, t);
        mask = draw_mask(std::get<LprConfig>(client.scheme_state), rng);
        break;
      }
      case Scheme::fedlp_hetero:
        mask = LayerMask::ones(L);
        break;
    }
    if (mask_hook_ && config_.scheme != Scheme::fedlp_hetero) mask_hook_(t, client.id, mask);
    return mask;
  }

  // Uploads carry shared layers only, each shaped like the global layer.
  void check_upload(const ClientState& client, const PrunedPayload& payload) const {
    const std::size_t lk = client.shared_layers();
    for (const auto& [l, params] : payload.layers) {
      if (l < 1 || l > lk || !params.same_shape(global_.model.layer(l)))
        throw ContractError("client " + std::to_string(client.id) + " built an upload with foreign layer " +
                            std::to_string(l));
    }
  }

  ExperimentConfig config_;
  Dataset train_;
  Dataset test_;
  GlobalModelState global_;
  std::vector<ClientState> clients_;
  AggregationWeights weights_;
  CommLedger ledger_;
  RoundTrace trace_;
  MaskHook mask_hook_;
};

struct ExperimentResult {
  std::vector<RoundMetrics> rounds;
  GlobalModelState final_state;
  CommLedger comm;
};

/// Runs max_global_epochs rounds. `on_round` sees the simulation after each round.
inline ExperimentResult run_experiment(const ExperimentConfig& config, Dataset train, Dataset test,
                                       const std::function<void(const Simulation&, const RoundMetrics&)>& on_round = {}) {
  Simulation sim(config, std::move(train), std::move(test));
  ExperimentResult result;
  result.rounds.reserve(config.max_global_epochs);
  while (!sim.finished()) {
    result.rounds.push_back(sim.run_round());
    if (on_round) on_round(sim, result.rounds.back());
  }
  result.final_state = sim.global();
  result.comm = sim.comm();
  return result;
}

}  // namespace fedlp
