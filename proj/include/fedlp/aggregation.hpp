#pragma once

// Layer-wise weighted aggregation. For each layer l the server takes
//   sum_k (1[k kept l] * w_k / sum_m 1[m kept l] * w_m) * theta_k^l
// over the payloads it received. FedAvg is the case where every payload
// carries every layer. A layer nobody sent keeps its previous global value.

#include <algorithm>
#include <cmath>
#include <span>
#include <string>
#include <vector>

#include "client.hpp"
#include "errors.hpp"
#include "model.hpp"
#include "pruning.hpp"

namespace fedlp {

struct AggregationWeights {
  std::vector<double> omega;  // indexed by client id

  static AggregationWeights uniform(std::size_t n) { return {std::vector<double>(n, 1.0)}; }

  /// omega_k = |D_k| / sum_m |D_m|.
  static AggregationWeights by_size(std::span<const std::size_t> sizes) {
    double total = 0.0;
    for (std::size_t s : sizes) total += static_cast<double>(s);
    AggregationWeights w;
    w.omega.reserve(sizes.size());
    for (std::size_t s : sizes) w.omega.push_back(total > 0.0 ? static_cast<double>(s) / total : 0.0);
    return w;
  }

  double at(std::size_t client) const {
    if (client >= omega.size())
      throw ContractError("no aggregation weight for client " + std::to_string(client));
    const double w = omega[client];
    if (!(w >= 0.0) || !std::isfinite(w))
      throw ContractError("aggregation weight of client " + std::to_string(client) + " is negative or non-finite");
    return w;
  }
};

struct GlobalModelState {
  LayeredModel model;
  std::size_t round = 0;
};

/// Per-layer contributor summary of one aggregation.
struct AggregationReport {
  std::vector<std::size_t> contributors;  // [l-1] -> number of payloads carrying layer l
  std::vector<bool> carried_over;         // [l-1] -> true when layer l kept its previous value
};

inline GlobalModelState aggregate_layerwise(std::span<const PrunedPayload> payloads,
                                            const AggregationWeights& weights, const GlobalModelState& current,
                                            AggregationReport* report = nullptr) {
  const std::size_t L = current.model.num_prunable();

  // Fixed client order makes the reduction independent of arrival order.
  std::vector<const PrunedPayload*> ordered;
  ordered.reserve(payloads.size());
  for (const auto& p : payloads) ordered.push_back(&p);
  std::stable_sort(ordered.begin(), ordered.end(),
                   [](const PrunedPayload* a, const PrunedPayload* b) { return a->source_client < b->source_client; });

  for (const auto* p : ordered) {
    weights.at(p->source_client);
    for (const auto& [l, params] : p->layers) {
      if (l < 1 || l > L)
        throw ShapeError("client " + std::to_string(p->source_client) + " uploaded unknown layer " +
                         std::to_string(l));
      if (!params.same_shape(current.model.layer(l)))
        throw ShapeError("client " + std::to_string(p->source_client) + " layer " + std::to_string(l) +
                         ": shape does not match the global model");
    }
  }

  GlobalModelState next{current.model, current.round + 1};
  if (report) {
    report->contributors.assign(L, 0);
    report->carried_over.assign(L, false);
  }

  std::vector<const LayerParams*> sources;
  std::vector<double> omegas;
  for (std::size_t l = 1; l <= L; ++l) {
    sources.clear();
    omegas.clear();
    double denom = 0.0;
    for (const auto* p : ordered) {
      const auto it = p->layers.find(l);
      if (it == p->layers.end()) continue;
      sources.push_back(&it->second);
      omegas.push_back(weights.at(p->source_client));
      denom += omegas.back();
    }
    if (report) report->contributors[l - 1] = sources.size();
    if (sources.empty() || denom == 0.0) {
      if (report) report->carried_over[l - 1] = true;
      continue;
    }

    // Summed as offsets from the first contributor: algebraically the same
    // weighted mean, but identical inputs come back bit-exact.
    LayerParams merged = *sources.front();
    auto w = merged.weights.values();
    const auto w0 = sources.front()->weights.values();
    const auto& b0 = sources.front()->bias;
    for (std::size_t s = 1; s < sources.size(); ++s) {
      const double coeff = omegas[s] / denom;
      const auto sw = sources[s]->weights.values();
      for (std::size_t i = 0; i < w.size(); ++i) w[i] += coeff * (sw[i] - w0[i]);
      for (std::size_t i = 0; i < merged.bias.size(); ++i) merged.bias[i] += coeff * (sources[s]->bias[i] - b0[i]);
    }
    next.model.set_layer(l, merged);
  }
  return next;
}

/// Plain weighted averaging of full models; weights[k] belongs to models[k].
/// Runs through aggregate_layerwise with all-ones masks.
inline GlobalModelState fedavg_aggregate(std::span<const LayeredModel> models, const AggregationWeights& weights,
                                         const GlobalModelState& current) {
  std::vector<PrunedPayload> payloads;
  payloads.reserve(models.size());
  for (std::size_t k = 0; k < models.size(); ++k)
    payloads.push_back(prune_model(models[k], LayerMask::ones(models[k].num_prunable()), k, current.round + 1));
  return aggregate_layerwise(payloads, weights, current);
}

/// Overwrites a client's shared layers with the global model and returns the
/// number of parameters downloaded. Homogeneous clients take the whole model;
/// heterogeneous clients take layers 1..L_k and keep their personal head.
inline std::uint64_t distribute(const GlobalModelState& global, ClientState& client) {
  if (!client.hetero()) {
    client.model = global.model;
    return param_count(global.model);
  }
  const std::size_t lk = client.shared_layers();
  std::uint64_t downloaded = 0;
  for (std::size_t l = 1; l <= lk; ++l) {
    const auto& src = global.model.layer(l);
    client.model.set_layer(l, src);
    downloaded += src.count();
  }
  return downloaded;
}

}  // namespace fedlp
