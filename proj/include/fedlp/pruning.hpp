#pragma once

// Layer-preservation masks, heterogeneous sub-model assignment, and the
// pruned upload payloads built from them.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <map>
#include <numeric>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "model.hpp"
#include "rng.hpp"

namespace fedlp {

struct LayerMask {
  std::vector<std::uint8_t> bits;  // bits[l-1] is layer l

  static LayerMask ones(std::size_t L) { return {std::vector<std::uint8_t>(L, 1)}; }
  static LayerMask zeros(std::size_t L) { return {std::vector<std::uint8_t>(L, 0)}; }

  std::size_t size() const noexcept { return bits.size(); }
  bool keeps(std::size_t l) const { return bits.at(l - 1) != 0; }
  std::size_t kept() const noexcept { return static_cast<std::size_t>(std::count(bits.begin(), bits.end(), 1)); }

  friend bool operator==(const LayerMask&, const LayerMask&) = default;
};

/// Layer-preserving rates, one per prunable layer.
struct LprConfig {
  std::vector<double> rates;

  static LprConfig uniform(std::size_t L, double p) { return {std::vector<double>(L, p)}; }

  void validate() const {
    for (std::size_t i = 0; i < rates.size(); ++i)
      if (!(rates[i] >= 0.0 && rates[i] <= 1.0))
        throw ContractError("LPR for layer " + std::to_string(i + 1) + " outside [0, 1]");
  }
};

/// Independent Bernoulli(p_l) bit per layer.
inline LayerMask draw_mask(const LprConfig& lpr, Rng& rng) {
  LayerMask m;
  m.bits.reserve(lpr.rates.size());
  for (double p : lpr.rates) m.bits.push_back(rng.bernoulli(p) ? 1 : 0);
  return m;
}

struct HeteroAssignment {
  std::size_t layer_count = 0;  // L_k in 1..L
  bool has_personal_head = false;
  std::vector<double> lc_distribution;  // probabilities of L_k = 1..L
};

/// Point mass on layer count l.
inline std::vector<double> lc_point_mass(std::size_t L, std::size_t l) {
  std::vector<double> d(L, 0.0);
  d.at(l - 1) = 1.0;
  return d;
}

inline std::vector<double> lc_uniform(std::size_t L) { return std::vector<double>(L, 1.0 / static_cast<double>(L)); }

/// 0.6 on layer count l, the remaining 0.4 split evenly over the others.
inline std::vector<double> lc_peaked(std::size_t L, std::size_t l) {
  if (L == 1) return {1.0};
  std::vector<double> d(L, 0.4 / static_cast<double>(L - 1));
  d.at(l - 1) = 0.6;
  return d;
}

inline void validate_lc_distribution(std::span<const double> dist, std::size_t L) {
  if (dist.size() != L)
    throw ContractError("LC distribution has " + std::to_string(dist.size()) + " entries, model has " +
                        std::to_string(L) + " layers");
  double sum = 0.0;
  for (double v : dist) {
    if (!(v >= 0.0)) throw ContractError("LC distribution has a negative or NaN entry");
    sum += v;
  }
  if (std::abs(sum - 1.0) > 1e-9) throw ContractError("LC distribution sums to " + std::to_string(sum) + ", not 1");
}

/// One frozen layer count per client, drawn from lc_distribution.
inline std::vector<HeteroAssignment> assign_hetero(std::span<const double> lc_distribution, std::size_t num_clients,
                                                   std::size_t L, Rng& rng) {
  validate_lc_distribution(lc_distribution, L);
  std::vector<HeteroAssignment> out;
  out.reserve(num_clients);
  for (std::size_t k = 0; k < num_clients; ++k) {
    const double u = rng.uniform();
    double acc = 0.0;
    std::size_t lc = 0;
    for (std::size_t l = 0; l < L; ++l) {
      acc += lc_distribution[l];
      if (u < acc) {
        lc = l + 1;
        break;
      }
    }
    if (lc == 0) {  // u landed in the rounding slack above the last cumulative value
      for (std::size_t l = L; l > 0; --l)
        if (lc_distribution[l - 1] > 0.0) {
          lc = l;
          break;
        }
    }
    out.push_back({lc, lc < L, {lc_distribution.begin(), lc_distribution.end()}});
  }
  return out;
}

/// First L_k prunable layers of the template (with any activation-only blocks
/// that follow them), plus a fresh personal dense head mapping layer L_k's
/// output to num_classes logits when L_k < L.
inline LayeredModel build_hetero_model(const LayeredModel& global_template, const HeteroAssignment& assignment,
                                       Rng& head_rng) {
  const std::size_t L = global_template.num_prunable();
  if (assignment.layer_count < 1 || assignment.layer_count > L)
    throw ContractError("build_hetero_model: layer count " + std::to_string(assignment.layer_count) + " outside 1.." +
                        std::to_string(L));
  if (assignment.layer_count == L) return global_template;

  const auto& blocks = global_template.blocks();
  std::size_t end = global_template.block_of_layer(assignment.layer_count) + 1;
  while (end < blocks.size() && !blocks[end].parameterized() && blocks[end].activation != Activation::softmax_output)
    ++end;
  std::vector<LayerBlock> kept(blocks.begin(), blocks.begin() + static_cast<std::ptrdiff_t>(end));
  kept.push_back(make_dense(kept.back().fan_out(), global_template.output_dim(), Activation::softmax_output,
                            head_rng, /*personal=*/true));
  return LayeredModel(std::move(kept));
}

/// Snapshot of the layers a client uploads. Keys are 1-based layer indices.
struct PrunedPayload {
  std::map<std::size_t, LayerParams> layers;
  std::size_t source_client = 0;
  std::size_t round = 0;

  std::uint64_t param_count() const {
    std::uint64_t n = 0;
    for (const auto& [l, p] : layers) n += p.count();
    return n;
  }
};

inline PrunedPayload prune_model(const LayeredModel& model, const LayerMask& mask, std::size_t client = 0,
                                 std::size_t round = 0) {
  if (mask.size() != model.num_prunable())
    throw ContractError("prune_model: mask length " + std::to_string(mask.size()) + " != " +
                        std::to_string(model.num_prunable()) + " prunable layers");
  PrunedPayload payload;
  payload.source_client = client;
  payload.round = round;
  for (std::size_t l = 1; l <= mask.size(); ++l)
    if (mask.keeps(l)) payload.layers.emplace(l, model.layer(l));
  return payload;
}

/// Layers 1..L_k of a heterogeneous client's model. The personal head is not
/// a prunable layer and so can never be selected.
inline PrunedPayload prune_prefix(const LayeredModel& model, std::size_t layer_count, std::size_t client = 0,
                                  std::size_t round = 0) {
  LayerMask mask = LayerMask::zeros(model.num_prunable());
  for (std::size_t l = 1; l <= layer_count; ++l) mask.bits.at(l - 1) = 1;
  return prune_model(model, mask, client, round);
}

}  // namespace fedlp
