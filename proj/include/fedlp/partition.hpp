#pragma once

// Client data partitioners: iid, label-sorted shards with a uniform mix-in,
// and per-class Dirichlet proportions.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <numeric>
#include <string>
#include <vector>

#include "data.hpp"
#include "errors.hpp"
#include "rng.hpp"

namespace fedlp {

enum class PartitionScheme { iid, mixed_shard, dirichlet };

struct PartitionSpec {
  PartitionScheme scheme = PartitionScheme::iid;
  std::size_t num_clients = 1;
  std::size_t shard_size = 0;         // mixed_shard
  std::size_t shards_per_client = 0;  // mixed_shard
  double uniform_fraction = 0.0;      // mixed_shard
  double alpha = 1.0;                 // dirichlet
  std::uint64_t seed = 0;
};

struct Partition {
  std::vector<std::vector<std::size_t>> assignments;

  std::size_t num_clients() const noexcept { return assignments.size(); }
  std::size_t total() const noexcept {
    std::size_t n = 0;
    for (const auto& a : assignments) n += a.size();
    return n;
  }

  /// Pairwise disjoint, duplicate-free, and every index < dataset_size.
  bool valid(std::size_t dataset_size) const {
    std::vector<char> seen(dataset_size, 0);
    for (const auto& a : assignments)
      for (std::size_t i : a) {
        if (i >= dataset_size || seen[i]) return false;
        seen[i] = 1;
      }
    return true;
  }

  friend bool operator==(const Partition&, const Partition&) = default;
};

/// Random permutation cut into N parts whose sizes differ by at most one.
inline Partition partition_iid(const Dataset& ds, std::size_t num_clients, std::uint64_t seed) {
  if (num_clients == 0) throw ContractError("partition_iid: zero clients");
  if (num_clients > ds.size()) throw ContractError("partition_iid: more clients than samples");
  std::vector<std::size_t> order(ds.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  auto rng = make_stream(seed, Purpose::partition);
  rng.shuffle(order.begin(), order.end());

  Partition p;
  p.assignments.resize(num_clients);
  const std::size_t base = ds.size() / num_clients;
  const std::size_t extra = ds.size() % num_clients;
  std::size_t pos = 0;
  for (std::size_t k = 0; k < num_clients; ++k) {
    const std::size_t len = base + (k < extra ? 1 : 0);
    p.assignments[k].assign(order.begin() + static_cast<std::ptrdiff_t>(pos),
                            order.begin() + static_cast<std::ptrdiff_t>(pos + len));
    pos += len;
  }
  return p;
}

/// Mixed non-iid shards. Each shard holds round(uniform_fraction*shard_size)
/// samples drawn round-robin across classes plus a contiguous run of the
/// label-sorted remainder. Shards are dealt at random, shards_per_client
/// each; samples not needed by any shard stay unassigned.
inline Partition partition_shards(const Dataset& ds, std::size_t num_clients, std::size_t shard_size,
                                  std::size_t shards_per_client, double uniform_fraction, std::uint64_t seed) {
  if (num_clients == 0 || shard_size == 0 || shards_per_client == 0)
    throw ContractError("partition_shards: counts must be positive");
  if (!(uniform_fraction >= 0.0 && uniform_fraction <= 1.0))
    throw ContractError("partition_shards: uniform_fraction outside [0, 1]");
  const std::size_t num_shards = num_clients * shards_per_client;
  if (num_shards * shard_size > ds.size())
    throw ContractError("partition_shards: insufficient samples, need " + std::to_string(num_shards * shard_size) +
                        " have " + std::to_string(ds.size()));

  auto rng = make_stream(seed, Purpose::partition);
  const std::size_t uniform_part = static_cast<std::size_t>(std::lround(uniform_fraction * shard_size));
  const std::size_t sorted_part = shard_size - uniform_part;

  // Per-class pools in random order.
  std::vector<std::vector<std::size_t>> pools(ds.num_classes);
  for (std::size_t i = 0; i < ds.size(); ++i) pools[ds.labels[i]].push_back(i);
  for (auto& pool : pools) rng.shuffle(pool.begin(), pool.end());

  std::vector<std::vector<std::size_t>> shards(num_shards);
  std::vector<std::size_t> class_order(ds.num_classes);
  std::iota(class_order.begin(), class_order.end(), std::size_t{0});
  for (auto& shard : shards) {
    rng.shuffle(class_order.begin(), class_order.end());
    std::size_t c = 0;
    std::size_t dry = 0;
    while (shard.size() < uniform_part && dry < ds.num_classes) {
      auto& pool = pools[class_order[c]];
      if (pool.empty()) {
        ++dry;
      } else {
        dry = 0;
        shard.push_back(pool.back());
        pool.pop_back();
      }
      c = (c + 1) % ds.num_classes;
    }
  }

  std::vector<std::size_t> sorted;
  for (const auto& pool : pools) sorted.insert(sorted.end(), pool.begin(), pool.end());
  std::size_t pos = 0;
  for (auto& shard : shards) {
    const std::size_t take = std::min(sorted_part + (uniform_part - shard.size()), sorted.size() - pos);
    shard.insert(shard.end(), sorted.begin() + static_cast<std::ptrdiff_t>(pos),
                 sorted.begin() + static_cast<std::ptrdiff_t>(pos + take));
    pos += take;
  }

  std::vector<std::size_t> deal(num_shards);
  std::iota(deal.begin(), deal.end(), std::size_t{0});
  rng.shuffle(deal.begin(), deal.end());
  Partition p;
  p.assignments.resize(num_clients);
  for (std::size_t k = 0; k < num_clients; ++k)
    for (std::size_t s = 0; s < shards_per_client; ++s) {
      const auto& shard = shards[deal[k * shards_per_client + s]];
      p.assignments[k].insert(p.assignments[k].end(), shard.begin(), shard.end());
    }
  return p;
}

/// Splits `total` into parts proportional to `weights` (which sum to 1),
/// rounding by largest remainder; ties go to the lower index.
inline std::vector<std::size_t> largest_remainder(std::size_t total, std::span<const double> weights) {
  std::vector<std::size_t> counts(weights.size());
  std::vector<double> rem(weights.size());
  std::size_t assigned = 0;
  for (std::size_t k = 0; k < weights.size(); ++k) {
    const double exact = weights[k] * static_cast<double>(total);
    counts[k] = static_cast<std::size_t>(std::floor(exact));
    rem[k] = exact - static_cast<double>(counts[k]);
    assigned += counts[k];
  }
  // Floating error can push the floor sum past total by a unit; trim from the smallest remainders.
  std::vector<std::size_t> order(weights.size());
  std::iota(order.begin(), order.end(), std::size_t{0});
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return rem[a] > rem[b]; });
  for (std::size_t i = 0; assigned < total; i = (i + 1) % order.size(), ++assigned) ++counts[order[i]];
  for (std::size_t i = order.size(); assigned > total; ) {
    i = (i == 0 ? order.size() : i) - 1;
    if (counts[order[i]] > 0) {
      --counts[order[i]];
      --assigned;
    }
  }
  return counts;
}

/// Dirichlet draw with every concentration equal to alpha, computed from
/// log-gamma variates so small alpha stays normalized.
inline std::vector<double> draw_dirichlet(std::size_t n, double alpha, Rng& rng) {
  std::vector<double> logs(n);
  for (double& v : logs) v = rng.log_gamma_variate(alpha);
  const double top = *std::max_element(logs.begin(), logs.end());
  std::vector<double> p(n);
  double sum = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    p[i] = std::exp(logs[i] - top);
    sum += p[i];
  }
  for (double& v : p) v /= sum;
  return p;
}

/// For each class, client shares ~ Dirichlet(alpha * 1_N); class samples are
/// shuffled and cut by largest-remainder counts. Client volumes differ.
inline Partition partition_dirichlet(const Dataset& ds, std::size_t num_clients, double alpha, std::uint64_t seed) {
  if (num_clients == 0) throw ContractError("partition_dirichlet: zero clients");
  if (!(alpha > 0.0) || !std::isfinite(alpha)) throw ContractError("partition_dirichlet: alpha must be > 0");
  auto rng = make_stream(seed, Purpose::partition);
  Partition p;
  p.assignments.resize(num_clients);
  for (std::size_t c = 0; c < ds.num_classes; ++c) {
    std::vector<std::size_t> members;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (ds.labels[i] == c) members.push_back(i);
    rng.shuffle(members.begin(), members.end());
    const auto shares = draw_dirichlet(num_clients, alpha, rng);
    const auto counts = largest_remainder(members.size(), shares);
    std::size_t pos = 0;
    for (std::size_t k = 0; k < num_clients; ++k) {
      p.assignments[k].insert(p.assignments[k].end(), members.begin() + static_cast<std::ptrdiff_t>(pos),
                              members.begin() + static_cast<std::ptrdiff_t>(pos + counts[k]));
      pos += counts[k];
    }
  }
  return p;
}

inline Partition make_partition(const Dataset& ds, const PartitionSpec& spec) {
  switch (spec.scheme) {
    case PartitionScheme::iid:
      return partition_iid(ds, spec.num_clients, spec.seed);
    case PartitionScheme::mixed_shard:
      return partition_shards(ds, spec.num_clients, spec.shard_size, spec.shards_per_client, spec.uniform_fraction,
                              spec.seed);
    case PartitionScheme::dirichlet:
      return partition_dirichlet(ds, spec.num_clients, spec.alpha, spec.seed);
  }
  throw ContractError("make_partition: unknown scheme");
}

}  // namespace fedlp
