#pragma once

// Monte-Carlo check of the expected scale of a layer-wise pruned aggregate.
//
// K clients hold i.i.d. scalar gradients g_k; each keeps its layer with
// probability p. The pruned aggregate sum(z_k g_k) / sum(z_k) (0 when no
// client keeps the layer) has expectation [1 - (1-p)^K] times that of the
// plain mean. The verifier estimates the ratio and its standard error.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <thread>
#include <vector>

#include "errors.hpp"
#include "rng.hpp"

namespace fedlp {

enum class GradientLaw { exponential, normal, uniform };

struct Prop1Options {
  GradientLaw law = GradientLaw::exponential;
  double mean = 1.0;
  std::size_t chunk_trials = 1 << 16;
  unsigned workers = 1;
};

struct Prop1Report {
  std::size_t K = 0;
  double p = 0.0;
  std::size_t trials = 0;
  double empirical_ratio = 0.0;
  double closed_form = 0.0;
  double abs_error = 0.0;
  double std_error = 0.0;  // ratio-estimator standard error

  /// |empirical - closed form| < 3 standard errors; an exact hit always passes.
  bool consistent() const noexcept { return abs_error == 0.0 || abs_error < 3.0 * std_error; }
};

inline double prop1_closed_form(std::size_t K, double p) {
  return 1.0 - std::pow(1.0 - p, static_cast<double>(K));
}

namespace detail {

struct Prop1Sums {
  double pruned = 0.0, plain = 0.0;
  double pruned_sq = 0.0, plain_sq = 0.0, cross = 0.0;
};

inline double draw_gradient(Rng& rng, GradientLaw law, double mean) {
  switch (law) {
    case GradientLaw::exponential:
      return rng.exponential(mean);
    case GradientLaw::normal:
      return mean + rng.normal();
    case GradientLaw::uniform:
      return rng.uniform(0.0, 2.0 * mean);
  }
  return mean;
}

inline Prop1Sums prop1_chunk(std::size_t K, double p, std::size_t trials, std::uint64_t seed, std::size_t chunk,
                             const Prop1Options& opt) {
  auto rng = make_stream(seed, Purpose::verifier, chunk);
  Prop1Sums s;
  std::vector<double> g(K);
  for (std::size_t t = 0; t < trials; ++t) {
    double sum_g = 0.0;
    for (auto& v : g) {
      v = draw_gradient(rng, opt.law, opt.mean);
      sum_g += v;
    }
    double kept_sum = 0.0;
    double kept = 0.0;
    for (std::size_t k = 0; k < K; ++k)
      if (rng.bernoulli(p)) {
        kept_sum += g[k];
        kept += 1.0;
      }
    const double pruned = kept > 0.0 ? kept_sum / kept : 0.0;
    const double plain = sum_g / static_cast<double>(K);
    s.pruned += pruned;
    s.plain += plain;
    s.pruned_sq += pruned * pruned;
    s.plain_sq += plain * plain;
    s.cross += pruned * plain;
  }
  return s;
}

}  // namespace detail

/// Trials are split into fixed-size chunks with their own streams and reduced
/// in chunk order, so the report does not depend on the worker count.
inline Prop1Report verify_prop1(std::size_t K, double p, std::size_t trials, std::uint64_t seed,
                                const Prop1Options& opt = {}) {
  if (K < 1) throw ContractError("verify_prop1: K must be >= 1");
  if (!(p >= 0.0 && p <= 1.0)) throw ContractError("verify_prop1: p outside [0, 1]");
  if (trials < 1) throw ContractError("verify_prop1: trials must be >= 1");
  const std::size_t chunk = std::max<std::size_t>(1, opt.chunk_trials);
  const std::size_t num_chunks = (trials + chunk - 1) / chunk;
  std::vector<detail::Prop1Sums> partial(num_chunks);
  auto run = [&](std::size_t c) {
    const std::size_t n = std::min(chunk, trials - c * chunk);
    partial[c] = detail::prop1_chunk(K, p, n, seed, c, opt);
  };
  const unsigned workers = std::max(1u, opt.workers);
  if (workers == 1) {
    for (std::size_t c = 0; c < num_chunks; ++c) run(c);
  } else {
    std::vector<std::jthread> pool;
    for (unsigned w = 0; w < workers; ++w)
      pool.emplace_back([&, w] {
        for (std::size_t c = w; c < num_chunks; c += workers) run(c);
      });
  }

  detail::Prop1Sums s;
  for (const auto& c : partial) {
    s.pruned += c.pruned;
    s.plain += c.plain;
    s.pruned_sq += c.pruned_sq;
    s.plain_sq += c.plain_sq;
    s.cross += c.cross;
  }
  const double n = static_cast<double>(trials);
  Prop1Report r;
  r.K = K;
  r.p = p;
  r.trials = trials;
  r.closed_form = prop1_closed_form(K, p);
  r.empirical_ratio = s.pruned / s.plain;
  r.abs_error = std::abs(r.empirical_ratio - r.closed_form);
  // Delta method: Var(ratio) ~= Var(pruned - ratio * plain) / (n * mean(plain)^2).
  const double mean_plain = s.plain / n;
  const double ratio = r.empirical_ratio;
  const double second = (s.pruned_sq - 2.0 * ratio * s.cross + ratio * ratio * s.plain_sq) / n;
  const double first = (s.pruned - ratio * s.plain) / n;
  const double var = std::max(0.0, second - first * first);
  r.std_error = std::sqrt(var / n) / std::abs(mean_plain);
  return r;
}

}  // namespace fedlp
