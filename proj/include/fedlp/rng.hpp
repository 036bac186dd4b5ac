#pragma once

// Seeded random streams.
//
// Every consumer of randomness asks for a stream keyed by
// (master seed, purpose, client, round). Keys are mixed with splitmix64, so a
// stream never depends on how many numbers other streams have consumed and any
// piece of a run can be replayed in isolation.
//
// The engine is std::mt19937_64, whose output sequence is fixed by the
// standard. The std:: distributions are not, so the transforms below are
// written out to keep runs bit-identical across standard libraries.

#include <cmath>
#include <cstdint>
#include <limits>
#include <numbers>
#include <random>
#include <utility>

namespace fedlp {

enum class Purpose : std::uint64_t {
  model_init = 1,
  select = 2,
  shuffle = 3,
  mask = 4,
  head_init = 5,
  hetero_assign = 6,
  partition = 7,
  synthetic_means = 8,
  synthetic_train = 9,
  synthetic_test = 10,
  verifier = 11,
};

constexpr std::uint64_t splitmix64(std::uint64_t x) noexcept {
  x += 0x9e3779b97f4a7c15ULL;
  x = (x ^ (x >> 30)) * 0xbf58476d1ce4e5b9ULL;
  x = (x ^ (x >> 27)) * 0x94d049bb133111ebULL;
  return x ^ (x >> 31);
}

constexpr std::uint64_t derive_seed(std::uint64_t master, Purpose purpose, std::uint64_t client = 0,
                                    std::uint64_t round = 0) noexcept {
  std::uint64_t h = splitmix64(master);
  h = splitmix64(h ^ static_cast<std::uint64_t>(purpose));
  h = splitmix64(h ^ client);
  h = splitmix64(h ^ round);
  return h;
}

class Rng {
 public:
  explicit Rng(std::uint64_t seed) : engine_(seed) {}

  std::uint64_t next_u64() { return engine_(); }

  /// Uniform on [0, 1) with 53 bits of resolution.
  double uniform() { return static_cast<double>(engine_() >> 11) * 0x1.0p-53; }

  double uniform(double lo, double hi) { return lo + (hi - lo) * uniform(); }

  /// Uniform integer in [0, n). Rejection sampling, no modulo bias.
  std::uint64_t below(std::uint64_t n) {
    if (n <= 1) return 0;
    const std::uint64_t limit = std::numeric_limits<std::uint64_t>::max() -
                                std::numeric_limits<std::uint64_t>::max() % n;
    std::uint64_t x = engine_();
    while (x >= limit) x = engine_();
    return x % n;
  }

  bool bernoulli(double p) { return uniform() < p; }

  /// Standard normal via Box-Muller; the second variate is kept for the next call.
  double normal() {
    if (has_spare_) {
      has_spare_ = false;
      return spare_;
    }
    const double u1 = 1.0 - uniform();  // (0, 1]
    const double u2 = uniform();
    const double r = std::sqrt(-2.0 * std::log(u1));
    const double angle = 2.0 * std::numbers::pi * u2;
    spare_ = r * std::sin(angle);
    has_spare_ = true;
    return r * std::cos(angle);
  }

  double exponential(double mean) { return -mean * std::log(1.0 - uniform()); }

  /// log of a Gamma(shape, 1) variate. Marsaglia-Tsang, with the
  /// U^(1/shape) boost for shape < 1 applied in log space so tiny shapes
  /// do not underflow.
  double log_gamma_variate(double shape) {
    if (shape < 1.0) {
      const double boosted = log_gamma_variate(shape + 1.0);
      return boosted + std::log(1.0 - uniform()) / shape;
    }
    const double d = shape - 1.0 / 3.0;
    const double c = 1.0 / std::sqrt(9.0 * d);
    for (;;) {
      double x = 0.0;
      double v = 0.0;
      do {
        x = normal();
        v = 1.0 + c * x;
      } while (v <= 0.0);
      v = v * v * v;
      const double u = 1.0 - uniform();
      if (std::log(u) < 0.5 * x * x + d - d * v + d * std::log(v)) return std::log(d * v);
    }
  }

  double gamma(double shape) { return std::exp(log_gamma_variate(shape)); }

  template <typename It>
  void shuffle(It first, It last) {
    const auto n = static_cast<std::uint64_t>(last - first);
    for (std::uint64_t i = n; i > 1; --i) {
      const auto j = below(i);
      std::swap(first[i - 1], first[j]);
    }
  }

 private:
  std::mt19937_64 engine_;
  double spare_ = 0.0;
  bool has_spare_ = false;
};

inline Rng make_stream(std::uint64_t master, Purpose purpose, std::uint64_t client = 0,
                       std::uint64_t round = 0) {
  return Rng(derive_seed(master, purpose, client, round));
}

}  // namespace fedlp
