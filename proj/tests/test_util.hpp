#pragma once

// Helpers shared by the unit and acceptance suites. The finite-difference
// gradient here is the independent oracle for backward(): it only ever calls
// loss(), i.e. forward().

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstring>
#include <vector>

#include "fedlp/fedlp.hpp"

namespace fedlp::testing {

inline bool bit_equal(std::span<const double> a, std::span<const double> b) {
  return a.size() == b.size() && (a.empty() || std::memcmp(a.data(), b.data(), a.size() * sizeof(double)) == 0);
}

inline bool bit_equal(const LayerParams& a, const LayerParams& b) {
  return a.same_shape(b) && bit_equal(a.weights.values(), b.weights.values()) && bit_equal(a.bias, b.bias);
}

inline bool bit_equal(const LayeredModel& a, const LayeredModel& b) {
  if (a.num_blocks() != b.num_blocks()) return false;
  for (std::size_t i = 0; i < a.num_blocks(); ++i)
    if (!bit_equal(a.blocks()[i].params, b.blocks()[i].params)) return false;
  return true;
}

/// Central difference (L(w+h) - L(w-h)) / 2h for every parameter, in block order.
inline std::vector<double> numeric_gradient(LayeredModel model, const Matrix& x, std::span<const std::size_t> y,
                                            double h = 1e-5) {
  std::vector<double> out;
  for (std::size_t b = 0; b < model.num_blocks(); ++b) {
    if (!model.blocks()[b].parameterized()) continue;
    for (auto values : {model.weight_values(b), model.bias_values(b)}) {
      for (double& v : values) {
        const double saved = v;
        v = saved + h;
        const double up = loss(model, x, y);
        v = saved - h;
        const double down = loss(model, x, y);
        v = saved;
        out.push_back((up - down) / (2.0 * h));
      }
    }
  }
  return out;
}

inline std::vector<double> flatten(const GradientSet& g) {
  std::vector<double> out;
  for (const auto& b : g.blocks) {
    out.insert(out.end(), b.weights.values().begin(), b.weights.values().end());
    out.insert(out.end(), b.bias.begin(), b.bias.end());
  }
  return out;
}

/// |a - n| / max(|a|, |n|, 1e-6). The floor keeps near-zero gradients, where
/// the difference quotient is dominated by rounding, on an absolute footing.
inline double max_relative_error(std::span<const double> analytic, std::span<const double> numeric) {
  double worst = 0.0;
  for (std::size_t i = 0; i < analytic.size(); ++i) {
    const double denom = std::max({std::abs(analytic[i]), std::abs(numeric[i]), 1e-6});
    worst = std::max(worst, std::abs(analytic[i] - numeric[i]) / denom);
  }
  return worst;
}

struct GradCheckCase {
  LayeredModel model;
  Matrix x;
  std::vector<std::size_t> y;
};

/// Random small model mixing every block kind and activation, with inputs
/// whose ReLU pre-activations stay clear of the kink.
inline GradCheckCase random_gradcheck_case(Rng& rng) {
  for (;;) {
    const std::size_t depth = 1 + rng.below(3);
    std::size_t width = 2 + rng.below(4);
    const std::size_t input = width;
    std::vector<LayerBlock> blocks;
    for (std::size_t d = 0; d < depth; ++d) {
      const bool last = d + 1 == depth;
      const std::size_t out = last ? 2 + rng.below(4) : 2 + rng.below(4);
      Activation act = last ? (rng.bernoulli(0.5) ? Activation::softmax_output : Activation::identity)
                            : (rng.bernoulli(0.7) ? Activation::relu : Activation::identity);
      if (!last && act == Activation::identity && rng.bernoulli(0.5)) {
        blocks.push_back(make_dense(width, out, Activation::identity, rng));
        blocks.push_back(LayerBlock::activation_only(out, Activation::relu));
      } else {
        blocks.push_back(make_dense(width, out, act, rng));
      }
      width = out;
    }
    if (rng.bernoulli(0.2)) blocks.insert(blocks.begin(), LayerBlock::activation_only(input, Activation::identity));
    LayeredModel model(std::move(blocks));
    const std::size_t batch = 1 + rng.below(4);
    Matrix x(batch, input);
    for (double& v : x.values()) v = rng.normal();
    std::vector<std::size_t> y(batch);
    for (auto& v : y) v = rng.below(model.output_dim());

    const auto fwd = forward(model, x);
    bool clear = true;
    for (std::size_t i = 0; i < model.num_blocks(); ++i)
      if (model.blocks()[i].activation == Activation::relu)
        for (double z : fwd.cache.pre_activation[i].values()) clear = clear && std::abs(z) > 1e-3;
    if (clear) return {std::move(model), std::move(x), std::move(y)};
  }
}

/// Small balanced synthetic train/test pair.
inline std::pair<Dataset, Dataset> small_data(std::uint64_t seed, std::size_t per_class = 20, std::size_t dim = 8,
                                              std::size_t classes = 4, double sep = 8.0) {
  SyntheticSpec spec{classes, per_class, dim, sep};
  auto train = generate_synthetic(spec, seed, Purpose::synthetic_train);
  spec.samples_per_class = std::max<std::size_t>(5, per_class / 2);
  auto test = generate_synthetic(spec, seed, Purpose::synthetic_test);
  return {std::move(train), std::move(test)};
}

}  // namespace fedlp::testing
