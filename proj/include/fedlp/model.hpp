#pragma once

// Layered feed-forward models.
//
// A model is an ordered list of blocks. Parameterized (dense) blocks carry
// their own activation; activation-only blocks carry none and are never
// prunable. Shared parameterized blocks are addressed by 1-based layer index
// l = 1..L, which is the index every pruning and aggregation routine uses.
// A client-local output head is parameterized but marked `personal`: it
// counts toward the local model's size but is not a prunable layer.

#include <algorithm>
#include <bit>
#include <cmath>
#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace fedlp {

enum class BlockKind { dense, activation_only };
enum class Activation { relu, softmax_output, identity };

struct LayerParams {
  Matrix weights;  // fan_in x fan_out
  std::vector<double> bias;

  std::size_t count() const noexcept { return weights.size() + bias.size(); }
  bool same_shape(const LayerParams& o) const noexcept {
    return weights.same_shape(o.weights) && bias.size() == o.bias.size();
  }
  friend bool operator==(const LayerParams&, const LayerParams&) = default;
};

struct LayerBlock {
  std::size_t index = 0;
  BlockKind kind = BlockKind::dense;
  LayerParams params;
  Activation activation = Activation::identity;
  std::size_t width = 0;  // fan_out for dense, signal width for activation-only
  bool personal = false;

  static LayerBlock dense(Matrix weights, std::vector<double> bias, Activation act, bool personal = false) {
    LayerBlock b;
    b.kind = BlockKind::dense;
    b.width = weights.cols();
    b.params = {std::move(weights), std::move(bias)};
    b.activation = act;
    b.personal = personal;
    return b;
  }

  static LayerBlock activation_only(std::size_t width, Activation act) {
    LayerBlock b;
    b.kind = BlockKind::activation_only;
    b.width = width;
    b.activation = act;
    return b;
  }

  bool parameterized() const noexcept { return kind == BlockKind::dense; }
  bool prunable() const noexcept { return parameterized() && !personal; }
  std::size_t fan_in() const noexcept { return parameterized() ? params.weights.rows() : width; }
  std::size_t fan_out() const noexcept { return width; }
};

class LayeredModel {
 public:
  LayeredModel() = default;

  explicit LayeredModel(std::vector<LayerBlock> blocks) : blocks_(std::move(blocks)) {
    if (blocks_.empty()) throw ShapeError("LayeredModel: no blocks");
    std::optional<std::size_t> width;
    bool seen_personal = false;
    for (std::size_t i = 0; i < blocks_.size(); ++i) {
      auto& b = blocks_[i];
      b.index = i;
      const std::string where = "block " + std::to_string(i);
      if (b.parameterized()) {
        if (b.params.weights.empty()) throw ShapeError(where + ": dense block with empty weights");
        if (b.params.bias.size() != b.params.weights.cols())
          throw ShapeError(where + ": bias length " + std::to_string(b.params.bias.size()) +
                           " != fan_out " + std::to_string(b.params.weights.cols()));
        if (width && *width != b.params.weights.rows())
          throw ShapeError(where + ": fan_in " + std::to_string(b.params.weights.rows()) +
                           " != incoming width " + std::to_string(*width));
        if (seen_personal) throw ShapeError(where + ": parameterized block after a personal head");
        b.width = b.params.weights.cols();
        if (b.personal) {
          seen_personal = true;
        } else {
          prunable_blocks_.push_back(i);
        }
      } else {
        if (!b.params.weights.empty() || !b.params.bias.empty())
          throw ShapeError(where + ": activation-only block carries parameters");
        if (width && *width != b.width)
          throw ShapeError(where + ": width " + std::to_string(b.width) + " != incoming width " +
                           std::to_string(*width));
        if (b.width == 0) throw ShapeError(where + ": zero width");
      }
      if (!width) input_dim_ = b.fan_in();
      width = b.width;
      if (b.activation == Activation::softmax_output && i + 1 != blocks_.size())
        throw ShapeError(where + ": softmax-output activation on a non-final block");
    }
    if (std::none_of(blocks_.begin(), blocks_.end(), [](const LayerBlock& b) { return b.parameterized(); }))
      throw ShapeError("LayeredModel: no parameterized block");
  }

  const std::vector<LayerBlock>& blocks() const noexcept { return blocks_; }
  std::size_t num_blocks() const noexcept { return blocks_.size(); }
  std::size_t num_prunable() const noexcept { return prunable_blocks_.size(); }
  std::size_t input_dim() const noexcept { return input_dim_; }
  std::size_t output_dim() const noexcept { return blocks_.empty() ? 0 : blocks_.back().width; }
  bool has_personal_head() const noexcept {
    return std::any_of(blocks_.begin(), blocks_.end(), [](const LayerBlock& b) { return b.personal; });
  }

  /// Block position of prunable layer l (1-based).
  std::size_t block_of_layer(std::size_t l) const {
    check_layer(l);
    return prunable_blocks_[l - 1];
  }

  const LayerParams& layer(std::size_t l) const { return blocks_[block_of_layer(l)].params; }

  void set_layer(std::size_t l, const LayerParams& values) {
    auto& target = blocks_[block_of_layer(l)].params;
    if (!target.same_shape(values))
      throw ShapeError("set_layer: shape mismatch at layer " + std::to_string(l));
    target = values;
  }

  /// Mutable parameter values of a block. Shapes stay fixed.
  std::span<double> weight_values(std::size_t block) { return blocks_.at(block).params.weights.values(); }
  std::span<double> bias_values(std::size_t block) { return blocks_.at(block).params.bias; }

  void check_layer(std::size_t l) const {
    if (l < 1 || l > prunable_blocks_.size())
      throw ContractError("layer index " + std::to_string(l) + " outside 1.." +
                          std::to_string(prunable_blocks_.size()));
  }

  friend bool operator==(const LayeredModel& a, const LayeredModel& b) {
    if (a.blocks_.size() != b.blocks_.size()) return false;
    for (std::size_t i = 0; i < a.blocks_.size(); ++i) {
      const auto& x = a.blocks_[i];
      const auto& y = b.blocks_[i];
      if (x.kind != y.kind || x.activation != y.activation || x.width != y.width || x.personal != y.personal ||
          !(x.params == y.params))
        return false;
    }
    return true;
  }

 private:
  std::vector<LayerBlock> blocks_;
  std::vector<std::size_t> prunable_blocks_;
  std::size_t input_dim_ = 0;
};

/// FNV-1a over block structure and the bit patterns of all parameters.
inline std::uint64_t fingerprint(const LayeredModel& model) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  auto mix = [&h](std::uint64_t v) {
    for (int i = 0; i < 8; ++i) {
      h ^= (v >> (8 * i)) & 0xffU;
      h *= 0x100000001b3ULL;
    }
  };
  for (const auto& b : model.blocks()) {
    mix(static_cast<std::uint64_t>(b.kind));
    mix(static_cast<std::uint64_t>(b.activation));
    mix(b.width);
    mix(b.params.weights.rows());
    for (double v : b.params.weights.values()) mix(std::bit_cast<std::uint64_t>(v));
    for (double v : b.params.bias) mix(std::bit_cast<std::uint64_t>(v));
  }
  return h;
}

// ---- construction ----------------------------------------------------------

/// Dense block with weights and bias uniform in +-1/sqrt(fan_in).
inline LayerBlock make_dense(std::size_t fan_in, std::size_t fan_out, Activation act, Rng& rng,
                             bool personal = false) {
  const double bound = 1.0 / std::sqrt(static_cast<double>(fan_in));
  Matrix w(fan_in, fan_out);
  for (double& v : w.values()) v = rng.uniform(-bound, bound);
  std::vector<double> b(fan_out);
  for (double& v : b) v = rng.uniform(-bound, bound);
  return LayerBlock::dense(std::move(w), std::move(b), act, personal);
}

/// MLP over widths {in, h1, ..., C}: ReLU on hidden layers, softmax output.
inline LayeredModel make_mlp(std::span<const std::size_t> widths, Rng& rng) {
  if (widths.size() < 2) throw ShapeError("make_mlp: need at least input and output widths");
  std::vector<LayerBlock> blocks;
  for (std::size_t i = 0; i + 1 < widths.size(); ++i) {
    const bool last = i + 2 == widths.size();
    blocks.push_back(make_dense(widths[i], widths[i + 1], last ? Activation::softmax_output : Activation::relu, rng));
  }
  return LayeredModel(std::move(blocks));
}

// ---- forward / backward ----------------------------------------------------

struct ForwardCache {
  std::uint64_t model_fingerprint = 0;
  std::size_t batch_rows = 0;
  std::vector<Matrix> inputs;          // input to each block
  std::vector<Matrix> pre_activation;  // dense: affine output; activation-only: same as input
  Matrix probabilities;                // row-wise softmax of the logits
};

struct ForwardResult {
  Matrix logits;
  ForwardCache cache;
};

/// Rows of `logits` mapped through a numerically stable softmax.
inline Matrix softmax_rows(const Matrix& logits) {
  Matrix out(logits.rows(), logits.cols());
  for (std::size_t r = 0; r < logits.rows(); ++r) {
    const auto in = logits.row(r);
    auto dst = out.row(r);
    const double m = *std::max_element(in.begin(), in.end());
    double sum = 0.0;
    for (std::size_t c = 0; c < in.size(); ++c) {
      dst[c] = std::exp(in[c] - m);
      sum += dst[c];
    }
    for (double& v : dst) v /= sum;
  }
  return out;
}

namespace detail {

inline void apply_activation(Matrix& m, Activation act) {
  if (act == Activation::relu)
    for (double& v : m.values()) v = v > 0.0 ? v : 0.0;
}

// out = x * w + bias, x: B x in, w: in x out
inline Matrix affine(const Matrix& x, const LayerParams& p) {
  const std::size_t in = p.weights.rows();
  const std::size_t out = p.weights.cols();
  Matrix z(x.rows(), out);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    auto zr = z.row(r);
    std::copy(p.bias.begin(), p.bias.end(), zr.begin());
    const auto xr = x.row(r);
    for (std::size_t k = 0; k < in; ++k) {
      const double xv = xr[k];
      if (xv == 0.0) continue;
      const auto wk = p.weights.row(k);
      for (std::size_t j = 0; j < out; ++j) zr[j] += xv * wk[j];
    }
  }
  return z;
}

}  // namespace detail

inline ForwardResult forward(const LayeredModel& model, const Matrix& batch) {
  if (batch.cols() != model.input_dim())
    throw ShapeError("forward: block 0 expects " + std::to_string(model.input_dim()) + " features, batch has " +
                     std::to_string(batch.cols()));
  ForwardResult result;
  auto& cache = result.cache;
  cache.model_fingerprint = fingerprint(model);
  cache.batch_rows = batch.rows();
  cache.inputs.reserve(model.num_blocks());
  cache.pre_activation.reserve(model.num_blocks());

  Matrix signal = batch;
  for (const auto& block : model.blocks()) {
    if (signal.cols() != block.fan_in())
      throw ShapeError("forward: block " + std::to_string(block.index) + " expects fan_in " +
                       std::to_string(block.fan_in()) + ", got " + std::to_string(signal.cols()));
    cache.inputs.push_back(signal);
    Matrix z = block.parameterized() ? detail::affine(signal, block.params) : signal;
    cache.pre_activation.push_back(z);
    detail::apply_activation(z, block.activation);
    signal = std::move(z);
  }
  cache.probabilities = softmax_rows(signal);
  result.logits = std::move(signal);
  return result;
}

/// Mean cross-entropy of softmax probabilities against class labels.
inline double cross_entropy(const Matrix& probabilities, std::span<const std::size_t> labels) {
  if (labels.size() != probabilities.rows()) throw ShapeError("cross_entropy: label count != rows");
  double total = 0.0;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= probabilities.cols()) throw ContractError("cross_entropy: label out of range");
    total -= std::log(std::max(probabilities(r, labels[r]), 1e-300));
  }
  return labels.empty() ? 0.0 : total / static_cast<double>(labels.size());
}

inline double loss(const LayeredModel& model, const Matrix& batch, std::span<const std::size_t> labels) {
  return cross_entropy(forward(model, batch).cache.probabilities, labels);
}

struct GradientSet {
  std::vector<LayerParams> blocks;  // mirrors the model; empty for activation-only blocks

  bool all_finite() const {
    for (const auto& g : blocks) {
      for (double v : g.weights.values())
        if (!std::isfinite(v)) return false;
      for (double v : g.bias)
        if (!std::isfinite(v)) return false;
    }
    return true;
  }
};

/// Gradients of the mean softmax cross-entropy over the batch.
inline GradientSet backward(const LayeredModel& model, const ForwardCache& cache,
                            std::span<const std::size_t> labels) {
  if (cache.inputs.size() != model.num_blocks() || cache.model_fingerprint != fingerprint(model))
    throw ContractError("backward: cache was not produced by this model's parameters");
  if (labels.size() != cache.batch_rows)
    throw ContractError("backward: " + std::to_string(labels.size()) + " labels for a batch of " +
                        std::to_string(cache.batch_rows));
  const std::size_t classes = model.output_dim();
  const double scale = 1.0 / static_cast<double>(labels.size());

  Matrix delta = cache.probabilities;
  for (std::size_t r = 0; r < labels.size(); ++r) {
    if (labels[r] >= classes) throw ContractError("backward: label " + std::to_string(labels[r]) + " out of range");
    delta(r, labels[r]) -= 1.0;
  }
  for (double& v : delta.values()) v *= scale;

  GradientSet grads;
  grads.blocks.resize(model.num_blocks());
  for (std::size_t i = model.num_blocks(); i-- > 0;) {
    const auto& block = model.blocks()[i];
    // delta holds dLoss/d(block output); bring it back through the activation.
    if (block.activation == Activation::relu) {
      const auto z = cache.pre_activation[i].values();
      auto d = delta.values();
      for (std::size_t k = 0; k < d.size(); ++k)
        if (!(z[k] > 0.0)) d[k] = 0.0;
    }
    if (!block.parameterized()) continue;

    const Matrix& x = cache.inputs[i];
    const auto& w = block.params.weights;
    const std::size_t in = w.rows();
    const std::size_t out = w.cols();
    auto& g = grads.blocks[i];
    g.weights = Matrix(in, out);
    g.bias.assign(out, 0.0);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto xr = x.row(r);
      const auto dr = delta.row(r);
      for (std::size_t j = 0; j < out; ++j) g.bias[j] += dr[j];
      for (std::size_t k = 0; k < in; ++k) {
        const double xv = xr[k];
        if (xv == 0.0) continue;
        auto gk = g.weights.row(k);
        for (std::size_t j = 0; j < out; ++j) gk[j] += xv * dr[j];
      }
    }
    if (i == 0) break;
    Matrix upstream(x.rows(), in);
    for (std::size_t r = 0; r < x.rows(); ++r) {
      const auto dr = delta.row(r);
      auto ur = upstream.row(r);
      for (std::size_t k = 0; k < in; ++k) {
        const auto wk = w.row(k);
        double s = 0.0;
        for (std::size_t j = 0; j < out; ++j) s += dr[j] * wk[j];
        ur[k] = s;
      }
    }
    delta = std::move(upstream);
  }
  return grads;
}

/// p <- p - lr * g for every parameter.
inline void sgd_step(LayeredModel& model, const GradientSet& grads, double lr) {
  if (!(lr >= 0.0) || !std::isfinite(lr)) throw ContractError("sgd_step: learning rate must be finite and >= 0");
  if (grads.blocks.size() != model.num_blocks()) throw ShapeError("sgd_step: gradient block count mismatch");
  for (std::size_t i = 0; i < model.num_blocks(); ++i) {
    const auto& block = model.blocks()[i];
    const auto& g = grads.blocks[i];
    if (!block.parameterized()) continue;
    if (!block.params.same_shape(g)) throw ShapeError("sgd_step: gradient shape mismatch at block " + std::to_string(i));
    for (std::size_t k = 0; k < g.weights.size(); ++k)
      if (!std::isfinite(g.weights.values()[k]))
        throw NonFiniteError("sgd_step: non-finite weight gradient at block " + std::to_string(i) + " element " +
                             std::to_string(k));
    for (std::size_t k = 0; k < g.bias.size(); ++k)
      if (!std::isfinite(g.bias[k]))
        throw NonFiniteError("sgd_step: non-finite bias gradient at block " + std::to_string(i) + " element " +
                             std::to_string(k));
  }
  if (lr == 0.0) return;
  for (std::size_t i = 0; i < model.num_blocks(); ++i) {
    if (!model.blocks()[i].parameterized()) continue;
    const auto& g = grads.blocks[i];
    auto w = model.weight_values(i);
    const auto gw = g.weights.values();
    for (std::size_t k = 0; k < w.size(); ++k) w[k] -= lr * gw[k];
    auto b = model.bias_values(i);
    for (std::size_t k = 0; k < b.size(); ++k) b[k] -= lr * g.bias[k];
  }
}

// ---- counters --------------------------------------------------------------

namespace detail {

inline std::uint64_t block_flops(const LayerBlock& b) {
  if (!b.parameterized()) return b.fan_out();
  const std::uint64_t in = b.fan_in();
  const std::uint64_t out = b.fan_out();
  return 2 * in * out + out + out;  // MACs, bias add, activation
}

template <typename PerBlock>
std::uint64_t sum_over(const LayeredModel& model, std::optional<std::span<const std::size_t>> layers,
                       PerBlock per_block) {
  std::uint64_t total = 0;
  if (!layers) {
    for (const auto& b : model.blocks()) total += per_block(b);
    return total;
  }
  for (std::size_t l : *layers) total += per_block(model.blocks()[model.block_of_layer(l)]);
  return total;
}

}  // namespace detail

/// Exact scalar parameter count of the selected prunable layers, or of every
/// parameterized block (personal head included) when no range is given.
inline std::uint64_t param_count(const LayeredModel& model,
                                 std::optional<std::span<const std::size_t>> layers = std::nullopt) {
  return detail::sum_over(model, layers, [](const LayerBlock& b) -> std::uint64_t { return b.params.count(); });
}

/// Forward FLOPs per sample: 2*fan_in*fan_out + fan_out (bias) + fan_out
/// (activation) per dense block, fan_out per activation-only block.
inline std::uint64_t flops_count(const LayeredModel& model,
                                 std::optional<std::span<const std::size_t>> layers = std::nullopt) {
  return detail::sum_over(model, layers, [](const LayerBlock& b) { return detail::block_flops(b); });
}

/// {first, ..., last}, 1-based and inclusive; empty when last < first.
inline std::vector<std::size_t> layer_range(std::size_t first, std::size_t last) {
  std::vector<std::size_t> out;
  for (std::size_t l = first; l <= last; ++l) out.push_back(l);
  return out;
}

/// Index of the largest logit in each row.
inline std::vector<std::size_t> predict(const LayeredModel& model, const Matrix& batch) {
  const auto result = forward(model, batch);
  std::vector<std::size_t> out(batch.rows());
  for (std::size_t r = 0; r < batch.rows(); ++r) {
    const auto row = result.logits.row(r);
    out[r] = static_cast<std::size_t>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

}  // namespace fedlp
