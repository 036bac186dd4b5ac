#pragma once

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iterator>
#include <span>
#include <string>
#include <vector>

#include "errors.hpp"
#include "matrix.hpp"
#include "rng.hpp"

namespace fedlp {

struct Dataset {
  Matrix features;                  // samples x dim
  std::vector<std::size_t> labels;  // one per row, each < num_classes
  std::size_t num_classes = 0;

  std::size_t size() const noexcept { return labels.size(); }
  std::size_t dim() const noexcept { return features.cols(); }

  void validate() const {
    if (features.rows() != labels.size()) throw ShapeError("Dataset: feature rows != label count");
    for (std::size_t y : labels)
      if (y >= num_classes) throw ContractError("Dataset: label " + std::to_string(y) + " >= num_classes");
  }

  /// Rows at `indices`, in that order.
  Dataset subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.num_classes = num_classes;
    out.features = Matrix(indices.size(), dim());
    out.labels.reserve(indices.size());
    for (std::size_t i = 0; i < indices.size(); ++i) {
      const auto src = features.row(indices[i]);
      std::copy(src.begin(), src.end(), out.features.row(i).begin());
      out.labels.push_back(labels[indices[i]]);
    }
    return out;
  }

  std::vector<std::size_t> class_histogram(std::span<const std::size_t> indices) const {
    std::vector<std::size_t> h(num_classes, 0);
    for (std::size_t i : indices) ++h[labels[i]];
    return h;
  }

  friend bool operator==(const Dataset&, const Dataset&) = default;
};

struct SyntheticSpec {
  std::size_t num_classes = 10;
  std::size_t samples_per_class = 100;
  std::size_t feature_dim = 16;
  double class_separation = 8.0;
};

namespace detail {

// Class centroids with pairwise distance class_separation when dim >= C
// (scaled orthonormal basis); random directions on the sphere otherwise.
inline Matrix synthetic_means(const SyntheticSpec& spec, std::uint64_t seed) {
  Matrix means(spec.num_classes, spec.feature_dim);
  const double radius = spec.class_separation / std::sqrt(2.0);
  if (spec.feature_dim >= spec.num_classes) {
    for (std::size_t c = 0; c < spec.num_classes; ++c) means(c, c) = radius;
    return means;
  }
  auto rng = make_stream(seed, Purpose::synthetic_means);
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    auto row = means.row(c);
    double norm = 0.0;
    for (double& v : row) {
      v = rng.normal();
      norm += v * v;
    }
    norm = std::sqrt(norm);
    for (double& v : row) v *= radius / norm;
  }
  return means;
}

}  // namespace detail

/// Unit-variance Gaussian clusters around separated class centroids, with
/// labels grouped by class (class 0 first). `stream` picks the noise stream
/// so train and test draws share centroids but not samples.
inline Dataset generate_synthetic(const SyntheticSpec& spec, std::uint64_t seed,
                                  Purpose stream = Purpose::synthetic_train) {
  if (spec.num_classes == 0 || spec.samples_per_class == 0 || spec.feature_dim == 0)
    throw ContractError("generate_synthetic: counts must be positive");
  if (!(spec.class_separation > 0.0)) throw ContractError("generate_synthetic: class_separation must be > 0");
  const Matrix means = detail::synthetic_means(spec, seed);
  auto rng = make_stream(seed, stream);
  Dataset ds;
  ds.num_classes = spec.num_classes;
  ds.features = Matrix(spec.num_classes * spec.samples_per_class, spec.feature_dim);
  ds.labels.reserve(ds.features.rows());
  std::size_t r = 0;
  for (std::size_t c = 0; c < spec.num_classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++r) {
      auto row = ds.features.row(r);
      for (std::size_t d = 0; d < spec.feature_dim; ++d) row[d] = means(c, d) + rng.normal();
      ds.labels.push_back(c);
    }
  }
  return ds;
}

// ---- IDX ------------------------------------------------------------------

namespace detail {

inline std::vector<unsigned char> read_file(const std::filesystem::path& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path.string());
  return {std::istreambuf_iterator<char>(in), std::istreambuf_iterator<char>()};
}

inline std::uint32_t read_be32(std::span<const unsigned char> bytes, std::size_t offset,
                               const std::filesystem::path& path) {
  if (offset + 4 > bytes.size()) throw IdxTruncatedError(path.string() + ": truncated header");
  return (std::uint32_t{bytes[offset]} << 24) | (std::uint32_t{bytes[offset + 1]} << 16) |
         (std::uint32_t{bytes[offset + 2]} << 8) | std::uint32_t{bytes[offset + 3]};
}

}  // namespace detail

inline constexpr std::uint32_t kIdxImagesMagic = 0x00000803;
inline constexpr std::uint32_t kIdxLabelsMagic = 0x00000801;

/// Reads an IDX image/label file pair. Pixels are scaled to [0, 1];
/// num_classes is the largest label + 1.
inline Dataset load_idx(const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  const auto img = detail::read_file(images_path);
  const auto lab = detail::read_file(labels_path);

  if (detail::read_be32(img, 0, images_path) != kIdxImagesMagic)
    throw IdxFormatError(images_path.string() + ": bad magic, expected 0x00000803");
  if (detail::read_be32(lab, 0, labels_path) != kIdxLabelsMagic)
    throw IdxFormatError(labels_path.string() + ": bad magic, expected 0x00000801");

  const std::size_t n_images = detail::read_be32(img, 4, images_path);
  const std::size_t rows = detail::read_be32(img, 8, images_path);
  const std::size_t cols = detail::read_be32(img, 12, images_path);
  const std::size_t n_labels = detail::read_be32(lab, 4, labels_path);

  const std::size_t pixels = rows * cols;
  if (img.size() < 16 + n_images * pixels) throw IdxTruncatedError(images_path.string() + ": truncated pixel data");
  if (lab.size() < 8 + n_labels) throw IdxTruncatedError(labels_path.string() + ": truncated label data");
  if (n_images != n_labels)
    throw IdxCountMismatchError(images_path.string() + " holds " + std::to_string(n_images) + " images but " +
                                labels_path.string() + " holds " + std::to_string(n_labels) + " labels");

  Dataset ds;
  ds.features = Matrix(n_images, pixels);
  auto values = ds.features.values();
  for (std::size_t i = 0; i < n_images * pixels; ++i) values[i] = img[16 + i] / 255.0;
  ds.labels.resize(n_labels);
  std::size_t max_label = 0;
  for (std::size_t i = 0; i < n_labels; ++i) {
    ds.labels[i] = lab[8 + i];
    max_label = std::max(max_label, ds.labels[i]);
  }
  ds.num_classes = n_labels == 0 ? 0 : max_label + 1;
  return ds;
}

/// Writes an IDX pair; pixel values are clamped to [0,1] and quantized to bytes.
inline void write_idx(const Dataset& ds, std::size_t rows, std::size_t cols,
                      const std::filesystem::path& images_path, const std::filesystem::path& labels_path) {
  if (rows * cols != ds.dim()) throw ShapeError("write_idx: rows*cols != feature dim");
  auto be32 = [](std::ofstream& out, std::uint32_t v) {
    const std::array<char, 4> b{static_cast<char>(v >> 24), static_cast<char>(v >> 16), static_cast<char>(v >> 8),
                                static_cast<char>(v)};
    out.write(b.data(), 4);
  };
  std::ofstream img(images_path, std::ios::binary);
  std::ofstream lab(labels_path, std::ios::binary);
  if (!img) throw IoError("cannot write " + images_path.string());
  if (!lab) throw IoError("cannot write " + labels_path.string());
  be32(img, kIdxImagesMagic);
  be32(img, static_cast<std::uint32_t>(ds.size()));
  be32(img, static_cast<std::uint32_t>(rows));
  be32(img, static_cast<std::uint32_t>(cols));
  for (double v : ds.features.values())
    img.put(static_cast<char>(static_cast<unsigned char>(std::lround(std::clamp(v, 0.0, 1.0) * 255.0))));
  be32(lab, kIdxLabelsMagic);
  be32(lab, static_cast<std::uint32_t>(ds.size()));
  for (std::size_t y : ds.labels) lab.put(static_cast<char>(y));
}

}  // namespace fedlp
