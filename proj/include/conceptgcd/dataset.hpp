#pragma once
// Partially labeled dataset container, the synthetic benchmark generator,
// and the GCDF on-disk format.
//
// GCDF layout, little-endian:
//   bytes 0..3   magic "GCDF"
//   bytes 4..7   u32 version (currently 1)
//   bytes 8..11  u32 N (sample count)
//   bytes 12..15 u32 d (input dimension)
//   N * d float32   features, row-major
//   N     int32     ground-truth labels
//   N     uint8     visibility flags (1 = labeled)
// Total size: 16 + N*d*4 + N*4 + N bytes. Features are stored in float32 and
// held in memory as doubles that round-trip float32 exactly.

#include <cmath>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <string>
#include <utility>
#include <vector>

#include "conceptgcd/binio.hpp"
#include "conceptgcd/errors.hpp"
#include "conceptgcd/matrix.hpp"
#include "conceptgcd/rng.hpp"

namespace conceptgcd {

struct GcdDataset {
  Matrix features;                      // N x d
  std::vector<std::int32_t> gt_labels;  // -1 marks a redacted label
  std::vector<std::uint8_t> visible;    // 1 = label available to training
  std::size_t n_known = 0;
  std::size_t n_novel = 0;

  std::size_t size() const { return features.rows(); }
  std::size_t input_dim() const { return features.cols(); }
  std::size_t n_classes() const { return n_known + n_novel; }

  std::size_t visible_count() const {
    std::size_t c = 0;
    for (auto v : visible) c += v;
    return c;
  }

  void validate() const {
    if (gt_labels.size() != size() || visible.size() != size())
      throw DataError("dataset: labels/visibility length does not match feature rows");
    if (n_classes() == 0) throw DataError("dataset: zero classes");
    const auto n_classes_i = static_cast<std::int32_t>(n_classes());
    const auto n_known_i = static_cast<std::int32_t>(n_known);
    for (std::size_t i = 0; i < size(); ++i) {
      if (visible[i] != 0 && visible[i] != 1)
        throw DataError("dataset: visibility flag at row " + std::to_string(i) +
                        " is not 0 or 1");
      const std::int32_t y = gt_labels[i];
      if (visible[i]) {
        if (y < 0 || y >= n_known_i)
          throw DataError("dataset: visible row " + std::to_string(i) +
                          " has label outside the known-class range");
      } else if (y < -1 || y >= n_classes_i) {
        throw DataError("dataset: row " + std::to_string(i) + " has label out of range");
      }
    }
  }

  // Copy with every hidden label blanked to -1; training code only ever sees
  // this view, evaluation keeps the original.
  GcdDataset redacted() const {
    GcdDataset out = *this;
    for (std::size_t i = 0; i < out.size(); ++i)
      if (!out.visible[i]) out.gt_labels[i] = -1;
    return out;
  }
};

struct SyntheticSpec {
  std::size_t n_known = 20;
  std::size_t n_novel = 20;
  std::size_t input_dim = 64;
  std::size_t samples_per_class = 50;
  double center_scale = 1.0;
  double noise_sigma = 0.25;
  double label_ratio = 0.5;  // fraction of each known class that is labeled
};

// Gaussian blobs around uniformly drawn class centers. Draw order: all
// centers (class-major, dimension-minor), then all samples (class 0 first),
// then one shuffle per known class to pick the labeled subset.
inline GcdDataset generate_synthetic(const SyntheticSpec& spec, RngState& rng) {
  if (spec.n_known == 0) throw ParameterError("generate_synthetic: need at least one known class");
  if (spec.input_dim == 0) throw ParameterError("generate_synthetic: input_dim must be positive");
  if (spec.samples_per_class == 0)
    throw ParameterError("generate_synthetic: samples_per_class must be positive");
  if (spec.label_ratio < 0.0 || spec.label_ratio > 1.0)
    throw ParameterError("generate_synthetic: label_ratio must lie in [0, 1]");
  if (spec.noise_sigma < 0.0)
    throw ParameterError("generate_synthetic: noise_sigma must be non-negative");

  const std::size_t n_classes = spec.n_known + spec.n_novel;
  const std::size_t n = n_classes * spec.samples_per_class;
  GcdDataset ds;
  ds.n_known = spec.n_known;
  ds.n_novel = spec.n_novel;
  ds.features = Matrix(n, spec.input_dim);
  ds.gt_labels.resize(n);
  ds.visible.assign(n, 0);

  Matrix centers(n_classes, spec.input_dim);
  for (std::size_t c = 0; c < n_classes; ++c)
    for (std::size_t j = 0; j < spec.input_dim; ++j)
      centers(c, j) = rng.next_uniform(-spec.center_scale, spec.center_scale);

  std::size_t row = 0;
  for (std::size_t c = 0; c < n_classes; ++c) {
    for (std::size_t s = 0; s < spec.samples_per_class; ++s, ++row) {
      ds.gt_labels[row] = static_cast<std::int32_t>(c);
      for (std::size_t j = 0; j < spec.input_dim; ++j) {
        const double v = centers(c, j) + spec.noise_sigma * rng.next_gaussian();
        ds.features(row, j) = static_cast<double>(static_cast<float>(v));
      }
    }
  }

  const auto n_visible = static_cast<std::size_t>(
      std::llround(spec.label_ratio * static_cast<double>(spec.samples_per_class)));
  for (std::size_t c = 0; c < spec.n_known; ++c) {
    std::vector<std::size_t> order(spec.samples_per_class);
    for (std::size_t s = 0; s < order.size(); ++s) order[s] = c * spec.samples_per_class + s;
    rng.shuffle(order);
    for (std::size_t s = 0; s < n_visible; ++s) ds.visible[order[s]] = 1;
  }

  ds.validate();
  return ds;
}

inline void save_gcdf(const GcdDataset& ds, const std::string& path) {
  ds.validate();
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out.write("GCDF", 4);
  detail::put_u32_le(out, 1u);
  detail::put_u32_le(out, static_cast<std::uint32_t>(ds.size()));
  detail::put_u32_le(out, static_cast<std::uint32_t>(ds.input_dim()));
  for (std::size_t i = 0; i < ds.size(); ++i)
    for (std::size_t j = 0; j < ds.input_dim(); ++j)
      detail::put_f32_le(out, static_cast<float>(ds.features(i, j)));
  for (std::size_t i = 0; i < ds.size(); ++i) detail::put_i32_le(out, ds.gt_labels[i]);
  out.write(reinterpret_cast<const char*>(ds.visible.data()),
            static_cast<std::streamsize>(ds.visible.size()));
  out.flush();
  if (!out) throw IoError("failed writing " + path);
}

// Class counts are not stored in the file; callers supply them and the
// labels are validated against that split.
inline GcdDataset load_gcdf(const std::string& path, std::size_t n_known, std::size_t n_novel) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open " + path + " for reading");
  detail::ByteReader r{.in = in, .offset = 0, .path = path};
  char magic[4];
  r.read(magic, 4, "magic");
  if (std::memcmp(magic, "GCDF", 4) != 0) throw FormatError(path + ": bad magic", 0);
  const std::uint32_t version = r.u32("version");
  if (version != 1)
    throw FormatError(path + ": unsupported version " + std::to_string(version), 4);
  const std::uint32_t n = r.u32("sample count");
  const std::uint32_t d = r.u32("input dimension");
  GcdDataset ds;
  ds.n_known = n_known;
  ds.n_novel = n_novel;
  ds.features = Matrix(n, d);
  for (std::uint32_t i = 0; i < n; ++i)
    for (std::uint32_t j = 0; j < d; ++j)
      ds.features(i, j) = static_cast<double>(r.f32("features"));
  ds.gt_labels.resize(n);
  for (std::uint32_t i = 0; i < n; ++i) ds.gt_labels[i] = r.i32("labels");
  ds.visible.resize(n);
  if (n > 0) r.read(ds.visible.data(), n, "visibility");
  char extra;
  in.read(&extra, 1);
  if (in.gcount() != 0) throw FormatError(path + ": trailing bytes", r.offset);
  ds.validate();
  return ds;
}

// Two independent noisy copies of x. Draw order: every entry of view 1 in
// row-major order, then every entry of view 2. sigma == 0 consumes no draws
// and returns exact copies.
inline std::pair<Matrix, Matrix> augment_views(const Matrix& x, double sigma, RngState& rng) {
  if (sigma < 0.0) throw ParameterError("augment_views: sigma must be non-negative");
  if (sigma == 0.0) return {x, x};
  Matrix v1 = x, v2 = x;
  for (std::size_t i = 0; i < v1.size(); ++i) v1.data()[i] += sigma * rng.next_gaussian();
  for (std::size_t i = 0; i < v2.size(); ++i) v2.data()[i] += sigma * rng.next_gaussian();
  return {std::move(v1), std::move(v2)};
}

}  // namespace conceptgcd
