#pragma once
// Model building blocks: linear layers, the MLP encoder, the generator and
// expansion layers, concept-wise split normalization (CSN), and the cosine
// classifier. Forward passes fill explicit caches; backward passes consume
// them and accumulate into caller-owned gradient buffers (pass nullptr for
// frozen parts).

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "conceptgcd/errors.hpp"
#include "conceptgcd/matrix.hpp"
#include "conceptgcd/rng.hpp"

namespace conceptgcd {

// Entries drawn row-major, one gaussian per entry.
inline Matrix gaussian_matrix(std::size_t rows, std::size_t cols, double stddev, RngState& rng) {
  Matrix m(rows, cols);
  for (std::size_t i = 0; i < m.size(); ++i) m.data()[i] = stddev * rng.next_gaussian();
  return m;
}

struct Linear {
  Matrix weight;  // in x out
  Matrix bias;    // 1 x out

  std::size_t in_dim() const { return weight.rows(); }
  std::size_t out_dim() const { return weight.cols(); }

  // He initialization: weight ~ N(0, 2/in), bias zero.
  static Linear he_init(std::size_t in, std::size_t out, RngState& rng) {
    if (in == 0 || out == 0) throw ParameterError("Linear: dimensions must be positive");
    Linear l;
    l.weight = gaussian_matrix(in, out, std::sqrt(2.0 / static_cast<double>(in)), rng);
    l.bias = Matrix(1, out);
    return l;
  }

  Matrix forward(const Matrix& x) const {
    return add_row_vector(matmul(x, weight), bias);
  }
};

struct LinearGrads {
  Matrix weight, bias;
};

inline LinearGrads zeros_like(const Linear& l) {
  return {Matrix(l.weight.rows(), l.weight.cols()), Matrix(1, l.bias.cols())};
}

// dx for y = x W + b; accumulates dW, db into g when given.
inline Matrix linear_backward(const Linear& lin, const Matrix& x, const Matrix& dy,
                              LinearGrads* g) {
  if (dy.rows() != x.rows() || dy.cols() != lin.out_dim())
    throw DimensionError("linear_backward: upstream " + dy.shape_str() + " does not match " +
                         x.shape_str() + " through " + lin.weight.shape_str());
  if (g) {
    add_scaled_inplace(g->weight, matmul_tn(x, dy), 1.0);
    add_scaled_inplace(g->bias, col_sums(dy), 1.0);
  }
  return matmul_nt(dy, lin.weight);
}

// MLP with ReLU between layers and a linear output.
struct MlpEncoder {
  std::vector<Linear> layers;

  struct Cache {
    std::vector<Matrix> inputs;   // input to each layer
    std::vector<Matrix> preacts;  // pre-activation output of each layer
  };
  using Grads = std::vector<LinearGrads>;

  static MlpEncoder make(std::size_t in, std::size_t hidden, std::size_t out, RngState& rng) {
    MlpEncoder e;
    e.layers.push_back(Linear::he_init(in, hidden, rng));
    e.layers.push_back(Linear::he_init(hidden, out, rng));
    return e;
  }

  std::size_t in_dim() const { return layers.front().in_dim(); }
  std::size_t out_dim() const { return layers.back().out_dim(); }

  Grads make_grads() const {
    Grads g;
    for (const Linear& l : layers) g.push_back(zeros_like(l));
    return g;
  }

  Matrix forward(const Matrix& x, Cache* cache) const {
    if (layers.empty()) throw ConfigError("MlpEncoder: no layers");
    Matrix cur = x;
    if (cache) {
      cache->inputs.clear();
      cache->preacts.clear();
    }
    for (std::size_t k = 0; k < layers.size(); ++k) {
      if (cache) cache->inputs.push_back(cur);
      Matrix z = layers[k].forward(cur);
      if (cache) cache->preacts.push_back(z);
      cur = (k + 1 < layers.size()) ? relu(z) : std::move(z);
    }
    return cur;
  }

  Matrix backward(const Cache& cache, const Matrix& dout, Grads* grads) const {
    if (cache.inputs.size() != layers.size())
      throw DimensionError("MlpEncoder::backward: cache does not match layer count");
    Matrix dy = dout;
    for (std::size_t k = layers.size(); k-- > 0;) {
      if (k + 1 < layers.size()) dy = relu_backward(cache.preacts[k], dy);
      dy = linear_backward(layers[k], cache.inputs[k], dy, grads ? &(*grads)[k] : nullptr);
    }
    return dy;
  }
};

// Stack of linear+ReLU units; depth 0 passes input through unchanged.
struct GeneratorLayer {
  std::vector<Linear> units;

  struct Cache {
    std::vector<Matrix> inputs;
    std::vector<Matrix> preacts;
  };
  using Grads = std::vector<LinearGrads>;

  static GeneratorLayer make(std::size_t depth, std::size_t in, std::size_t out, RngState& rng) {
    GeneratorLayer g;
    for (std::size_t k = 0; k < depth; ++k)
      g.units.push_back(Linear::he_init(k == 0 ? in : out, out, rng));
    return g;
  }

  std::size_t depth() const { return units.size(); }

  Grads make_grads() const {
    Grads g;
    for (const Linear& u : units) g.push_back(zeros_like(u));
    return g;
  }

  Matrix forward(const Matrix& x, Cache* cache) const {
    Matrix cur = x;
    if (cache) {
      cache->inputs.clear();
      cache->preacts.clear();
    }
    for (const Linear& u : units) {
      if (cache) cache->inputs.push_back(cur);
      Matrix z = u.forward(cur);
      if (cache) cache->preacts.push_back(z);
      cur = relu(z);
    }
    return cur;
  }

  Matrix backward(const Cache& cache, const Matrix& dout, Grads* grads) const {
    if (cache.inputs.size() != units.size())
      throw DimensionError("GeneratorLayer::backward: cache does not match unit count");
    Matrix dy = dout;
    for (std::size_t k = units.size(); k-- > 0;) {
      dy = relu_backward(cache.preacts[k], dy);
      dy = linear_backward(units[k], cache.inputs[k], dy, grads ? &(*grads)[k] : nullptr);
    }
    return dy;
  }
};

// Concept-wise split normalization: per row, rescale the first m entries to
// norm sqrt(m) and the remaining n-m to norm sqrt(n-m). Sub-vectors with norm
// below kDegenerateNorm stay zero and are flagged.
struct CsnCache {
  Matrix input;
  std::size_t m = 0;
  std::vector<double> head_norm, tail_norm;
  std::vector<std::uint8_t> head_degen, tail_degen;
  std::size_t degenerate_count = 0;
};

inline Matrix csn(const Matrix& u, std::size_t m, CsnCache* cache = nullptr) {
  const std::size_t n = u.cols();
  if (m < 1 || m >= n)
    throw ParameterError("csn: split m=" + std::to_string(m) + " must satisfy 1 <= m < n=" +
                         std::to_string(n));
  const double head_target = std::sqrt(static_cast<double>(m));
  const double tail_target = std::sqrt(static_cast<double>(n - m));
  Matrix y(u.rows(), n);
  if (cache) {
    cache->input = u;
    cache->m = m;
    cache->head_norm.assign(u.rows(), 0.0);
    cache->tail_norm.assign(u.rows(), 0.0);
    cache->head_degen.assign(u.rows(), 0);
    cache->tail_degen.assign(u.rows(), 0);
    cache->degenerate_count = 0;
  }
  for (std::size_t i = 0; i < u.rows(); ++i) {
    const double* xrow = u.row(i);
    double* yrow = y.row(i);
    double hs = 0.0, ts = 0.0;
    for (std::size_t j = 0; j < m; ++j) hs += xrow[j] * xrow[j];
    for (std::size_t j = m; j < n; ++j) ts += xrow[j] * xrow[j];
    const double hn = std::sqrt(hs), tn = std::sqrt(ts);
    if (cache) {
      cache->head_norm[i] = hn;
      cache->tail_norm[i] = tn;
    }
    if (hn < kDegenerateNorm) {
      if (cache) {
        cache->head_degen[i] = 1;
        ++cache->degenerate_count;
      }
    } else {
      const double s = head_target / hn;
      for (std::size_t j = 0; j < m; ++j) yrow[j] = s * xrow[j];
    }
    if (tn < kDegenerateNorm) {
      if (cache) {
        cache->tail_degen[i] = 1;
        ++cache->degenerate_count;
      }
    } else {
      const double s = tail_target / tn;
      for (std::size_t j = m; j < n; ++j) yrow[j] = s * xrow[j];
    }
  }
  return y;
}

inline Matrix csn_backward(const CsnCache& cache, const Matrix& upstream) {
  const Matrix& x = cache.input;
  detail::check_same_shape(x, upstream, "csn_backward");
  const std::size_t m = cache.m, n = x.cols();
  const double head_target = std::sqrt(static_cast<double>(m));
  const double tail_target = std::sqrt(static_cast<double>(n - m));
  Matrix dx(x.rows(), n);
  auto block = [](const double* xr, const double* gr, double* out, std::size_t lo, std::size_t hi,
                  double norm, double target) {
    double dot = 0.0;
    for (std::size_t j = lo; j < hi; ++j) dot += xr[j] * gr[j];
    dot /= (norm * norm);
    const double s = target / norm;
    for (std::size_t j = lo; j < hi; ++j) out[j] = s * (gr[j] - dot * xr[j]);
  };
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xr = x.row(i);
    const double* gr = upstream.row(i);
    double* out = dx.row(i);
    if (!cache.head_degen[i]) block(xr, gr, out, 0, m, cache.head_norm[i], head_target);
    if (!cache.tail_degen[i]) block(xr, gr, out, m, n, cache.tail_norm[i], tail_target);
  }
  return dx;
}

// Linear + ReLU + optional CSN; widens features from in_dim to n.
struct ExpansionLayer {
  Linear lin;
  std::size_t split_m = 0;
  bool csn_enabled = true;

  struct Cache {
    Matrix input, preact, relu_out;
    CsnCache csn;
  };
  using Grads = LinearGrads;

  std::size_t out_dim() const { return lin.out_dim(); }

  Matrix forward(const Matrix& x, Cache* cache) const {
    Matrix z = lin.forward(x);
    Matrix a = relu(z);
    if (cache) {
      cache->input = x;
      cache->preact = z;
      cache->relu_out = a;
    }
    if (!csn_enabled) return a;
    return csn(a, split_m, cache ? &cache->csn : nullptr);
  }

  Matrix backward(const Cache& cache, const Matrix& dout, Grads* grads) const {
    Matrix da = csn_enabled ? csn_backward(cache.csn, dout) : dout;
    Matrix dz = relu_backward(cache.preact, da);
    return linear_backward(lin, cache.input, dz, grads);
  }
};

// Expansion layer seeded from the final generator unit: its m output units
// are copied verbatim, the n-m new units get N(0, init_scale^2) weights and
// zero bias. init_scale < 0 selects He scale sqrt(2/in). New weight entries
// are drawn row-major.
inline ExpansionLayer expansion_from_generator(const GeneratorLayer& gen, std::size_t n,
                                               double init_scale, RngState& rng) {
  if (gen.units.empty())
    throw ConfigError("expansion_from_generator: generator has no units to extend");
  const Linear& unit = gen.units.back();
  const std::size_t in = unit.in_dim(), m = unit.out_dim();
  if (n <= m)
    throw ParameterError("expansion_from_generator: n=" + std::to_string(n) +
                         " must exceed generator width m=" + std::to_string(m));
  const double scale = init_scale < 0.0 ? std::sqrt(2.0 / static_cast<double>(in)) : init_scale;
  ExpansionLayer el;
  el.split_m = m;
  el.lin.weight = Matrix(in, n);
  el.lin.bias = Matrix(1, n);
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = 0; j < m; ++j) el.lin.weight(i, j) = unit.weight(i, j);
  for (std::size_t j = 0; j < m; ++j) el.lin.bias(0, j) = unit.bias(0, j);
  for (std::size_t i = 0; i < in; ++i)
    for (std::size_t j = m; j < n; ++j) el.lin.weight(i, j) = scale * rng.next_gaussian();
  return el;
}

// Classifier over L2-normalized features and prototypes; logits are cosine
// similarities divided by tau. Degenerate (near-zero) feature rows yield a
// zero logits row and zero gradient, and are counted in the cache.
struct CosineClassifier {
  Matrix weight;  // K x d prototypes

  struct Cache {
    RowNormResult feat, proto;
    double tau = 1.0;
  };

  static CosineClassifier init(std::size_t k, std::size_t d, RngState& rng) {
    if (k == 0 || d == 0) throw ParameterError("CosineClassifier: dimensions must be positive");
    return {gaussian_matrix(k, d, 1.0 / std::sqrt(static_cast<double>(d)), rng)};
  }

  std::size_t n_classes() const { return weight.rows(); }

  Matrix forward(const Matrix& features, double tau, Cache* cache) const {
    if (!(tau > 0.0))
      throw ParameterError("CosineClassifier: tau must be positive, got " + std::to_string(tau));
    if (features.cols() != weight.cols())
      throw DimensionError("CosineClassifier: features " + features.shape_str() +
                           " vs prototypes " + weight.shape_str());
    RowNormResult fn = l2_normalize_rows(features);
    RowNormResult wn = l2_normalize_rows(weight);
    Matrix logits = scale(matmul_nt(fn.normalized, wn.normalized), 1.0 / tau);
    if (cache) {
      cache->feat = std::move(fn);
      cache->proto = std::move(wn);
      cache->tau = tau;
    }
    return logits;
  }

  // Returns dfeatures; accumulates prototype gradient into dweight.
  Matrix backward(const Cache& cache, const Matrix& dlogits, Matrix& dweight) const {
    detail::check_same_shape(dweight, weight, "CosineClassifier::backward dweight");
    const Matrix dcos = scale(dlogits, 1.0 / cache.tau);
    const Matrix dfeat_hat = matmul(dcos, cache.proto.normalized);
    const Matrix dproto_hat = matmul_tn(dcos, cache.feat.normalized);
    add_scaled_inplace(dweight, l2_normalize_rows_backward(cache.proto, dproto_hat), 1.0);
    return l2_normalize_rows_backward(cache.feat, dfeat_hat);
  }
};

}  // namespace conceptgcd
