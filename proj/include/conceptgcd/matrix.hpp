#pragma once
// Dense row-major double matrix plus the linear-algebra and elementwise
// kernels used by the pipeline. Everything is single-threaded and uses a
// fixed accumulation order (k ascending), so repeated runs are bitwise
// reproducible.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <string>
#include <vector>

#include "conceptgcd/errors.hpp"

namespace conceptgcd {

class Matrix {
 public:
  Matrix() = default;
  Matrix(std::size_t rows, std::size_t cols, double fill = 0.0)
      : rows_(rows), cols_(cols), data_(rows * cols, fill) {}

  std::size_t rows() const { return rows_; }
  std::size_t cols() const { return cols_; }
  std::size_t size() const { return data_.size(); }
  bool empty() const { return data_.empty(); }

  double& operator()(std::size_t r, std::size_t c) { return data_[r * cols_ + c]; }
  double operator()(std::size_t r, std::size_t c) const { return data_[r * cols_ + c]; }

  double* row(std::size_t r) { return data_.data() + r * cols_; }
  const double* row(std::size_t r) const { return data_.data() + r * cols_; }

  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }

  void fill(double v) { data_.assign(data_.size(), v); }

  bool same_shape(const Matrix& o) const { return rows_ == o.rows_ && cols_ == o.cols_; }

  std::string shape_str() const {
    return std::to_string(rows_) + "x" + std::to_string(cols_);
  }

  bool is_finite() const {
    for (double v : data_)
      if (!std::isfinite(v)) return false;
    return true;
  }

  static Matrix identity(std::size_t n) {
    Matrix m(n, n);
    for (std::size_t i = 0; i < n; ++i) m(i, i) = 1.0;
    return m;
  }

  bool operator==(const Matrix& o) const {
    return rows_ == o.rows_ && cols_ == o.cols_ && data_ == o.data_;
  }

 private:
  std::size_t rows_ = 0, cols_ = 0;
  std::vector<double> data_;
};

namespace detail {
inline void check_same_shape(const Matrix& a, const Matrix& b, const char* op) {
  if (!a.same_shape(b))
    throw DimensionError(std::string(op) + ": shape mismatch " + a.shape_str() + " vs " +
                         b.shape_str());
}
}  // namespace detail

// c = a * b. ikj loop order: per output entry the k-sum runs ascending,
// matching the naive triple loop exactly.
inline Matrix matmul(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.rows())
    throw DimensionError("matmul: incompatible shapes " + a.shape_str() + " * " + b.shape_str());
  Matrix c(a.rows(), b.cols());
  const std::size_t q = a.cols(), r = b.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (std::size_t k = 0; k < q; ++k) {
      const double aik = arow[k];
      const double* brow = b.row(k);
      for (std::size_t j = 0; j < r; ++j) crow[j] += aik * brow[j];
    }
  }
  return c;
}

// c = a * b^T with a (p x q), b (r x q): row-row dot products.
inline Matrix matmul_nt(const Matrix& a, const Matrix& b) {
  if (a.cols() != b.cols())
    throw DimensionError("matmul_nt: incompatible shapes " + a.shape_str() + " * " +
                         b.shape_str() + "^T");
  Matrix c(a.rows(), b.rows());
  const std::size_t q = a.cols();
  for (std::size_t i = 0; i < a.rows(); ++i) {
    const double* arow = a.row(i);
    double* crow = c.row(i);
    for (std::size_t j = 0; j < b.rows(); ++j) {
      const double* brow = b.row(j);
      double s = 0.0;
      for (std::size_t k = 0; k < q; ++k) s += arow[k] * brow[k];
      crow[j] = s;
    }
  }
  return c;
}

// c = a^T * b with a (B x p), b (B x q): accumulated over the batch axis.
inline Matrix matmul_tn(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw DimensionError("matmul_tn: incompatible shapes " + a.shape_str() + "^T * " +
                         b.shape_str());
  Matrix c(a.cols(), b.cols());
  const std::size_t p = a.cols(), q = b.cols();
  for (std::size_t k = 0; k < a.rows(); ++k) {
    const double* arow = a.row(k);
    const double* brow = b.row(k);
    for (std::size_t i = 0; i < p; ++i) {
      const double aki = arow[i];
      double* crow = c.row(i);
      for (std::size_t j = 0; j < q; ++j) crow[j] += aki * brow[j];
    }
  }
  return c;
}

inline Matrix transpose(const Matrix& a) {
  Matrix t(a.cols(), a.rows());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < a.cols(); ++j) t(j, i) = a(i, j);
  return t;
}

inline Matrix add(const Matrix& a, const Matrix& b) {
  detail::check_same_shape(a, b, "add");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] += b.data()[i];
  return c;
}

inline Matrix sub(const Matrix& a, const Matrix& b) {
  detail::check_same_shape(a, b, "sub");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] -= b.data()[i];
  return c;
}

inline Matrix scale(const Matrix& a, double s) {
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= s;
  return c;
}

inline void add_scaled_inplace(Matrix& dst, const Matrix& src, double s) {
  detail::check_same_shape(dst, src, "add_scaled_inplace");
  for (std::size_t i = 0; i < dst.size(); ++i) dst.data()[i] += s * src.data()[i];
}

inline Matrix hadamard(const Matrix& a, const Matrix& b) {
  detail::check_same_shape(a, b, "hadamard");
  Matrix c = a;
  for (std::size_t i = 0; i < c.size(); ++i) c.data()[i] *= b.data()[i];
  return c;
}

// y = x + broadcast(bias), bias is 1 x cols.
inline Matrix add_row_vector(const Matrix& x, const Matrix& bias) {
  if (bias.rows() != 1 || bias.cols() != x.cols())
    throw DimensionError("add_row_vector: bias " + bias.shape_str() + " does not broadcast to " +
                         x.shape_str());
  Matrix y = x;
  const double* b = bias.row(0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    double* yrow = y.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) yrow[j] += b[j];
  }
  return y;
}

// 1 x cols row of column sums.
inline Matrix col_sums(const Matrix& x) {
  Matrix s(1, x.cols());
  double* srow = s.row(0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xrow = x.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) srow[j] += xrow[j];
  }
  return s;
}

inline Matrix col_means(const Matrix& x) {
  if (x.rows() == 0) throw DataError("col_means: empty matrix");
  return scale(col_sums(x), 1.0 / static_cast<double>(x.rows()));
}

inline Matrix relu(const Matrix& x) {
  Matrix y = x;
  for (std::size_t i = 0; i < y.size(); ++i)
    if (y.data()[i] < 0.0) y.data()[i] = 0.0;
  return y;
}

// Gradient through relu evaluated at pre-activation x; zero where x <= 0.
inline Matrix relu_backward(const Matrix& x, const Matrix& upstream) {
  detail::check_same_shape(x, upstream, "relu_backward");
  Matrix g = upstream;
  for (std::size_t i = 0; i < g.size(); ++i)
    if (x.data()[i] <= 0.0) g.data()[i] = 0.0;
  return g;
}

// Row-wise softmax of x / temperature, max-shifted for stability.
inline Matrix softmax_rows(const Matrix& x, double temperature = 1.0) {
  if (!(temperature > 0.0))
    throw ParameterError("softmax_rows: temperature must be positive, got " +
                         std::to_string(temperature));
  Matrix p(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xrow = x.row(i);
    double* prow = p.row(i);
    double mx = xrow[0] / temperature;
    for (std::size_t j = 1; j < x.cols(); ++j) mx = std::max(mx, xrow[j] / temperature);
    double sum = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) {
      prow[j] = std::exp(xrow[j] / temperature - mx);
      sum += prow[j];
    }
    for (std::size_t j = 0; j < x.cols(); ++j) prow[j] /= sum;
  }
  return p;
}

constexpr double kDegenerateNorm = 1e-12;

// Row-wise L2 normalization. Rows with norm below kDegenerateNorm are left
// at zero and flagged instead of divided.
struct RowNormResult {
  Matrix normalized;
  std::vector<double> norms;
  std::vector<std::uint8_t> degenerate;
  std::size_t degenerate_count = 0;
};

inline RowNormResult l2_normalize_rows(const Matrix& x) {
  RowNormResult r;
  r.normalized = Matrix(x.rows(), x.cols());
  r.norms.resize(x.rows());
  r.degenerate.assign(x.rows(), 0);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* xrow = x.row(i);
    double s = 0.0;
    for (std::size_t j = 0; j < x.cols(); ++j) s += xrow[j] * xrow[j];
    const double norm = std::sqrt(s);
    r.norms[i] = norm;
    if (norm < kDegenerateNorm) {
      r.degenerate[i] = 1;
      ++r.degenerate_count;
      continue;
    }
    double* yrow = r.normalized.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) yrow[j] = xrow[j] / norm;
  }
  return r;
}

// Gradient of y = x / ||x|| per row: dx = (dy - (y . dy) y) / ||x||.
// Degenerate rows get zero gradient.
inline Matrix l2_normalize_rows_backward(const RowNormResult& fwd, const Matrix& upstream) {
  detail::check_same_shape(fwd.normalized, upstream, "l2_normalize_rows_backward");
  Matrix dx(upstream.rows(), upstream.cols());
  for (std::size_t i = 0; i < upstream.rows(); ++i) {
    if (fwd.degenerate[i]) continue;
    const double* y = fwd.normalized.row(i);
    const double* dy = upstream.row(i);
    double dot = 0.0;
    for (std::size_t j = 0; j < upstream.cols(); ++j) dot += y[j] * dy[j];
    double* out = dx.row(i);
    const double inv = 1.0 / fwd.norms[i];
    for (std::size_t j = 0; j < upstream.cols(); ++j) out[j] = (dy[j] - dot * y[j]) * inv;
  }
  return dx;
}

inline Matrix take_rows(const Matrix& x, const std::vector<std::size_t>& idx) {
  Matrix y(idx.size(), x.cols());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= x.rows())
      throw DimensionError("take_rows: index " + std::to_string(idx[i]) + " out of " +
                           std::to_string(x.rows()) + " rows");
    const double* src = x.row(idx[i]);
    double* dst = y.row(i);
    for (std::size_t j = 0; j < x.cols(); ++j) dst[j] = src[j];
  }
  return y;
}

inline void scatter_add_rows(Matrix& dst, const std::vector<std::size_t>& idx, const Matrix& src,
                             double weight = 1.0) {
  if (src.rows() != idx.size() || src.cols() != dst.cols())
    throw DimensionError("scatter_add_rows: source " + src.shape_str() + " does not fit " +
                         std::to_string(idx.size()) + " rows of " + dst.shape_str());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] >= dst.rows())
      throw DimensionError("scatter_add_rows: index " + std::to_string(idx[i]) + " out of " +
                           std::to_string(dst.rows()) + " rows");
    double* d = dst.row(idx[i]);
    const double* s = src.row(i);
    for (std::size_t j = 0; j < dst.cols(); ++j) d[j] += weight * s[j];
  }
}

// Columns [lo, hi) of x as a new matrix.
inline Matrix slice_cols(const Matrix& x, std::size_t lo, std::size_t hi) {
  if (lo > hi || hi > x.cols())
    throw DimensionError("slice_cols: [" + std::to_string(lo) + ", " + std::to_string(hi) +
                         ") out of " + std::to_string(x.cols()) + " columns");
  Matrix y(x.rows(), hi - lo);
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* src = x.row(i) + lo;
    double* dst = y.row(i);
    for (std::size_t j = 0; j < hi - lo; ++j) dst[j] = src[j];
  }
  return y;
}

// Index of the first maximal entry per row.
inline std::vector<std::int32_t> argmax_rows(const Matrix& x) {
  if (x.cols() == 0) throw DataError("argmax_rows: zero columns");
  std::vector<std::int32_t> out(x.rows());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    const double* row = x.row(i);
    std::size_t best = 0;
    for (std::size_t j = 1; j < x.cols(); ++j)
      if (row[j] > row[best]) best = j;
    out[i] = static_cast<std::int32_t>(best);
  }
  return out;
}

inline double squared_distance(const double* a, const double* b, std::size_t n) {
  double s = 0.0;
  for (std::size_t j = 0; j < n; ++j) {
    const double d = a[j] - b[j];
    s += d * d;
  }
  return s;
}

}  // namespace conceptgcd
