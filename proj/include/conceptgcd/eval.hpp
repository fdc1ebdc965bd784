#pragma once
// Evaluation: optimal cluster-to-class assignment, clustering accuracy,
// k-means with deterministic seeding, the KL neuron-matching analysis, and
// the split-norm diagnostic.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "conceptgcd/errors.hpp"
#include "conceptgcd/matrix.hpp"
#include "conceptgcd/rng.hpp"

namespace conceptgcd {

namespace detail {

// Potentials-based Hungarian algorithm; minimizes total cost over a square
// matrix. Optionally reports the row -> column matching it found.
inline double hungarian_min_cost(const Matrix& cost, std::vector<std::size_t>* row_to_col) {
  const std::size_t n = cost.rows();
  if (n == 0) {
    if (row_to_col) row_to_col->clear();
    return 0.0;
  }
  const double inf = std::numeric_limits<double>::infinity();
  std::vector<double> u(n + 1, 0.0), v(n + 1, 0.0), minv(n + 1, 0.0);
  std::vector<std::size_t> p(n + 1, 0), way(n + 1, 0);
  std::vector<char> used(n + 1, 0);
  for (std::size_t i = 1; i <= n; ++i) {
    p[0] = i;
    std::size_t j0 = 0;
    std::fill(minv.begin(), minv.end(), inf);
    std::fill(used.begin(), used.end(), 0);
    do {
      used[j0] = 1;
      const std::size_t i0 = p[j0];
      double delta = inf;
      std::size_t j1 = 0;
      for (std::size_t j = 1; j <= n; ++j) {
        if (used[j]) continue;
        const double cur = cost(i0 - 1, j - 1) - u[i0] - v[j];
        if (cur < minv[j]) {
          minv[j] = cur;
          way[j] = j0;
        }
        if (minv[j] < delta) {
          delta = minv[j];
          j1 = j;
        }
      }
      for (std::size_t j = 0; j <= n; ++j) {
        if (used[j]) {
          u[p[j]] += delta;
          v[j] -= delta;
        } else {
          minv[j] -= delta;
        }
      }
      j0 = j1;
    } while (p[j0] != 0);
    do {
      const std::size_t j1 = way[j0];
      p[j0] = p[j1];
      j0 = j1;
    } while (j0 != 0);
  }
  double total = 0.0;
  if (row_to_col) row_to_col->assign(n, 0);
  for (std::size_t j = 1; j <= n; ++j) {
    if (row_to_col) (*row_to_col)[p[j] - 1] = j - 1;
    total += cost(p[j] - 1, j - 1);
  }
  return total;
}

// Maximum achievable benefit over perfect matchings of a square benefit
// matrix (solved as min-cost on the complement).
inline double assignment_value(const Matrix& benefit) {
  const std::size_t n = benefit.rows();
  if (n == 0) return 0.0;
  double mx = benefit(0, 0);
  for (std::size_t i = 0; i < benefit.size(); ++i) mx = std::max(mx, benefit.data()[i]);
  Matrix cost(n, n);
  for (std::size_t i = 0; i < benefit.size(); ++i) cost.data()[i] = mx - benefit.data()[i];
  return static_cast<double>(n) * mx - hungarian_min_cost(cost, nullptr);
}

}  // namespace detail

// Benefit-maximizing perfect matching on a square matrix, canonicalized so
// that among all optimal matchings the lexicographically smallest column
// sequence (row 0 first) is returned. Ties are resolved exactly for integer
// benefits; for general floats a relative tolerance of 1e-9 is used.
inline std::vector<std::size_t> optimal_assignment(const Matrix& benefit) {
  const std::size_t n = benefit.rows();
  if (benefit.cols() != n)
    throw DimensionError("optimal_assignment: benefit matrix must be square, got " +
                         benefit.shape_str());
  if (!benefit.is_finite()) throw NumericError("optimal_assignment: non-finite benefit entry");
  std::vector<std::size_t> result(n);
  if (n == 0) return result;

  const double value = detail::assignment_value(benefit);
  double scale = 1.0;
  for (std::size_t i = 0; i < benefit.size(); ++i)
    scale = std::max(scale, std::abs(benefit.data()[i]) * static_cast<double>(n));
  const double tol = 1e-9 * scale;

  std::vector<std::size_t> remaining(n);
  for (std::size_t j = 0; j < n; ++j) remaining[j] = j;
  double fixed = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    bool placed = false;
    for (std::size_t cand = 0; cand < remaining.size() && !placed; ++cand) {
      const std::size_t j = remaining[cand];
      // Value of the best completion with rows i+1.. over the other columns.
      const std::size_t rest = n - i - 1;
      Matrix minor(rest, rest);
      for (std::size_t r = 0; r < rest; ++r) {
        std::size_t cc = 0;
        for (std::size_t c = 0; c < remaining.size(); ++c) {
          if (c == cand) continue;
          minor(r, cc++) = benefit(i + 1 + r, remaining[c]);
        }
      }
      const double completion = detail::assignment_value(minor);
      if (fixed + benefit(i, j) + completion >= value - tol) {
        result[i] = j;
        fixed += benefit(i, j);
        remaining.erase(remaining.begin() + static_cast<std::ptrdiff_t>(cand));
        placed = true;
      }
    }
    if (!placed) throw NumericError("optimal_assignment: tolerance failure during canonicalization");
  }
  return result;
}

struct AccReport {
  double acc_all = 0.0, acc_known = 0.0, acc_novel = 0.0;
  std::size_t n_all = 0, n_known_samples = 0, n_novel_samples = 0;
  std::vector<std::int32_t> cluster_to_class;  // matching used for all three numbers
};

// Hungarian-matched clustering accuracy. One global matching between
// predicted clusters and ground-truth classes is computed on the full
// contingency table; the known/novel splits reuse it. Subset accuracies are
// 0 when the subset is empty (check the counts).
inline AccReport clustering_accuracy(const std::vector<std::int32_t>& preds,
                                     const std::vector<std::int32_t>& gts,
                                     std::size_t n_known) {
  if (preds.size() != gts.size())
    throw DataError("clustering_accuracy: " + std::to_string(preds.size()) + " predictions vs " +
                    std::to_string(gts.size()) + " labels");
  if (preds.empty()) throw DataError("clustering_accuracy: empty input");
  std::int32_t mx = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    if (preds[i] < 0 || gts[i] < 0)
      throw DataError("clustering_accuracy: negative label at row " + std::to_string(i));
    mx = std::max(mx, std::max(preds[i], gts[i]));
  }
  const std::size_t k = static_cast<std::size_t>(mx) + 1;
  Matrix w(k, k);
  for (std::size_t i = 0; i < preds.size(); ++i)
    w(static_cast<std::size_t>(preds[i]), static_cast<std::size_t>(gts[i])) += 1.0;

  const std::vector<std::size_t> match = optimal_assignment(w);
  AccReport r;
  r.cluster_to_class.resize(k);
  for (std::size_t c = 0; c < k; ++c) r.cluster_to_class[c] = static_cast<std::int32_t>(match[c]);

  std::size_t hit_all = 0, hit_known = 0, hit_novel = 0;
  for (std::size_t i = 0; i < preds.size(); ++i) {
    const bool hit = r.cluster_to_class[static_cast<std::size_t>(preds[i])] == gts[i];
    const bool known = static_cast<std::size_t>(gts[i]) < n_known;
    ++r.n_all;
    if (known) ++r.n_known_samples;
    else ++r.n_novel_samples;
    if (hit) {
      ++hit_all;
      if (known) ++hit_known;
      else ++hit_novel;
    }
  }
  r.acc_all = static_cast<double>(hit_all) / static_cast<double>(r.n_all);
  if (r.n_known_samples > 0)
    r.acc_known = static_cast<double>(hit_known) / static_cast<double>(r.n_known_samples);
  if (r.n_novel_samples > 0)
    r.acc_novel = static_cast<double>(hit_novel) / static_cast<double>(r.n_novel_samples);
  return r;
}

struct KMeansResult {
  std::vector<std::int32_t> labels;
  Matrix centers;
  double objective = 0.0;                 // sum of squared distances at the end
  std::vector<double> objective_history;  // one entry per assignment pass
  std::size_t iterations = 0;
  std::size_t reseeds = 0;  // empty-cluster repairs (may bump the objective)
};

// Lloyd's algorithm with k-means++ seeding. Ties in seeding and assignment
// break toward the lowest index; empty clusters are re-seeded with the point
// farthest from its current center.
inline KMeansResult kmeans(const Matrix& x, std::size_t k, RngState& rng,
                           std::size_t max_iter = 100) {
  const std::size_t n = x.rows(), d = x.cols();
  if (k == 0) throw ParameterError("kmeans: k must be positive");
  if (n < k)
    throw DataError("kmeans: " + std::to_string(n) + " points for k=" + std::to_string(k));

  KMeansResult res;
  res.centers = Matrix(k, d);
  // k-means++: first center uniform, the rest weighted by squared distance
  // to the nearest chosen center.
  std::vector<double> dist2(n, std::numeric_limits<double>::infinity());
  {
    const std::size_t first = static_cast<std::size_t>(rng.next_below(n));
    for (std::size_t j = 0; j < d; ++j) res.centers(0, j) = x(first, j);
    for (std::size_t c = 1; c < k; ++c) {
      double total = 0.0;
      for (std::size_t i = 0; i < n; ++i) {
        const double d2 = squared_distance(x.row(i), res.centers.row(c - 1), d);
        if (d2 < dist2[i]) dist2[i] = d2;
        total += dist2[i];
      }
      std::size_t pick = 0;
      if (total > 0.0) {
        const double r = rng.next_double() * total;
        double cum = 0.0;
        pick = n - 1;
        for (std::size_t i = 0; i < n; ++i) {
          cum += dist2[i];
          if (cum > r) {
            pick = i;
            break;
          }
        }
      } else {
        pick = static_cast<std::size_t>(rng.next_below(n));
      }
      for (std::size_t j = 0; j < d; ++j) res.centers(c, j) = x(pick, j);
    }
  }

  res.labels.assign(n, -1);
  std::vector<std::int32_t> prev(n, -2);
  std::vector<double> assigned_d2(n, 0.0);
  for (std::size_t iter = 0; iter < max_iter; ++iter) {
    // Assignment pass.
    double objective = 0.0;
    for (std::size_t i = 0; i < n; ++i) {
      std::size_t best = 0;
      double bd = squared_distance(x.row(i), res.centers.row(0), d);
      for (std::size_t c = 1; c < k; ++c) {
        const double d2 = squared_distance(x.row(i), res.centers.row(c), d);
        if (d2 < bd) {
          bd = d2;
          best = c;
        }
      }
      res.labels[i] = static_cast<std::int32_t>(best);
      assigned_d2[i] = bd;
      objective += bd;
    }
    res.objective_history.push_back(objective);
    res.objective = objective;
    res.iterations = iter + 1;
    bool reseeded = false;

    // Update pass.
    Matrix sums(k, d);
    std::vector<std::size_t> counts(k, 0);
    for (std::size_t i = 0; i < n; ++i) {
      const auto c = static_cast<std::size_t>(res.labels[i]);
      ++counts[c];
      double* srow = sums.row(c);
      const double* xrow = x.row(i);
      for (std::size_t j = 0; j < d; ++j) srow[j] += xrow[j];
    }
    std::vector<char> stolen(n, 0);
    for (std::size_t c = 0; c < k; ++c) {
      if (counts[c] > 0) {
        const double inv = 1.0 / static_cast<double>(counts[c]);
        for (std::size_t j = 0; j < d; ++j) res.centers(c, j) = sums(c, j) * inv;
        continue;
      }
      // Empty cluster: move it onto the farthest point not already stolen.
      std::size_t far = n;
      double fd = -1.0;
      for (std::size_t i = 0; i < n; ++i)
        if (!stolen[i] && assigned_d2[i] > fd) {
          fd = assigned_d2[i];
          far = i;
        }
      if (far == n) continue;  // fewer distinct points than clusters
      stolen[far] = 1;
      for (std::size_t j = 0; j < d; ++j) res.centers(c, j) = x(far, j);
      ++res.reseeds;
      reseeded = true;
    }

    if (!reseeded && res.labels == prev) break;
    prev = res.labels;
  }
  return res;
}

struct KlHistogram {
  // Bin edges: [0, 0.01), [0.01, 0.1), [0.1, 0.2), [0.2, 0.5), [0.5, 1), [1, inf).
  std::array<std::size_t, 6> bins{};
  std::vector<double> min_kl;  // per reference neuron
};

// Per-neuron response matching. Each column of `a` and `b` holds one
// neuron's responses over the same S probe samples; responses become
// distributions via a temperature-1 softmax over the sample axis, and each
// `a` neuron records its minimum KL divergence to any `b` neuron. Identical
// neuron pairs land at exactly zero (first bin).
inline KlHistogram kl_neuron_analysis(const Matrix& a, const Matrix& b) {
  if (a.rows() != b.rows())
    throw DimensionError("kl_neuron_analysis: sample counts differ, " + a.shape_str() + " vs " +
                         b.shape_str());
  const std::size_t s = a.rows();
  if (s < 2) throw DataError("kl_neuron_analysis: needs at least 2 probe samples");
  if (a.cols() == 0 || b.cols() == 0) throw DataError("kl_neuron_analysis: no neurons");

  // Neuron-major distributions and their logs.
  auto neuron_softmax = [s](const Matrix& resp) {
    Matrix p(resp.cols(), s);
    for (std::size_t j = 0; j < resp.cols(); ++j) {
      double mx = resp(0, j);
      for (std::size_t i = 1; i < s; ++i) mx = std::max(mx, resp(i, j));
      double sum = 0.0;
      double* row = p.row(j);
      for (std::size_t i = 0; i < s; ++i) {
        row[i] = std::exp(resp(i, j) - mx);
        sum += row[i];
      }
      for (std::size_t i = 0; i < s; ++i) row[i] /= sum;
    }
    return p;
  };
  auto log_of = [](const Matrix& p) {
    Matrix lg = p;
    for (std::size_t i = 0; i < lg.size(); ++i)
      lg.data()[i] = std::log(std::max(lg.data()[i], 1e-300));
    return lg;
  };

  const Matrix pa = neuron_softmax(a);
  const Matrix pb = neuron_softmax(b);
  const Matrix log_pa = log_of(pa);
  const Matrix log_pb = log_of(pb);
  // KL(p_a || p_b) = sum p_a log p_a - sum p_a log p_b. Both terms go through
  // matmul_nt so identical distributions cancel bitwise to exactly zero.
  const Matrix self_term = matmul_nt(pa, log_pa);
  const Matrix cross = matmul_nt(pa, log_pb);

  KlHistogram hist;
  hist.min_kl.resize(pa.rows());
  for (std::size_t i = 0; i < pa.rows(); ++i) {
    double best = std::numeric_limits<double>::infinity();
    const double self_i = self_term(i, i);
    for (std::size_t j = 0; j < pb.rows(); ++j)
      best = std::min(best, self_i - cross(i, j));
    if (best < 0.0) best = 0.0;  // rounding guard, KL is non-negative
    hist.min_kl[i] = best;
    const double edges[5] = {0.01, 0.1, 0.2, 0.5, 1.0};
    std::size_t bin = 5;
    for (std::size_t e = 0; e < 5; ++e)
      if (best < edges[e]) {
        bin = e;
        break;
      }
    ++hist.bins[bin];
  }
  return hist;
}

struct NormRatioReport {
  double mean_ratio = 0.0;
  std::size_t rows_used = 0, rows_excluded = 0;
};

// Mean of ||u[m:]|| / ||u|| over rows; all-zero rows are excluded and
// counted. With CSN-normalized features the ratio is sqrt(n-m)/sqrt(n) for
// every non-degenerate row.
inline NormRatioReport norm_ratio_diagnostic(const Matrix& u, std::size_t m) {
  const std::size_t n = u.cols();
  if (m < 1 || m >= n)
    throw ParameterError("norm_ratio_diagnostic: split m=" + std::to_string(m) +
                         " must satisfy 1 <= m < n=" + std::to_string(n));
  NormRatioReport r;
  double sum = 0.0;
  for (std::size_t i = 0; i < u.rows(); ++i) {
    const double* row = u.row(i);
    double head = 0.0, tail = 0.0;
    for (std::size_t j = 0; j < m; ++j) head += row[j] * row[j];
    for (std::size_t j = m; j < n; ++j) tail += row[j] * row[j];
    const double total = std::sqrt(head + tail);
    if (total < kDegenerateNorm) {
      ++r.rows_excluded;
      continue;
    }
    sum += std::sqrt(tail) / total;
    ++r.rows_used;
  }
  if (r.rows_used > 0) r.mean_ratio = sum / static_cast<double>(r.rows_used);
  return r;
}

}  // namespace conceptgcd
