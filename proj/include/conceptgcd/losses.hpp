#pragma once
// Training losses with analytic gradients. Every gradient here is covered by
// a finite-difference check in the test suite; change a formula and its
// oracle together.

#include <cmath>
#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "conceptgcd/errors.hpp"
#include "conceptgcd/matrix.hpp"

namespace conceptgcd {

struct LossGrad {
  double loss = 0.0;
  Matrix grad;
};

// Mean cross-entropy of softmax(logits / tau) against integer labels.
// grad is w.r.t. the raw logits: (p - onehot) / (B * tau).
inline LossGrad supervised_ce(const Matrix& logits, const std::vector<std::int32_t>& labels,
                              double tau) {
  if (!(tau > 0.0)) throw ParameterError("supervised_ce: tau must be positive");
  if (labels.size() != logits.rows())
    throw DimensionError("supervised_ce: " + std::to_string(labels.size()) + " labels for " +
                         logits.shape_str() + " logits");
  const std::size_t b = logits.rows(), k = logits.cols();
  if (b == 0) throw DataError("supervised_ce: empty batch");
  for (std::size_t i = 0; i < b; ++i)
    if (labels[i] < 0 || static_cast<std::size_t>(labels[i]) >= k)
      throw DataError("supervised_ce: label " + std::to_string(labels[i]) + " at row " +
                      std::to_string(i) + " outside [0, " + std::to_string(k) + ")");
  LossGrad r;
  r.grad = softmax_rows(logits, tau);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double p = r.grad(i, static_cast<std::size_t>(labels[i]));
    total -= std::log(std::max(p, 1e-300));
  }
  r.loss = total / static_cast<double>(b);
  const double inv = 1.0 / (static_cast<double>(b) * tau);
  for (std::size_t i = 0; i < b; ++i) {
    double* row = r.grad.row(i);
    row[static_cast<std::size_t>(labels[i])] -= 1.0;
    for (std::size_t j = 0; j < k; ++j) row[j] *= inv;
  }
  return r;
}

// Off-diagonal covariance penalty. With zc the column-centered batch and
// C = zc^T zc / (B - 1), the loss is sum_{i != j} C_ij^2 / (l (l - 1)).
// Fewer than two feature dimensions make every off-diagonal pair empty, so
// the loss is defined as zero there.
inline LossGrad covariance_loss(const Matrix& z) {
  const std::size_t b = z.rows(), l = z.cols();
  if (b < 2) throw DataError("covariance_loss: needs a batch of at least 2, got " +
                             std::to_string(b));
  LossGrad r;
  r.grad = Matrix(b, l);
  if (l < 2) return r;
  const Matrix mean = col_means(z);
  Matrix zc = z;
  for (std::size_t i = 0; i < b; ++i) {
    double* row = zc.row(i);
    for (std::size_t j = 0; j < l; ++j) row[j] -= mean(0, j);
  }
  Matrix c = scale(matmul_tn(zc, zc), 1.0 / static_cast<double>(b - 1));
  double sq = 0.0;
  for (std::size_t i = 0; i < l; ++i)
    for (std::size_t j = 0; j < l; ++j)
      if (i != j) sq += c(i, j) * c(i, j);
  const double norm = 1.0 / static_cast<double>(l * (l - 1));
  r.loss = sq * norm;
  // dL/dC with the diagonal zeroed, then dL/dzc = 2 zc (dL/dC) / (B-1) and a
  // column-mean correction for the centering.
  for (std::size_t i = 0; i < l; ++i) c(i, i) = 0.0;
  const Matrix dzc = scale(matmul(zc, c), 4.0 * norm / static_cast<double>(b - 1));
  const Matrix colmean = col_means(dzc);
  for (std::size_t i = 0; i < b; ++i) {
    const double* src = dzc.row(i);
    double* dst = r.grad.row(i);
    for (std::size_t j = 0; j < l; ++j) dst[j] = src[j] - colmean(0, j);
  }
  return r;
}

// Linear mix (1 - alpha) * sup + alpha * unsup of two losses over the same
// tensor; gradients must share a shape.
inline LossGrad base_loss(const LossGrad& sup, const LossGrad& unsup, double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw ParameterError("base_loss: alpha must lie in [0, 1], got " + std::to_string(alpha));
  if (!sup.grad.same_shape(unsup.grad))
    throw DimensionError("base_loss: gradient shapes " + sup.grad.shape_str() + " vs " +
                         unsup.grad.shape_str());
  LossGrad r;
  r.loss = (1.0 - alpha) * sup.loss + alpha * unsup.loss;
  r.grad = scale(sup.grad, 1.0 - alpha);
  add_scaled_inplace(r.grad, unsup.grad, alpha);
  return r;
}

inline double base_total(double sup, double unsup, double alpha) {
  if (alpha < 0.0 || alpha > 1.0)
    throw ParameterError("base_total: alpha must lie in [0, 1], got " + std::to_string(alpha));
  return (1.0 - alpha) * sup + alpha * unsup;
}

inline double stage1_loss(double sup, double cov, double lambda) {
  if (lambda < 0.0) throw ParameterError("stage1_loss: lambda must be non-negative");
  return sup + lambda * cov;
}

inline double stage2_loss(double base, double cov, double lambda) {
  if (lambda < 0.0) throw ParameterError("stage2_loss: lambda must be non-negative");
  return base + lambda * cov;
}

inline double stage3_loss(double base, double smi, double beta) {
  if (beta < 0.0) throw ParameterError("stage3_loss: beta must be non-negative");
  return base + beta * smi;
}

// Whether the mean-prediction entropy term rewards or penalizes a uniform
// mean. RewardUniform subtracts epsilon * H(mean p) from the loss; Literal
// adds it.
enum class EntropySign { RewardUniform, Literal };

struct ViewPair {
  Matrix logits_v1, logits_v2;  // raw cosine logits, shared rows
  double tau = 0.1;             // sharpens the learner's predictions
  double tau_prime = 0.07;      // sharpens the stop-gradient targets
};

struct SelfLabelResult {
  double loss = 0.0;
  double cross = 0.0;
  double entropy = 0.0;  // H(mean prediction)
  Matrix grad_v1, grad_v2;
};

// Sharpened target distributions for the two views, treated as constants by
// the gradients below (no gradient flows through them).
struct SelfLabelTargets {
  Matrix q1, q2;
};

// Swapped-prediction loss against explicit fixed targets: each view's
// softmax at tau is trained toward the other view's target, plus the
// epsilon-weighted entropy of the mean prediction. The gradients are exact
// derivatives of this function for constant targets, which is what a
// finite-difference probe should hold fixed.
inline SelfLabelResult self_label_loss_with_targets(
    const ViewPair& pair, const SelfLabelTargets& targets, double epsilon,
    EntropySign sign = EntropySign::RewardUniform) {
  if (!(pair.tau > 0.0)) throw ParameterError("self_label_loss: temperatures must be positive");
  if (epsilon < 0.0) throw ParameterError("self_label_loss: epsilon must be non-negative");
  if (!pair.logits_v1.same_shape(pair.logits_v2))
    throw DimensionError("self_label_loss: view shapes " + pair.logits_v1.shape_str() + " vs " +
                         pair.logits_v2.shape_str());
  if (!targets.q1.same_shape(pair.logits_v1) || !targets.q2.same_shape(pair.logits_v2))
    throw DimensionError("self_label_loss: target shapes do not match the logits");
  const std::size_t b = pair.logits_v1.rows(), k = pair.logits_v1.cols();
  if (b == 0) throw DataError("self_label_loss: empty batch");

  const Matrix p1 = softmax_rows(pair.logits_v1, pair.tau);
  const Matrix p2 = softmax_rows(pair.logits_v2, pair.tau);
  const Matrix& q1 = targets.q1;
  const Matrix& q2 = targets.q2;

  SelfLabelResult r;
  double cross = 0.0;
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < k; ++j) {
      cross -= q2(i, j) * std::log(std::max(p1(i, j), 1e-300));
      cross -= q1(i, j) * std::log(std::max(p2(i, j), 1e-300));
    }
  r.cross = cross / (2.0 * static_cast<double>(b));

  std::vector<double> log_mean(k);
  double entropy = 0.0;
  {
    Matrix mean = col_sums(p1);
    const Matrix m2 = col_sums(p2);
    for (std::size_t j = 0; j < k; ++j) {
      const double m = (mean(0, j) + m2(0, j)) / (2.0 * static_cast<double>(b));
      log_mean[j] = std::log(std::max(m, 1e-300));
      entropy -= m * log_mean[j];
    }
  }
  r.entropy = entropy;
  const double sign_factor = sign == EntropySign::Literal ? 1.0 : -1.0;
  r.loss = r.cross + sign_factor * epsilon * entropy;

  // Cross term: d/dy1 = (p1 - q2) / (2 B tau). Entropy term, with
  // s_i = sum_k p_ik log m_k: d/dy1_ik = p1_ik (s_i - log m_k) / (2 B tau).
  const double inv = 1.0 / (2.0 * static_cast<double>(b) * pair.tau);
  auto view_grad = [&](const Matrix& p, const Matrix& q_other) {
    Matrix g(b, k);
    for (std::size_t i = 0; i < b; ++i) {
      const double* prow = p.row(i);
      const double* qrow = q_other.row(i);
      double* grow = g.row(i);
      double s = 0.0;
      for (std::size_t j = 0; j < k; ++j) s += prow[j] * log_mean[j];
      for (std::size_t j = 0; j < k; ++j) {
        const double ent = prow[j] * (s - log_mean[j]);
        grow[j] = inv * (prow[j] - qrow[j] + sign_factor * epsilon * ent);
      }
    }
    return g;
  };
  r.grad_v1 = view_grad(p1, q2);
  r.grad_v2 = view_grad(p2, q1);
  return r;
}

// Production form: the targets are the same logits sharpened at tau_prime
// and detached. `targets_out`, when given, receives them so a caller can
// re-evaluate with the targets frozen.
inline SelfLabelResult self_label_loss(const ViewPair& pair, double epsilon,
                                       EntropySign sign = EntropySign::RewardUniform,
                                       SelfLabelTargets* targets_out = nullptr) {
  if (!(pair.tau > 0.0) || !(pair.tau_prime > 0.0))
    throw ParameterError("self_label_loss: temperatures must be positive");
  if (!pair.logits_v1.same_shape(pair.logits_v2))
    throw DimensionError("self_label_loss: view shapes " + pair.logits_v1.shape_str() + " vs " +
                         pair.logits_v2.shape_str());
  if (pair.logits_v1.rows() == 0) throw DataError("self_label_loss: empty batch");
  SelfLabelTargets targets{softmax_rows(pair.logits_v1, pair.tau_prime),
                           softmax_rows(pair.logits_v2, pair.tau_prime)};
  const SelfLabelResult r = self_label_loss_with_targets(pair, targets, epsilon, sign);
  if (targets_out) *targets_out = std::move(targets);
  return r;
}

struct ContrastiveBatch {
  Matrix u_block;    // B x m, trainable side
  Matrix v_block;    // B x m, positives (no gradient)
  Matrix negatives;  // R x m memory rows (no gradient); R may be 0
  double tau = 0.1;
};

struct ContrastiveResult {
  double loss = 0.0;
  Matrix grad_u;
};

// InfoNCE between matched rows of u and v with shared memory negatives.
// All vectors are L2-normalized internally; the gradient flows only into u.
// With no negatives every per-sample term is exactly zero.
inline ContrastiveResult contrastive_transfer_loss(const ContrastiveBatch& batch) {
  if (!(batch.tau > 0.0)) throw ParameterError("contrastive_transfer_loss: tau must be positive");
  if (!batch.u_block.same_shape(batch.v_block))
    throw DimensionError("contrastive_transfer_loss: u " + batch.u_block.shape_str() + " vs v " +
                         batch.v_block.shape_str());
  const std::size_t b = batch.u_block.rows(), m = batch.u_block.cols();
  const std::size_t neg = batch.negatives.rows();
  if (neg > 0 && batch.negatives.cols() != m)
    throw DimensionError("contrastive_transfer_loss: negatives " + batch.negatives.shape_str() +
                         " vs feature width " + std::to_string(m));
  ContrastiveResult r;
  r.grad_u = Matrix(b, m);
  if (b == 0) return r;

  const RowNormResult un = l2_normalize_rows(batch.u_block);
  const RowNormResult vn = l2_normalize_rows(batch.v_block);
  const RowNormResult zn = l2_normalize_rows(batch.negatives);

  Matrix neg_scores = neg > 0 ? matmul_nt(un.normalized, zn.normalized) : Matrix(b, 0);
  Matrix du_hat(b, m);
  double total = 0.0;
  const double inv_tau = 1.0 / batch.tau;
  for (std::size_t i = 0; i < b; ++i) {
    const double* u_hat = un.normalized.row(i);
    const double* v_hat = vn.normalized.row(i);
    double pos = 0.0;
    for (std::size_t j = 0; j < m; ++j) pos += u_hat[j] * v_hat[j];
    pos *= inv_tau;
    double mx = pos;
    const double* srow = neg > 0 ? neg_scores.row(i) : nullptr;
    for (std::size_t j = 0; j < neg; ++j) mx = std::max(mx, srow[j] * inv_tau);
    double denom = std::exp(pos - mx);
    for (std::size_t j = 0; j < neg; ++j) denom += std::exp(srow[j] * inv_tau - mx);
    const double log_denom = mx + std::log(denom);
    total += log_denom - pos;

    const double w_pos = std::exp(pos - log_denom);
    double* drow = du_hat.row(i);
    for (std::size_t j = 0; j < m; ++j) drow[j] = (w_pos - 1.0) * v_hat[j];
    for (std::size_t j = 0; j < neg; ++j) {
      const double w = std::exp(srow[j] * inv_tau - log_denom);
      const double* z_hat = zn.normalized.row(j);
      for (std::size_t d = 0; d < m; ++d) drow[d] += w * z_hat[d];
    }
    const double unit = inv_tau / static_cast<double>(b);
    for (std::size_t j = 0; j < m; ++j) drow[j] *= unit;
  }
  r.loss = total / static_cast<double>(b);
  r.grad_u = l2_normalize_rows_backward(un, du_hat);
  return r;
}

}  // namespace conceptgcd
