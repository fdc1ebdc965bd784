#pragma once
// The finite-difference suite behind the grad-check command. Every analytic
// gradient in the library is driven through finite_diff_check here, from the
// individual losses up to the full per-stage batch steps.

#include <string>
#include <utility>
#include <vector>

#include "conceptgcd/gradcheck.hpp"
#include "conceptgcd/heads.hpp"
#include "conceptgcd/losses.hpp"
#include "conceptgcd/matrix.hpp"
#include "conceptgcd/rng.hpp"
#include "conceptgcd/trainer.hpp"

namespace conceptgcd {

struct SuiteCase {
  std::string name;
  GradCheckReport report;
  bool passed = false;
};

namespace detail {

inline std::vector<std::pair<std::string, Matrix*>> param_list(
    const std::vector<ParamBinding>& bindings) {
  std::vector<std::pair<std::string, Matrix*>> out;
  for (const ParamBinding& b : bindings) out.emplace_back(b.name, b.param);
  return out;
}

inline std::vector<Matrix> collect_grads(const std::vector<ParamBinding>& bindings) {
  std::vector<Matrix> out;
  for (const ParamBinding& b : bindings) out.push_back(*b.grad);
  return out;
}

}  // namespace detail

inline std::vector<SuiteCase> run_gradcheck_suite(double tolerance = 1e-4) {
  std::vector<SuiteCase> cases;
  auto add = [&](const std::string& name, const GradCheckReport& rep) {
    cases.push_back({name, rep, rep.max_rel_err < tolerance});
  };

  {
    RngState rng(11);
    Matrix logits = gaussian_matrix(5, 7, 1.0, rng);
    const std::vector<std::int32_t> labels = {0, 3, 6, 2, 2};
    add("supervised_ce", finite_diff_check(
                             [&]() {
                               LossGrad r = supervised_ce(logits, labels, 0.1);
                               return LossEval{r.loss, {r.grad}};
                             },
                             {{"logits", &logits}}));
  }

  {
    RngState rng(12);
    Matrix z = gaussian_matrix(6, 5, 1.0, rng);
    add("covariance_loss", finite_diff_check(
                               [&]() {
                                 LossGrad r = covariance_loss(z);
                                 return LossEval{r.loss, {r.grad}};
                               },
                               {{"z", &z}}));
  }

  for (const EntropySign sign : {EntropySign::RewardUniform, EntropySign::Literal}) {
    RngState rng(13);
    Matrix y1 = gaussian_matrix(4, 6, 0.8, rng);
    Matrix y2 = gaussian_matrix(4, 6, 0.8, rng);
    // The sharpened targets are stop-gradient: freeze them at the base point so the
    // probe differentiates the same function the analytic gradient describes.
    const SelfLabelTargets targets{softmax_rows(y1, 0.05), softmax_rows(y2, 0.05)};
    const std::string name = std::string("self_label_loss/") + entropy_sign_name(sign);
    add(name, finite_diff_check(
                  [&]() {
                    SelfLabelResult r = self_label_loss_with_targets(
                        ViewPair{y1, y2, 0.1, 0.05}, targets, 1.0, sign);
                    return LossEval{r.loss, {r.grad_v1, r.grad_v2}};
                  },
                  {{"logits_v1", &y1}, {"logits_v2", &y2}}));
  }

  for (const std::size_t n_neg : {std::size_t{5}, std::size_t{0}}) {
    RngState rng(14);
    Matrix u = gaussian_matrix(3, 4, 1.0, rng);
    const Matrix v = gaussian_matrix(3, 4, 1.0, rng);
    const Matrix negs = gaussian_matrix(n_neg, 4, 1.0, rng);
    const std::string name =
        "contrastive_transfer_loss/" + std::to_string(n_neg) + "-negatives";
    add(name, finite_diff_check(
                  [&]() {
                    ContrastiveResult r =
                        contrastive_transfer_loss(ContrastiveBatch{u, v, negs, 0.1});
                    return LossEval{r.loss, {r.grad_u}};
                  },
                  {{"u_block", &u}}));
  }

  {
    RngState rng(15);
    Matrix u = gaussian_matrix(4, 6, 1.0, rng);
    const Matrix w = gaussian_matrix(4, 6, 1.0, rng);
    add("csn", finite_diff_check(
                   [&]() {
                     CsnCache cache;
                     const Matrix y = csn(u, 2, &cache);
                     double loss = 0.0;
                     for (std::size_t i = 0; i < y.size(); ++i)
                       loss += w.data()[i] * y.data()[i];
                     return LossEval{loss, {csn_backward(cache, w)}};
                   },
                   {{"u", &u}}));
  }

  {
    RngState rng(16);
    Matrix feat = gaussian_matrix(5, 4, 1.0, rng);
    CosineClassifier cls = CosineClassifier::init(6, 4, rng);
    const std::vector<std::int32_t> labels = {1, 0, 5, 3, 3};
    add("cosine_classifier", finite_diff_check(
                                 [&]() {
                                   CosineClassifier::Cache cache;
                                   const Matrix logits = cls.forward(feat, 1.0, &cache);
                                   const LossGrad ce = supervised_ce(logits, labels, 0.1);
                                   Matrix dw(cls.weight.rows(), cls.weight.cols());
                                   Matrix dfeat = cls.backward(cache, ce.grad, dw);
                                   return LossEval{ce.loss, {dfeat, dw}};
                                 },
                                 {{"features", &feat}, {"classifier.weight", &cls.weight}}));
  }

  {
    RngState rng(17);
    Stage1Model model;
    model.encoder = MlpEncoder::make(7, 8, 5, rng);
    model.classifier = CosineClassifier::init(4, 5, rng);
    const Matrix x = gaussian_matrix(6, 7, 1.0, rng);
    const std::vector<std::int32_t> labels = {0, 1, 2, 3, 1, 0};
    TrainConfig cfg;
    Stage1Model::Grads grads = model.make_grads();
    const std::vector<ParamBinding> bindings = model.bindings(grads);
    add("stage1_batch", finite_diff_check(
                            [&]() {
                              Stage1Model::zero(grads);
                              const BatchStats s = stage1_batch(model, x, labels, cfg, grads);
                              return LossEval{s.total, detail::collect_grads(bindings)};
                            },
                            detail::param_list(bindings)));
  }

  {
    RngState rng(18);
    Stage2Model model;
    model.encoder = MlpEncoder::make(7, 8, 5, rng);
    model.gen = GeneratorLayer::make(1, 5, 6, rng);
    model.classifier = CosineClassifier::init(5, 6, rng);
    const Matrix x1 = gaussian_matrix(6, 7, 1.0, rng);
    const Matrix x2 = gaussian_matrix(6, 7, 1.0, rng);
    const std::vector<std::int32_t> labels = {0, -1, 2, -1, -1, 1};
    const std::vector<std::uint8_t> visible = {1, 0, 1, 0, 0, 1};
    TrainConfig cfg;
    Stage2Model::Grads grads = model.make_grads();
    const std::vector<ParamBinding> bindings = model.bindings(grads);
    // Capture the stop-gradient targets once at the base point, then probe with them frozen.
    SelfLabelTargets targets;
    Stage2Model::zero(grads);
    stage2_batch(model, x1, x2, labels, visible, 0.05, cfg, grads, nullptr, &targets);
    add("stage2_batch", finite_diff_check(
                            [&]() {
                              Stage2Model::zero(grads);
                              const BatchStats s = stage2_batch(model, x1, x2, labels, visible,
                                                                0.05, cfg, grads, &targets);
                              return LossEval{s.total, detail::collect_grads(bindings)};
                            },
                            detail::param_list(bindings)));
  }

  for (const std::size_t depth : {std::size_t{1}, std::size_t{2}}) {
    RngState rng(19 + depth);
    Stage3Model model;
    model.upper_encoder = MlpEncoder::make(7, 8, 5, rng);
    model.upper_gen = GeneratorLayer::make(depth, 5, 6, rng);
    model.encoder = MlpEncoder::make(7, 8, 5, rng);
    if (depth > 1)
      model.lower_frozen.units.assign(model.upper_gen.units.begin(),
                                      model.upper_gen.units.end() - 1);
    GeneratorLayer last;
    last.units.push_back(model.upper_gen.units.back());
    model.expansion = expansion_from_generator(last, 10, -1.0, rng);
    model.classifier = CosineClassifier::init(5, 10, rng);
    const Matrix x = gaussian_matrix(6, 7, 1.0, rng);
    const Matrix x1 = gaussian_matrix(6, 7, 1.0, rng);
    const Matrix x2 = gaussian_matrix(6, 7, 1.0, rng);
    const Matrix negatives = gaussian_matrix(8, 6, 1.0, rng);
    const std::vector<std::int32_t> labels = {0, -1, 2, -1, -1, 1};
    const std::vector<std::uint8_t> visible = {1, 0, 1, 0, 0, 1};
    TrainConfig cfg;
    cfg.stage3_cov = true;
    Stage3Model::Grads grads = model.make_grads();
    const std::vector<ParamBinding> bindings = model.bindings(grads);
    SelfLabelTargets targets;
    Stage3Model::zero(grads);
    stage3_batch(model, x, x1, x2, labels, visible, negatives, 0.05, cfg, grads, nullptr,
                 nullptr, &targets);
    add("stage3_batch/depth-" + std::to_string(depth),
        finite_diff_check(
            [&]() {
              Stage3Model::zero(grads);
              const BatchStats s = stage3_batch(model, x, x1, x2, labels, visible, negatives,
                                                0.05, cfg, grads, nullptr, &targets);
              return LossEval{s.total, detail::collect_grads(bindings)};
            },
            detail::param_list(bindings)));
  }

  return cases;
}

}  // namespace conceptgcd
