#pragma once
// Three-stage training pipeline: configuration, schedules, SGD with
// momentum, the FIFO negative memory, per-batch forward/backward for each
// stage, and the epoch loops that produce checkpoints and JSON-lines logs.
//
// Stage 1 fits the encoder and a known-class cosine classifier on the
// labeled subset. Stage 2 freezes that encoder and fits a generator layer
// plus a full classifier on all samples. Stage 3 keeps the stage-2 branch
// frozen as a teacher, re-trains a copy of the stage-1 encoder under an
// expansion layer seeded from the generator, and ties the two branches
// together with a contrastive transfer loss over a memory of past teacher
// features.
//
// RNG streams are derived from config.seed as (stage * 100 + purpose):
// x01 initializes parameters, x02 drives epoch shuffles and augmentation
// noise, in call order. gen-data and k-means use the seed directly.

#include <chrono>
#include <cmath>
#include <cstdint>
#include <ostream>
#include <string>
#include <utility>
#include <vector>

#include <json.hpp>

#include "conceptgcd/checkpoint.hpp"
#include "conceptgcd/dataset.hpp"
#include "conceptgcd/errors.hpp"
#include "conceptgcd/heads.hpp"
#include "conceptgcd/losses.hpp"
#include "conceptgcd/matrix.hpp"
#include "conceptgcd/rng.hpp"

namespace conceptgcd {

struct TrainConfig {
  std::uint64_t seed = 7;

  // architecture
  std::size_t l = 64;        // encoder feature width
  std::size_t hidden = 128;  // encoder hidden width
  std::size_t m = 128;       // generator width (2l)
  std::size_t n = 640;       // expansion width (10l)
  std::size_t gl_depth = 1;  // 0 trains the baseline head directly on l

  // loss weights and temperatures
  double alpha = 0.35;
  double beta = 0.1;
  double lambda = 1.0;
  double epsilon = 1.0;
  double tau = 0.1;
  double tau_prime_init = 0.07;
  double tau_prime_final = 0.04;
  std::size_t tau_prime_warmup_epochs = 30;
  EntropySign entropy_sign = EntropySign::RewardUniform;

  // optimization
  double lr_init = 1.0;
  double lr_final = 1e-4;
  double momentum = 0.9;
  double weight_decay = 5e-5;
  std::size_t batch_size = 128;
  std::size_t epochs_stage1 = 100;
  std::size_t epochs_stage2 = 100;
  std::size_t epochs_stage3 = 200;

  // stage 2/3 specifics
  double sigma_aug = 0.1;
  std::size_t memory_capacity = 2048;
  double el_init_scale = -1.0;  // < 0 selects He scale for the new units
  bool csn = true;
  bool stage3_cov = false;
  bool stage3_warm_start_classifier = false;

  bool log_timing = true;  // wall_ms in epoch logs; off for byte-stable logs

  void validate() const {
    if (l < 1) throw ConfigError("config: l must be at least 1");
    if (hidden < 1) throw ConfigError("config: hidden must be at least 1");
    if (gl_depth > 0 && m < 1) throw ConfigError("config: m must be at least 1");
    if (n <= (gl_depth > 0 ? m : l))
      throw ConfigError("config: n must exceed the generator width");
    if (csn && gl_depth > 0 && m >= n) throw ConfigError("config: CSN needs m < n");
    if (alpha < 0.0 || alpha > 1.0) throw ConfigError("config: alpha must lie in [0, 1]");
    if (beta < 0.0) throw ConfigError("config: beta must be non-negative");
    if (lambda < 0.0) throw ConfigError("config: lambda must be non-negative");
    if (epsilon < 0.0) throw ConfigError("config: epsilon must be non-negative");
    if (!(tau > 0.0) || !(tau_prime_init > 0.0) || !(tau_prime_final > 0.0))
      throw ConfigError("config: temperatures must be positive");
    if (!(lr_init > 0.0) || lr_final < 0.0) throw ConfigError("config: bad learning rates");
    if (momentum < 0.0 || momentum >= 1.0)
      throw ConfigError("config: momentum must lie in [0, 1)");
    if (weight_decay < 0.0) throw ConfigError("config: weight_decay must be non-negative");
    if (batch_size < 2) throw ConfigError("config: batch_size must be at least 2");
    if (epochs_stage1 < 1 || epochs_stage2 < 1 || epochs_stage3 < 1)
      throw ConfigError("config: epoch counts must be positive");
    if (sigma_aug < 0.0) throw ConfigError("config: sigma_aug must be non-negative");
  }
};

inline std::string entropy_sign_name(EntropySign s) {
  return s == EntropySign::RewardUniform ? "reward_uniform" : "literal";
}

inline EntropySign entropy_sign_from(const std::string& s) {
  if (s == "reward_uniform") return EntropySign::RewardUniform;
  if (s == "literal") return EntropySign::Literal;
  throw ConfigError("config: entropy_sign must be reward_uniform or literal, got " + s);
}

inline nlohmann::ordered_json config_to_json(const TrainConfig& c) {
  nlohmann::ordered_json j;
  j["seed"] = c.seed;
  j["l"] = c.l;
  j["hidden"] = c.hidden;
  j["m"] = c.m;
  j["n"] = c.n;
  j["gl_depth"] = c.gl_depth;
  j["alpha"] = c.alpha;
  j["beta"] = c.beta;
  j["lambda"] = c.lambda;
  j["epsilon"] = c.epsilon;
  j["tau"] = c.tau;
  j["tau_prime_init"] = c.tau_prime_init;
  j["tau_prime_final"] = c.tau_prime_final;
  j["tau_prime_warmup_epochs"] = c.tau_prime_warmup_epochs;
  j["entropy_sign"] = entropy_sign_name(c.entropy_sign);
  j["lr_init"] = c.lr_init;
  j["lr_final"] = c.lr_final;
  j["momentum"] = c.momentum;
  j["weight_decay"] = c.weight_decay;
  j["batch_size"] = c.batch_size;
  j["epochs_stage1"] = c.epochs_stage1;
  j["epochs_stage2"] = c.epochs_stage2;
  j["epochs_stage3"] = c.epochs_stage3;
  j["sigma_aug"] = c.sigma_aug;
  j["memory_capacity"] = c.memory_capacity;
  j["el_init_scale"] = c.el_init_scale;
  j["csn"] = c.csn;
  j["stage3_cov"] = c.stage3_cov;
  j["stage3_warm_start_classifier"] = c.stage3_warm_start_classifier;
  j["log_timing"] = c.log_timing;
  return j;
}

// Applies the keys present in j on top of `base`; unknown keys are an error
// listing every offender.
inline TrainConfig config_from_json(const nlohmann::json& j, TrainConfig base = {}) {
  if (!j.is_object()) throw ConfigError("config: expected a JSON object");
  static const char* known[] = {
      "seed", "l", "hidden", "m", "n", "gl_depth", "alpha", "beta", "lambda", "epsilon",
      "tau", "tau_prime_init", "tau_prime_final", "tau_prime_warmup_epochs", "entropy_sign",
      "lr_init", "lr_final", "momentum", "weight_decay", "batch_size", "epochs_stage1",
      "epochs_stage2", "epochs_stage3", "sigma_aug", "memory_capacity", "el_init_scale",
      "csn", "stage3_cov", "stage3_warm_start_classifier", "log_timing"};
  std::string unknown;
  for (auto it = j.begin(); it != j.end(); ++it) {
    bool ok = false;
    for (const char* k : known)
      if (it.key() == k) {
        ok = true;
        break;
      }
    if (!ok) unknown += (unknown.empty() ? "" : ", ") + it.key();
  }
  if (!unknown.empty()) throw ConfigError("config: unknown keys: " + unknown);

  TrainConfig c = base;
  try {
    if (j.contains("seed")) c.seed = j["seed"].get<std::uint64_t>();
    if (j.contains("l")) c.l = j["l"].get<std::size_t>();
    if (j.contains("hidden")) c.hidden = j["hidden"].get<std::size_t>();
    if (j.contains("m")) c.m = j["m"].get<std::size_t>();
    if (j.contains("n")) c.n = j["n"].get<std::size_t>();
    if (j.contains("gl_depth")) c.gl_depth = j["gl_depth"].get<std::size_t>();
    if (j.contains("alpha")) c.alpha = j["alpha"].get<double>();
    if (j.contains("beta")) c.beta = j["beta"].get<double>();
    if (j.contains("lambda")) c.lambda = j["lambda"].get<double>();
    if (j.contains("epsilon")) c.epsilon = j["epsilon"].get<double>();
    if (j.contains("tau")) c.tau = j["tau"].get<double>();
    if (j.contains("tau_prime_init")) c.tau_prime_init = j["tau_prime_init"].get<double>();
    if (j.contains("tau_prime_final")) c.tau_prime_final = j["tau_prime_final"].get<double>();
    if (j.contains("tau_prime_warmup_epochs"))
      c.tau_prime_warmup_epochs = j["tau_prime_warmup_epochs"].get<std::size_t>();
    if (j.contains("entropy_sign"))
      c.entropy_sign = entropy_sign_from(j["entropy_sign"].get<std::string>());
    if (j.contains("lr_init")) c.lr_init = j["lr_init"].get<double>();
    if (j.contains("lr_final")) c.lr_final = j["lr_final"].get<double>();
    if (j.contains("momentum")) c.momentum = j["momentum"].get<double>();
    if (j.contains("weight_decay")) c.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("batch_size")) c.batch_size = j["batch_size"].get<std::size_t>();
    if (j.contains("epochs_stage1")) c.epochs_stage1 = j["epochs_stage1"].get<std::size_t>();
    if (j.contains("epochs_stage2")) c.epochs_stage2 = j["epochs_stage2"].get<std::size_t>();
    if (j.contains("epochs_stage3")) c.epochs_stage3 = j["epochs_stage3"].get<std::size_t>();
    if (j.contains("sigma_aug")) c.sigma_aug = j["sigma_aug"].get<double>();
    if (j.contains("memory_capacity"))
      c.memory_capacity = j["memory_capacity"].get<std::size_t>();
    if (j.contains("el_init_scale")) c.el_init_scale = j["el_init_scale"].get<double>();
    if (j.contains("csn")) c.csn = j["csn"].get<bool>();
    if (j.contains("stage3_cov")) c.stage3_cov = j["stage3_cov"].get<bool>();
    if (j.contains("stage3_warm_start_classifier"))
      c.stage3_warm_start_classifier = j["stage3_warm_start_classifier"].get<bool>();
    if (j.contains("log_timing")) c.log_timing = j["log_timing"].get<bool>();
  } catch (const nlohmann::json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
  return c;
}

// Cosine annealing with exact endpoints: lr(0) == lr_init, lr(E) == lr_final.
inline double cosine_lr(std::size_t epoch, std::size_t total_epochs, double lr_init,
                        double lr_final) {
  if (total_epochs == 0) throw ParameterError("cosine_lr: total_epochs must be positive");
  if (epoch == 0) return lr_init;
  if (epoch >= total_epochs) return lr_final;
  const double t = static_cast<double>(epoch) / static_cast<double>(total_epochs);
  return lr_final + 0.5 * (lr_init - lr_final) * (1.0 + std::cos(t * 3.14159265358979323846));
}

// Target temperature: cosine from tau_prime_init at epoch 0 down to
// tau_prime_final at the end of warmup, constant afterwards.
inline double tau_prime_schedule(std::size_t epoch, const TrainConfig& cfg) {
  const std::size_t w = cfg.tau_prime_warmup_epochs;
  if (w == 0 || epoch >= w) return cfg.tau_prime_final;
  if (epoch == 0) return cfg.tau_prime_init;
  const double t = static_cast<double>(epoch) / static_cast<double>(w);
  return cfg.tau_prime_final +
         0.5 * (cfg.tau_prime_init - cfg.tau_prime_final) * (1.0 + std::cos(t * 3.14159265358979323846));
}

// Fixed-capacity FIFO of teacher feature rows. as_matrix() returns the
// current contents oldest first; after capacity pushes it is exactly the
// last `capacity` rows in push order.
class NegativeMemory {
 public:
  NegativeMemory(std::size_t capacity, std::size_t dim)
      : buf_(capacity, dim), capacity_(capacity), dim_(dim) {}

  std::size_t capacity() const { return capacity_; }
  std::size_t size() const { return size_; }
  std::size_t dim() const { return dim_; }

  void push_rows(const Matrix& rows) {
    if (rows.cols() != dim_)
      throw DimensionError("NegativeMemory: rows of width " + std::to_string(rows.cols()) +
                           ", memory holds " + std::to_string(dim_));
    if (capacity_ == 0) return;
    for (std::size_t i = 0; i < rows.rows(); ++i) {
      const double* src = rows.row(i);
      double* dst = buf_.row(cursor_);
      for (std::size_t j = 0; j < dim_; ++j) dst[j] = src[j];
      cursor_ = (cursor_ + 1) % capacity_;
      if (size_ < capacity_) ++size_;
    }
  }

  Matrix as_matrix() const {
    Matrix out(size_, dim_);
    const std::size_t start = size_ < capacity_ ? 0 : cursor_;
    for (std::size_t i = 0; i < size_; ++i) {
      const double* src = buf_.row((start + i) % capacity_);
      double* dst = out.row(i);
      for (std::size_t j = 0; j < dim_; ++j) dst[j] = src[j];
    }
    return out;
  }

 private:
  Matrix buf_;
  std::size_t capacity_ = 0, dim_ = 0, size_ = 0, cursor_ = 0;
};

// ---------------------------------------------------------------------------
// SGD with momentum and decoupled-from-biases weight decay.

struct ParamBinding {
  std::string name;
  Matrix* param;
  Matrix* grad;
  bool decay;  // weight decay applies to weights, not biases
};

struct SgdState {
  std::vector<Matrix> velocity;
};

inline SgdState make_sgd_state(const std::vector<ParamBinding>& params) {
  SgdState s;
  for (const ParamBinding& p : params) s.velocity.emplace_back(p.param->rows(), p.param->cols());
  return s;
}

// v <- momentum * v + (grad + wd * param); param <- param - lr * v
inline void sgd_step(const std::vector<ParamBinding>& params, SgdState& state, double lr,
                     double momentum, double weight_decay) {
  if (state.velocity.size() != params.size())
    throw DimensionError("sgd_step: state does not match parameter list");
  for (std::size_t p = 0; p < params.size(); ++p) {
    const ParamBinding& b = params[p];
    if (!b.grad->same_shape(*b.param))
      throw DimensionError("sgd_step: gradient shape mismatch for " + b.name);
    if (!b.grad->is_finite()) throw NumericError("sgd_step: non-finite gradient for " + b.name);
    Matrix& v = state.velocity[p];
    const double wd = b.decay ? weight_decay : 0.0;
    for (std::size_t i = 0; i < v.size(); ++i) {
      const double g = b.grad->data()[i] + wd * b.param->data()[i];
      v.data()[i] = momentum * v.data()[i] + g;
      b.param->data()[i] -= lr * v.data()[i];
    }
  }
}

// ---------------------------------------------------------------------------
// Stage models. Parameter init draw order is the declaration order of the
// bindings below.

struct Stage1Model {
  MlpEncoder encoder;
  CosineClassifier classifier;

  struct Grads {
    MlpEncoder::Grads encoder;
    Matrix classifier;
  };

  Grads make_grads() const {
    return {encoder.make_grads(), Matrix(classifier.weight.rows(), classifier.weight.cols())};
  }

  static void zero(Grads& g) {
    for (LinearGrads& lg : g.encoder) {
      lg.weight.fill(0.0);
      lg.bias.fill(0.0);
    }
    g.classifier.fill(0.0);
  }

  std::vector<ParamBinding> bindings(Grads& g) {
    std::vector<ParamBinding> out;
    for (std::size_t k = 0; k < encoder.layers.size(); ++k) {
      const std::string base = "encoder." + std::to_string(k) + ".";
      out.push_back({base + "weight", &encoder.layers[k].weight, &g.encoder[k].weight, true});
      out.push_back({base + "bias", &encoder.layers[k].bias, &g.encoder[k].bias, false});
    }
    out.push_back({"classifier.weight", &classifier.weight, &g.classifier, true});
    return out;
  }
};

struct Stage2Model {
  MlpEncoder encoder;  // frozen
  GeneratorLayer gen;  // may be depth 0 for the baseline head
  CosineClassifier classifier;

  std::size_t feature_dim() const {
    return gen.depth() > 0 ? gen.units.back().out_dim() : encoder.out_dim();
  }

  struct Grads {
    GeneratorLayer::Grads gen;
    Matrix classifier;
  };

  Grads make_grads() const {
    return {gen.make_grads(), Matrix(classifier.weight.rows(), classifier.weight.cols())};
  }

  static void zero(Grads& g) {
    for (LinearGrads& lg : g.gen) {
      lg.weight.fill(0.0);
      lg.bias.fill(0.0);
    }
    g.classifier.fill(0.0);
  }

  std::vector<ParamBinding> bindings(Grads& g) {
    std::vector<ParamBinding> out;
    for (std::size_t k = 0; k < gen.units.size(); ++k) {
      const std::string base = "generator." + std::to_string(k) + ".";
      out.push_back({base + "weight", &gen.units[k].weight, &g.gen[k].weight, true});
      out.push_back({base + "bias", &gen.units[k].bias, &g.gen[k].bias, false});
    }
    out.push_back({"classifier.weight", &classifier.weight, &g.classifier, true});
    return out;
  }
};

struct Stage3Model {
  MlpEncoder upper_encoder;     // frozen teacher branch
  GeneratorLayer upper_gen;     // frozen
  MlpEncoder encoder;           // trainable, seeded from stage 1
  GeneratorLayer lower_frozen;  // generator units below the extended one (depth > 1)
  ExpansionLayer expansion;     // trainable
  CosineClassifier classifier;  // trainable

  struct Cache {
    MlpEncoder::Cache enc;
    GeneratorLayer::Cache frozen;
    ExpansionLayer::Cache el;
  };

  struct Grads {
    MlpEncoder::Grads encoder;
    ExpansionLayer::Grads expansion;
    Matrix classifier;
  };

  Matrix lower_forward(const Matrix& x, Cache* c) const {
    Matrix h = encoder.forward(x, c ? &c->enc : nullptr);
    h = lower_frozen.forward(h, c ? &c->frozen : nullptr);
    return expansion.forward(h, c ? &c->el : nullptr);
  }

  void lower_backward(const Cache& c, const Matrix& du, Grads& g) const {
    Matrix dh = expansion.backward(c.el, du, &g.expansion);
    dh = lower_frozen.backward(c.frozen, dh, nullptr);
    encoder.backward(c.enc, dh, &g.encoder);
  }

  Matrix upper_forward(const Matrix& x) const {
    return upper_gen.forward(upper_encoder.forward(x, nullptr), nullptr);
  }

  Grads make_grads() const {
    return {encoder.make_grads(), zeros_like(expansion.lin),
            Matrix(classifier.weight.rows(), classifier.weight.cols())};
  }

  static void zero(Grads& g) {
    for (LinearGrads& lg : g.encoder) {
      lg.weight.fill(0.0);
      lg.bias.fill(0.0);
    }
    g.expansion.weight.fill(0.0);
    g.expansion.bias.fill(0.0);
    g.classifier.fill(0.0);
  }

  std::vector<ParamBinding> bindings(Grads& g) {
    std::vector<ParamBinding> out;
    for (std::size_t k = 0; k < encoder.layers.size(); ++k) {
      const std::string base = "encoder." + std::to_string(k) + ".";
      out.push_back({base + "weight", &encoder.layers[k].weight, &g.encoder[k].weight, true});
      out.push_back({base + "bias", &encoder.layers[k].bias, &g.encoder[k].bias, false});
    }
    out.push_back({"expansion.weight", &expansion.lin.weight, &g.expansion.weight, true});
    out.push_back({"expansion.bias", &expansion.lin.bias, &g.expansion.bias, false});
    out.push_back({"classifier.weight", &classifier.weight, &g.classifier, true});
    return out;
  }
};

// ---------------------------------------------------------------------------
// Per-batch forward/backward. These are pure given their inputs (views are
// drawn by the caller), which is what the finite-difference suite relies on.

struct BatchStats {
  double total = 0.0, sup = 0.0, unsup = 0.0, cov = 0.0, smi = 0.0;

  void accumulate(const BatchStats& o) {
    total += o.total;
    sup += o.sup;
    unsup += o.unsup;
    cov += o.cov;
    smi += o.smi;
  }

  BatchStats scaled(double s) const { return {total * s, sup * s, unsup * s, cov * s, smi * s}; }
};

namespace detail {
inline void split_labeled(const std::vector<std::int32_t>& labels,
                          const std::vector<std::uint8_t>& visible,
                          std::vector<std::size_t>& vis_idx, std::vector<std::size_t>& unl_idx,
                          std::vector<std::int32_t>& vis_labels) {
  if (labels.size() != visible.size())
    throw DataError("batch: labels/visibility length mismatch");
  for (std::size_t i = 0; i < labels.size(); ++i) {
    if (visible[i]) {
      vis_idx.push_back(i);
      vis_labels.push_back(labels[i]);
    } else {
      unl_idx.push_back(i);
    }
  }
}
}  // namespace detail

// Stage 1: supervised cross-entropy plus lambda * covariance on the encoder
// features. All rows are labeled.
inline BatchStats stage1_batch(const Stage1Model& model, const Matrix& x,
                               const std::vector<std::int32_t>& labels, const TrainConfig& cfg,
                               Stage1Model::Grads& grads) {
  MlpEncoder::Cache ecache;
  CosineClassifier::Cache ccache;
  const Matrix feat = model.encoder.forward(x, &ecache);
  const Matrix logits = model.classifier.forward(feat, 1.0, &ccache);
  const LossGrad sup = supervised_ce(logits, labels, cfg.tau);
  const LossGrad cov = covariance_loss(feat);
  Matrix dfeat = model.classifier.backward(ccache, sup.grad, grads.classifier);
  add_scaled_inplace(dfeat, cov.grad, cfg.lambda);
  model.encoder.backward(ecache, dfeat, &grads.encoder);
  BatchStats s;
  s.sup = sup.loss;
  s.cov = cov.loss;
  s.total = stage1_loss(sup.loss, cov.loss, cfg.lambda);
  return s;
}

// Stage 2: two augmented views through the frozen encoder and the trainable
// generator head. Supervised CE on labeled rows of both views, self-labeling
// on unlabeled rows, covariance on the view-1 features. `frozen_targets`
// bypasses target sharpening (for gradient probes); `targets_out` exposes
// the targets this call used.
inline BatchStats stage2_batch(const Stage2Model& model, const Matrix& x1, const Matrix& x2,
                               const std::vector<std::int32_t>& labels,
                               const std::vector<std::uint8_t>& visible, double tau_prime,
                               const TrainConfig& cfg, Stage2Model::Grads& grads,
                               const SelfLabelTargets* frozen_targets = nullptr,
                               SelfLabelTargets* targets_out = nullptr) {
  std::vector<std::size_t> vis_idx, unl_idx;
  std::vector<std::int32_t> vis_labels;
  detail::split_labeled(labels, visible, vis_idx, unl_idx, vis_labels);

  GeneratorLayer::Cache gc1, gc2;
  CosineClassifier::Cache cc1, cc2;
  const Matrix f1 = model.gen.forward(model.encoder.forward(x1, nullptr), &gc1);
  const Matrix f2 = model.gen.forward(model.encoder.forward(x2, nullptr), &gc2);
  const Matrix logits1 = model.classifier.forward(f1, 1.0, &cc1);
  const Matrix logits2 = model.classifier.forward(f2, 1.0, &cc2);

  Matrix dlogits1(logits1.rows(), logits1.cols());
  Matrix dlogits2(logits2.rows(), logits2.cols());
  BatchStats s;
  if (!vis_idx.empty()) {
    const LossGrad s1 = supervised_ce(take_rows(logits1, vis_idx), vis_labels, cfg.tau);
    const LossGrad s2 = supervised_ce(take_rows(logits2, vis_idx), vis_labels, cfg.tau);
    s.sup = 0.5 * (s1.loss + s2.loss);
    scatter_add_rows(dlogits1, vis_idx, s1.grad, 0.5 * (1.0 - cfg.alpha));
    scatter_add_rows(dlogits2, vis_idx, s2.grad, 0.5 * (1.0 - cfg.alpha));
  }
  if (!unl_idx.empty()) {
    ViewPair pair{take_rows(logits1, unl_idx), take_rows(logits2, unl_idx), cfg.tau, tau_prime};
    const SelfLabelResult sl =
        frozen_targets
            ? self_label_loss_with_targets(pair, *frozen_targets, cfg.epsilon, cfg.entropy_sign)
            : self_label_loss(pair, cfg.epsilon, cfg.entropy_sign, targets_out);
    s.unsup = sl.loss;
    scatter_add_rows(dlogits1, unl_idx, sl.grad_v1, cfg.alpha);
    scatter_add_rows(dlogits2, unl_idx, sl.grad_v2, cfg.alpha);
  }

  Matrix dfeat1 = model.classifier.backward(cc1, dlogits1, grads.classifier);
  const bool head_trainable = model.gen.depth() > 0;
  const LossGrad cov = covariance_loss(f1);
  s.cov = cov.loss;
  if (head_trainable) add_scaled_inplace(dfeat1, cov.grad, cfg.lambda);
  model.gen.backward(gc1, dfeat1, &grads.gen);
  const Matrix dfeat2 = model.classifier.backward(cc2, dlogits2, grads.classifier);
  model.gen.backward(gc2, dfeat2, &grads.gen);

  s.total = stage2_loss(base_total(s.sup, s.unsup, cfg.alpha), s.cov, cfg.lambda);
  return s;
}

// Stage 3: the stage-2 losses on the expanded features plus the contrastive
// transfer loss tying the first m student coordinates (un-augmented input)
// to the frozen teacher features against the negative memory. `v_out`
// receives the teacher features for the memory push after the step.
inline BatchStats stage3_batch(const Stage3Model& model, const Matrix& x, const Matrix& x1,
                               const Matrix& x2, const std::vector<std::int32_t>& labels,
                               const std::vector<std::uint8_t>& visible, const Matrix& negatives,
                               double tau_prime, const TrainConfig& cfg,
                               Stage3Model::Grads& grads, Matrix* v_out,
                               const SelfLabelTargets* frozen_targets = nullptr,
                               SelfLabelTargets* targets_out = nullptr) {
  std::vector<std::size_t> vis_idx, unl_idx;
  std::vector<std::int32_t> vis_labels;
  detail::split_labeled(labels, visible, vis_idx, unl_idx, vis_labels);

  Stage3Model::Cache c1, c2;
  CosineClassifier::Cache cc1, cc2;
  const Matrix u1 = model.lower_forward(x1, &c1);
  const Matrix u2 = model.lower_forward(x2, &c2);
  const Matrix logits1 = model.classifier.forward(u1, 1.0, &cc1);
  const Matrix logits2 = model.classifier.forward(u2, 1.0, &cc2);

  Matrix dlogits1(logits1.rows(), logits1.cols());
  Matrix dlogits2(logits2.rows(), logits2.cols());
  BatchStats s;
  if (!vis_idx.empty()) {
    const LossGrad s1 = supervised_ce(take_rows(logits1, vis_idx), vis_labels, cfg.tau);
    const LossGrad s2 = supervised_ce(take_rows(logits2, vis_idx), vis_labels, cfg.tau);
    s.sup = 0.5 * (s1.loss + s2.loss);
    scatter_add_rows(dlogits1, vis_idx, s1.grad, 0.5 * (1.0 - cfg.alpha));
    scatter_add_rows(dlogits2, vis_idx, s2.grad, 0.5 * (1.0 - cfg.alpha));
  }
  if (!unl_idx.empty()) {
    ViewPair pair{take_rows(logits1, unl_idx), take_rows(logits2, unl_idx), cfg.tau, tau_prime};
    const SelfLabelResult sl =
        frozen_targets
            ? self_label_loss_with_targets(pair, *frozen_targets, cfg.epsilon, cfg.entropy_sign)
            : self_label_loss(pair, cfg.epsilon, cfg.entropy_sign, targets_out);
    s.unsup = sl.loss;
    scatter_add_rows(dlogits1, unl_idx, sl.grad_v1, cfg.alpha);
    scatter_add_rows(dlogits2, unl_idx, sl.grad_v2, cfg.alpha);
  }

  const Matrix v = model.upper_forward(x);
  if (v_out) *v_out = v;
  const std::size_t m = v.cols();
  if (cfg.beta > 0.0 && !unl_idx.empty()) {
    Stage3Model::Cache c0;
    const Matrix u0 = model.lower_forward(x, &c0);
    ContrastiveBatch cb{slice_cols(take_rows(u0, unl_idx), 0, m), take_rows(v, unl_idx),
                        negatives, cfg.tau};
    const ContrastiveResult smi = contrastive_transfer_loss(cb);
    s.smi = smi.loss;
    Matrix du0(u0.rows(), u0.cols());
    for (std::size_t i = 0; i < unl_idx.size(); ++i) {
      double* dst = du0.row(unl_idx[i]);
      const double* src = smi.grad_u.row(i);
      for (std::size_t j = 0; j < m; ++j) dst[j] += cfg.beta * src[j];
    }
    model.lower_backward(c0, du0, grads);
  }

  Matrix dfeat1 = model.classifier.backward(cc1, dlogits1, grads.classifier);
  if (cfg.stage3_cov) {
    const LossGrad cov = covariance_loss(u1);
    s.cov = cov.loss;
    add_scaled_inplace(dfeat1, cov.grad, cfg.lambda);
  }
  model.lower_backward(c1, dfeat1, grads);
  const Matrix dfeat2 = model.classifier.backward(cc2, dlogits2, grads.classifier);
  model.lower_backward(c2, dfeat2, grads);

  const double base = base_total(s.sup, s.unsup, cfg.alpha);
  s.total = stage3_loss(base, s.smi, cfg.beta) + (cfg.stage3_cov ? cfg.lambda * s.cov : 0.0);
  return s;
}

// ---------------------------------------------------------------------------
// Checkpoint assembly and reconstruction.

namespace detail {

inline void save_linear_stack(Checkpoint& ck, const std::string& prefix,
                              const std::vector<Linear>& layers) {
  for (std::size_t k = 0; k < layers.size(); ++k) {
    ck.put(prefix + std::to_string(k) + ".weight", layers[k].weight);
    ck.put_vector(prefix + std::to_string(k) + ".bias", layers[k].bias);
  }
}

inline std::vector<Linear> load_linear_stack(const Checkpoint& ck, const std::string& prefix) {
  std::vector<Linear> out;
  for (std::size_t k = 0;; ++k) {
    const std::string w = prefix + std::to_string(k) + ".weight";
    if (!ck.has(w)) break;
    out.push_back({ck.get(w), ck.get(prefix + std::to_string(k) + ".bias")});
  }
  return out;
}

}  // namespace detail

struct CkptMeta {
  int stage = 0;
  std::size_t d_in = 0, hidden = 0, l = 0, m = 0, n = 0, gl_depth = 0, split_m = 0;
  bool csn = true;
  std::size_t n_known = 0, n_novel = 0;
};

inline void write_meta(Checkpoint& ck, const CkptMeta& meta) {
  ck.put_scalar("meta.stage", meta.stage);
  ck.put_scalar("meta.d_in", static_cast<double>(meta.d_in));
  ck.put_scalar("meta.hidden", static_cast<double>(meta.hidden));
  ck.put_scalar("meta.l", static_cast<double>(meta.l));
  ck.put_scalar("meta.n_known", static_cast<double>(meta.n_known));
  ck.put_scalar("meta.n_novel", static_cast<double>(meta.n_novel));
  if (meta.stage >= 2) {
    ck.put_scalar("meta.m", static_cast<double>(meta.m));
    ck.put_scalar("meta.gl_depth", static_cast<double>(meta.gl_depth));
  }
  if (meta.stage >= 3) {
    ck.put_scalar("meta.n", static_cast<double>(meta.n));
    ck.put_scalar("meta.split_m", static_cast<double>(meta.split_m));
    ck.put_scalar("meta.csn", meta.csn ? 1.0 : 0.0);
  }
}

inline CkptMeta read_meta(const Checkpoint& ck) {
  CkptMeta meta;
  meta.stage = static_cast<int>(ck.get_scalar("meta.stage"));
  meta.d_in = static_cast<std::size_t>(ck.get_scalar("meta.d_in"));
  meta.hidden = static_cast<std::size_t>(ck.get_scalar("meta.hidden"));
  meta.l = static_cast<std::size_t>(ck.get_scalar("meta.l"));
  meta.n_known = static_cast<std::size_t>(ck.get_scalar("meta.n_known"));
  meta.n_novel = static_cast<std::size_t>(ck.get_scalar("meta.n_novel"));
  if (meta.stage >= 2) {
    meta.m = static_cast<std::size_t>(ck.get_scalar("meta.m"));
    meta.gl_depth = static_cast<std::size_t>(ck.get_scalar("meta.gl_depth"));
  }
  if (meta.stage >= 3) {
    meta.n = static_cast<std::size_t>(ck.get_scalar("meta.n"));
    meta.split_m = static_cast<std::size_t>(ck.get_scalar("meta.split_m"));
    meta.csn = ck.get_scalar("meta.csn") != 0.0;
  }
  if (meta.stage < 1 || meta.stage > 3)
    throw ConfigError("checkpoint: unsupported stage " + std::to_string(meta.stage));
  return meta;
}

// ---------------------------------------------------------------------------
// Epoch loops.

struct EpochLog {
  int stage = 0;
  std::size_t epoch = 0;
  double lr = 0.0;
  double tau_prime = 0.0;
  BatchStats mean;
  std::size_t batches = 0, skipped = 0;
  long long wall_ms = -1;  // -1 when timing is disabled
};

inline nlohmann::ordered_json epoch_log_json(const EpochLog& e) {
  nlohmann::ordered_json j;
  j["stage"] = e.stage;
  j["epoch"] = e.epoch;
  j["lr"] = e.lr;
  if (e.stage >= 2) j["tau_prime"] = e.tau_prime;
  j["loss"] = e.mean.total;
  j["sup"] = e.mean.sup;
  j["unsup"] = e.mean.unsup;
  j["cov"] = e.mean.cov;
  j["smi"] = e.mean.smi;
  j["batches"] = e.batches;
  j["skipped"] = e.skipped;
  if (e.wall_ms >= 0) j["wall_ms"] = e.wall_ms;
  return j;
}

struct StageResult {
  Checkpoint checkpoint;
  std::vector<EpochLog> epochs;
};

namespace detail {

struct EpochTimer {
  std::chrono::steady_clock::time_point start = std::chrono::steady_clock::now();
  long long elapsed_ms() const {
    return std::chrono::duration_cast<std::chrono::milliseconds>(
               std::chrono::steady_clock::now() - start)
        .count();
  }
};

inline void emit_log(std::ostream* out, const EpochLog& e) {
  if (out) *out << epoch_log_json(e).dump() << "\n";
}

}  // namespace detail

inline StageResult run_stage1(const GcdDataset& dataset, const TrainConfig& cfg,
                              std::ostream* log = nullptr) {
  cfg.validate();
  const GcdDataset ds = dataset.redacted();
  ds.validate();
  std::vector<std::size_t> vis_idx;
  for (std::size_t i = 0; i < ds.size(); ++i)
    if (ds.visible[i]) vis_idx.push_back(i);
  if (vis_idx.size() < 2)
    throw DataError("stage 1: needs at least two labeled samples, found " +
                    std::to_string(vis_idx.size()));

  RngState rng_init(RngState::derive(cfg.seed, 101));
  RngState rng_epoch(RngState::derive(cfg.seed, 102));
  Stage1Model model;
  model.encoder = MlpEncoder::make(ds.input_dim(), cfg.hidden, cfg.l, rng_init);
  model.classifier = CosineClassifier::init(ds.n_known, cfg.l, rng_init);
  Stage1Model::Grads grads = model.make_grads();
  const std::vector<ParamBinding> params = model.bindings(grads);
  SgdState opt = make_sgd_state(params);

  StageResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs_stage1; ++epoch) {
    detail::EpochTimer timer;
    const double lr = cosine_lr(epoch, cfg.epochs_stage1, cfg.lr_init, cfg.lr_final);
    rng_epoch.shuffle(vis_idx);
    EpochLog elog;
    elog.stage = 1;
    elog.epoch = epoch;
    elog.lr = lr;
    for (std::size_t at = 0; at < vis_idx.size(); at += cfg.batch_size) {
      const std::size_t take = std::min(cfg.batch_size, vis_idx.size() - at);
      if (take < 2) {
        ++elog.skipped;
        continue;
      }
      std::vector<std::size_t> batch(vis_idx.begin() + at, vis_idx.begin() + at + take);
      const Matrix x = take_rows(ds.features, batch);
      std::vector<std::int32_t> labels(take);
      for (std::size_t i = 0; i < take; ++i) labels[i] = ds.gt_labels[batch[i]];
      Stage1Model::zero(grads);
      elog.mean.accumulate(stage1_batch(model, x, labels, cfg, grads));
      sgd_step(params, opt, lr, cfg.momentum, cfg.weight_decay);
      ++elog.batches;
    }
    if (elog.batches == 0) throw DataError("stage 1: every batch was skipped");
    elog.mean = elog.mean.scaled(1.0 / static_cast<double>(elog.batches));
    if (cfg.log_timing) elog.wall_ms = timer.elapsed_ms();
    detail::emit_log(log, elog);
    result.epochs.push_back(elog);
  }

  CkptMeta meta;
  meta.stage = 1;
  meta.d_in = ds.input_dim();
  meta.hidden = cfg.hidden;
  meta.l = cfg.l;
  meta.n_known = ds.n_known;
  meta.n_novel = ds.n_novel;
  write_meta(result.checkpoint, meta);
  detail::save_linear_stack(result.checkpoint, "encoder.", model.encoder.layers);
  result.checkpoint.put("classifier.weight", model.classifier.weight);
  return result;
}

namespace detail {

inline MlpEncoder encoder_from(const Checkpoint& ck) {
  MlpEncoder enc;
  enc.layers = load_linear_stack(ck, "encoder.");
  if (enc.layers.empty()) throw ConfigError("checkpoint: no encoder layers");
  return enc;
}

inline void check_dataset_meta(const CkptMeta& meta, const GcdDataset& ds) {
  if (meta.d_in != ds.input_dim())
    throw ConfigError("checkpoint input dimension " + std::to_string(meta.d_in) +
                      " does not match dataset " + std::to_string(ds.input_dim()));
  if (meta.n_known != ds.n_known || meta.n_novel != ds.n_novel)
    throw ConfigError("checkpoint class split (" + std::to_string(meta.n_known) + "+" +
                      std::to_string(meta.n_novel) + ") does not match dataset (" +
                      std::to_string(ds.n_known) + "+" + std::to_string(ds.n_novel) + ")");
}

}  // namespace detail

inline StageResult run_stage2(const GcdDataset& dataset, const Checkpoint& stage1_ckpt,
                              const TrainConfig& cfg, std::ostream* log = nullptr) {
  cfg.validate();
  const GcdDataset ds = dataset.redacted();
  ds.validate();
  const CkptMeta meta1 = read_meta(stage1_ckpt);
  if (meta1.stage != 1)
    throw ConfigError("stage 2: expected a stage-1 checkpoint, got stage " +
                      std::to_string(meta1.stage));
  detail::check_dataset_meta(meta1, ds);
  if (meta1.l != cfg.l)
    throw ConfigError("stage 2: checkpoint feature width " + std::to_string(meta1.l) +
                      " does not match config l=" + std::to_string(cfg.l));

  RngState rng_init(RngState::derive(cfg.seed, 201));
  RngState rng_epoch(RngState::derive(cfg.seed, 202));
  Stage2Model model;
  model.encoder = detail::encoder_from(stage1_ckpt);
  model.gen = GeneratorLayer::make(cfg.gl_depth, cfg.l, cfg.m, rng_init);
  model.classifier = CosineClassifier::init(ds.n_classes(), model.feature_dim(), rng_init);
  Stage2Model::Grads grads = model.make_grads();
  const std::vector<ParamBinding> params = model.bindings(grads);
  SgdState opt = make_sgd_state(params);

  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  StageResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs_stage2; ++epoch) {
    detail::EpochTimer timer;
    const double lr = cosine_lr(epoch, cfg.epochs_stage2, cfg.lr_init, cfg.lr_final);
    const double tp = tau_prime_schedule(epoch, cfg);
    rng_epoch.shuffle(order);
    EpochLog elog;
    elog.stage = 2;
    elog.epoch = epoch;
    elog.lr = lr;
    elog.tau_prime = tp;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t take = std::min(cfg.batch_size, order.size() - at);
      if (take < 2) {
        ++elog.skipped;
        continue;
      }
      std::vector<std::size_t> batch(order.begin() + at, order.begin() + at + take);
      const Matrix x = take_rows(ds.features, batch);
      std::vector<std::int32_t> labels(take);
      std::vector<std::uint8_t> visible(take);
      for (std::size_t i = 0; i < take; ++i) {
        labels[i] = ds.gt_labels[batch[i]];
        visible[i] = ds.visible[batch[i]];
      }
      auto [x1, x2] = augment_views(x, cfg.sigma_aug, rng_epoch);
      Stage2Model::zero(grads);
      elog.mean.accumulate(stage2_batch(model, x1, x2, labels, visible, tp, cfg, grads));
      sgd_step(params, opt, lr, cfg.momentum, cfg.weight_decay);
      ++elog.batches;
    }
    if (elog.batches == 0) throw DataError("stage 2: every batch was skipped");
    elog.mean = elog.mean.scaled(1.0 / static_cast<double>(elog.batches));
    if (cfg.log_timing) elog.wall_ms = timer.elapsed_ms();
    detail::emit_log(log, elog);
    result.epochs.push_back(elog);
  }

  CkptMeta meta;
  meta.stage = 2;
  meta.d_in = ds.input_dim();
  meta.hidden = meta1.hidden;
  meta.l = cfg.l;
  meta.m = model.feature_dim();
  meta.gl_depth = cfg.gl_depth;
  meta.n_known = ds.n_known;
  meta.n_novel = ds.n_novel;
  write_meta(result.checkpoint, meta);
  detail::save_linear_stack(result.checkpoint, "encoder.", model.encoder.layers);
  detail::save_linear_stack(result.checkpoint, "generator.", model.gen.units);
  result.checkpoint.put("classifier.weight", model.classifier.weight);
  return result;
}

inline StageResult run_stage3(const GcdDataset& dataset, const Checkpoint& stage1_ckpt,
                              const Checkpoint& stage2_ckpt, const TrainConfig& cfg,
                              std::ostream* log = nullptr) {
  cfg.validate();
  const GcdDataset ds = dataset.redacted();
  ds.validate();
  const CkptMeta meta1 = read_meta(stage1_ckpt);
  const CkptMeta meta2 = read_meta(stage2_ckpt);
  if (meta1.stage != 1)
    throw ConfigError("stage 3: first checkpoint must be stage 1, got stage " +
                      std::to_string(meta1.stage));
  if (meta2.stage != 2)
    throw ConfigError("stage 3: second checkpoint must be stage 2, got stage " +
                      std::to_string(meta2.stage));
  detail::check_dataset_meta(meta2, ds);
  if (meta1.l != meta2.l || meta1.d_in != meta2.d_in)
    throw ConfigError("stage 3: checkpoints disagree on encoder dimensions");
  if (meta2.gl_depth == 0)
    throw ConfigError("stage 3: stage-2 checkpoint has no generator unit to extend");
  if (cfg.n <= meta2.m)
    throw ConfigError("stage 3: n=" + std::to_string(cfg.n) +
                      " must exceed the generator width m=" + std::to_string(meta2.m));

  MlpEncoder enc1 = detail::encoder_from(stage1_ckpt);
  MlpEncoder enc2 = detail::encoder_from(stage2_ckpt);
  for (std::size_t k = 0; k < enc1.layers.size(); ++k)
    if (!(enc1.layers[k].weight == enc2.layers[k].weight) ||
        !(enc1.layers[k].bias == enc2.layers[k].bias))
      throw ConfigError("stage 3: stage-2 checkpoint encoder differs from stage 1");

  RngState rng_init(RngState::derive(cfg.seed, 301));
  RngState rng_epoch(RngState::derive(cfg.seed, 302));
  Stage3Model model;
  model.upper_encoder = enc2;
  model.upper_gen.units = detail::load_linear_stack(stage2_ckpt, "generator.");
  model.encoder = std::move(enc1);
  if (model.upper_gen.units.size() > 1)
    model.lower_frozen.units.assign(model.upper_gen.units.begin(),
                                    model.upper_gen.units.end() - 1);
  GeneratorLayer last;
  last.units.push_back(model.upper_gen.units.back());
  model.expansion = expansion_from_generator(last, cfg.n, cfg.el_init_scale, rng_init);
  model.expansion.csn_enabled = cfg.csn;
  model.classifier = CosineClassifier::init(ds.n_classes(), cfg.n, rng_init);
  if (cfg.stage3_warm_start_classifier) {
    const Matrix& w2 = stage2_ckpt.get("classifier.weight");
    if (w2.rows() != ds.n_classes())
      throw ConfigError("stage 3: stage-2 classifier has wrong class count");
    model.classifier.weight.fill(0.0);
    for (std::size_t i = 0; i < w2.rows(); ++i)
      for (std::size_t j = 0; j < w2.cols(); ++j) model.classifier.weight(i, j) = w2(i, j);
  }

  Stage3Model::Grads grads = model.make_grads();
  const std::vector<ParamBinding> params = model.bindings(grads);
  SgdState opt = make_sgd_state(params);
  NegativeMemory memory(cfg.memory_capacity, meta2.m);

  std::vector<std::size_t> order(ds.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;

  StageResult result;
  for (std::size_t epoch = 0; epoch < cfg.epochs_stage3; ++epoch) {
    detail::EpochTimer timer;
    const double lr = cosine_lr(epoch, cfg.epochs_stage3, cfg.lr_init, cfg.lr_final);
    const double tp = tau_prime_schedule(epoch, cfg);
    rng_epoch.shuffle(order);
    EpochLog elog;
    elog.stage = 3;
    elog.epoch = epoch;
    elog.lr = lr;
    elog.tau_prime = tp;
    for (std::size_t at = 0; at < order.size(); at += cfg.batch_size) {
      const std::size_t take = std::min(cfg.batch_size, order.size() - at);
      if (take < 2) {
        ++elog.skipped;
        continue;
      }
      std::vector<std::size_t> batch(order.begin() + at, order.begin() + at + take);
      const Matrix x = take_rows(ds.features, batch);
      std::vector<std::int32_t> labels(take);
      std::vector<std::uint8_t> visible(take);
      for (std::size_t i = 0; i < take; ++i) {
        labels[i] = ds.gt_labels[batch[i]];
        visible[i] = ds.visible[batch[i]];
      }
      auto [x1, x2] = augment_views(x, cfg.sigma_aug, rng_epoch);
      Stage3Model::zero(grads);
      Matrix v;
      elog.mean.accumulate(
          stage3_batch(model, x, x1, x2, labels, visible, memory.as_matrix(), tp, cfg, grads, &v));
      sgd_step(params, opt, lr, cfg.momentum, cfg.weight_decay);
      memory.push_rows(v);
      ++elog.batches;
    }
    if (elog.batches == 0) throw DataError("stage 3: every batch was skipped");
    elog.mean = elog.mean.scaled(1.0 / static_cast<double>(elog.batches));
    if (cfg.log_timing) elog.wall_ms = timer.elapsed_ms();
    detail::emit_log(log, elog);
    result.epochs.push_back(elog);
  }

  CkptMeta meta;
  meta.stage = 3;
  meta.d_in = ds.input_dim();
  meta.hidden = meta1.hidden;
  meta.l = meta1.l;
  meta.m = meta2.m;
  meta.n = cfg.n;
  meta.gl_depth = meta2.gl_depth;
  meta.split_m = model.expansion.split_m;
  meta.csn = cfg.csn;
  meta.n_known = ds.n_known;
  meta.n_novel = ds.n_novel;
  write_meta(result.checkpoint, meta);
  detail::save_linear_stack(result.checkpoint, "encoder.", model.encoder.layers);
  detail::save_linear_stack(result.checkpoint, "lower_generator.", model.lower_frozen.units);
  result.checkpoint.put("expansion.weight", model.expansion.lin.weight);
  result.checkpoint.put_vector("expansion.bias", model.expansion.lin.bias);
  result.checkpoint.put("classifier.weight", model.classifier.weight);
  return result;
}

// Feature/logit path reconstructed from any stage checkpoint; used by
// evaluation, the KL analysis, and feature dumps.
struct FeatureModel {
  CkptMeta meta;
  MlpEncoder encoder;
  GeneratorLayer gen;  // stage 2: generator; stage 3: frozen lower units
  ExpansionLayer expansion;
  CosineClassifier classifier;

  Matrix features(const Matrix& x) const {
    Matrix h = encoder.forward(x, nullptr);
    if (meta.stage == 1) return h;
    h = gen.forward(h, nullptr);
    if (meta.stage == 2) return h;
    return expansion.forward(h, nullptr);
  }

  // Raw cosine logits (tau = 1); argmax is temperature-invariant.
  Matrix logits(const Matrix& x) const { return classifier.forward(features(x), 1.0, nullptr); }
};

inline FeatureModel feature_model_from(const Checkpoint& ck) {
  FeatureModel fm;
  fm.meta = read_meta(ck);
  fm.encoder = detail::encoder_from(ck);
  if (fm.meta.stage == 2) fm.gen.units = detail::load_linear_stack(ck, "generator.");
  if (fm.meta.stage == 3) {
    fm.gen.units = detail::load_linear_stack(ck, "lower_generator.");
    fm.expansion.lin = {ck.get("expansion.weight"), ck.get("expansion.bias")};
    fm.expansion.split_m = fm.meta.split_m;
    fm.expansion.csn_enabled = fm.meta.csn;
  }
  fm.classifier.weight = ck.get("classifier.weight");
  return fm;
}

}  // namespace conceptgcd
