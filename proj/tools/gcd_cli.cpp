// conceptgcd command-line tool: dataset generation, the three training
// stages, evaluation, neuron analysis, feature dumps, and the gradient
// check. Exit codes: 0 success, 1 usage, 2 I/O or file format, 3 bad
// config/data/checkpoint, 4 numeric failure.

#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "conceptgcd/conceptgcd.hpp"
#include "conceptgcd/gradcheck_suite.hpp"

namespace {

using namespace conceptgcd;
using nlohmann::ordered_json;

constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;
constexpr int kExitConfig = 3;
constexpr int kExitNumeric = 4;

nlohmann::json parse_json_file(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open " + path + " for reading");
  try {
    nlohmann::json j;
    in >> j;
    return j;
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(path + ": " + e.what());
  }
}

void write_text_file(const std::string& path, const std::string& text) {
  std::ofstream out(path, std::ios::trunc);
  if (!out) throw IoError("cannot open " + path + " for writing");
  out << text;
  out.flush();
  if (!out) throw IoError("failed writing " + path);
}

// Base config, then --config file, then --set key=value overrides.
TrainConfig assemble_config(const std::string& config_path,
                            const std::vector<std::string>& sets) {
  TrainConfig cfg;
  if (!config_path.empty()) cfg = config_from_json(parse_json_file(config_path), cfg);
  if (!sets.empty()) {
    nlohmann::json overrides = nlohmann::json::object();
    for (const std::string& kv : sets) {
      const auto pos = kv.find('=');
      if (pos == std::string::npos || pos == 0)
        throw ConfigError("--set expects key=value, got '" + kv + "'");
      const std::string key = kv.substr(0, pos);
      const std::string raw = kv.substr(pos + 1);
      nlohmann::json value;
      try {
        value = nlohmann::json::parse(raw);
      } catch (const nlohmann::json::exception&) {
        value = raw;  // bare strings (e.g. entropy_sign=literal)
      }
      overrides[key] = value;
    }
    cfg = config_from_json(overrides, cfg);
  }
  return cfg;
}

struct StageOpts {
  std::string data, config_path, ckpt_out, log_path, manifest_path;
  std::vector<std::string> ckpt_in;
  std::vector<std::string> sets;
  std::size_t known = 0, novel = 0;
};

void add_common_stage_options(CLI::App* cmd, StageOpts& o) {
  cmd->add_option("--data", o.data, "GCDF dataset path")->required();
  cmd->add_option("--known", o.known, "number of known classes")->required();
  cmd->add_option("--novel", o.novel, "number of novel classes")->required();
  cmd->add_option("--config", o.config_path, "JSON config file");
  cmd->add_option("--set", o.sets, "config override, key=value (repeatable)");
  cmd->add_option("--ckpt-out", o.ckpt_out, "output checkpoint path")->required();
  cmd->add_option("--log", o.log_path, "epoch log path (default: <ckpt-out>.log.jsonl)");
  cmd->add_option("--manifest", o.manifest_path,
                  "manifest path (default: <ckpt-out>.manifest.json)");
}

ordered_json stats_json(const BatchStats& s) {
  ordered_json j;
  j["loss"] = s.total;
  j["sup"] = s.sup;
  j["unsup"] = s.unsup;
  j["cov"] = s.cov;
  j["smi"] = s.smi;
  return j;
}

void run_stage_cmd(int stage, const StageOpts& o) {
  TrainConfig cfg = assemble_config(o.config_path, o.sets);
  cfg.validate();
  // A prerequisite checkpoint that was never produced is a pipeline-order
  // mistake, not an I/O failure.
  for (const std::string& p : o.ckpt_in)
    if (!std::filesystem::exists(p))
      throw ConfigError("stage" + std::to_string(stage) + ": missing prerequisite checkpoint " +
                        p);
  const GcdDataset ds = load_gcdf(o.data, o.known, o.novel);
  const std::string log_path = o.log_path.empty() ? o.ckpt_out + ".log.jsonl" : o.log_path;
  const std::string manifest_path =
      o.manifest_path.empty() ? o.ckpt_out + ".manifest.json" : o.manifest_path;

  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw IoError("cannot open " + log_path + " for writing");

  StageResult result;
  if (stage == 1) {
    result = run_stage1(ds, cfg, &log);
  } else if (stage == 2) {
    result = run_stage2(ds, Checkpoint::load(o.ckpt_in.at(0)), cfg, &log);
  } else {
    result = run_stage3(ds, Checkpoint::load(o.ckpt_in.at(0)),
                        Checkpoint::load(o.ckpt_in.at(1)), cfg, &log);
  }
  log.flush();
  if (!log) throw IoError("failed writing " + log_path);
  result.checkpoint.save(o.ckpt_out);

  RunManifest manifest;
  manifest.command = "stage" + std::to_string(stage);
  manifest.config = config_to_json(cfg);
  manifest.seed = cfg.seed;
  manifest.inputs.push_back(o.data);
  for (const std::string& p : o.ckpt_in) manifest.inputs.push_back(p);
  if (!o.config_path.empty()) manifest.inputs.push_back(o.config_path);
  manifest.outputs = {o.ckpt_out, log_path};
  manifest.metrics = stats_json(result.epochs.back().mean);
  manifest.metrics["epochs"] = result.epochs.size();
  manifest.write(manifest_path);
  std::cout << "stage " << stage << " done: " << o.ckpt_out << "\n";
}

int dispatch(int argc, char** argv) {
  CLI::App app{"ConceptGCD pipeline: staged concept learning for generalized category discovery"};
  app.require_subcommand(1);

  // gen-data
  auto* gen = app.add_subcommand("gen-data", "generate a synthetic GCDF benchmark");
  SyntheticSpec spec;
  std::uint64_t gen_seed = 7;
  std::string gen_out, gen_manifest;
  gen->add_option("--known", spec.n_known, "known classes")->capture_default_str();
  gen->add_option("--novel", spec.n_novel, "novel classes")->capture_default_str();
  gen->add_option("--dim", spec.input_dim, "input dimension")->capture_default_str();
  gen->add_option("--per-class", spec.samples_per_class, "samples per class")
      ->capture_default_str();
  gen->add_option("--center-scale", spec.center_scale, "class-center range")
      ->capture_default_str();
  gen->add_option("--noise", spec.noise_sigma, "within-class noise sigma")
      ->capture_default_str();
  gen->add_option("--label-ratio", spec.label_ratio, "labeled fraction of each known class")
      ->capture_default_str();
  gen->add_option("--seed", gen_seed, "RNG seed")->capture_default_str();
  gen->add_option("--out", gen_out, "output GCDF path")->required();
  gen->add_option("--manifest", gen_manifest, "manifest path (default: <out>.manifest.json)");
  gen->callback([&]() {
    RngState rng(gen_seed);
    const GcdDataset ds = generate_synthetic(spec, rng);
    save_gcdf(ds, gen_out);
    RunManifest manifest;
    manifest.command = "gen-data";
    manifest.seed = gen_seed;
    ordered_json cfg;
    cfg["known"] = spec.n_known;
    cfg["novel"] = spec.n_novel;
    cfg["dim"] = spec.input_dim;
    cfg["per_class"] = spec.samples_per_class;
    cfg["center_scale"] = spec.center_scale;
    cfg["noise"] = spec.noise_sigma;
    cfg["label_ratio"] = spec.label_ratio;
    manifest.config = cfg;
    manifest.outputs = {gen_out};
    ordered_json metrics;
    metrics["samples"] = ds.size();
    metrics["labeled"] = ds.visible_count();
    manifest.metrics = metrics;
    manifest.write(gen_manifest.empty() ? gen_out + ".manifest.json" : gen_manifest);
    std::cout << "wrote " << ds.size() << " samples to " << gen_out << "\n";
  });

  // stage1/2/3
  StageOpts s1, s2, s3;
  auto* c1 = app.add_subcommand("stage1", "train the encoder on labeled data");
  add_common_stage_options(c1, s1);
  c1->callback([&]() { run_stage_cmd(1, s1); });

  auto* c2 = app.add_subcommand("stage2", "train the generator head on all data");
  add_common_stage_options(c2, s2);
  c2->add_option("--ckpt-in", s2.ckpt_in, "stage-1 checkpoint")->required()->expected(1);
  c2->callback([&]() { run_stage_cmd(2, s2); });

  auto* c3 = app.add_subcommand("stage3", "train the expanded student branch");
  add_common_stage_options(c3, s3);
  c3->add_option("--ckpt-in", s3.ckpt_in, "stage-1 then stage-2 checkpoint")
      ->required()
      ->expected(2);
  c3->callback([&]() { run_stage_cmd(3, s3); });

  // eval
  auto* ev = app.add_subcommand("eval", "clustering accuracy on the unlabeled split");
  std::string ev_data, ev_ckpt, ev_report, ev_manifest;
  std::size_t ev_known = 0, ev_novel = 0;
  std::uint64_t ev_seed = 7;
  bool ev_kmeans = false;
  ev->add_option("--data", ev_data, "GCDF dataset path")->required();
  ev->add_option("--known", ev_known, "number of known classes")->required();
  ev->add_option("--novel", ev_novel, "number of novel classes")->required();
  ev->add_option("--ckpt", ev_ckpt, "checkpoint to evaluate")->required();
  ev->add_option("--report", ev_report, "output report path")->required();
  ev->add_flag("--kmeans", ev_kmeans, "cluster features with k-means instead of the classifier");
  ev->add_option("--seed", ev_seed, "k-means seed")->capture_default_str();
  ev->add_option("--manifest", ev_manifest, "manifest path (default: <report>.manifest.json)");
  ev->callback([&]() {
    const GcdDataset ds = load_gcdf(ev_data, ev_known, ev_novel);
    const FeatureModel model = feature_model_from(Checkpoint::load(ev_ckpt));
    std::vector<std::size_t> unl;
    std::vector<std::int32_t> gts;
    for (std::size_t i = 0; i < ds.size(); ++i)
      if (!ds.visible[i]) {
        unl.push_back(i);
        gts.push_back(ds.gt_labels[i]);
      }
    if (unl.empty()) throw DataError("eval: dataset has no unlabeled samples");
    const Matrix x = take_rows(ds.features, unl);

    ordered_json report;
    std::vector<std::int32_t> preds;
    if (ev_kmeans) {
      RngState rng(RngState::derive(ev_seed, 401));
      const KMeansResult km = kmeans(model.features(x), ds.n_classes(), rng);
      preds = km.labels;
      report["mode"] = "kmeans";
      report["objective"] = km.objective;
      report["iterations"] = km.iterations;
      report["reseeds"] = km.reseeds;
    } else {
      preds = argmax_rows(model.logits(x));
      report["mode"] = "classifier";
    }
    const AccReport acc = clustering_accuracy(preds, gts, ds.n_known);
    report["n_evaluated"] = acc.n_all;
    report["acc_all"] = acc.acc_all;
    report["acc_known"] = acc.acc_known;
    report["acc_novel"] = acc.acc_novel;
    report["n_known_samples"] = acc.n_known_samples;
    report["n_novel_samples"] = acc.n_novel_samples;
    report["cluster_to_class"] = acc.cluster_to_class;
    write_text_file(ev_report, report.dump(2) + "\n");

    RunManifest manifest;
    manifest.command = "eval";
    manifest.seed = ev_seed;
    ordered_json cfg;
    cfg["kmeans"] = ev_kmeans;
    manifest.config = cfg;
    manifest.inputs = {ev_data, ev_ckpt};
    manifest.outputs = {ev_report};
    ordered_json metrics;
    metrics["acc_all"] = acc.acc_all;
    metrics["acc_known"] = acc.acc_known;
    metrics["acc_novel"] = acc.acc_novel;
    manifest.metrics = metrics;
    manifest.write(ev_manifest.empty() ? ev_report + ".manifest.json" : ev_manifest);
    std::cout << "acc_all=" << acc.acc_all << " acc_known=" << acc.acc_known
              << " acc_novel=" << acc.acc_novel << "\n";
  });

  // analyze-kl
  auto* kl = app.add_subcommand("analyze-kl", "per-neuron min-KL histogram between two models");
  std::string kl_a, kl_b, kl_data, kl_report, kl_manifest;
  std::size_t kl_known = 0, kl_novel = 0, kl_samples = 100;
  std::uint64_t kl_seed = 7;
  kl->add_option("--ckpt-a", kl_a, "reference checkpoint (rows of the histogram)")->required();
  kl->add_option("--ckpt-b", kl_b, "comparison checkpoint")->required();
  kl->add_option("--data", kl_data, "GCDF dataset supplying probe samples")->required();
  kl->add_option("--known", kl_known, "number of known classes")->required();
  kl->add_option("--novel", kl_novel, "number of novel classes")->required();
  kl->add_option("--samples", kl_samples, "probe sample count")->capture_default_str();
  kl->add_option("--seed", kl_seed, "probe sampling seed")->capture_default_str();
  kl->add_option("--report", kl_report, "output report path")->required();
  kl->add_option("--manifest", kl_manifest, "manifest path (default: <report>.manifest.json)");
  kl->callback([&]() {
    const GcdDataset ds = load_gcdf(kl_data, kl_known, kl_novel);
    if (kl_samples < 2) throw ConfigError("analyze-kl: needs at least 2 probe samples");
    if (kl_samples > ds.size())
      throw DataError("analyze-kl: " + std::to_string(kl_samples) + " probe samples from " +
                      std::to_string(ds.size()) + " rows");
    const FeatureModel ma = feature_model_from(Checkpoint::load(kl_a));
    const FeatureModel mb = feature_model_from(Checkpoint::load(kl_b));
    std::vector<std::size_t> order(ds.size());
    for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
    RngState rng(RngState::derive(kl_seed, 501));
    rng.shuffle(order);
    order.resize(kl_samples);
    const Matrix probe = take_rows(ds.features, order);
    const KlHistogram hist = kl_neuron_analysis(ma.features(probe), mb.features(probe));

    ordered_json report;
    report["samples"] = kl_samples;
    report["neurons_a"] = hist.min_kl.size();
    report["bin_edges"] = {0.01, 0.1, 0.2, 0.5, 1.0};
    report["bins"] = hist.bins;
    report["first_bin_fraction"] =
        static_cast<double>(hist.bins[0]) / static_cast<double>(hist.min_kl.size());
    write_text_file(kl_report, report.dump(2) + "\n");

    RunManifest manifest;
    manifest.command = "analyze-kl";
    manifest.seed = kl_seed;
    ordered_json cfg;
    cfg["samples"] = kl_samples;
    manifest.config = cfg;
    manifest.inputs = {kl_data, kl_a, kl_b};
    manifest.outputs = {kl_report};
    ordered_json metrics;
    metrics["bins"] = hist.bins;
    manifest.metrics = metrics;
    manifest.write(kl_manifest.empty() ? kl_report + ".manifest.json" : kl_manifest);
    std::cout << "first bin: " << hist.bins[0] << "/" << hist.min_kl.size() << " neurons\n";
  });

  // dump-features
  auto* dump = app.add_subcommand("dump-features", "write model features as a GCDF file");
  std::string df_data, df_ckpt, df_out;
  std::size_t df_known = 0, df_novel = 0;
  dump->add_option("--data", df_data, "GCDF dataset path")->required();
  dump->add_option("--known", df_known, "number of known classes")->required();
  dump->add_option("--novel", df_novel, "number of novel classes")->required();
  dump->add_option("--ckpt", df_ckpt, "checkpoint defining the feature path")->required();
  dump->add_option("--out", df_out, "output GCDF path")->required();
  dump->callback([&]() {
    const GcdDataset ds = load_gcdf(df_data, df_known, df_novel);
    const FeatureModel model = feature_model_from(Checkpoint::load(df_ckpt));
    GcdDataset out = ds;
    out.features = model.features(ds.features);
    save_gcdf(out, df_out);
    std::cout << "wrote " << out.size() << "x" << out.input_dim() << " features to " << df_out
              << "\n";
  });

  // grad-check
  auto* gc = app.add_subcommand("grad-check", "finite-difference check of every gradient");
  double gc_tolerance = 1e-4;
  gc->add_option("--tolerance", gc_tolerance, "max allowed relative error")
      ->capture_default_str();
  gc->callback([&]() {
    const std::vector<SuiteCase> cases = run_gradcheck_suite(gc_tolerance);
    bool all_ok = true;
    for (const SuiteCase& c : cases) {
      std::cout << (c.passed ? "PASS " : "FAIL ") << c.name
                << " max_rel_err=" << c.report.max_rel_err << " (" << c.report.entries_checked
                << " entries)\n";
      all_ok = all_ok && c.passed;
    }
    if (!all_ok) throw NumericError("gradient check failed");
    std::cout << "all " << cases.size() << " gradient checks passed\n";
  });

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  try {
    return dispatch(argc, argv);
  } catch (const IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const FormatError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const NumericError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitNumeric;
  } catch (const std::exception& e) {
    // ConfigError, DataError, DimensionError, ParameterError and anything else
    // that indicates an inconsistent request.
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfig;
  }
}
