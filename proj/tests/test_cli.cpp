// End-to-end tests of the command-line binary. The path to the built tool
// arrives via CONCEPTGCD_CLI_PATH; every command runs through the shell and
// is judged on exit code plus the files it leaves behind.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>
#include <vector>

#include <sys/wait.h>

#include <json.hpp>

#include "conceptgcd/checkpoint.hpp"
#include "conceptgcd/dataset.hpp"
#include "conceptgcd/trainer.hpp"

using namespace conceptgcd;
namespace fs = std::filesystem;

namespace {

std::string cli_path() {
  if (const char* p = std::getenv("CONCEPTGCD_CLI_PATH")) return p;
  return CONCEPTGCD_CLI_PATH;  // baked in by the build
}

fs::path work_dir() {
  static const fs::path dir = [] {
    const fs::path d = fs::temp_directory_path() / "conceptgcd_cli_tests";
    fs::remove_all(d);
    fs::create_directories(d);
    return d;
  }();
  return dir;
}

int run(const std::string& args) {
  const std::string cmd = "\"" + cli_path() + "\" " + args + " >/dev/null 2>&1";
  const int rc = std::system(cmd.c_str());
  REQUIRE(rc != -1);
  REQUIRE(WIFEXITED(rc));
  return WEXITSTATUS(rc);
}

std::string slurp(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  REQUIRE(in.good());
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

nlohmann::json parse_file(const fs::path& p) { return nlohmann::json::parse(slurp(p)); }

// Small dimensions so the three stages finish in well under a second.
const std::string kQuickSets =
    " --set l=4 --set hidden=6 --set m=5 --set n=8 --set batch_size=8"
    " --set epochs_stage1=2 --set epochs_stage2=2 --set epochs_stage3=2"
    " --set memory_capacity=32 --set log_timing=false";

// One shared dataset and checkpoint chain, built once through the binary.
struct Pipeline {
  fs::path data, ck1, ck2, ck3;
  std::string common;

  Pipeline() {
    const fs::path d = work_dir();
    data = d / "train.gcdf";
    ck1 = d / "s1.gcdc";
    ck2 = d / "s2.gcdc";
    ck3 = d / "s3.gcdc";
    REQUIRE(run("gen-data --known 2 --novel 1 --dim 3 --per-class 6 --noise 0.2 --seed 11"
                " --out " +
                data.string()) == 0);
    common = " --data " + data.string() + " --known 2 --novel 1" + kQuickSets;
    REQUIRE(run("stage1" + common + " --ckpt-out " + ck1.string()) == 0);
    REQUIRE(run("stage2" + common + " --ckpt-in " + ck1.string() + " --ckpt-out " +
                ck2.string()) == 0);
    REQUIRE(run("stage3" + common + " --ckpt-in " + ck1.string() + " " + ck2.string() +
                " --ckpt-out " + ck3.string()) == 0);
  }
};

const Pipeline& pipeline() {
  static Pipeline p;
  return p;
}

}  // namespace

TEST_CASE("cli: usage errors and help") {
  CHECK(run("") == 1);
  CHECK(run("no-such-command") == 1);
  CHECK(run("gen-data --known 2 --novel 1") == 1);  // --out is required
  CHECK(run("--help") == 0);
  CHECK(run("stage1 --help") == 0);
}

TEST_CASE("cli: gen-data layout, manifest, and determinism") {
  const Pipeline& p = pipeline();
  // 16-byte header + N*d float32 + N int32 labels + N visibility bytes.
  const std::size_t n = 18, d = 3;
  CHECK(fs::file_size(p.data) == 16 + n * d * 4 + n * 4 + n);

  const GcdDataset ds = load_gcdf(p.data.string(), 2, 1);
  CHECK(ds.size() == 18);
  CHECK(ds.visible_count() == 6);  // half of each known class

  const auto manifest = parse_file(p.data.string() + ".manifest.json");
  CHECK(manifest.at("command") == "gen-data");
  CHECK(manifest.at("seed") == 11);
  CHECK(manifest.at("metrics").at("samples") == 18);
  CHECK(manifest.at("metrics").at("labeled") == 6);
  CHECK(manifest.at("outputs")[0] == p.data.string());

  const fs::path again = work_dir() / "train_again.gcdf";
  REQUIRE(run("gen-data --known 2 --novel 1 --dim 3 --per-class 6 --noise 0.2 --seed 11"
              " --out " +
              again.string()) == 0);
  CHECK(slurp(again) == slurp(p.data));

  const fs::path other = work_dir() / "train_other.gcdf";
  REQUIRE(run("gen-data --known 2 --novel 1 --dim 3 --per-class 6 --noise 0.2 --seed 12"
              " --out " +
              other.string()) == 0);
  CHECK(slurp(other) != slurp(p.data));
}

TEST_CASE("cli: stage chain leaves checkpoints, logs, and manifests") {
  const Pipeline& p = pipeline();

  const CkptMeta m1 = read_meta(Checkpoint::load(p.ck1.string()));
  CHECK(m1.stage == 1);
  CHECK(m1.l == 4);
  const CkptMeta m3 = read_meta(Checkpoint::load(p.ck3.string()));
  CHECK(m3.stage == 3);
  CHECK(m3.n == 8);
  CHECK(m3.split_m == 5);
  CHECK(Checkpoint::load(p.ck3.string()).has("expansion.weight"));

  // Default-named epoch log: one JSON object per line, stage tagged, no
  // timing key when log_timing is off.
  std::ifstream log(p.ck1.string() + ".log.jsonl");
  REQUIRE(log.good());
  std::string line;
  std::size_t lines = 0;
  while (std::getline(log, line)) {
    const auto j = nlohmann::json::parse(line);
    CHECK(j.at("stage") == 1);
    CHECK_FALSE(j.contains("wall_ms"));
    ++lines;
  }
  CHECK(lines == 2);

  const auto manifest = parse_file(p.ck1.string() + ".manifest.json");
  CHECK(manifest.at("command") == "stage1");
  CHECK(manifest.at("config").at("l") == 4);
  CHECK(manifest.at("metrics").at("epochs") == 2);
  const std::string hash = manifest.at("inputs").at(p.data.string());
  CHECK(hash.size() == 16);
}

TEST_CASE("cli: eval reports accuracies in both modes") {
  const Pipeline& p = pipeline();
  const fs::path rep_cls = work_dir() / "eval_cls.json";
  const fs::path rep_km = work_dir() / "eval_km.json";
  const std::string base = "eval --data " + p.data.string() + " --known 2 --novel 1 --ckpt " +
                           p.ck3.string() + " --report ";

  REQUIRE(run(base + rep_cls.string()) == 0);
  const auto cls = parse_file(rep_cls);
  CHECK(cls.at("mode") == "classifier");
  CHECK(cls.at("n_evaluated") == 12);  // 18 samples minus 6 labeled
  const double acc = cls.at("acc_all");
  CHECK(acc >= 0.0);
  CHECK(acc <= 1.0);
  CHECK(cls.at("n_known_samples").get<int>() + cls.at("n_novel_samples").get<int>() == 12);
  CHECK(cls.at("cluster_to_class").is_array());

  REQUIRE(run(base + rep_km.string() + " --kmeans --seed 7") == 0);
  const auto km = parse_file(rep_km);
  CHECK(km.at("mode") == "kmeans");
  CHECK(km.at("n_evaluated") == 12);
  CHECK(km.contains("objective"));
  CHECK(km.contains("iterations"));
  CHECK(parse_file(rep_km.string() + ".manifest.json").at("command") == "eval");
}

TEST_CASE("cli: analyze-kl of a checkpoint against itself fills the first bin") {
  const Pipeline& p = pipeline();
  const fs::path rep = work_dir() / "kl_self.json";
  REQUIRE(run("analyze-kl --ckpt-a " + p.ck3.string() + " --ckpt-b " + p.ck3.string() +
              " --data " + p.data.string() + " --known 2 --novel 1 --samples 10 --report " +
              rep.string()) == 0);
  const auto j = parse_file(rep);
  CHECK(j.at("samples") == 10);
  CHECK(j.at("neurons_a") == 8);
  CHECK(j.at("bins")[0] == 8);
  CHECK(j.at("first_bin_fraction") == 1.0);

  // Too many probe samples for the dataset.
  CHECK(run("analyze-kl --ckpt-a " + p.ck3.string() + " --ckpt-b " + p.ck3.string() + " --data " +
            p.data.string() + " --known 2 --novel 1 --samples 99 --report " + rep.string()) == 3);
}

TEST_CASE("cli: dump-features writes a loadable GCDF at model width") {
  const Pipeline& p = pipeline();
  const fs::path out = work_dir() / "features.gcdf";
  REQUIRE(run("dump-features --data " + p.data.string() + " --known 2 --novel 1 --ckpt " +
              p.ck3.string() + " --out " + out.string()) == 0);
  const GcdDataset feats = load_gcdf(out.string(), 2, 1);
  const GcdDataset orig = load_gcdf(p.data.string(), 2, 1);
  CHECK(feats.size() == 18);
  CHECK(feats.input_dim() == 8);
  CHECK(feats.features.is_finite());
  CHECK(feats.gt_labels == orig.gt_labels);
  CHECK(feats.visible == orig.visible);
}

TEST_CASE("cli: exit codes distinguish failure classes") {
  const Pipeline& p = pipeline();
  const fs::path d = work_dir();
  const std::string out = " --ckpt-out " + (d / "junk.gcdc").string();

  // Missing data file: I/O.
  CHECK(run("stage1 --data " + (d / "absent.gcdf").string() + " --known 2 --novel 1" + kQuickSets +
            out) == 2);

  // Prerequisite checkpoint that was never produced: pipeline-order mistake.
  CHECK(run("stage2" + p.common + " --ckpt-in " + (d / "absent.gcdc").string() + out) == 3);

  // Unknown and out-of-range config keys.
  CHECK(run("stage1" + p.common + " --set no_such_key=1" + out) == 3);
  CHECK(run("stage1" + p.common + " --set alpha=2.0" + out) == 3);

  // Corrupt dataset: format.
  const fs::path bad = d / "bad.gcdf";
  std::ofstream(bad, std::ios::binary) << "GCDX";
  CHECK(run("stage1 --data " + bad.string() + " --known 2 --novel 1" + kQuickSets + out) == 2);

  // Missing checkpoint at eval: plain I/O (no ordering implied).
  CHECK(run("eval --data " + p.data.string() + " --known 2 --novel 1 --ckpt " +
            (d / "absent.gcdc").string() + " --report " + (d / "r.json").string()) == 2);

  // Config file problems: unknown key vs unparseable JSON.
  const fs::path cfg_bad_key = d / "bad_key.json";
  std::ofstream(cfg_bad_key) << "{\"epochs_stage1\": 1, \"mystery\": 5}\n";
  CHECK(run("stage1" + p.common + " --config " + cfg_bad_key.string() + out) == 3);
  const fs::path cfg_bad_json = d / "bad_json.json";
  std::ofstream(cfg_bad_json) << "{not json\n";
  CHECK(run("stage1" + p.common + " --config " + cfg_bad_json.string() + out) == 2);

  // A valid config file applies beneath --set overrides.
  const fs::path cfg_ok = d / "ok.json";
  std::ofstream(cfg_ok) << "{\"alpha\": 0.25, \"epochs_stage1\": 9}\n";
  const fs::path ck = d / "cfgfile.gcdc";
  CHECK(run("stage1" + p.common + " --config " + cfg_ok.string() + " --ckpt-out " + ck.string()) ==
        0);
  const auto cfg_used = parse_file(ck.string() + ".manifest.json").at("config");
  CHECK(cfg_used.at("alpha") == 0.25);     // from the file
  CHECK(cfg_used.at("epochs_stage1") == 2);  // --set wins over the file
}

TEST_CASE("cli: grad-check passes at the default tolerance") {
  CHECK(run("grad-check") == 0);
  CHECK(run("grad-check --tolerance 1e-12") == 4);  // unattainable bar
}
