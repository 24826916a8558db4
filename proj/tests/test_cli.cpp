#include <doctest.h>

#include <fstream>
#include <sstream>
#include <unistd.h>

#include "neuroclips/cli.hpp"
#include "neuroclips/core/error.hpp"
#include "neuroclips/core/tensor_io.hpp"

namespace fs = std::filesystem;
using namespace neuroclips;
using namespace neuroclips::cli;

namespace {

struct Outcome {
  int code;
  std::string out, err;
};

Outcome invoke(std::vector<std::string> args) {
  args.insert(args.begin(), "neuroclips");
  std::vector<const char*> argv;
  for (const auto& a : args) argv.push_back(a.c_str());
  std::ostringstream out, err;
  const int code = run(int(argv.size()), argv.data(), out, err);
  return {code, out.str(), err.str()};
}

struct TempDir {
  fs::path path;
  explicit TempDir(const std::string& tag)
      : path(fs::temp_directory_path() / ("nc_cli_" + tag + "_" + std::to_string(::getpid()))) {
    fs::remove_all(path);
    fs::create_directories(path);
  }
  ~TempDir() { fs::remove_all(path); }
};

const char* kTinyConfig = R"(run_name: tiny
seed: 7
frame_size: 16
n_voxels: 64
n_train: 48
n_test: 8
train_repeats: 1
test_repeats: 2
pr_epochs: 2
sr_phase1_epochs: 2
sr_phase2_epochs: 2
sr_phase1_batch: 16
sr_phase2_batch: 16
projector_epochs: 2
similarity_epochs: 2
similarity_pairs: 200
pool_size: 8
nway_repeats: 10
)";

fs::path write_config(const fs::path& dir) {
  const fs::path p = dir / "tiny.yaml";
  std::ofstream(p) << kTinyConfig;
  return p;
}

const std::vector<std::string> kPipeline = {"synth", "pretrain-codecs", "train-pr", "train-sr",
                                            "infer", "fuse",            "eval",     "export-weights"};

void run_pipeline(const fs::path& home, const fs::path& config, const std::string& workers) {
  for (const auto& c : kPipeline) {
    const auto r = invoke({"--home", home.string(), "--config", config.string(), "--workers", workers, c});
    INFO(c << ": " << r.err);
    REQUIRE(r.code == kExitOk);
  }
}

std::map<std::string, std::string> snapshot(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    files[fs::relative(e.path(), root).generic_string()] = std::string(std::istreambuf_iterator<char>(f), {});
  }
  return files;
}

}  // namespace

TEST_CASE("config schema defaults are valid and round-trip through set") {
  RunConfig cfg;
  for (const auto& spec : schema()) {
    CAPTURE(spec.name);
    REQUIRE(cfg.values().contains(spec.name));
    const auto& v = cfg.values()[spec.name];
    if (spec.type == ValueType::String) {
      cfg.set(spec.name, v.get<std::string>());
    } else if (spec.type == ValueType::Bool) {
      cfg.set(spec.name, v.get<bool>() ? "true" : "false");
    } else {
      cfg.set(spec.name, v.dump());
    }
    CHECK(cfg.values()[spec.name] == v);
  }
  CHECK(cfg.hash() == RunConfig().hash());
  CHECK_NOTHROW(cfg.world().validate());
  CHECK(cfg.guidance().theta == doctest::Approx(0.3));
  CHECK(cfg.guidance().steps == 25);
  CHECK_NOTHROW(cfg.eval_config(1));
}

TEST_CASE("config rejects bad input and names the key") {
  auto key_of = [](auto&& fn) -> std::string {
    try {
      fn();
    } catch (const ConfigError& e) {
      return e.key();
    }
    return "";
  };
  CHECK(key_of([] { RunConfig::from_yaml("seed: 1\nbogus: 2\n"); }) == "bogus");
  CHECK(key_of([] { RunConfig::from_yaml("theta: 1.5\n"); }) == "theta");
  CHECK(key_of([] { RunConfig::from_yaml("theta: 0\n"); }) == "theta");
  CHECK(key_of([] { RunConfig::from_yaml("seed: -3\n"); }) == "seed");
  CHECK(key_of([] { RunConfig::from_yaml("use_beta: yes please\n"); }) == "use_beta");
  CHECK(key_of([] { RunConfig::from_yaml("pcc_mode: spearman\n"); }) == "pcc_mode");
  CHECK(key_of([] { RunConfig::from_yaml("stages: [1, 2]\n"); }) == "stages");
  CHECK(key_of([] { RunConfig::from_yaml("- a\n- b\n"); }) == "<document>");
  CHECK(key_of([] { RunConfig().apply_override("theta"); }) == "theta");

  CHECK(key_of([] { RunConfig::from_yaml("frame_size: 18\n").world(); }) == "frame_size");
  CHECK(key_of([] { RunConfig::from_yaml("sampler_steps: 50\ndiffusion_steps: 40\n").guidance(); }) == "sampler_steps");
  CHECK(key_of([] { RunConfig::from_yaml("nway_n: 9\n").eval_config(1); }) == "nway_n");
  CHECK(key_of([] { RunConfig::from_yaml("pool_size: 64\npartitions: 2\n").eval_config(1); }) == "pool_size");

  RunConfig cfg = RunConfig::from_yaml("theta: 0.7\nseed: 12\n");
  CHECK(cfg.num("theta") == 0.7);
  CHECK(cfg.seed() == 12);
  CHECK(cfg.hash() != RunConfig().hash());
}

TEST_CASE("perception architecture follows the latent side") {
  for (std::size_t side : {4, 8, 16, 32, 64}) {
    CAPTURE(side);
    const auto a = pr_architecture(256, side);
    CHECK(a.target_size == side);
    CHECK_NOTHROW(a.validate());
  }
  CHECK_THROWS_AS(pr_architecture(256, 12), ConfigError);
}

TEST_CASE("exit codes") {
  TempDir tmp("exit");
  const std::string home = tmp.path.string();
  CHECK(invoke({"--home", home, "no-such-command"}).code == kExitUsage);
  CHECK(invoke({"--home", home}).code == kExitUsage);
  CHECK(invoke({"--home", home, "--workers", "0", "synth"}).code == kExitUsage);
  CHECK(invoke({"--version"}).code == kExitOk);

  const auto unknown = invoke({"--home", home, "--set", "frobnicate=3", "synth"});
  CHECK(unknown.code == kExitFailure);
  CHECK(unknown.err.find("frobnicate") != std::string::npos);

  std::ofstream(tmp.path / "bad.yaml") << "seed: 1\nlatent_scael: 2\n";
  const auto bad = invoke({"--home", home, "--config", (tmp.path / "bad.yaml").string(), "synth"});
  CHECK(bad.code == kExitFailure);
  CHECK(bad.err.find("latent_scael") != std::string::npos);

  const auto theta = invoke({"--home", home, "--theta", "3", "synth"});
  CHECK(theta.code == kExitFailure);
  CHECK(theta.err.find("theta") != std::string::npos);

  for (const std::string cmd : {"pretrain-codecs", "train-pr", "train-sr", "infer", "fuse", "eval"}) {
    const auto r = invoke({"--home", home, cmd});
    CAPTURE(cmd);
    CHECK(r.code == kExitNotReady);
    CHECK(r.err.find("synth") != std::string::npos);
  }
  CHECK(invoke({"--home", home, "export-weights"}).code == kExitNotReady);
}

TEST_CASE("tiny pipeline: artifacts, manifests, determinism") {
  TempDir tmp("pipe");
  const fs::path config = write_config(tmp.path);
  const fs::path home_a = tmp.path / "a";
  const fs::path root = home_a / "tiny";

  // Downstream stages report which command is missing.
  for (std::size_t k = 0; k < 4; ++k) {
    REQUIRE(invoke({"--home", home_a.string(), "--config", config.string(), "--workers", "2", kPipeline[k]}).code == kExitOk);
  }
  const auto early = invoke({"--home", home_a.string(), "--config", config.string(), "eval"});
  CHECK(early.code == kExitNotReady);
  CHECK(early.err.find("`infer`") != std::string::npos);
  run_pipeline(home_a, config, "2");

  for (const auto& c : kPipeline) {
    CAPTURE(c);
    const auto m = read_json(root / "manifests" / (c + ".json"));
    CHECK(m.at("command") == c);
    CHECK(m.at("version") == kVersion);
    CHECK(m.at("seed") == 7);
    CHECK(m.at("config_hash") == RunConfig::from_yaml(kTinyConfig).hash());
    // Relocatable: no absolute paths leak into manifests.
    CHECK(m.dump().find(tmp.path.string()) == std::string::npos);
  }

  const auto infer = read_json(root / "manifests/infer.json");
  CHECK(infer.at("n_samples") == 8);
  CHECK(infer.at("guidance").at("out_frames") == 16);
  const auto sample = load_checkpoint(root / "infer/sample_0000");
  CHECK(sample.get("video").shape() == Shape{16, 16, 16, 3});
  CHECK(sample.get("video").all_finite());

  std::ifstream report(root / "eval/report.jsonl");
  std::size_t lines = 0;
  nlohmann::json last;
  for (std::string line; std::getline(report, line); ++lines) last = nlohmann::json::parse(line);
  CHECK(lines == 9);
  REQUIRE(last.contains("aggregate"));
  CHECK(last["aggregate"]["n_samples"] == 8);
  CHECK(last["aggregate"].contains("pipeline"));
  CHECK(fs::exists(root / "weights/voxel_weights.csv"));

  const auto fused = read_json(root / "manifests/fuse.json").at("results").at("fusion");
  std::size_t members = 0;
  for (const auto& chain : fused.at("chains")) {
    CHECK(chain.at("members").size() <= 3);
    members += chain.at("members").size();
  }
  CHECK(members == 8);

  SUBCASE("rerun with other worker count is byte-identical") {
    const fs::path home_b = tmp.path / "b";
    run_pipeline(home_b, config, "1");
    const auto a = snapshot(root), b = snapshot(home_b / "tiny");
    REQUIRE(a.size() == b.size());
    for (const auto& [name, bytes] : a) {
      CAPTURE(name);
      CHECK(b.count(name) == 1);
      CHECK(b.at(name) == bytes);
    }
  }

  SUBCASE("theta override reaches the infer manifest") {
    const auto r =
        invoke({"--home", home_a.string(), "--config", config.string(), "--theta", "1.0", "--workers", "2", "infer"});
    REQUIRE(r.code == kExitOk);
    const auto m = read_json(root / "manifests/infer.json");
    CHECK(m.at("config").at("theta") == 1.0);
    CHECK(m.at("guidance").at("theta") == 1.0);
    CHECK(m.at("config_hash") != RunConfig::from_yaml(kTinyConfig).hash());
  }
}
