#include <cstdio>
#include <cstdlib>
#include <functional>
#include <map>
#include <ostream>
#include <thread>

#include "CLI11.hpp"
#include "neuroclips/cli.hpp"
#include "neuroclips/core/error.hpp"

namespace neuroclips::cli {

namespace {

std::filesystem::path resolve_home(const std::string& flag) {
  if (!flag.empty()) return flag;
  if (const char* env = std::getenv("NEUROCLIPS_HOME"); env && *env) return env;
  return "neuroclips_home";
}

const std::map<std::string, std::function<nlohmann::json(const Context&)>>& dispatch() {
  static const std::map<std::string, std::function<nlohmann::json(const Context&)>> table = {
      {"synth", cmd_synth},       {"pretrain-codecs", cmd_pretrain_codecs}, {"train-pr", cmd_train_pr},
      {"train-sr", cmd_train_sr}, {"infer", cmd_infer},                     {"fuse", cmd_fuse},
      {"eval", cmd_eval},         {"export-weights", cmd_export_weights}};
  return table;
}

const std::map<std::string, std::string>& descriptions() {
  static const std::map<std::string, std::string> d = {
      {"synth", "generate the synthetic paired video/fMRI dataset"},
      {"pretrain-codecs", "fit latent codec, embedder, classifier, projector, keyframe decoder and video denoiser"},
      {"train-pr", "train the perception reconstructor"},
      {"train-sr", "train the semantics reconstructor"},
      {"infer", "reconstruct every test clip"},
      {"fuse", "train the same-class classifier and fuse consecutive reconstructions"},
      {"eval", "score reconstructions and write eval/report.jsonl"},
      {"export-weights", "write per-voxel ridge weights as CSV"}};
  return d;
}

}  // namespace

int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
  CLI::App app{"fMRI-to-video reconstruction on a synthetic world", "neuroclips"};
  app.set_version_flag("--version", kVersion);
  app.require_subcommand(1);

  std::string config_path, home;
  std::vector<std::string> overrides;
  std::optional<double> theta;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--config", config_path, "YAML run configuration")->check(CLI::ExistingFile);
  app.add_option("--set", overrides, "override a config key, key=value (repeatable)");
  app.add_option("--theta", theta, "shorthand for --set theta=<value>");
  app.add_option("--workers", workers, "worker threads; results do not depend on it")->check(CLI::PositiveNumber);
  app.add_option("--home", home, "artifact root (default $NEUROCLIPS_HOME, else ./neuroclips_home)");

  for (const auto& name : command_names()) app.add_subcommand(name, descriptions().at(name))->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::Success& e) {
    return app.exit(e, out, err);
  } catch (const CLI::ParseError& e) {
    app.exit(e, out, err);
    return kExitUsage;
  }

  const std::string command = app.get_subcommands().front()->get_name();
  try {
    Context ctx;
    ctx.config = config_path.empty() ? RunConfig() : RunConfig::load(config_path);
    for (const auto& o : overrides) ctx.config.apply_override(o);
    if (theta) {
      char buf[32];
      std::snprintf(buf, sizeof(buf), "%.17g", *theta);
      ctx.config.set("theta", buf);
    }
    ctx.workspace.root = resolve_home(home) / ctx.config.str("run_name");
    ctx.workers = workers;
    ctx.log = &out;
    std::filesystem::create_directories(ctx.workspace.root);
    dispatch().at(command)(ctx);
    return kExitOk;
  } catch (const ConfigError& e) {
    err << "config error [" << e.key() << "]: " << e.what() << "\n";
    return kExitFailure;
  } catch (const NotReady& e) {
    err << command << ": " << e.what() << "\n";
    return kExitNotReady;
  } catch (const std::exception& e) {
    err << command << ": " << e.what() << "\n";
    return kExitFailure;
  }
}

}  // namespace neuroclips::cli
