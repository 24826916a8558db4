#pragma once

// Command-line surface: a flat YAML run configuration with a schema, an
// artifact workspace rooted at NEUROCLIPS_HOME, and the pipeline commands.
//
// Exit codes: 0 success, 1 validation or runtime failure, 2 usage error,
// 3 missing upstream artifact.

#include <filesystem>
#include <iosfwd>
#include <string>
#include <vector>

#include "json.hpp"
#include "neuroclips/data.hpp"
#include "neuroclips/fusion.hpp"
#include "neuroclips/guidance.hpp"
#include "neuroclips/metrics.hpp"
#include "neuroclips/perception.hpp"
#include "neuroclips/semantics.hpp"

namespace neuroclips::cli {

inline constexpr const char* kVersion = "0.1.0";

enum ExitCode : int { kExitOk = 0, kExitFailure = 1, kExitUsage = 2, kExitNotReady = 3 };

enum class ValueType { UInt, Double, Bool, String };

struct KeySpec {
  std::string name;
  ValueType type;
  nlohmann::json default_value;
  double min = 0.0;  ///< inclusive bounds for numbers
  double max = 0.0;
  std::vector<std::string> choices;  ///< allowed strings, empty = any
  std::string help;
};

/// Every accepted configuration key, in documentation order.
const std::vector<KeySpec>& schema();

/// Resolved run configuration. Every key in the schema is present.
class RunConfig {
 public:
  RunConfig();  ///< schema defaults

  /// Flat YAML mapping of scalar values. Unknown keys, non-scalar values and
  /// out-of-range values throw ConfigError naming the first failing key.
  static RunConfig from_yaml(const std::string& text);
  static RunConfig load(const std::filesystem::path& path);

  /// Parses `value` with the key's type and validates it.
  void set(const std::string& key, const std::string& value);
  /// "key=value"
  void apply_override(const std::string& assignment);

  const nlohmann::json& values() const { return values_; }
  std::string hash() const;

  std::uint64_t seed() const { return uint("seed"); }
  std::uint64_t uint(const std::string& key) const;
  double num(const std::string& key) const;
  bool flag(const std::string& key) const;
  std::string str(const std::string& key) const;

  data::WorldSpec world() const;
  data::DatasetOptions dataset_options() const;
  perception::PrTrainConfig pr_config() const;
  semantics::SrTrainConfig sr_config() const;
  semantics::ProjectorTrainConfig projector_config() const;
  guidance::GuidanceConfig guidance() const;
  guidance::TinyVideoDenoiser::FitConfig denoiser_config() const;
  fusion::SimilarityConfig similarity_config() const;
  fusion::FusionConfig fusion_config() const;
  metrics::EvalConfig eval_config(std::size_t workers) const;

 private:
  nlohmann::json values_;
};

/// PR architecture whose output matches `latent_side`.
perception::PrArchitecture pr_architecture(std::size_t n_voxels, std::size_t latent_side);
semantics::SrArchitecture sr_architecture(std::size_t n_voxels);

/// Artifact directories under <home>/<run_name>.
struct Workspace {
  std::filesystem::path root;

  std::filesystem::path dataset() const { return root / "dataset"; }
  std::filesystem::path codecs() const { return root / "codecs"; }
  std::filesystem::path projector() const { return root / "projector"; }
  std::filesystem::path keyframe_decoder() const { return root / "keyframe_decoder"; }
  std::filesystem::path denoiser() const { return root / "denoiser"; }
  std::filesystem::path pr() const { return root / "pr"; }
  std::filesystem::path sr() const { return root / "sr"; }
  std::filesystem::path infer() const { return root / "infer"; }
  std::filesystem::path fuse() const { return root / "fuse"; }
  std::filesystem::path eval() const { return root / "eval"; }
  std::filesystem::path weights() const { return root / "weights"; }
  /// <root>/manifests/<command>.json
  std::filesystem::path manifest(const std::string& command) const;
};

struct Context {
  RunConfig config;
  Workspace workspace;
  std::size_t workers = 1;
  std::ostream* log = nullptr;
};

/// Commands. Each writes its artifacts and a manifest, and returns it.
nlohmann::json cmd_synth(const Context& ctx);
nlohmann::json cmd_pretrain_codecs(const Context& ctx);
nlohmann::json cmd_train_pr(const Context& ctx);
nlohmann::json cmd_train_sr(const Context& ctx);
nlohmann::json cmd_infer(const Context& ctx);
nlohmann::json cmd_fuse(const Context& ctx);
nlohmann::json cmd_eval(const Context& ctx);
nlohmann::json cmd_export_weights(const Context& ctx);

const std::vector<std::string>& command_names();

/// Full argument handling; never throws.
int run(int argc, const char* const* argv, std::ostream& out, std::ostream& err);

}  // namespace neuroclips::cli
