#include <yaml-cpp/yaml.h>

#include <charconv>
#include <cmath>
#include <fstream>
#include <sstream>

#include "neuroclips/cli.hpp"
#include "neuroclips/core/error.hpp"
#include "neuroclips/core/hash.hpp"

namespace neuroclips::cli {

namespace {

KeySpec uint_key(std::string name, std::uint64_t def, double lo, double hi, std::string help) {
  return {std::move(name), ValueType::UInt, def, lo, hi, {}, std::move(help)};
}
KeySpec num_key(std::string name, double def, double lo, double hi, std::string help) {
  return {std::move(name), ValueType::Double, def, lo, hi, {}, std::move(help)};
}
KeySpec bool_key(std::string name, bool def, std::string help) {
  return {std::move(name), ValueType::Bool, def, 0, 0, {}, std::move(help)};
}
KeySpec str_key(std::string name, std::string def, std::vector<std::string> choices, std::string help) {
  return {std::move(name), ValueType::String, def, 0, 0, std::move(choices), std::move(help)};
}

constexpr double kBig = 1e9;

const KeySpec& spec_for(const std::string& key) {
  for (const auto& s : schema()) {
    if (s.name == key) return s;
  }
  throw ConfigError(key, "unknown configuration key '" + key + "'");
}

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t"), e = s.find_last_not_of(" \t");
  return b == std::string::npos ? std::string() : s.substr(b, e - b + 1);
}

nlohmann::json parse_value(const KeySpec& spec, const std::string& raw) {
  const std::string text = trim(raw);
  auto fail = [&](const std::string& why) -> ConfigError {
    return ConfigError(spec.name, spec.name + ": " + why + " (got '" + text + "')");
  };
  nlohmann::json v;
  switch (spec.type) {
    case ValueType::UInt: {
      std::uint64_t x = 0;
      const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
      if (text.empty() || ec != std::errc() || end != text.data() + text.size()) throw fail("expected a non-negative integer");
      if (double(x) < spec.min || double(x) > spec.max) {
        throw fail("must lie in [" + std::to_string(std::uint64_t(spec.min)) + ", " + std::to_string(std::uint64_t(spec.max)) + "]");
      }
      v = x;
      break;
    }
    case ValueType::Double: {
      double x = 0.0;
      const auto [end, ec] = std::from_chars(text.data(), text.data() + text.size(), x);
      if (text.empty() || ec != std::errc() || end != text.data() + text.size() || !std::isfinite(x)) {
        throw fail("expected a number");
      }
      if (x < spec.min || x > spec.max) {
        std::ostringstream os;
        os << "must lie in [" << spec.min << ", " << spec.max << "]";
        throw fail(os.str());
      }
      v = x;
      break;
    }
    case ValueType::Bool:
      if (text == "true") {
        v = true;
      } else if (text == "false") {
        v = false;
      } else {
        throw fail("expected true or false");
      }
      break;
    case ValueType::String:
      if (!spec.choices.empty() && std::find(spec.choices.begin(), spec.choices.end(), text) == spec.choices.end()) {
        std::string all;
        for (const auto& c : spec.choices) all += (all.empty() ? "" : ", ") + c;
        throw fail("must be one of " + all);
      }
      if (text.empty()) throw fail("must not be empty");
      v = text;
      break;
  }
  return v;
}

}  // namespace

const std::vector<KeySpec>& schema() {
  static const std::vector<KeySpec> keys = {
      uint_key("seed", 0, 0, 1e18, "master seed; every random stream derives from it"),
      str_key("run_name", "default", {}, "artifact directory under NEUROCLIPS_HOME"),
      // world and dataset
      uint_key("n_classes", 8, 2, 8, "object classes in the synthetic world"),
      uint_key("frame_size", 64, 16, 256, "frame height and width in pixels"),
      uint_key("n_voxels", 2048, 16, 1e6, "voxels per fMRI sample"),
      num_key("noise_sigma", 0.25, 0, 100, "per-draw voxel noise"),
      num_key("active_fraction", 0.5, 1e-6, 1, "fraction of voxels driven by the stimulus"),
      uint_key("n_train", 512, 8, 1e6, "training clips"),
      uint_key("n_test", 64, 2, 1e6, "test clips"),
      uint_key("train_repeats", 2, 1, 1000, "averaged noisy draws per training sample"),
      uint_key("test_repeats", 10, 1, 1000, "averaged noisy draws per test sample"),
      // frozen stand-ins
      str_key("codec_variant", "fitted", {"fitted", "orthogonal"}, "latent codec"),
      num_key("latent_scale", 1.0, 1e-6, 1e6, "codec latent scale factor"),
      uint_key("projector_epochs", 20, 1, 1e6, "Reftm projector pretraining epochs"),
      num_key("projector_lr", 3e-3, 1e-9, 10, "Reftm projector learning rate"),
      num_key("denoiser_bandwidth", 0.01, 1e-9, 100, "video denoiser component variance (relative)"),
      num_key("denoiser_keyframe_bandwidth", 0.05, 1e-9, 100, "video denoiser keyframe match variance (relative)"),
      num_key("denoiser_caption_temperature", 0.01, 1e-6, 100, "caption-to-class softmax temperature"),
      // perception reconstructor
      uint_key("pr_epochs", 40, 1, 1e6, "PR training epochs"),
      uint_key("pr_batch", 40, 2, 1e6, "PR batch size"),
      num_key("pr_lr", 3e-4, 1e-9, 10, "PR learning rate"),
      num_key("pr_weight_decay", 1e-4, 0, 10, "PR decoupled weight decay"),
      num_key("pr_tau", 0.07, 1e-6, 100, "PR contrastive temperature"),
      // semantics reconstructor
      uint_key("sr_phase1_epochs", 30, 1, 1e6, "SR phase 1 (BiMixCo) epochs"),
      uint_key("sr_phase1_batch", 128, 2, 1e6, "SR phase 1 batch size"),
      uint_key("sr_phase2_epochs", 60, 1, 1e6, "SR phase 2 (prior + Reftm) epochs"),
      uint_key("sr_phase2_batch", 64, 2, 1e6, "SR phase 2 batch size"),
      num_key("sr_lr", 3e-4, 1e-9, 10, "SR learning rate"),
      num_key("sr_weight_decay", 1e-4, 0, 10, "SR decoupled weight decay"),
      num_key("ridge_lambda", 1e-4, 0, 1e6, "L2 penalty on the ridge weight"),
      num_key("tau", 0.07, 1e-6, 100, "BiMixCo and Reftm temperature"),
      num_key("delta", 30.0, 0, 1e6, "prior loss weight"),
      num_key("mu", 1.0, 0, 1e6, "Reftm loss weight"),
      num_key("mixco_beta_a", 0.15, 1e-6, 1e6, "MixCo Beta(a, b) first parameter"),
      num_key("mixco_beta_b", 0.15, 1e-6, 1e6, "MixCo Beta(a, b) second parameter"),
      // inference
      num_key("theta", 0.3, 1e-9, 1, "alpha guidance noise level in (0, 1]"),
      uint_key("sampler_steps", 25, 1, 1e6, "deterministic sampler steps"),
      uint_key("diffusion_steps", 1000, 2, 1e6, "diffusion schedule length T"),
      uint_key("out_frames", 16, 2, 1e4, "frames per reconstructed clip"),
      num_key("out_fps", 8.0, 1e-3, 1e3, "playback rate of reconstructed clips"),
      bool_key("use_beta", true, "first-frame keyframe conditioning"),
      bool_key("use_gamma", true, "caption conditioning"),
      // fusion
      bool_key("keep_boundary_frames", true, "keep duplicated boundary frames in fused videos"),
      uint_key("max_chain", 3, 1, 1e4, "maximum clips per fused video"),
      uint_key("similarity_hidden", 64, 1, 1e5, "similarity MLP hidden units"),
      uint_key("similarity_epochs", 40, 1, 1e6, "similarity MLP epochs"),
      uint_key("similarity_pairs", 4000, 4, 1e7, "balanced training pairs"),
      num_key("similarity_threshold", 0.5, 1e-6, 1 - 1e-6, "same-class decision threshold"),
      // evaluation
      uint_key("nway_n", 2, 2, 1e4, "N of the N-way test"),
      uint_key("nway_k", 1, 1, 1e4, "K of the top-K test"),
      uint_key("nway_repeats", 100, 1, 1e7, "repeats per N-way test"),
      uint_key("pool_size", 64, 2, 1e7, "retrieval candidate pool"),
      uint_key("partitions", 1, 1, 1e4, "retrieval partitions"),
      str_key("pcc_mode", "cosine", {"cosine", "pearson"}, "CLIP-pcc similarity"),
  };
  return keys;
}

RunConfig::RunConfig() {
  values_ = nlohmann::json::object();
  for (const auto& s : schema()) values_[s.name] = s.default_value;
}

void RunConfig::set(const std::string& key, const std::string& value) {
  values_[key] = parse_value(spec_for(key), value);
}

void RunConfig::apply_override(const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos) throw ConfigError(assignment, "override '" + assignment + "' is not key=value");
  set(trim(assignment.substr(0, eq)), assignment.substr(eq + 1));
}

RunConfig RunConfig::from_yaml(const std::string& text) {
  YAML::Node root;
  try {
    root = YAML::Load(text);
  } catch (const YAML::Exception& e) {
    throw ConfigError("<document>", std::string("config is not valid YAML: ") + e.what());
  }
  RunConfig cfg;
  if (root.IsNull()) return cfg;
  if (!root.IsMap()) throw ConfigError("<document>", "config must be a flat mapping of key: value");
  for (const auto& item : root) {
    const auto key = item.first.as<std::string>();
    const KeySpec& spec = spec_for(key);
    if (!item.second.IsScalar()) throw ConfigError(key, key + ": expected a scalar value");
    cfg.values_[key] = parse_value(spec, item.second.Scalar());
  }
  return cfg;
}

RunConfig RunConfig::load(const std::filesystem::path& path) {
  std::ifstream f(path);
  if (!f) throw ConfigError("<document>", "cannot read config " + path.string());
  std::stringstream ss;
  ss << f.rdbuf();
  return from_yaml(ss.str());
}

std::string RunConfig::hash() const { return sha256_hex(values_.dump()); }

std::uint64_t RunConfig::uint(const std::string& key) const { return values_.at(key).get<std::uint64_t>(); }
double RunConfig::num(const std::string& key) const { return values_.at(key).get<double>(); }
bool RunConfig::flag(const std::string& key) const { return values_.at(key).get<bool>(); }
std::string RunConfig::str(const std::string& key) const { return values_.at(key).get<std::string>(); }

data::WorldSpec RunConfig::world() const {
  data::WorldSpec w;
  w.n_classes = uint("n_classes");
  w.frame_size = uint("frame_size");
  w.n_voxels = uint("n_voxels");
  w.noise_sigma = num("noise_sigma");
  w.active_fraction = num("active_fraction");
  w.seed = seed();
  try {
    w.validate();
  } catch (const InvalidArgument& e) {
    throw ConfigError("frame_size", e.what());
  }
  if (w.frame_size % 4 != 0) throw ConfigError("frame_size", "frame_size must be a multiple of 4");
  return w;
}

data::DatasetOptions RunConfig::dataset_options() const {
  data::DatasetOptions o;
  o.n_train = uint("n_train");
  o.n_test = uint("n_test");
  o.train_repeats = uint("train_repeats");
  o.test_repeats = uint("test_repeats");
  return o;
}

perception::PrTrainConfig RunConfig::pr_config() const {
  perception::PrTrainConfig c;
  c.epochs = uint("pr_epochs");
  c.batch_size = uint("pr_batch");
  c.lr = num("pr_lr");
  c.weight_decay = num("pr_weight_decay");
  c.tau = num("pr_tau");
  c.seed = seed();
  c.validation_size = std::min<std::size_t>(c.validation_size, uint("n_train") / 2);
  return c;
}

semantics::SrTrainConfig RunConfig::sr_config() const {
  semantics::SrTrainConfig c;
  c.phase1_epochs = uint("sr_phase1_epochs");
  c.phase1_batch = uint("sr_phase1_batch");
  c.phase2_epochs = uint("sr_phase2_epochs");
  c.phase2_batch = uint("sr_phase2_batch");
  c.lr = num("sr_lr");
  c.weight_decay = num("sr_weight_decay");
  c.ridge_lambda = num("ridge_lambda");
  c.tau = num("tau");
  c.weights = {num("delta"), num("mu")};
  c.beta = {num("mixco_beta_a"), num("mixco_beta_b")};
  c.seed = seed();
  return c;
}

semantics::ProjectorTrainConfig RunConfig::projector_config() const {
  semantics::ProjectorTrainConfig c;
  c.epochs = uint("projector_epochs");
  c.lr = num("projector_lr");
  c.tau = num("tau");
  c.seed = seed();
  return c;
}

guidance::GuidanceConfig RunConfig::guidance() const {
  guidance::GuidanceConfig g;
  g.theta = num("theta");
  g.steps = uint("sampler_steps");
  g.T = uint("diffusion_steps");
  g.out_frames = uint("out_frames");
  g.fps = num("out_fps");
  g.use_beta = flag("use_beta");
  g.use_gamma = flag("use_gamma");
  if (g.steps > g.T) throw ConfigError("sampler_steps", "sampler_steps must not exceed diffusion_steps");
  return g;
}

guidance::TinyVideoDenoiser::FitConfig RunConfig::denoiser_config() const {
  guidance::TinyVideoDenoiser::FitConfig c;
  c.bandwidth = num("denoiser_bandwidth");
  c.keyframe_bandwidth = num("denoiser_keyframe_bandwidth");
  c.caption_temperature = num("denoiser_caption_temperature");
  return c;
}

fusion::SimilarityConfig RunConfig::similarity_config() const {
  fusion::SimilarityConfig c;
  c.hidden = uint("similarity_hidden");
  c.epochs = uint("similarity_epochs");
  c.threshold = num("similarity_threshold");
  c.seed = seed();
  return c;
}

fusion::FusionConfig RunConfig::fusion_config() const {
  fusion::FusionConfig c;
  c.keep_boundary_frames = flag("keep_boundary_frames");
  c.max_chain = uint("max_chain");
  return c;
}

metrics::EvalConfig RunConfig::eval_config(std::size_t workers) const {
  metrics::EvalConfig c;
  c.nway_n = uint("nway_n");
  c.nway_k = uint("nway_k");
  c.repeats = uint("nway_repeats");
  c.pool_size = uint("pool_size");
  c.partitions = uint("partitions");
  c.pcc_mode = metrics::pcc_mode_from_string(str("pcc_mode"));
  c.seed = seed();
  c.workers = workers;
  if (c.nway_n > uint("n_classes")) throw ConfigError("nway_n", "nway_n must not exceed n_classes");
  if (c.nway_k > c.nway_n) throw ConfigError("nway_k", "nway_k must not exceed nway_n");
  if (c.pool_size * c.partitions > uint("n_test")) {
    throw ConfigError("pool_size", "pool_size x partitions must not exceed n_test");
  }
  return c;
}

perception::PrArchitecture pr_architecture(std::size_t n_voxels, std::size_t latent_side) {
  perception::PrArchitecture a;
  a.n_voxels = n_voxels;
  a.target_size = latent_side;
  if (latent_side == 16) return a;
  a.coarse_size = std::min<std::size_t>(8, latent_side);
  a.stages.clear();
  std::size_t size = a.coarse_size;
  a.stages.push_back({size, 1});
  while (size < latent_side) {
    if (latent_side % (size * 2) != 0) throw ConfigError("frame_size", "latent side must be 8 times a power of two");
    a.stages.push_back({size, 2});
    size *= 2;
  }
  return a;
}

semantics::SrArchitecture sr_architecture(std::size_t n_voxels) {
  semantics::SrArchitecture a;
  a.n_voxels = n_voxels;
  return a;
}

std::filesystem::path Workspace::manifest(const std::string& command) const {
  return root / "manifests" / (command + ".json");
}

}  // namespace neuroclips::cli
