#include "neuroclips/perception.hpp"

#include <cmath>

#include "neuroclips/core/error.hpp"
#include "neuroclips/core/rng.hpp"

namespace neuroclips::perception {

using ad::Var;

void PrArchitecture::validate() const {
  if (n_frames < 1) throw ConfigError("n_frames", "must be at least 1");
  if (stages.empty()) throw ConfigError("stages", "at least one upsampling stage is required");
  std::size_t size = coarse_size;
  for (std::size_t s = 0; s < stages.size(); ++s) {
    if (stages[s].size != size) {
      throw ConfigError("stages", "stage " + std::to_string(s) + " expects size " + std::to_string(stages[s].size) +
                                      " but receives " + std::to_string(size));
    }
    if (stages[s].factor < 1) throw ConfigError("stages", "upsampling factor must be at least 1");
    size *= stages[s].factor;
  }
  if (size != target_size) {
    throw ConfigError("stages", "stage chain ends at " + std::to_string(size) + ", target is " +
                                    std::to_string(target_size));
  }
}

void to_json(nlohmann::json& j, const PrArchitecture& a) {
  nlohmann::json stages = nlohmann::json::array();
  for (const auto& s : a.stages) stages.push_back({s.size, s.factor});
  j = {{"n_voxels", a.n_voxels}, {"n_frames", a.n_frames},       {"hidden", a.hidden},
       {"code_dim", a.code_dim}, {"channels", a.channels},       {"coarse_size", a.coarse_size},
       {"stages", stages},       {"target_size", a.target_size}};
}

void from_json(const nlohmann::json& j, PrArchitecture& a) {
  j.at("n_voxels").get_to(a.n_voxels);
  j.at("n_frames").get_to(a.n_frames);
  j.at("hidden").get_to(a.hidden);
  j.at("code_dim").get_to(a.code_dim);
  j.at("channels").get_to(a.channels);
  j.at("coarse_size").get_to(a.coarse_size);
  j.at("target_size").get_to(a.target_size);
  a.stages.clear();
  for (const auto& s : j.at("stages")) a.stages.push_back({s.at(0).get<std::size_t>(), s.at(1).get<std::size_t>()});
}

void to_json(nlohmann::json& j, const PrTrainConfig& c) {
  j = {{"epochs", c.epochs}, {"batch_size", c.batch_size}, {"lr", c.lr},
       {"weight_decay", c.weight_decay}, {"tau", c.tau}, {"seed", c.seed}, {"validation_size", c.validation_size}};
}

namespace {

// [N, L, c] tokens -> linear map on the last axis.
Var project_tokens(const Var& tokens, const Var& w) {
  const Shape& s = tokens.shape();
  return ad::reshape(ad::linear(ad::reshape(tokens, {s[0] * s[1], s[2]}), w, Var()), s);
}

// softmax(Q Kᵀ / sqrt(c)) · V over the middle axis of [N, L, c] tokens.
Var self_attention(const Var& tokens, const Var& wq, const Var& wk) {
  const double c = static_cast<double>(tokens.shape()[2]);
  const Var q = project_tokens(tokens, wq);
  const Var k = project_tokens(tokens, wk);
  const Var weights = ad::softmax_last(ad::scale(ad::bmm(q, k, false, true), 1.0 / std::sqrt(c)));
  return ad::bmm(weights, tokens);
}

}  // namespace

Var temporal_attention(const Var& e_temp, const Var& wq, const Var& wk) {
  if (e_temp.shape().size() != 3) throw InvalidArgument("temporal attention expects [(b*h*w), N_f, c]");
  const std::size_t c = e_temp.shape()[2];
  if (wq.shape() != Shape{c, c} || wk.shape() != Shape{c, c}) {
    throw InvalidArgument("temporal attention projections must be [c, c] with c = " + std::to_string(c));
  }
  if (!e_temp.value().all_finite()) throw NumericError("non-finite value entering temporal attention");
  return self_attention(e_temp, wq, wk);
}

Tensor temporal_attention_weights(const Tensor& e_temp, const Tensor& wq, const Tensor& wk) {
  const Var e = Var::constant(e_temp);
  const double c = static_cast<double>(e_temp.dim(2));
  const Var q = project_tokens(e, Var::constant(wq));
  const Var k = project_tokens(e, Var::constant(wk));
  return ad::softmax_last(ad::scale(ad::bmm(q, k, false, true), 1.0 / std::sqrt(c))).value();
}

Var residual_mix(const Var& raw_eta, const Var& a, const Var& b) {
  const Var eta = ad::sigmoid(raw_eta);
  return ad::add(ad::scale_by(a, eta), ad::scale_by(b, ad::add_scalar(ad::scale(eta, -1.0), 1.0)));
}

PerceptionModel::PerceptionModel(PrArchitecture arch, std::uint64_t seed) : arch_(std::move(arch)) {
  arch_.validate();
  const std::size_t c = arch_.channels;
  std::uint64_t k = 0;
  auto rng = [&] { return Rng(derive_seed(seed, {stream::kInit, k++})); };
  {
    Rng r = rng();
    params_.add("ext.w1", init_weight(r, arch_.hidden, arch_.n_voxels));
  }
  params_.add("ext.b1", Tensor(Shape{arch_.hidden}));
  {
    Rng r = rng();
    params_.add("ext.w2", init_weight(r, arch_.n_frames * arch_.code_dim, arch_.hidden));
  }
  params_.add("ext.b2", Tensor(Shape{arch_.code_dim}));
  {
    Rng r = rng();
    params_.add("coarse.w", init_weight(r, c * arch_.coarse_size * arch_.coarse_size, arch_.code_dim));
  }
  params_.add("coarse.b", Tensor(Shape{c * arch_.coarse_size * arch_.coarse_size}));
  for (std::size_t s = 0; s < arch_.stages.size(); ++s) {
    Rng r = rng();
    const double conv_limit = std::sqrt(6.0 / static_cast<double>(2 * c * 9));
    Tensor conv(Shape{c, c, 3, 3});
    for (double& v : conv.vec()) v = r.uniform(-conv_limit, conv_limit);
    params_.add(stage_key(s, "conv.w"), std::move(conv));
    params_.add(stage_key(s, "conv.b"), Tensor(Shape{c}));
    params_.add(stage_key(s, "spatial.wq"), init_weight(r, c, c));
    params_.add(stage_key(s, "spatial.wk"), init_weight(r, c, c));
    params_.add(stage_key(s, "temporal.wq"), init_weight(r, c, c));
    params_.add(stage_key(s, "temporal.wk"), init_weight(r, c, c));
    params_.add(stage_key(s, "eta1"), Tensor(Shape{1}));
    params_.add(stage_key(s, "eta2"), Tensor(Shape{1}));
  }
}

std::string PerceptionModel::stage_key(std::size_t stage, const char* name) const {
  return "stage" + std::to_string(stage) + "." + name;
}

Var PerceptionModel::inception_extend(const Var& fmri) {
  if (fmri.shape().size() != 2 || fmri.shape()[1] != arch_.n_voxels) {
    throw InvalidArgument("inception extension expects [b, " + std::to_string(arch_.n_voxels) + "], got " +
                          shape_str(fmri.shape()));
  }
  const std::size_t b = fmri.shape()[0];
  const Var h = ad::gelu(ad::linear(fmri, params_.get("ext.w1"), params_.get("ext.b1")));
  const Var codes = ad::reshape(ad::linear(h, params_.get("ext.w2"), Var()), {b, arch_.n_frames, arch_.code_dim});
  return ad::add_rowvec(codes, params_.get("ext.b2"));
}

Var PerceptionModel::to_coarse(const Var& codes) {
  const std::size_t b = codes.shape()[0];
  const std::size_t n = arch_.n_frames, c = arch_.channels, h = arch_.coarse_size;
  const Var flat = ad::reshape(codes, {b * n, arch_.code_dim});
  return ad::reshape(ad::linear(flat, params_.get("coarse.w"), params_.get("coarse.b")), {b, n, c, h, h});
}

Var PerceptionModel::stage_forward(std::size_t stage, const Var& x, std::size_t batch) {
  const std::size_t n = arch_.n_frames, c = arch_.channels;
  const std::size_t h = arch_.stages.at(stage).size, hw = h * h;
  const Shape spat_shape{batch * n, c, h, h};
  if (x.shape() != spat_shape) {
    throw InvalidArgument("stage " + std::to_string(stage) + " expects " + shape_str(spat_shape) + ", got " +
                          shape_str(x.shape()));
  }
  // Spatial layer: 3x3 convolution, then self-attention over the h·w positions of each frame.
  const Var conv = ad::gelu(ad::conv2d(x, params_.get(stage_key(stage, "conv.w")), params_.get(stage_key(stage, "conv.b"))));
  const Var tokens = ad::permute(ad::reshape(conv, {batch * n, c, hw}), {0, 2, 1});
  const Var attended = self_attention(tokens, params_.get(stage_key(stage, "spatial.wq")),
                                      params_.get(stage_key(stage, "spatial.wk")));
  const Var spatial = ad::reshape(ad::permute(attended, {0, 2, 1}), spat_shape);
  const Var mixed1 = residual_mix(params_.get(stage_key(stage, "eta1")), x, spatial);

  // (b·N_f, c, h, w) -> (b·h·w, N_f, c)
  const Var temp = ad::reshape(ad::permute(ad::reshape(mixed1, {batch, n, c, hw}), {0, 3, 1, 2}), {batch * hw, n, c});
  const Var attn = temporal_attention(temp, params_.get(stage_key(stage, "temporal.wq")),
                                      params_.get(stage_key(stage, "temporal.wk")));
  const Var mixed2 = residual_mix(params_.get(stage_key(stage, "eta2")), temp, attn);
  const Var back = ad::reshape(ad::permute(ad::reshape(mixed2, {batch, hw, n, c}), {0, 2, 3, 1}), spat_shape);
  const std::size_t factor = arch_.stages[stage].factor;
  return factor == 1 ? back : ad::upsample_nearest(back, factor);
}

Var PerceptionModel::temporal_upsample(const Var& coarse) {
  const std::size_t b = coarse.shape()[0];
  const std::size_t n = arch_.n_frames, c = arch_.channels;
  Var x = ad::reshape(coarse, {b * n, c, arch_.coarse_size, arch_.coarse_size});
  for (std::size_t s = 0; s < arch_.stages.size(); ++s) x = stage_forward(s, x, b);
  return ad::reshape(x, {b, n, c, arch_.target_size, arch_.target_size});
}

Var PerceptionModel::forward(const Var& fmri) { return temporal_upsample(to_coarse(inception_extend(fmri))); }

Tensor PerceptionModel::predict(const Tensor& fmri) {
  if (fmri.numel() != arch_.n_voxels) {
    throw InvalidArgument("fMRI vector has " + std::to_string(fmri.numel()) + " voxels, model expects " +
                          std::to_string(arch_.n_voxels));
  }
  const Var out = forward(Var::constant(fmri.reshaped({1, arch_.n_voxels})));
  return out.value().reshaped({arch_.n_frames, arch_.channels, arch_.target_size, arch_.target_size});
}

Checkpoint PerceptionModel::to_checkpoint() const {
  Checkpoint ck;
  ck.manifest = {{"kind", "perception"}, {"arch", arch_}};
  ck.tensors = params_.snapshot();
  return ck;
}

PerceptionModel PerceptionModel::from_checkpoint(const Checkpoint& ck) {
  PerceptionModel m(ck.manifest.at("arch").get<PrArchitecture>(), 0);
  m.params_.load(ck.tensors);
  return m;
}

Var pr_loss(const Var& e_x, const Var& e_y, double tau) {
  if (tau <= 0.0) throw InvalidArgument("temperature must be positive");
  if (e_x.shape() != e_y.shape() || e_x.shape().size() < 3) {
    throw InvalidArgument("pr_loss expects matching [b, N_f, ...] tensors, got " + shape_str(e_x.shape()) + " and " +
                          shape_str(e_y.shape()));
  }
  const std::size_t b = e_x.shape()[0], n = e_x.shape()[1];
  const std::size_t d = e_x.value().numel() / (b * n);
  const Var mae = ad::mean(ad::abs(ad::sub(e_x, e_y)));

  const Var nx = ad::normalize_last(ad::reshape(e_x, {b, n, d}));
  const Var ny = ad::normalize_last(ad::reshape(e_y, {b, n, d}));
  const Var sim = ad::scale(ad::bmm(nx, ny, false, true), 1.0 / tau);  // [b, j, k] = sim(x_j, y_k)
  Tensor diag(Shape{b, n, n});
  const double w = -1.0 / (2.0 * static_cast<double>(n * b));
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = 0; j < n; ++j) diag[(i * n + j) * n + j] = w;
  const Var x_to_y = ad::weighted_sum(ad::log_softmax_last(sim), diag);
  const Var y_to_x = ad::weighted_sum(ad::log_softmax_last(ad::permute(sim, {0, 2, 1})), diag);
  return ad::add(mae, ad::add(x_to_y, y_to_x));
}

namespace {

Var batch_of(const std::vector<Tensor>& rows, const std::vector<std::size_t>& idx) {
  std::vector<Tensor> picked;
  picked.reserve(idx.size());
  for (std::size_t i : idx) picked.push_back(rows[i]);
  return Var::constant(stack(picked));
}

}  // namespace

PrTrainResult train_pr(const std::vector<Tensor>& fmri, const std::vector<Tensor>& targets, PrArchitecture arch,
                       const PrTrainConfig& config, const std::function<void(std::size_t, double)>& on_epoch) {
  if (fmri.empty() || fmri.size() != targets.size()) throw InvalidArgument("train_pr needs aligned, non-empty data");
  if (config.batch_size < 1) throw InvalidArgument("batch_size must be positive");
  arch.n_voxels = fmri.front().numel();
  PrTrainResult result{PerceptionModel(arch, config.seed), {}, {}};
  PerceptionModel& model = result.model;
  Adam opt(model.params().all(), AdamConfig{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});

  const std::size_t n = fmri.size();
  std::vector<std::size_t> val_idx;
  for (std::size_t i = 0; i < std::min(config.validation_size, n); ++i) val_idx.push_back(i);
  const Var val_x = batch_of(fmri, val_idx);
  const Var val_y = batch_of(targets, val_idx);
  auto validation = [&] { return pr_loss(val_y, model.forward(val_x), config.tau).item(); };
  result.validation_loss.push_back(validation());

  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle(derive_seed(config.seed, {stream::kShuffle, epoch}));
    const auto order = shuffle.permutation(n);
    double total = 0.0;
    std::size_t batches = 0;
    for (std::size_t start = 0; start < n; start += config.batch_size) {
      const std::vector<std::size_t> idx(order.begin() + long(start),
                                         order.begin() + long(std::min(n, start + config.batch_size)));
      opt.zero_grad();
      const Var loss = pr_loss(batch_of(targets, idx), model.forward(batch_of(fmri, idx)), config.tau);
      const double value = loss.item();
      if (!std::isfinite(value)) {
        throw NumericError("perception training diverged at epoch " + std::to_string(epoch) + ", batch starting " +
                           std::to_string(start) + " (loss " + std::to_string(value) + ")");
      }
      ad::backward(loss);
      opt.step();
      total += value;
      ++batches;
    }
    result.epoch_loss.push_back(total / static_cast<double>(batches));
    result.validation_loss.push_back(validation());
    if (on_epoch) on_epoch(epoch, result.epoch_loss.back());
  }
  return result;
}

BlurryVideo reconstruct_blurry(PerceptionModel& model, const codecs::LatentCodec& codec, const Tensor& fmri) {
  BlurryVideo v;
  v.latents = model.predict(fmri);
  if (Shape(v.latents.shape().begin() + 1, v.latents.shape().end()) != codec.latent_shape()) {
    throw ContractViolation("perception output " + shape_str(v.latents.shape()) + " does not match codec latent " +
                            shape_str(codec.latent_shape()));
  }
  v.frames = codec.decode_clip(v.latents);
  return v;
}

}  // namespace neuroclips::perception
