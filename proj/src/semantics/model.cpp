#include <algorithm>
#include <cmath>
#include <fstream>

#include "neuroclips/core/error.hpp"
#include "neuroclips/core/stats.hpp"
#include "neuroclips/semantics.hpp"

namespace neuroclips::semantics {

using ad::Var;

void to_json(nlohmann::json& j, const SrArchitecture& a) {
  j = {{"n_voxels", a.n_voxels},         {"ridge_dim", a.ridge_dim}, {"mlp_hidden", a.mlp_hidden},
       {"prior_hidden", a.prior_hidden}, {"tokens", a.tokens},       {"embed_dim", a.embed_dim}};
}

void from_json(const nlohmann::json& j, SrArchitecture& a) {
  j.at("n_voxels").get_to(a.n_voxels);
  j.at("ridge_dim").get_to(a.ridge_dim);
  j.at("mlp_hidden").get_to(a.mlp_hidden);
  j.at("prior_hidden").get_to(a.prior_hidden);
  j.at("tokens").get_to(a.tokens);
  j.at("embed_dim").get_to(a.embed_dim);
}

SemanticsModel::SemanticsModel(SrArchitecture arch, std::uint64_t seed) : arch_(arch) {
  if (arch_.n_voxels == 0 || arch_.ridge_dim == 0) throw InvalidArgument("SR architecture has a zero dimension");
  const std::size_t e = arch_.embedding_size();
  std::uint64_t k = 0;
  auto rng = [&] { return Rng(derive_seed(seed, {stream::kInit, 100 + k++})); };
  auto add = [&](const std::string& name, std::size_t out, std::size_t in, double gain = 1.0) {
    Rng r = rng();
    params_.add(name + ".w", init_weight(r, out, in, gain));
    params_.add(name + ".b", Tensor(Shape{out}));
  };
  add("ridge", arch_.ridge_dim, arch_.n_voxels);
  add("mlp.l1", arch_.mlp_hidden, arch_.ridge_dim);
  add("mlp.l2", e, arch_.mlp_hidden);
  add("prior.l1", arch_.prior_hidden, e);
  // Starts close to the identity map.
  add("prior.l2", e, arch_.prior_hidden, 0.1);
}

std::vector<Var*> SemanticsModel::phase_params(int phase) {
  if (phase != 1 && phase != 2) throw InvalidArgument("SR training has phases 1 and 2");
  std::vector<Var*> out;
  for (const auto& name : {"ridge.w", "ridge.b", "mlp.l1.w", "mlp.l1.b", "mlp.l2.w", "mlp.l2.b", "prior.l1.w",
                           "prior.l1.b", "prior.l2.w", "prior.l2.b"}) {
    const bool is_prior = std::string(name).starts_with("prior.");
    if ((phase == 1 && !is_prior) || (phase == 2 && is_prior)) out.push_back(&params_.get(name));
  }
  return out;
}

Var SemanticsModel::ridge(const Var& fmri) {
  if (fmri.shape().size() != 2 || fmri.shape()[1] != arch_.n_voxels) {
    throw InvalidArgument("SR model expects [b, " + std::to_string(arch_.n_voxels) + "], got " +
                          shape_str(fmri.shape()));
  }
  return ad::linear(fmri, params_.get("ridge.w"), params_.get("ridge.b"));
}

Var SemanticsModel::embed(const Var& fmri) {
  const std::size_t b = fmri.shape().at(0);
  const Var h = ad::gelu(ad::linear(ridge(fmri), params_.get("mlp.l1.w"), params_.get("mlp.l1.b")));
  return ad::reshape(ad::linear(h, params_.get("mlp.l2.w"), params_.get("mlp.l2.b")), {b, arch_.tokens, arch_.embed_dim});
}

Var SemanticsModel::prior(const Var& embedding) {
  const std::size_t b = embedding.shape().at(0);
  const Shape s{b, arch_.tokens, arch_.embed_dim};
  if (embedding.shape() != s) throw InvalidArgument("prior expects " + shape_str(s));
  const Var flat = ad::reshape(embedding, {b, arch_.embedding_size()});
  const Var h = ad::gelu(ad::linear(flat, params_.get("prior.l1.w"), params_.get("prior.l1.b")));
  return ad::reshape(ad::add(flat, ad::linear(h, params_.get("prior.l2.w"), params_.get("prior.l2.b"))), s);
}

Tensor SemanticsModel::fmri_embedding(const Tensor& fmri) {
  if (fmri.numel() != arch_.n_voxels) throw InvalidArgument("fMRI length does not match the SR model");
  return embed(Var::constant(fmri.reshaped({1, arch_.n_voxels}))).value().reshaped({arch_.tokens, arch_.embed_dim});
}

Tensor SemanticsModel::reconstruction_embedding(const Tensor& fmri) {
  const Tensor e = fmri_embedding(fmri);
  return prior(Var::constant(e.reshaped({1, arch_.tokens, arch_.embed_dim})))
      .value()
      .reshaped({arch_.tokens, arch_.embed_dim});
}

RidgeLayer SemanticsModel::ridge_layer() const {
  return {params_.get("ridge.w").value(), params_.get("ridge.b").value(), 0.0};
}

Checkpoint SemanticsModel::to_checkpoint() const {
  Checkpoint ck;
  ck.manifest = {{"kind", "semantics"}, {"arch", arch_}, {"trained", trained_}};
  ck.tensors = params_.snapshot();
  return ck;
}

SemanticsModel SemanticsModel::from_checkpoint(const Checkpoint& ck) {
  if (ck.manifest.value("kind", "") != "semantics") throw CorruptFile("not a semantics checkpoint");
  SemanticsModel m(ck.manifest.at("arch").get<SrArchitecture>(), 0);
  m.params_.load(ck.tensors);
  m.trained_ = ck.manifest.at("trained").get<bool>();
  return m;
}

// ---------------------------------------------------------------------------

SrSample make_sr_sample(const data::Dataset& dataset, std::size_t index, const codecs::CodecBundle& codecs) {
  SrSample s;
  s.fmri = dataset.fmri(index);
  const data::VideoClip clip = dataset.clip(index);
  for (std::size_t f = 0; f < clip.n_frames(); ++f) {
    const Tensor frame = clip.frame(f);
    s.frame_embeddings.push_back(codecs.embedder.embed_image(frame));
    s.text_embeddings.push_back(codecs.embedder.embed_text(codecs.classifier.caption(codecs.embedder, frame)));
  }
  return s;
}

std::size_t eval_keyframe(std::size_t n_frames) {
  if (n_frames == 0) throw InvalidArgument("clip has no frames");
  return n_frames / 2;
}

void to_json(nlohmann::json& j, const SrTrainConfig& c) {
  j = {{"phase1_epochs", c.phase1_epochs},
       {"phase1_batch", c.phase1_batch},
       {"phase2_epochs", c.phase2_epochs},
       {"phase2_batch", c.phase2_batch},
       {"lr", c.lr},
       {"weight_decay", c.weight_decay},
       {"ridge_lambda", c.ridge_lambda},
       {"tau", c.tau},
       {"delta", c.weights.delta},
       {"mu", c.weights.mu},
       {"beta_a", c.beta.a},
       {"beta_b", c.beta.b},
       {"seed", c.seed}};
}

namespace {

// Consecutive index ranges of a permutation; a trailing singleton is dropped
// since contrastive terms need at least two samples.
std::vector<std::vector<std::size_t>> batches(const std::vector<std::size_t>& order, std::size_t size) {
  std::vector<std::vector<std::size_t>> out;
  for (std::size_t start = 0; start < order.size(); start += size) {
    std::vector<std::size_t> b(order.begin() + long(start), order.begin() + long(std::min(order.size(), start + size)));
    if (b.size() >= 2) out.push_back(std::move(b));
  }
  return out;
}

struct Picked {
  Tensor fmri, keyframes, texts;
};

Picked pick(const std::vector<SrSample>& samples, const std::vector<std::size_t>& idx,
            const std::vector<std::size_t>& keyframe) {
  std::vector<Tensor> f, k, t;
  for (std::size_t i : idx) {
    f.push_back(samples[i].fmri);
    k.push_back(samples[i].frame_embeddings.at(keyframe[i]));
    t.push_back(samples[i].text_embeddings.at(keyframe[i]));
  }
  return {stack(f), stack(k), stack(t)};
}

// Fresh random keyframe per clip for this epoch.
std::vector<std::size_t> draw_keyframes(const std::vector<SrSample>& samples, std::uint64_t seed, int phase,
                                        std::size_t epoch) {
  Rng rng(derive_seed(seed, {stream::kKeyframe, std::uint64_t(phase), epoch}));
  std::vector<std::size_t> out;
  for (const auto& s : samples) out.push_back(rng.index(s.frame_embeddings.size()));
  return out;
}

void check_finite(double value, int phase, std::size_t epoch, std::size_t step) {
  if (!std::isfinite(value)) {
    throw NumericError("SR training diverged in phase " + std::to_string(phase) + ", epoch " + std::to_string(epoch) +
                       ", step " + std::to_string(step) + " (loss " + std::to_string(value) + ")");
  }
}

}  // namespace

SrTrainResult train_sr(const std::vector<SrSample>& samples, SrArchitecture arch, const ReftmProjector& projector,
                       const SrTrainConfig& config, const std::function<void(int, std::size_t, double)>& on_epoch) {
  if (!projector.frozen()) throw ContractViolation("the Reftm projector must be frozen before SR training");
  if (samples.size() < 2) throw InvalidArgument("SR training needs at least two clips");
  for (const auto& s : samples) {
    if (s.frame_embeddings.empty() || s.frame_embeddings.size() != s.text_embeddings.size()) {
      throw InvalidArgument("SR sample needs aligned frame and text embeddings");
    }
  }
  if (config.phase1_batch < 2 || config.phase2_batch < 2) throw InvalidArgument("SR batch sizes must be at least 2");
  arch.n_voxels = samples.front().fmri.numel();
  SrTrainResult result{SemanticsModel(arch, config.seed), {}, {}, {}};
  SemanticsModel& model = result.model;
  const std::size_t n = samples.size();

  std::size_t step = 0;
  {
    Adam opt(model.phase_params(1), AdamConfig{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
    for (std::size_t epoch = 0; epoch < config.phase1_epochs; ++epoch) {
      const auto keyframe = draw_keyframes(samples, config.seed, 1, epoch);
      Rng shuffle(derive_seed(config.seed, {stream::kShuffle, 1, epoch}));
      double total = 0.0;
      const auto bs = batches(shuffle.permutation(n), config.phase1_batch);
      for (std::size_t k = 0; k < bs.size(); ++k, ++step) {
        const Picked p = pick(samples, bs[k], keyframe);
        Rng mix_rng(derive_seed(config.seed, {stream::kMixco, epoch, k}));
        const MixedBatch mixed = mixco_mix(p.fmri, config.beta, mix_rng);
        opt.zero_grad();
        const Var contrast = bimixco_loss(model.embed(Var::constant(mixed.mixed)), Var::constant(p.keyframes),
                                          mixed.pairs, config.tau);
        const Var penalty = ad::scale(ad::sum(ad::square(model.params().get("ridge.w"))), config.ridge_lambda);
        const Var loss = ad::add(contrast, penalty);
        check_finite(loss.item(), 1, epoch, step);
        ad::backward(loss);
        opt.step();
        total += contrast.item();
      }
      result.phase1_loss.push_back(total / double(bs.size()));
      if (on_epoch) on_epoch(1, epoch, result.phase1_loss.back());
    }
  }
  const std::size_t boundary = step;

  // Phase 2: the embedder is frozen, so its outputs are computed once.
  std::vector<Tensor> fmri_embeddings;
  for (const auto& s : samples) fmri_embeddings.push_back(model.fmri_embedding(s.fmri));
  {
    Adam opt(model.phase_params(2), AdamConfig{config.lr, 0.9, 0.999, 1e-8, config.weight_decay});
    const Var none = Var::constant(Tensor::scalar(0.0));
    for (std::size_t epoch = 0; epoch < config.phase2_epochs; ++epoch) {
      const auto keyframe = draw_keyframes(samples, config.seed, 2, epoch);
      Rng shuffle(derive_seed(config.seed, {stream::kShuffle, 2, epoch}));
      double total = 0.0;
      const auto bs = batches(shuffle.permutation(n), config.phase2_batch);
      for (std::size_t k = 0; k < bs.size(); ++k, ++step) {
        const Picked p = pick(samples, bs[k], keyframe);
        std::vector<Tensor> e;
        for (std::size_t i : bs[k]) e.push_back(fmri_embeddings[i]);
        opt.zero_grad();
        const Var re = model.prior(Var::constant(stack(e)));
        const Var loss = sr_total_loss(none, prior_loss(re, Var::constant(p.keyframes)),
                                       reftm_loss(projector.project(re), Var::constant(p.texts), config.tau),
                                       config.weights);
        check_finite(loss.item(), 2, epoch, step);
        ad::backward(loss);
        opt.step();
        total += loss.item();
      }
      result.phase2_loss.push_back(total / double(bs.size()));
      if (on_epoch) on_epoch(2, epoch, result.phase2_loss.back());
    }
  }
  model.mark_trained();
  result.schedule = {{"phase1", {{"epochs", config.phase1_epochs}, {"batch", config.phase1_batch},
                                 {"optimizes", "ridge+mlp"}, {"loss", "bimixco"}}},
                     {"phase2", {{"epochs", config.phase2_epochs}, {"batch", config.phase2_batch},
                                 {"optimizes", "prior"}, {"loss", "delta*prior+mu*reftm"}}},
                     {"boundary_step", boundary},
                     {"total_steps", step}};
  return result;
}

double top1_retrieval(const std::vector<Tensor>& queries, const std::vector<Tensor>& candidates) {
  if (queries.empty() || queries.size() != candidates.size()) {
    throw InvalidArgument("retrieval needs aligned, non-empty query and candidate lists");
  }
  std::size_t hits = 0;
  for (std::size_t q = 0; q < queries.size(); ++q) {
    std::size_t best = 0;
    double best_sim = -2.0;
    for (std::size_t c = 0; c < candidates.size(); ++c) {
      const double s = cosine(queries[q].span(), candidates[c].span());
      if (s > best_sim) best_sim = s, best = c;
    }
    hits += best == q;
  }
  return double(hits) / double(queries.size());
}

// ---------------------------------------------------------------------------

KeyframeDecoder KeyframeDecoder::fit(const std::vector<Tensor>& embeddings, const std::vector<std::size_t>& labels,
                                     std::size_t n_classes, std::size_t frame_size) {
  if (embeddings.empty() || embeddings.size() != labels.size()) {
    throw InvalidArgument("keyframe decoder needs one label per embedding");
  }
  const std::size_t d = embeddings.front().numel();
  KeyframeDecoder k;
  k.frame_size_ = frame_size;
  k.centroids_ = Tensor(Shape{n_classes, d});
  for (std::size_t i = 0; i < embeddings.size(); ++i) {
    if (labels[i] >= n_classes) throw InvalidArgument("label outside class range");
    const Tensor& e = embeddings[i];
    const double nrm = norm2(e.span());
    if (nrm == 0.0) continue;
    for (std::size_t j = 0; j < d; ++j) k.centroids_[labels[i] * d + j] += e[j] / nrm;
  }
  for (std::size_t c = 0; c < n_classes; ++c) {
    std::span<double> row(k.centroids_.data() + c * d, d);
    const double nrm = norm2(row);
    if (nrm > 0.0) std::ranges::for_each(row, [&](double& v) { v /= nrm; });
  }
  return k;
}

std::array<double, 2> locate_object(const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(2) != 3) throw InvalidArgument("expected an [H, W, 3] frame");
  const std::size_t H = frame.dim(0), W = frame.dim(1);
  const auto bg = data::background_color();
  std::vector<double> dev(H * W);
  for (std::size_t p = 0; p < H * W; ++p) {
    for (std::size_t c = 0; c < 3; ++c) dev[p] += std::abs(frame[p * 3 + c] - bg[c]);
  }
  // Weights above the mean deviation suppress the diffuse haze of a blurry frame.
  const double base = stats::mean(dev);
  double sw = 0.0, sx = 0.0, sy = 0.0;
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < W; ++j) {
      const double w = std::max(0.0, dev[i * W + j] - base);
      sw += w;
      sx += w * (double(j) + 0.5) / double(W);
      sy += w * (double(i) + 0.5) / double(H);
    }
  if (sw <= 0.0) return {0.5, 0.5};
  return {sx / sw, sy / sw};
}

KeyframeDecoder::Output KeyframeDecoder::decode(const Tensor& embedding, const Tensor& blurry) const {
  const std::size_t n = centroids_.dim(0), d = centroids_.dim(1);
  if (embedding.numel() != d) throw InvalidArgument("keyframe decoder expects a " + std::to_string(d) + "-d embedding");
  if (blurry.shape() != Shape{frame_size_, frame_size_, 3}) throw InvalidArgument("blurry frame has the wrong size");
  Output out{blurry, 0, 0.0};
  if (norm2(embedding.span()) == 0.0) return out;
  double best = -2.0;
  for (std::size_t c = 0; c < n; ++c) {
    const double s = cosine(embedding.span(), std::span<const double>(centroids_.data() + c * d, d));
    if (s > best) best = s, out.class_id = c;
  }
  out.confidence = std::clamp(best, 0.0, 1.0);
  const auto [cx, cy] = locate_object(blurry);
  const Tensor paste = data::render_frame(out.class_id, cx, cy, frame_size_);
  out.frame = paste * out.confidence + blurry * (1.0 - out.confidence);
  return out;
}

Checkpoint KeyframeDecoder::to_checkpoint() const {
  Checkpoint ck;
  ck.manifest = {{"kind", "keyframe_decoder"}, {"frame_size", frame_size_}};
  ck.tensors["centroids"] = centroids_;
  return ck;
}

KeyframeDecoder KeyframeDecoder::from_checkpoint(const Checkpoint& ck) {
  if (ck.manifest.value("kind", "") != "keyframe_decoder") throw CorruptFile("not a keyframe decoder checkpoint");
  KeyframeDecoder k;
  k.frame_size_ = ck.manifest.at("frame_size").get<std::size_t>();
  k.centroids_ = ck.get("centroids");
  return k;
}

Keyframe reconstruct_keyframe(SemanticsModel& model, const KeyframeDecoder& decoder, const codecs::LatentCodec& codec,
                              const Tensor& fmri, const Tensor& blurry_first_latent) {
  if (!model.trained()) throw NotReady("semantics model has not been trained");
  if (blurry_first_latent.empty()) throw NotReady("no blurry latent from the perception reconstructor");
  Keyframe k;
  k.embedding = model.reconstruction_embedding(fmri);
  const auto out = decoder.decode(k.embedding, codec.decode(blurry_first_latent));
  k.frame = out.frame;
  k.class_id = out.class_id;
  k.confidence = out.confidence;
  return k;
}

// ---------------------------------------------------------------------------

VoxelWeights export_voxel_weights(const RidgeLayer& layer) {
  const std::size_t out = layer.out_dim(), v = layer.in_dim();
  VoxelWeights w{Tensor(Shape{v}), ""};
  for (std::size_t o = 0; o < out; ++o)
    for (std::size_t i = 0; i < v; ++i) w.weights[i] += std::abs(layer.weight[o * v + i]) / double(out);
  const auto [lo, hi] = std::ranges::minmax(w.weights.vec());
  if (!(hi > lo)) {
    w.weights.fill(0.5);
    w.warning = "all voxel weights are equal; exporting 0.5 everywhere";
    return w;
  }
  for (double& x : w.weights.vec()) x = (x - lo) / (hi - lo);
  return w;
}

void write_voxel_csv(const VoxelWeights& w, const std::filesystem::path& path) {
  std::ofstream out(path);
  if (!out) throw IoError("cannot write " + path.string());
  out.precision(17);
  out << "voxel_index,weight\n";
  for (std::size_t i = 0; i < w.weights.numel(); ++i) out << i << ',' << w.weights[i] << '\n';
  if (!out) throw IoError("failed writing " + path.string());
}

}  // namespace neuroclips::semantics
