#include "neuroclips/fusion.hpp"

#include <algorithm>
#include <cmath>
#include <map>

#include "neuroclips/core/error.hpp"
#include "neuroclips/core/rng.hpp"

namespace neuroclips::fusion {

using ad::Var;

std::vector<EmbeddingPair> make_balanced_pairs(const std::vector<Tensor>& embeddings,
                                               const std::vector<std::size_t>& labels, std::size_t n_pairs,
                                               std::uint64_t seed) {
  if (embeddings.size() != labels.size() || embeddings.empty()) {
    throw InvalidArgument("pair corpus needs one label per embedding");
  }
  std::map<std::size_t, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < labels.size(); ++i) by_class[labels[i]].push_back(i);
  if (by_class.size() < 2) throw InvalidArgument("pair corpus needs at least two classes");
  std::vector<std::size_t> classes;
  for (const auto& [k, members] : by_class) classes.push_back(k);

  Rng rng(seed);
  std::vector<EmbeddingPair> pairs;
  pairs.reserve(n_pairs);
  for (std::size_t p = 0; p < n_pairs; ++p) {
    const bool same = p % 2 == 0;
    const std::size_t ka = classes[rng.index(classes.size())];
    std::size_t kb = ka;
    if (!same) kb = classes[(std::find(classes.begin(), classes.end(), ka) - classes.begin() + 1 +
                             rng.index(classes.size() - 1)) % classes.size()];
    const auto& ma = by_class[ka];
    const auto& mb = by_class[kb];
    pairs.push_back({embeddings[ma[rng.index(ma.size())]], embeddings[mb[rng.index(mb.size())]], same});
  }
  return pairs;
}

Tensor pair_features(const Tensor& a, const Tensor& b) {
  if (a.numel() != b.numel() || a.numel() == 0) throw InvalidArgument("pair embeddings must have one shared size");
  const std::size_t d = a.numel();
  const double na = std::max(norm2(a.span()), 1e-12), nb = std::max(norm2(b.span()), 1e-12);
  Tensor f(Shape{2 * d});
  for (std::size_t i = 0; i < d; ++i) {
    const double x = a[i] / na, y = b[i] / nb;
    f[i] = std::abs(x - y);
    f[d + i] = x * y;
  }
  return f;
}

SimilarityClassifier::SimilarityClassifier(std::size_t embed_dim, std::size_t hidden, std::uint64_t seed,
                                           double threshold)
    : embed_dim_(embed_dim), threshold_(threshold) {
  if (embed_dim == 0 || hidden == 0) throw InvalidArgument("similarity MLP needs positive sizes");
  if (!(threshold > 0.0 && threshold < 1.0)) throw InvalidArgument("threshold must lie in (0, 1)");
  Rng rng(derive_seed(seed, {stream::kInit, 88}));
  params_.add("l1.w", init_weight(rng, hidden, 2 * embed_dim));
  params_.add("l1.b", Tensor(Shape{hidden}));
  params_.add("l2.w", init_weight(rng, 2, hidden));
  params_.add("l2.b", Tensor(Shape{2}));
}

Var SimilarityClassifier::logits(const Var& features) const {
  const Var h = ad::relu(ad::linear(features, params_.get("l1.w"), params_.get("l1.b")));
  return ad::linear(h, params_.get("l2.w"), params_.get("l2.b"));
}

double SimilarityClassifier::probability(const Tensor& a, const Tensor& b) const {
  if (a.numel() != embed_dim_ || b.numel() != embed_dim_) {
    throw InvalidArgument("similarity MLP expects embeddings of size " + std::to_string(embed_dim_));
  }
  const Tensor f = pair_features(a, b);
  const Tensor p = ad::softmax_last(logits(Var::constant(f.reshaped({1, f.numel()})))).value();
  return p[1];
}

Checkpoint SimilarityClassifier::to_checkpoint() const {
  Checkpoint ck;
  ck.manifest = {{"kind", "similarity_mlp"}, {"embed_dim", embed_dim_}, {"threshold", threshold_}};
  ck.tensors = params_.snapshot();
  return ck;
}

SimilarityClassifier SimilarityClassifier::from_checkpoint(const Checkpoint& ck) {
  if (ck.manifest.value("kind", "") != "similarity_mlp") throw CorruptFile("not a similarity MLP checkpoint");
  const auto hidden = ck.get("l1.b").numel();
  SimilarityClassifier c(ck.manifest.at("embed_dim").get<std::size_t>(), hidden, 0,
                         ck.manifest.at("threshold").get<double>());
  c.params_.load(ck.tensors);
  return c;
}

SimilarityClassifier train_similarity_mlp(const std::vector<EmbeddingPair>& pairs, const SimilarityConfig& config) {
  std::size_t n_same = 0;
  for (const auto& p : pairs) n_same += p.same;
  if (n_same == 0 || n_same == pairs.size()) {
    throw InvalidArgument("similarity training needs both same-class and different-class pairs");
  }
  if (config.batch_size == 0) throw InvalidArgument("batch size must be positive");
  const std::size_t d = pairs.front().a.numel();
  std::vector<Tensor> features;
  features.reserve(pairs.size());
  for (const auto& p : pairs) features.push_back(pair_features(p.a, p.b));

  SimilarityClassifier clf(d, config.hidden, config.seed, config.threshold);
  Adam opt(clf.params().all(), AdamConfig{config.lr, 0.9, 0.999, 1e-8, 0.0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle(derive_seed(config.seed, {stream::kShuffle, 88, epoch}));
    const auto perm = shuffle.permutation(pairs.size());
    for (std::size_t start = 0; start < perm.size(); start += config.batch_size) {
      const std::size_t end = std::min(perm.size(), start + config.batch_size), b = end - start;
      std::vector<Tensor> rows;
      Tensor target(Shape{b, 2});
      for (std::size_t k = start; k < end; ++k) {
        rows.push_back(features[perm[k]]);
        target[(k - start) * 2 + (pairs[perm[k]].same ? 1 : 0)] = -1.0 / double(b);
      }
      opt.zero_grad();
      const Var loss = ad::weighted_sum(ad::log_softmax_last(clf.logits(Var::constant(stack(rows)))), target);
      if (!std::isfinite(loss.item())) throw NumericError("similarity training diverged at epoch " + std::to_string(epoch));
      ad::backward(loss);
      opt.step();
    }
  }
  return clf;
}

double pair_accuracy(const SimilarityClassifier& clf, const std::vector<EmbeddingPair>& pairs) {
  if (pairs.empty()) throw InvalidArgument("no pairs to score");
  std::size_t hits = 0;
  for (const auto& p : pairs) hits += clf.same_class(p.a, p.b) == p.same;
  return double(hits) / double(pairs.size());
}

// ---------------------------------------------------------------------------

nlohmann::json FusionResult::manifest() const {
  nlohmann::json chains = nlohmann::json::array(), bounds = nlohmann::json::array();
  for (const auto& v : videos) {
    chains.push_back({{"members", v.members},
                      {"n_frames", v.video.n_frames()},
                      {"fps", v.video.fps},
                      {"duration_s", double(v.video.n_frames()) / v.video.fps}});
  }
  for (const auto& b : boundaries) {
    bounds.push_back({{"left", b.left},
                      {"right", b.left + 1},
                      {"probability", b.probability},
                      {"same_class", b.same_class},
                      {"fused", b.fused}});
  }
  return {{"chains", chains}, {"boundaries", bounds}};
}

FusionResult fuse_videos(const std::vector<guidance::Reconstruction>& clips, const SimilarityClassifier& clf,
                         const guidance::Denoiser& denoiser, const codecs::LatentCodec& codec,
                         const guidance::GuidanceConfig& guidance_cfg, const FusionConfig& config) {
  if (clips.empty()) throw InvalidArgument("fusion needs at least one reconstruction");
  if (config.max_chain < 1) throw InvalidArgument("chain cap must be at least one clip");
  // The replaced keyframe is the whole point of regeneration, so beta stays on.
  guidance::GuidanceConfig regen = guidance_cfg;
  regen.use_beta = true;

  FusionResult out;
  std::vector<Tensor> chain_frames;  // frames of the open chain
  Tensor tail;                       // last frame of the open chain's newest clip
  FusedVideo open;
  auto close = [&] {
    open.video.frames = stack(chain_frames);
    out.videos.push_back(std::move(open));
    open = FusedVideo{};
    chain_frames.clear();
  };
  auto start = [&](std::size_t i) {
    const auto& v = clips[i].video;
    open.members = {i};
    open.video.fps = v.fps;
    open.video.class_id = v.class_id;
    for (std::size_t f = 0; f < v.n_frames(); ++f) chain_frames.push_back(v.frame(f));
    tail = v.frame(v.n_frames() - 1);
  };

  start(0);
  for (std::size_t i = 0; i + 1 < clips.size(); ++i) {
    Boundary b;
    b.left = i;
    b.probability = clf.probability(clips[i].keyframe.embedding, clips[i + 1].keyframe.embedding);
    b.same_class = b.probability > clf.threshold();
    b.fused = b.same_class && open.members.size() < config.max_chain;
    out.boundaries.push_back(b);
    if (!b.fused) {
      close();
      start(i + 1);
      continue;
    }
    guidance::GuidanceInputs in = clips[i + 1].inputs;
    in.keyframe_latent = codec.encode(tail);
    const Tensor frames = codec.decode_clip(guidance::generate_latents(in, denoiser, regen));
    for (std::size_t f = config.keep_boundary_frames ? 0 : 1; f < frames.dim(0); ++f) {
      chain_frames.push_back(frames.slice0(f));
    }
    open.members.push_back(i + 1);
    tail = frames.slice0(frames.dim(0) - 1);
  }
  close();
  return out;
}

}  // namespace neuroclips::fusion
