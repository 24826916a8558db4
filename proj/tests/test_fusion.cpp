#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "neuroclips/core/error.hpp"
#include "neuroclips/fusion.hpp"

using namespace neuroclips;
using namespace neuroclips::fusion;

namespace {

constexpr std::size_t kDim = 16;
constexpr std::size_t kClasses = 8;

// Class k sits near the k-th basis direction with shared background noise.
Tensor class_embedding(std::size_t k, Rng& rng) {
  Tensor e(Shape{kDim});
  for (std::size_t i = 0; i < kDim; ++i) e[i] = rng.normal(0.0, 0.25);
  e[k] += 1.0;
  return e;
}

struct Corpus {
  std::vector<Tensor> embeddings;
  std::vector<std::size_t> labels;
};

Corpus corpus(std::size_t n, std::uint64_t seed) {
  Rng rng(seed);
  Corpus c;
  for (std::size_t i = 0; i < n; ++i) {
    c.labels.push_back(i % kClasses);
    c.embeddings.push_back(class_embedding(i % kClasses, rng));
  }
  return c;
}

const SimilarityClassifier& trained() {
  static const SimilarityClassifier clf = [] {
    const Corpus c = corpus(512, 1);
    SimilarityConfig cfg;
    cfg.seed = 3;
    return train_similarity_mlp(make_balanced_pairs(c.embeddings, c.labels, 4000, 2), cfg);
  }();
  return clf;
}

constexpr std::size_t kFrame = 8;

// Reconstructions with a Gaussian-prior sampler on an exactly invertible codec.
struct Toy {
  codecs::LatentCodec codec = codecs::LatentCodec::orthogonal(kFrame, 5);
  guidance::LinearGaussianDenoiser denoiser{Tensor(Shape{16, 4, kFrame, kFrame}, 0.4), 0.2};
  guidance::GuidanceConfig cfg;

  guidance::Reconstruction make(std::size_t class_id, std::uint64_t seed) const {
    Rng rng(seed);
    guidance::Reconstruction r;
    r.keyframe.embedding = class_embedding(class_id, rng);
    r.keyframe.class_id = class_id;
    r.inputs.blurry_latents = rng.normal_tensor({16, 4, kFrame, kFrame}) * 0.2;
    r.inputs.keyframe_latent = codec.encode(Tensor(Shape{kFrame, kFrame, 3}, 0.1 * double(class_id % 8)));
    r.inputs.seed = seed;
    r.latents = guidance::generate_latents(r.inputs, denoiser, cfg);
    r.video.frames = codec.decode_clip(r.latents);
    r.video.fps = 8.0;
    r.video.class_id = class_id;
    return r;
  }

  FusionResult fuse(const std::vector<guidance::Reconstruction>& clips, bool keep = true) const {
    FusionConfig fc;
    fc.keep_boundary_frames = keep;
    return fuse_videos(clips, trained(), denoiser, codec, cfg, fc);
  }
};

}  // namespace

TEST_CASE("balanced pair corpus") {
  const Corpus c = corpus(64, 4);
  const auto pairs = make_balanced_pairs(c.embeddings, c.labels, 100, 9);
  std::size_t same = 0;
  for (const auto& p : pairs) same += p.same;
  CHECK(same == 50);
  CHECK_THROWS_AS(make_balanced_pairs(c.embeddings, std::vector<std::size_t>(64, 2), 10, 1), InvalidArgument);
  std::vector<EmbeddingPair> positives(pairs.begin(), pairs.end());
  std::erase_if(positives, [](const EmbeddingPair& p) { return !p.same; });
  CHECK_THROWS_AS(train_similarity_mlp(positives, {}), InvalidArgument);
}

TEST_CASE("similarity MLP: held-out accuracy, probe pairs, determinism, persistence") {
  const SimilarityClassifier& clf = trained();
  const Corpus held = corpus(256, 101);
  const double acc = pair_accuracy(clf, make_balanced_pairs(held.embeddings, held.labels, 1000, 102));
  MESSAGE("held-out pair accuracy " << acc);
  CHECK(acc >= 0.9);

  Rng rng(7);
  for (int i = 0; i < 20; ++i) {
    const Tensor e = class_embedding(std::size_t(i) % kClasses, rng);
    const double p = clf.probability(e, e);
    CHECK(p > clf.threshold());
    CHECK(p <= 1.0);
  }
  for (std::size_t a = 0; a < kClasses; ++a) {
    Tensor ea(Shape{kDim}), eb(Shape{kDim});
    ea[a] = 1.0;
    eb[(a + 3) % kClasses] = 1.0;
    const double p = clf.probability(ea, eb);
    CHECK(p < clf.threshold());
    CHECK(p >= 0.0);
    CHECK(clf.probability(ea, eb) == clf.probability(eb, ea));
  }

  const Corpus c = corpus(512, 1);
  SimilarityConfig cfg;
  cfg.seed = 3;
  const auto again = train_similarity_mlp(make_balanced_pairs(c.embeddings, c.labels, 4000, 2), cfg);
  CHECK(again.to_checkpoint().content_hash() == clf.to_checkpoint().content_hash());
  const auto back = SimilarityClassifier::from_checkpoint(clf.to_checkpoint());
  CHECK(back.probability(held.embeddings[0], held.embeddings[9]) ==
        clf.probability(held.embeddings[0], held.embeddings[9]));
}

TEST_CASE("three same-class clips fuse into one six-second video with exact boundaries") {
  const Toy toy;
  const std::vector<guidance::Reconstruction> clips = {toy.make(2, 10), toy.make(2, 11), toy.make(2, 12)};
  const FusionResult r = toy.fuse(clips);
  REQUIRE(r.videos.size() == 1);
  const auto& v = r.videos[0].video;
  CHECK(v.n_frames() == 48);
  CHECK(v.fps == 8.0);
  CHECK(double(v.n_frames()) / v.fps == 6.0);
  CHECK(r.videos[0].members == std::vector<std::size_t>{0, 1, 2});
  for (std::size_t f = 0; f < 16; ++f) CHECK(v.frame(f) == clips[0].video.frame(f));
  for (std::size_t boundary : {16u, 32u}) {
    const Tensor round_trip = toy.codec.decode(toy.codec.encode(v.frame(boundary - 1)));
    CHECK(v.frame(boundary) == round_trip);
    CHECK(max_abs_diff(v.frame(boundary), v.frame(boundary - 1)) < 1e-12);
  }
  // The regenerated clip starts from the tail frame, not its own keyframe.
  CHECK(!(v.frame(16) == clips[1].video.frame(0)));
  for (const auto& b : r.boundaries) CHECK(b.fused);

  const FusionResult dropped = toy.fuse(clips, false);
  REQUIRE(dropped.videos.size() == 1);
  CHECK(dropped.videos[0].video.n_frames() == 46);
  CHECK(dropped.videos[0].video.frame(16) == v.frame(17));

  const auto m = r.manifest();
  CHECK(m["chains"][0]["members"] == nlohmann::json::array({0, 1, 2}));
  CHECK(m["chains"][0]["duration_s"] == 6.0);
  CHECK(m["boundaries"].size() == 2);
  CHECK(toy.fuse(clips).manifest() == m);
}

TEST_CASE("mismatch rule and chain cap") {
  const Toy toy;
  const std::vector<guidance::Reconstruction> aba = {toy.make(0, 20), toy.make(5, 21), toy.make(0, 22)};
  const FusionResult r = toy.fuse(aba);
  REQUIRE(r.videos.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(r.videos[i].members == std::vector<std::size_t>{i});
    CHECK(r.videos[i].video.frames == aba[i].video.frames);
  }
  for (const auto& b : r.boundaries) CHECK(!b.same_class);

  const std::vector<guidance::Reconstruction> four = {toy.make(4, 30), toy.make(4, 31), toy.make(4, 32),
                                                      toy.make(4, 33)};
  const FusionResult capped = toy.fuse(four);
  REQUIRE(capped.videos.size() == 2);
  CHECK(capped.videos[0].video.n_frames() == 48);
  CHECK(capped.videos[1].members == std::vector<std::size_t>{3});
  CHECK(capped.videos[1].video.frames == four[3].video.frames);
  CHECK(capped.boundaries[2].same_class);
  CHECK(!capped.boundaries[2].fused);

  CHECK_THROWS_AS(toy.fuse({}), InvalidArgument);
}

TEST_CASE("fusion properties over random class sequences") {
  const Toy toy;
  Rng rng(40);
  for (int trial = 0; trial < 6; ++trial) {
    std::vector<guidance::Reconstruction> clips;
    for (std::size_t i = 0; i < 7; ++i) clips.push_back(toy.make(rng.index(2) * 3, 100 + trial * 10 + i));
    const FusionResult r = toy.fuse(clips);
    std::size_t covered = 0;
    for (const auto& v : r.videos) {
      CHECK(v.members.size() <= 3);
      CHECK(double(v.video.n_frames()) / v.video.fps == 2.0 * double(v.members.size()));
      for (std::size_t k = 1; k < v.members.size(); ++k) CHECK(v.members[k] == v.members[k - 1] + 1);
      for (std::size_t k = 0; k + 1 < v.members.size(); ++k) {
        CHECK(r.boundaries[v.members[k]].same_class);
        CHECK(r.boundaries[v.members[k]].fused);
      }
      covered += v.members.size();
    }
    CHECK(covered == clips.size());
    for (const auto& b : r.boundaries) CHECK((!b.fused || b.same_class));

    // A boundary decision depends only on its own two clips.
    for (const auto& b : r.boundaries) {
      CHECK(b.probability == trained().probability(clips[b.left].keyframe.embedding,
                                                    clips[b.left + 1].keyframe.embedding));
    }
    std::vector<guidance::Reconstruction> swapped = clips;
    std::swap(swapped[0], swapped[6]);
    const FusionResult rs = toy.fuse(swapped);
    for (std::size_t i = 1; i + 2 < clips.size(); ++i) CHECK(rs.boundaries[i].probability == r.boundaries[i].probability);
  }
}
