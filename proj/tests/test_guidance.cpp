#include <cmath>

#include "doctest.h"
#include "oracles.hpp"
#include "neuroclips/core/error.hpp"
#include "neuroclips/core/stats.hpp"
#include "neuroclips/guidance.hpp"

using namespace neuroclips;
using namespace neuroclips::guidance;

namespace {

using LD = long double;

using nc_test::max_diff;

class WrongShape : public Denoiser {
 public:
  Tensor predict(const Tensor& z, std::size_t, const NoiseSchedule&, const Conditions&) const override {
    return Tensor(Shape{z.numel() + 1});
  }
};

// Videos [4, 1, 2, 2] per class: a class-specific pattern drifting over time.
struct ToyVideos {
  std::vector<Tensor> videos;
  std::vector<std::size_t> labels;
  std::vector<Tensor> captions;
};

ToyVideos toy_videos(std::size_t per_class) {
  ToyVideos t;
  Rng rng(21);
  for (std::size_t k = 0; k < 3; ++k) {
    Tensor cap(Shape{3});
    cap[k] = 1.0;
    t.captions.push_back(cap);
  }
  for (std::size_t k = 0; k < 3; ++k)
    for (std::size_t n = 0; n < per_class; ++n) {
      Tensor v(Shape{4, 1, 2, 2});
      const double drift = rng.normal(0.0, 0.5);
      for (std::size_t f = 0; f < 4; ++f)
        for (std::size_t p = 0; p < 4; ++p) v[f * 4 + p] = (p == k ? 3.0 : 0.0) + drift * double(f) + rng.normal(0, 0.1);
      t.videos.push_back(v);
      t.labels.push_back(k);
    }
  return t;
}

}  // namespace

TEST_CASE("noise schedule: first step, monotonicity, high-precision product, errors") {
  const NoiseSchedule s = make_schedule();
  CHECK(s.alpha_bar[1] == 1.0 - s.beta[1]);
  for (std::size_t t = 1; t <= s.T; ++t) {
    CHECK(s.alpha_bar[t] < s.alpha_bar[t - 1]);
    CHECK(s.alpha_bar[t] > 0.0);
  }
  LD prod = 1.0L;
  for (std::size_t t = 1; t <= 1000; ++t) prod *= 1.0L - (1e-4L + (0.02L - 1e-4L) * LD(t - 1) / 999.0L);
  CHECK(std::abs(LD(s.alpha_bar[1000]) - prod) / prod <= 1e-12L);
  for (double theta : {0.05, 0.3, 0.5, 1.0}) {
    CHECK(s.guidance_ratio(theta) > 0.0);
    CHECK(s.guidance_ratio(theta) <= 1.0);
  }
  CHECK_THROWS_AS(make_schedule(1), InvalidArgument);
  CHECK_THROWS_AS(make_schedule(10, 0.0, 0.02), InvalidArgument);
  CHECK_THROWS_AS(make_schedule(10, 1e-4, 1.0), InvalidArgument);
}

TEST_CASE("alpha guidance: passthrough, coefficient identity, Monte Carlo moments") {
  const NoiseSchedule s = make_schedule();
  Rng rng(1);
  const Tensor zb = rng.normal_tensor({3, 4, 4, 4});
  CHECK(inject_alpha_guidance(zb, s, 1.0, 9) == zb);
  for (int g = 1; g <= 20; ++g) {
    const auto [a, b] = alpha_coefficients(s, g / 20.0);
    CHECK(std::abs(a * a + b * b - 1.0) <= 1e-12);
  }
  CHECK_THROWS_AS(inject_alpha_guidance(zb, s, 0.0, 1), InvalidArgument);
  CHECK_THROWS_AS(inject_alpha_guidance(zb, s, -0.2, 1), InvalidArgument);
  CHECK_THROWS_AS(inject_alpha_guidance(zb, s, 1.5, 1), InvalidArgument);

  // theta = 0.3 pairs step T with step 300.
  const double ratio = s.alpha_bar[1000] / s.alpha_bar[300];
  CHECK(s.guidance_ratio(0.3) == ratio);
  const Tensor small = Tensor::from({2.0, -1.0, 0.5, 10.0});
  const std::size_t n = 10000;
  std::vector<std::vector<double>> draws(4);
  std::vector<double> sq_norm;
  for (std::size_t k = 0; k < n; ++k) {
    const Tensor z = inject_alpha_guidance(small, s, 0.3, derive_seed(77, {k}));
    for (std::size_t i = 0; i < 4; ++i) draws[i].push_back(z[i]);
    sq_norm.push_back(dot(z.span(), z.span()));
  }
  const double var = 1.0 - ratio;
  for (std::size_t i = 0; i < 4; ++i) {
    const double m = stats::mean(draws[i]), sd = stats::stddev(draws[i]);
    CHECK(std::abs(m - std::sqrt(ratio) * small[i]) <= 3.0 * std::sqrt(var / n));
    CHECK(std::abs(sd * sd - var) <= 3.0 * var * std::sqrt(2.0 / (n - 1)));
  }
  const double expect = ratio * dot(small.span(), small.span()) + var * 4.0;
  // Var ||z||^2 = sum_i (2 var^2 + 4 var mean_i^2)
  double vnorm = 0.0;
  for (double x : small.vec()) vnorm += 2 * var * var + 4 * var * ratio * x * x;
  CHECK(std::abs(stats::mean(sq_norm) - expect) <= 3.0 * std::sqrt(vnorm / n));
}

TEST_CASE("deterministic sampler matches an extended-precision replay") {
  const NoiseSchedule s = make_schedule();
  Rng rng(2);
  const Tensor mean = rng.normal_tensor({4, 2, 3, 3});
  const LinearGaussianDenoiser den(mean, 0.7);
  const Tensor z_T = rng.normal_tensor({4, 2, 3, 3});

  const Tensor out = reverse_sample(z_T, den, s, {}, 25, 5);
  CHECK(max_diff(out, nc_test::sampler_replay(z_T, mean, 0.7, 1000, 25, nullptr, nullptr)) <= 1e-9);
  CHECK(reverse_sample(z_T, den, s, {}, 25, 5) == out);

  const Tensor full = reverse_sample(z_T, den, s, {}, 1000, 5);
  CHECK(max_diff(full, nc_test::sampler_replay(z_T, mean, 0.7, 1000, 1000, nullptr, nullptr)) <= 1e-9);

  // Hard first-frame conditioning.
  Conditions c;
  c.keyframe_latent = rng.normal_tensor({2, 3, 3});
  Rng key_rng(11);
  const Tensor eps_key = key_rng.normal_tensor({2, 3, 3});
  const Tensor cond = reverse_sample(z_T, den, s, c, 25, 11);
  CHECK(max_diff(cond, nc_test::sampler_replay(z_T, mean, 0.7, 1000, 25, &*c.keyframe_latent, &eps_key)) <= 1e-9);
  CHECK(cond.slice0(0) == *c.keyframe_latent);

  CHECK_THROWS_AS(reverse_sample(z_T, WrongShape(), s, {}, 25, 1), ContractViolation);
  CHECK_THROWS_AS(reverse_sample(z_T, den, s, {}, 1001, 1), InvalidArgument);
  CHECK(sampler_timesteps(1000, 25).front() == 1000);
  CHECK(sampler_timesteps(1000, 25).back() == 40);
}

TEST_CASE("frame interpolation") {
  Rng rng(3);
  const Tensor x = rng.normal_tensor({6, 2, 2});
  const Tensor y = interpolate_frames(x, 16);
  CHECK(y.dim(0) == 16);
  CHECK(y.slice0(0) == x.slice0(0));
  CHECK(y.slice0(15) == x.slice0(5));
  CHECK(interpolate_frames(Tensor(Shape{3, 4}, 0.25), 9) == Tensor(Shape{9, 4}, 0.25));
  const Tensor two = Tensor(Shape{2, 3}, std::vector<double>{1, 2, 3, 5, 8, 13});
  const Tensor mid = interpolate_frames(two, 3);
  CHECK(mid.slice0(1) == Tensor(Shape{3}, std::vector<double>{3, 5, 8}));
  CHECK_THROWS_AS(interpolate_frames(x, 1), InvalidArgument);
  CHECK_THROWS_AS(interpolate_frames(x, 4), InvalidArgument);
}

TEST_CASE("video denoiser: caption prior, keyframe pinning, cross-frame effect, persistence") {
  const ToyVideos toy = toy_videos(12);
  const auto den = TinyVideoDenoiser::fit(toy.videos, toy.labels, toy.captions, {});
  const NoiseSchedule s = make_schedule();

  const auto prior = den.class_prior(toy.captions[1]);
  CHECK(prior[1] > 0.99);
  CHECK(den.class_prior(std::nullopt)[2] == doctest::Approx(1.0 / 3.0));

  Rng rng(4);
  const Tensor z_T = rng.normal_tensor({4, 1, 2, 2});
  Conditions gamma;
  gamma.caption = toy.captions[2];
  const Tensor out = reverse_sample(z_T, den, s, gamma, 25, 1);
  // The caption's class pattern dominates every frame.
  for (std::size_t f = 0; f < 4; ++f) {
    const Tensor fr = out.slice0(f);
    CHECK(fr[2] - (fr[0] + fr[1] + fr[3]) / 3.0 > 2.0);
  }

  Conditions beta = gamma;
  beta.keyframe_latent = toy.videos[30].slice0(0);
  const Tensor pinned = reverse_sample(z_T, den, s, beta, 25, 1);
  CHECK(pinned.slice0(0) == *beta.keyframe_latent);
  bool other_frames_moved = false;
  for (std::size_t f = 1; f < 4; ++f) other_frames_moved |= !(pinned.slice0(f) == out.slice0(f));
  CHECK(other_frames_moved);
  CHECK(reverse_sample(z_T, den, s, beta, 25, 1) == pinned);

  const auto back = TinyVideoDenoiser::from_checkpoint(den.to_checkpoint());
  CHECK(back.predict(z_T, 500, s, beta) == den.predict(z_T, 500, s, beta));
  CHECK_THROWS_AS(den.predict(Tensor(Shape{3, 1, 2, 2}), 10, s, {}), ContractViolation);
}

TEST_CASE("video reconstruction pipeline") {
  data::WorldSpec world;
  world.frame_size = 16;
  world.n_voxels = 64;
  Rng rng(5);
  std::vector<Tensor> frames;
  std::vector<std::size_t> labels;
  std::vector<Tensor> videos;
  std::vector<std::size_t> video_labels;
  codecs::CodecBundle codecs{codecs::LatentCodec::orthogonal(16, 1), {}, {}};
  for (std::size_t i = 0; i < 48; ++i) {
    const auto clip = data::render_clip(i % world.n_classes, data::sample_motion(rng), world, world.infer_fps);
    for (std::size_t f = 0; f < clip.n_frames(); f += 4) frames.push_back(clip.frame(f)), labels.push_back(clip.class_id);
    videos.push_back(codecs.latent.encode_clip(clip.frames));
    video_labels.push_back(clip.class_id);
  }
  codecs.embedder = codecs::SemanticEmbedder::fit(frames, 1);
  codecs.classifier = codecs::FrameClassifier::fit(codecs.embedder, frames, labels, world.n_classes, 1);
  std::vector<Tensor> caps, emb;
  for (std::size_t k = 0; k < world.n_classes; ++k) caps.push_back(codecs.embedder.embed_text(codecs::caption_for_class(k)));
  for (const auto& f : frames) emb.push_back(codecs.embedder.embed_image(f));
  const auto den = TinyVideoDenoiser::fit(videos, video_labels, caps, {});
  const auto keyframes = semantics::KeyframeDecoder::fit(emb, labels, world.n_classes, 16);

  perception::PrArchitecture pa;
  pa.n_voxels = 64;
  pa.hidden = 8;
  pa.code_dim = 8;
  pa.coarse_size = 8;
  pa.stages = {{8, 2}};
  pa.target_size = 16;
  perception::PerceptionModel pr(pa, 1);
  semantics::SrArchitecture sa;
  sa.n_voxels = 64;
  sa.ridge_dim = 8;
  sa.mlp_hidden = 8;
  sa.prior_hidden = 8;
  semantics::SemanticsModel sr(sa, 1);
  sr.mark_trained();

  const Tensor fmri = rng.normal_tensor({64});
  GuidanceConfig cfg;
  Stages st{&pr, &sr, &keyframes, &codecs, &den};
  const Reconstruction rec = reconstruct_video(st, fmri, cfg, 3);
  CHECK(rec.video.frames.shape() == Shape{16, 16, 16, 3});
  CHECK(rec.video.fps == 8.0);
  CHECK(double(rec.video.n_frames()) / rec.video.fps == 2.0);
  // Frame 0 is the keyframe through an exact codec round trip.
  CHECK(max_abs_diff(rec.video.frame(0), rec.keyframe.frame) < 1e-9);
  CHECK(reconstruct_video(st, fmri, cfg, 3).video.frames == rec.video.frames);

  for (int missing = 0; missing < 5; ++missing) {
    Stages partial = st;
    const char* name = "";
    switch (missing) {
      case 0: partial.perception = nullptr, name = "perception"; break;
      case 1: partial.semantics = nullptr, name = "semantics"; break;
      case 2: partial.keyframe = nullptr, name = "keyframe"; break;
      case 3: partial.codecs = nullptr, name = "codecs"; break;
      default: partial.denoiser = nullptr, name = "denoiser"; break;
    }
    try {
      reconstruct_video(partial, fmri, cfg, 3);
      FAIL("expected NotReady");
    } catch (const NotReady& e) {
      CHECK(std::string(e.what()).find(name) != std::string::npos);
    }
  }
}
