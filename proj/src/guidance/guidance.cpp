#include "neuroclips/guidance.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

#include "neuroclips/core/error.hpp"
#include "neuroclips/core/rng.hpp"

namespace neuroclips::guidance {

NoiseSchedule make_schedule(std::size_t T, double beta_start, double beta_end) {
  if (T < 2) throw InvalidArgument("schedule needs at least two steps");
  for (double b : {beta_start, beta_end}) {
    if (!(b > 0.0 && b < 1.0)) throw InvalidArgument("beta values must lie in (0, 1)");
  }
  NoiseSchedule s;
  s.T = T;
  s.beta.assign(T + 1, 0.0);
  s.alpha_bar.assign(T + 1, 1.0);
  for (std::size_t t = 1; t <= T; ++t) {
    s.beta[t] = beta_start + (beta_end - beta_start) * double(t - 1) / double(T - 1);
    s.alpha_bar[t] = s.alpha_bar[t - 1] * (1.0 - s.beta[t]);
  }
  return s;
}

double NoiseSchedule::guidance_ratio(double theta) const {
  if (!(theta > 0.0 && theta <= 1.0)) throw InvalidArgument("theta must lie in (0, 1]");
  // The small guard keeps products like 0.3 * 1000 from flooring to 299.
  const auto k = static_cast<std::size_t>(std::floor(theta * double(T) + 1e-9));
  return alpha_bar[T] / alpha_bar[std::min(k, T)];
}

std::pair<double, double> alpha_coefficients(const NoiseSchedule& s, double theta) {
  const double r = s.guidance_ratio(theta);
  return {std::sqrt(r), std::sqrt(1.0 - r)};
}

Tensor inject_alpha_guidance(const Tensor& z_blurry, const NoiseSchedule& s, double theta, std::uint64_t seed) {
  const auto [a, b] = alpha_coefficients(s, theta);
  Rng rng(seed);
  const Tensor eps = rng.normal_tensor(z_blurry.shape());
  Tensor z(z_blurry.shape());
  for (std::size_t i = 0; i < z.numel(); ++i) z[i] = a * z_blurry[i] + b * eps[i];
  return z;
}

std::vector<std::size_t> sampler_timesteps(std::size_t T, std::size_t steps) {
  if (steps < 1 || steps > T) throw InvalidArgument("sampler steps must lie in [1, T]");
  std::vector<std::size_t> ts;
  for (std::size_t i = 0; i < steps; ++i) ts.push_back(T - i * T / steps);
  return ts;
}

Tensor LinearGaussianDenoiser::predict(const Tensor& z_t, std::size_t t, const NoiseSchedule& s,
                                       const Conditions&) const {
  if (z_t.shape() != mean_.shape()) throw ContractViolation("latent shape does not match the Gaussian prior");
  const double ab = s.alpha_bar.at(t), a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  const double gain = b / (ab * sd_ * sd_ + 1.0 - ab);
  Tensor eps(z_t.shape());
  for (std::size_t i = 0; i < eps.numel(); ++i) eps[i] = gain * (z_t[i] - a * mean_[i]);
  return eps;
}

// ---------------------------------------------------------------------------

TinyVideoDenoiser TinyVideoDenoiser::fit(const std::vector<Tensor>& videos, const std::vector<std::size_t>& labels,
                                         const std::vector<Tensor>& class_captions, const FitConfig& config) {
  if (videos.empty() || videos.size() != labels.size()) throw InvalidArgument("denoiser fit needs labelled videos");
  if (class_captions.size() < 2) throw InvalidArgument("denoiser fit needs at least two classes");
  if (config.bandwidth <= 0.0 || config.keyframe_bandwidth <= 0.0) throw InvalidArgument("bandwidths must be positive");
  if (config.caption_temperature <= 0.0) throw InvalidArgument("caption temperature must be positive");
  TinyVideoDenoiser d;
  d.video_shape_ = videos.front().shape();
  for (const auto& v : videos) {
    if (v.shape() != d.video_shape_) throw InvalidArgument("all videos must share one latent shape");
  }
  for (std::size_t l : labels) {
    if (l >= class_captions.size()) throw InvalidArgument("label outside class range");
  }
  d.exemplars_ = stack(videos);
  d.labels_ = labels;
  d.captions_ = stack(class_captions);
  d.caption_temperature_ = config.caption_temperature;

  const std::size_t N = videos.size(), D = videos.front().numel();
  double var = 0.0;
  for (std::size_t j = 0; j < D; ++j) {
    double m = 0.0, m2 = 0.0;
    for (std::size_t i = 0; i < N; ++i) m += d.exemplars_[i * D + j];
    m /= double(N);
    for (std::size_t i = 0; i < N; ++i) m2 += (d.exemplars_[i * D + j] - m) * (d.exemplars_[i * D + j] - m);
    var += m2 / double(N);
  }
  d.variance_ = std::max(config.bandwidth * var / double(D), 1e-8);
  d.key_variance_ = std::max(config.keyframe_bandwidth * var / double(D), 1e-8);
  d.index();
  return d;
}

void TinyVideoDenoiser::index() {
  const std::size_t N = exemplars_.dim(0), D = exemplars_.numel() / N;
  sq_norms_.assign(N, 0.0);
  class_counts_.assign(n_classes(), 0);
  for (std::size_t i = 0; i < N; ++i) {
    const std::span<const double> x(exemplars_.data() + i * D, D);
    sq_norms_[i] = dot(x, x);
    ++class_counts_.at(labels_[i]);
  }
}

std::vector<double> TinyVideoDenoiser::class_prior(const std::optional<Tensor>& caption) const {
  const std::size_t K = n_classes(), td = captions_.dim(1);
  std::vector<double> p(K, 1.0 / double(K));
  if (!caption) return p;
  if (caption->numel() != td) throw ContractViolation("caption embedding has the wrong size");
  double mx = -1e300;
  for (std::size_t k = 0; k < K; ++k) {
    p[k] = cosine(caption->span(), std::span<const double>(captions_.data() + k * td, td)) / caption_temperature_;
    mx = std::max(mx, p[k]);
  }
  double z = 0.0;
  for (double& v : p) z += (v = std::exp(v - mx));
  for (double& v : p) v /= z;
  return p;
}

Tensor TinyVideoDenoiser::predict(const Tensor& z_t, std::size_t t, const NoiseSchedule& s,
                                  const Conditions& c) const {
  if (z_t.shape() != video_shape_) {
    throw ContractViolation("denoiser expects " + shape_str(video_shape_) + ", got " + shape_str(z_t.shape()));
  }
  const std::size_t N = exemplars_.dim(0), D = z_t.numel();
  const double ab = s.alpha_bar.at(t), a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  // z_t | video i ~ N(a x_i, cvar I)
  const double cvar = ab * variance_ + (1.0 - ab);
  const auto prior = class_prior(c.caption);

  const std::size_t F0 = D / video_shape_.at(0);
  if (c.keyframe_latent && c.keyframe_latent->numel() != F0) {
    throw ContractViolation("keyframe latent does not match one frame of the video latent");
  }
  const double zz = dot(z_t.span(), z_t.span());
  std::vector<double> logw(N, -std::numeric_limits<double>::infinity());
  for (std::size_t i = 0; i < N; ++i) {
    const std::size_t k = labels_[i];
    if (prior[k] == 0.0) continue;
    const double zx = dot(z_t.span(), std::span<const double>(exemplars_.data() + i * D, D));
    const double dist = zz - 2.0 * a * zx + ab * sq_norms_[i];
    logw[i] = std::log(prior[k] / double(class_counts_[k])) - 0.5 * dist / cvar;
    if (c.keyframe_latent) {
      double kd = 0.0;
      for (std::size_t j = 0; j < F0; ++j) kd += std::pow((*c.keyframe_latent)[j] - exemplars_[i * D + j], 2);
      logw[i] -= 0.5 * kd / key_variance_;
    }
  }
  const double mx = *std::ranges::max_element(logw);
  double total = 0.0;
  for (double& v : logw) total += (v = std::exp(v - mx));

  // Posterior mean of x0: sum_i w_i (x_i + a variance / cvar (z - a x_i)).
  const double shrink = a * variance_ / cvar;
  Tensor x0(z_t.shape());
  for (std::size_t i = 0; i < N; ++i) {
    const double w = logw[i] / total;
    if (w < 1e-300) continue;
    const double* x = exemplars_.data() + i * D;
    for (std::size_t j = 0; j < D; ++j) x0[j] += w * (1.0 - shrink * a) * x[j];
  }
  Tensor eps(z_t.shape());
  for (std::size_t j = 0; j < D; ++j) {
    const double xhat = x0[j] + shrink * z_t[j];
    eps[j] = (z_t[j] - a * xhat) / b;
  }
  return eps;
}

Checkpoint TinyVideoDenoiser::to_checkpoint() const {
  Checkpoint ck;
  std::vector<std::size_t> labels(labels_);
  ck.manifest = {{"kind", "video_denoiser"},
                 {"video_shape", video_shape_},
                 {"variance", variance_},
                 {"key_variance", key_variance_},
                 {"labels", labels},
                 {"caption_temperature", caption_temperature_}};
  ck.tensors = {{"exemplars", exemplars_}, {"captions", captions_}};
  return ck;
}

TinyVideoDenoiser TinyVideoDenoiser::from_checkpoint(const Checkpoint& ck) {
  if (ck.manifest.value("kind", "") != "video_denoiser") throw CorruptFile("not a video denoiser checkpoint");
  TinyVideoDenoiser d;
  d.video_shape_ = ck.manifest.at("video_shape").get<Shape>();
  d.variance_ = ck.manifest.at("variance").get<double>();
  d.key_variance_ = ck.manifest.at("key_variance").get<double>();
  d.labels_ = ck.manifest.at("labels").get<std::vector<std::size_t>>();
  d.caption_temperature_ = ck.manifest.at("caption_temperature").get<double>();
  d.exemplars_ = ck.get("exemplars");
  d.captions_ = ck.get("captions");
  d.index();
  return d;
}

// ---------------------------------------------------------------------------

namespace {

void overwrite_first_frame(Tensor& z, const Tensor& key, const Tensor& eps_key, double ab) {
  const double a = std::sqrt(ab), b = std::sqrt(1.0 - ab);
  for (std::size_t i = 0; i < key.numel(); ++i) z[i] = a * key[i] + b * eps_key[i];
}

}  // namespace

Tensor reverse_sample(const Tensor& z_T, const Denoiser& denoiser, const NoiseSchedule& s, const Conditions& c,
                      std::size_t steps, std::uint64_t seed) {
  const auto ts = sampler_timesteps(s.T, steps);
  Tensor z = z_T;
  Tensor eps_key;
  if (c.keyframe_latent) {
    if (z.rank() < 1 || c.keyframe_latent->numel() * z.dim(0) != z.numel()) {
      throw ContractViolation("keyframe latent does not match one frame of the video latent");
    }
    Rng rng(seed);
    eps_key = rng.normal_tensor(c.keyframe_latent->shape());
    overwrite_first_frame(z, *c.keyframe_latent, eps_key, s.alpha_bar[ts.front()]);
  }
  for (std::size_t i = 0; i < ts.size(); ++i) {
    const std::size_t t = ts[i], prev = i + 1 < ts.size() ? ts[i + 1] : 0;
    const Tensor eps = denoiser.predict(z, t, s, c);
    if (eps.shape() != z.shape()) {
      throw ContractViolation("denoiser returned " + shape_str(eps.shape()) + " for " + shape_str(z.shape()));
    }
    const double ab = s.alpha_bar[t], ab_prev = s.alpha_bar[prev];
    const double sa = std::sqrt(ab), sb = std::sqrt(1.0 - ab);
    const double pa = std::sqrt(ab_prev), pb = std::sqrt(1.0 - ab_prev);
    for (std::size_t k = 0; k < z.numel(); ++k) {
      const double x0 = (z[k] - sb * eps[k]) / sa;
      z[k] = pa * x0 + pb * eps[k];
    }
    if (c.keyframe_latent) overwrite_first_frame(z, *c.keyframe_latent, eps_key, ab_prev);
  }
  return z;
}

Tensor interpolate_frames(const Tensor& latents, std::size_t n_target) {
  if (n_target < 2) throw InvalidArgument("interpolation target must have at least two frames");
  if (latents.rank() < 1 || latents.dim(0) < 1) throw InvalidArgument("interpolation needs at least one frame");
  const std::size_t n = latents.dim(0);
  if (n_target < n) throw InvalidArgument("interpolation cannot reduce the frame count");
  Shape out_shape = latents.shape();
  out_shape[0] = n_target;
  Tensor out(out_shape);
  for (std::size_t k = 0; k < n_target; ++k) {
    const double pos = double(n - 1) * double(k) / double(n_target - 1);
    const auto i0 = static_cast<std::size_t>(std::floor(pos));
    const double frac = pos - double(i0);
    if (frac == 0.0 || i0 + 1 >= n) {
      out.set_slice0(k, latents.slice0(std::min(i0, n - 1)));
    } else {
      out.set_slice0(k, latents.slice0(i0) * (1.0 - frac) + latents.slice0(i0 + 1) * frac);
    }
  }
  return out;
}

void to_json(nlohmann::json& j, const GuidanceConfig& c) {
  j = {{"theta", c.theta},           {"steps", c.steps},       {"T", c.T},
       {"out_frames", c.out_frames}, {"fps", c.fps},           {"use_beta", c.use_beta},
       {"use_gamma", c.use_gamma}};
}

Tensor generate_latents(const GuidanceInputs& in, const Denoiser& denoiser, const GuidanceConfig& cfg) {
  const NoiseSchedule s = make_schedule(cfg.T);
  const Tensor z_T = inject_alpha_guidance(in.blurry_latents, s, cfg.theta, derive_seed(in.seed, {stream::kDiffusion, 0}));
  Conditions c;
  if (cfg.use_beta) c.keyframe_latent = in.keyframe_latent;
  if (cfg.use_gamma) c.caption = in.caption_embedding;
  return reverse_sample(z_T, denoiser, s, c, cfg.steps, derive_seed(in.seed, {stream::kDiffusion, 1}));
}

Reconstruction reconstruct_video(const Stages& st, const Tensor& fmri, const GuidanceConfig& cfg, std::uint64_t seed) {
  if (!st.perception) throw NotReady("perception reconstructor is not available");
  if (!st.semantics) throw NotReady("semantics reconstructor is not available");
  if (!st.keyframe) throw NotReady("keyframe decoder is not available");
  if (!st.codecs) throw NotReady("codecs are not available");
  if (!st.denoiser) throw NotReady("video denoiser is not available");
  const auto& codec = st.codecs->latent;

  Reconstruction rec;
  rec.blurry = perception::reconstruct_blurry(*st.perception, codec, fmri);
  rec.keyframe = semantics::reconstruct_keyframe(*st.semantics, *st.keyframe, codec, fmri, rec.blurry.latents.slice0(0));
  rec.caption = st.codecs->classifier.caption(st.codecs->embedder, rec.keyframe.frame);
  rec.inputs.blurry_latents = interpolate_frames(rec.blurry.latents, cfg.out_frames);
  rec.inputs.keyframe_latent = codec.encode(rec.keyframe.frame);
  rec.inputs.caption_embedding = st.codecs->embedder.embed_text(rec.caption);
  rec.inputs.seed = seed;
  rec.latents = generate_latents(rec.inputs, *st.denoiser, cfg);
  rec.video.frames = codec.decode_clip(rec.latents);
  rec.video.fps = cfg.fps;
  rec.video.class_id = rec.keyframe.class_id;
  return rec;
}

}  // namespace neuroclips::guidance
