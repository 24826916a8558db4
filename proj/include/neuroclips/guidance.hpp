#pragma once

// Inference engine: diffusion schedule, alpha re-noising of the blurry
// latents, a deterministic coarse-step sampler with hard first-frame (beta)
// conditioning and caption (gamma) conditioning, and the fMRI -> video pipeline.

#include <memory>
#include <optional>
#include <vector>

#include "json.hpp"
#include "neuroclips/codecs.hpp"
#include "neuroclips/core/tensor_io.hpp"
#include "neuroclips/data.hpp"
#include "neuroclips/perception.hpp"
#include "neuroclips/semantics.hpp"

namespace neuroclips::guidance {

struct NoiseSchedule {
  std::size_t T = 1000;
  std::vector<double> beta;       ///< beta[t], t = 1..T; beta[0] unused
  std::vector<double> alpha_bar;  ///< alpha_bar[0] = 1, alpha_bar[t] = prod_{s<=t} (1 - beta[s])

  /// alpha_bar_T / alpha_bar_{floor(theta T)}
  double guidance_ratio(double theta) const;
};

/// Linear beta ramp over t = 1..T.
NoiseSchedule make_schedule(std::size_t T = 1000, double beta_start = 1e-4, double beta_end = 0.02);

/// (a, b) with z_T = a z_blurry + b eps.
std::pair<double, double> alpha_coefficients(const NoiseSchedule& s, double theta);

/// z_T = sqrt(r) z_blurry + sqrt(1 - r) eps with r = guidance_ratio(theta) and
/// eps drawn from `seed`. theta = 1 returns z_blurry unchanged.
Tensor inject_alpha_guidance(const Tensor& z_blurry, const NoiseSchedule& s, double theta, std::uint64_t seed);

/// Evenly spaced sub-schedule T = t_0 > t_1 > ... > t_{steps-1} >= 1.
std::vector<std::size_t> sampler_timesteps(std::size_t T, std::size_t steps);

struct Conditions {
  std::optional<Tensor> keyframe_latent;  ///< beta: [c, h, w]
  std::optional<Tensor> caption;          ///< gamma: text embedding
};

class Denoiser {
 public:
  virtual ~Denoiser() = default;
  /// Noise estimate for z_t ([F, c, h, w]) at step t.
  virtual Tensor predict(const Tensor& z_t, std::size_t t, const NoiseSchedule& s, const Conditions& c) const = 0;
};

/// Exact noise posterior mean when every latent entry is N(mean, sd^2) a priori.
class LinearGaussianDenoiser : public Denoiser {
 public:
  LinearGaussianDenoiser(Tensor mean, double sd) : mean_(std::move(mean)), sd_(sd) {}
  Tensor predict(const Tensor& z_t, std::size_t t, const NoiseSchedule& s, const Conditions& c) const override;
  const Tensor& mean() const { return mean_; }
  double sd() const { return sd_; }

 private:
  Tensor mean_;
  double sd_;
};

/// Gaussian-smoothed mixture over the training videos' latents, one
/// isotropic component per video. The noise estimate is the exact posterior
/// mean under that mixture. The caption sets the class prior, and the clean
/// keyframe latent weighs each component by how well its first frame matches;
/// whole-video components then carry that choice to the other frames.
class TinyVideoDenoiser : public Denoiser {
 public:
  struct FitConfig {
    double bandwidth = 0.01;  ///< component variance as a fraction of the mean per-entry variance
    double caption_temperature = 0.01;
    double keyframe_bandwidth = 0.05;  ///< keyframe match variance, same units as `bandwidth`
  };
  /// `videos` are [F, c, h, w] latents, `class_captions` the text embedding per class.
  static TinyVideoDenoiser fit(const std::vector<Tensor>& videos, const std::vector<std::size_t>& labels,
                               const std::vector<Tensor>& class_captions, const FitConfig& config);

  Tensor predict(const Tensor& z_t, std::size_t t, const NoiseSchedule& s, const Conditions& c) const override;
  Shape video_shape() const { return video_shape_; }
  std::size_t n_classes() const { return captions_.dim(0); }
  /// Class prior induced by a caption (uniform without one).
  std::vector<double> class_prior(const std::optional<Tensor>& caption) const;

  Checkpoint to_checkpoint() const;
  static TinyVideoDenoiser from_checkpoint(const Checkpoint& ckpt);

 private:
  Shape video_shape_;
  Tensor exemplars_;  ///< [N, D]
  std::vector<std::size_t> labels_;
  std::vector<double> sq_norms_;
  std::vector<std::size_t> class_counts_;
  double variance_ = 1.0;  ///< per-component isotropic variance
  double key_variance_ = 1.0;
  Tensor captions_;        ///< [K, text_dim]
  double caption_temperature_ = 0.01;

  void index();
};

/// Deterministic (eta = 0) reverse process over sampler_timesteps(T, steps),
/// ending at t = 0. With a keyframe condition, frame 0 is overwritten at
/// every level t by sqrt(abar_t) key + sqrt(1 - abar_t) eps_key, eps_key
/// drawn once from `seed`; at t = 0 it equals the keyframe latent exactly.
Tensor reverse_sample(const Tensor& z_T, const Denoiser& denoiser, const NoiseSchedule& s, const Conditions& c,
                      std::size_t steps, std::uint64_t seed);

/// Linear interpolation along the frame axis of [N, ...] to [n_target, ...].
Tensor interpolate_frames(const Tensor& latents, std::size_t n_target);

struct GuidanceConfig {
  double theta = 0.3;
  std::size_t steps = 25;
  std::size_t T = 1000;
  std::size_t out_frames = 16;
  double fps = 8.0;
  bool use_beta = true;
  bool use_gamma = true;
};

void to_json(nlohmann::json& j, const GuidanceConfig& c);

/// Everything the sampler consumes for one video; kept so fusion can
/// regenerate a clip with a different first frame.
struct GuidanceInputs {
  Tensor blurry_latents;  ///< [out_frames, c, h, w] after interpolation
  Tensor keyframe_latent;
  Tensor caption_embedding;
  std::uint64_t seed = 0;
};

/// alpha injection followed by reverse sampling.
Tensor generate_latents(const GuidanceInputs& in, const Denoiser& denoiser, const GuidanceConfig& cfg);

struct Reconstruction {
  data::VideoClip video;  ///< out_frames frames at cfg.fps
  Tensor latents;
  GuidanceInputs inputs;
  semantics::Keyframe keyframe;
  std::string caption;
  perception::BlurryVideo blurry;
};

/// Trained stages the pipeline draws on. Null members are reported by name.
struct Stages {
  perception::PerceptionModel* perception = nullptr;
  semantics::SemanticsModel* semantics = nullptr;
  const semantics::KeyframeDecoder* keyframe = nullptr;
  const codecs::CodecBundle* codecs = nullptr;
  const Denoiser* denoiser = nullptr;
};

/// blurry latents -> interpolate -> alpha noise -> sampling with beta (keyframe)
/// and gamma (caption of the keyframe) -> decoded frames.
Reconstruction reconstruct_video(const Stages& stages, const Tensor& fmri, const GuidanceConfig& cfg,
                                 std::uint64_t seed);

}  // namespace neuroclips::guidance
