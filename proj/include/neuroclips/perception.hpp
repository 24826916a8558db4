#pragma once

// Perception reconstructor: fMRI -> N_f pseudo-fMRI codes -> coarse latents
// -> temporal upsampling stack -> per-frame latents decoded to a blurry video.

#include <functional>
#include <vector>

#include "json.hpp"
#include "neuroclips/codecs.hpp"
#include "neuroclips/core/autodiff.hpp"
#include "neuroclips/core/optim.hpp"
#include "neuroclips/core/tensor_io.hpp"
#include "neuroclips/data.hpp"

namespace neuroclips::perception {

struct StageSpec {
  std::size_t size;    ///< input h = w of the stage
  std::size_t factor;  ///< nearest-neighbour upsampling factor at the end of the stage
};

struct PrArchitecture {
  std::size_t n_voxels = 2048;
  std::size_t n_frames = 6;  ///< N_f
  std::size_t hidden = 128;
  std::size_t code_dim = 64;
  std::size_t channels = codecs::kLatentChannels;
  std::size_t coarse_size = 8;
  std::vector<StageSpec> stages = {{8, 1}, {8, 2}};
  std::size_t target_size = 16;

  /// Throws ConfigError if the stage chain does not connect coarse to target.
  void validate() const;
};

void to_json(nlohmann::json& j, const PrArchitecture& a);
void from_json(const nlohmann::json& j, PrArchitecture& a);

/// softmax(Q Kᵀ / sqrt(c)) · E over the frame axis, with Q = E W_Qᵀ and
/// K = E W_Kᵀ. `e_temp` is [(b·h·w), N_f, c]. Non-finite input throws NumericError.
ad::Var temporal_attention(const ad::Var& e_temp, const ad::Var& wq, const ad::Var& wk);
/// The row-stochastic [(b·h·w), N_f, N_f] weights used above.
Tensor temporal_attention_weights(const Tensor& e_temp, const Tensor& wq, const Tensor& wk);

/// Mixing coefficient applied as eta · a + (1 - eta) · b, eta = sigmoid(raw).
ad::Var residual_mix(const ad::Var& raw_eta, const ad::Var& a, const ad::Var& b);

class PerceptionModel {
 public:
  PerceptionModel(PrArchitecture arch, std::uint64_t seed);

  const PrArchitecture& arch() const { return arch_; }
  ParamSet& params() { return params_; }
  const ParamSet& params() const { return params_; }

  /// [b, n_voxels] -> [b, N_f, code_dim]
  ad::Var inception_extend(const ad::Var& fmri);
  /// [b, N_f, code_dim] -> [b, N_f, c, h, w] at the coarse resolution
  ad::Var to_coarse(const ad::Var& codes);
  /// One temporal-upsampling stage on [(b·N_f), c, h, w].
  ad::Var stage_forward(std::size_t stage, const ad::Var& x, std::size_t batch);
  /// [b, N_f, c, h, w] at coarse resolution -> same at target resolution
  ad::Var temporal_upsample(const ad::Var& coarse);
  /// Full forward: [b, n_voxels] -> [b, N_f, c, target, target]
  ad::Var forward(const ad::Var& fmri);

  /// Inference on one voxel vector: [N_f, c, h, w].
  Tensor predict(const Tensor& fmri);

  Checkpoint to_checkpoint() const;
  static PerceptionModel from_checkpoint(const Checkpoint& ckpt);

 private:
  std::string stage_key(std::size_t stage, const char* name) const;
  PrArchitecture arch_;
  ParamSet params_;
};

/// MAE over all latent elements plus the symmetric frame-level InfoNCE with
/// cosine similarity, averaged over the batch. Inputs are [b, N_f, ...].
ad::Var pr_loss(const ad::Var& e_x, const ad::Var& e_y, double tau);

struct PrTrainConfig {
  std::size_t epochs = 40;
  std::size_t batch_size = 40;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  double tau = 0.07;
  std::uint64_t seed = 0;
  std::size_t validation_size = 40;
};

void to_json(nlohmann::json& j, const PrTrainConfig& c);

struct PrTrainResult {
  PerceptionModel model;
  std::vector<double> epoch_loss;       ///< mean training loss per epoch
  std::vector<double> validation_loss;  ///< fixed-batch loss before training and after each epoch
};

/// Trains on (fmri, target latent) pairs. `fmri` rows are [n_voxels] and
/// `targets` are [N_f, c, h, w]. `on_epoch` (optional) sees (epoch, mean loss).
PrTrainResult train_pr(const std::vector<Tensor>& fmri, const std::vector<Tensor>& targets, PrArchitecture arch,
                       const PrTrainConfig& config,
                       const std::function<void(std::size_t, double)>& on_epoch = {});

struct BlurryVideo {
  Tensor latents;  ///< [N_f, c, h, w]
  Tensor frames;   ///< [N_f, H, W, 3]
};

BlurryVideo reconstruct_blurry(PerceptionModel& model, const codecs::LatentCodec& codec, const Tensor& fmri);

}  // namespace neuroclips::perception
