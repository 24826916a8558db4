#pragma once

// Semantics reconstructor: ridge layer -> token-grid fMRI embedding (trained
// with BiMixCo), a one-step prior to keyframe embeddings, the frozen text
// projector used by the Reftm loss, and a toy keyframe decoder.

#include <array>
#include <filesystem>
#include <functional>
#include <string>
#include <vector>

#include "json.hpp"
#include "neuroclips/codecs.hpp"
#include "neuroclips/core/autodiff.hpp"
#include "neuroclips/core/optim.hpp"
#include "neuroclips/core/rng.hpp"
#include "neuroclips/core/tensor_io.hpp"
#include "neuroclips/data.hpp"

namespace neuroclips::semantics {

/// (XᵀX + λI)⁻¹ XᵀY for X [n, p], Y [n, q]; returns [p, q].
/// Throws SingularSystem when XᵀX + λI is not positive definite.
Tensor ridge_fit_oracle(const Tensor& x, const Tensor& y, double lambda);

/// Affine map n_voxels -> dim. `weight` is stored [dim, n_voxels].
struct RidgeLayer {
  Tensor weight;
  Tensor bias;
  double lambda = 0.0;

  std::size_t in_dim() const { return weight.dim(1); }
  std::size_t out_dim() const { return weight.dim(0); }
};

/// Single-vector application; throws InvalidArgument on a length mismatch.
Tensor ridge_apply(const Tensor& fmri, const RidgeLayer& layer);

/// Closed-form fit of a bias-free layer (the one-shot mode).
RidgeLayer fit_ridge_closed_form(const Tensor& x, const Tensor& y, double lambda);

struct RidgeTrainConfig {
  std::size_t steps = 2000;
  double tolerance = 1e-12;  ///< stop once the relative weight change falls below this
};

/// Full-batch gradient descent on ‖XWᵀ - Y‖² + λ‖W‖² through the autodiff
/// graph, step size 1/L from the Gram spectrum. Bias stays zero.
RidgeLayer train_ridge_layer(const Tensor& x, const Tensor& y, double lambda, const RidgeTrainConfig& config = {});

// ---------------------------------------------------------------------------
// MixCo.

struct BetaParams {
  double a = 0.15;
  double b = 0.15;
};

struct MixPair {
  std::size_t partner;  ///< m_c
  double lambda;        ///< λ_c
};

struct MixedBatch {
  Tensor mixed;  ///< [b, ...]
  std::vector<MixPair> pairs;
};

/// Draws a partner m_c ≠ c and λ_c ~ Beta(a, b) per row, then mixes.
MixedBatch mixco_mix(const Tensor& batch, const BetaParams& beta, Rng& rng);
/// Y*_c = λ_c Y_c + (1 - λ_c) Y_{m_c} for given pairs.
Tensor apply_mix(const Tensor& batch, const std::vector<MixPair>& pairs);

// ---------------------------------------------------------------------------
// Losses. Embeddings are [b, ...]; similarities are cosines of the flattened rows.

/// Four-term bidirectional MixCo loss.
ad::Var bimixco_loss(const ad::Var& mixed_embeddings, const ad::Var& keyframe_embeddings,
                     const std::vector<MixPair>& pairs, double tau);
/// Mean squared error between predicted and target embeddings.
ad::Var prior_loss(const ad::Var& predicted, const ad::Var& target);
/// Symmetric InfoNCE between projected reconstruction-embeddings [b, ...] and text embeddings [b, t].
ad::Var reftm_loss(const ad::Var& projected, const ad::Var& text, double tau);

struct LossWeights {
  double delta = 30.0;
  double mu = 1.0;
};

ad::Var sr_total_loss(const ad::Var& bimixco, const ad::Var& prior, const ad::Var& reftm, const LossWeights& w);

// ---------------------------------------------------------------------------
// Text projector.

class ReftmProjector {
 public:
  ReftmProjector() = default;
  ReftmProjector(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed);

  bool frozen() const { return frozen_; }
  /// Replaces the weight with a constant; later updates have nothing to touch.
  void freeze();
  /// A parameter while trainable, a constant once frozen.
  const ad::Var& weight() const { return weight_; }
  /// [b, tokens, dim] or [b, in_dim] -> [b, out_dim]
  ad::Var project(const ad::Var& embeddings) const;
  Tensor project(const Tensor& embedding) const;

  std::string hash() const;
  Checkpoint to_checkpoint() const;
  static ReftmProjector from_checkpoint(const Checkpoint& ckpt);

 private:
  ad::Var weight_;  ///< [out_dim, in_dim]
  bool frozen_ = false;
};

struct ProjectorPair {
  Tensor image;  ///< [16, 64]
  Tensor text;   ///< [64]
};

struct ProjectorTrainConfig {
  std::size_t epochs = 20;
  std::size_t batch_size = 64;
  double lr = 3e-3;
  double tau = 0.07;
  double holdout_fraction = 0.2;
  std::uint64_t seed = 0;
};

struct ProjectorResult {
  ReftmProjector projector;  ///< frozen
  double image_to_text = 0.0;
  double text_to_image = 0.0;
};

/// Fits the projector on paired embeddings and freezes it. Accuracy is top-1
/// matching on the held-out pairs, counted correct when the retrieved item
/// carries the same text as the query's partner (captions repeat per class).
ProjectorResult pretrain_projector(const std::vector<ProjectorPair>& pairs, const ProjectorTrainConfig& config);

/// Full-scale reference accuracy after fine-tuning (image-to-text, text-to-image).
inline constexpr double kReferenceProjectorAccuracy = 0.952;

// ---------------------------------------------------------------------------
// Model.

struct SrArchitecture {
  std::size_t n_voxels = 2048;
  std::size_t ridge_dim = 256;
  std::size_t mlp_hidden = 512;
  std::size_t prior_hidden = 512;
  std::size_t tokens = codecs::kTokens;
  std::size_t embed_dim = codecs::kEmbedDim;

  std::size_t embedding_size() const { return tokens * embed_dim; }
};

void to_json(nlohmann::json& j, const SrArchitecture& a);
void from_json(const nlohmann::json& j, SrArchitecture& a);

class SemanticsModel {
 public:
  SemanticsModel(SrArchitecture arch, std::uint64_t seed);

  const SrArchitecture& arch() const { return arch_; }
  ParamSet& params() { return params_; }
  /// Parameters updated in phase 1 (ridge + MLP) and phase 2 (prior).
  std::vector<ad::Var*> phase_params(int phase);

  /// [b, n_voxels] -> [b, ridge_dim]
  ad::Var ridge(const ad::Var& fmri);
  /// [b, n_voxels] -> [b, tokens, embed_dim]
  ad::Var embed(const ad::Var& fmri);
  /// [b, tokens, embed_dim] -> same; residual MLP.
  ad::Var prior(const ad::Var& embedding);

  Tensor fmri_embedding(const Tensor& fmri);
  /// e^re for one voxel vector.
  Tensor reconstruction_embedding(const Tensor& fmri);

  RidgeLayer ridge_layer() const;
  bool trained() const { return trained_; }
  void mark_trained() { trained_ = true; }

  Checkpoint to_checkpoint() const;
  static SemanticsModel from_checkpoint(const Checkpoint& ckpt);

 private:
  SrArchitecture arch_;
  ParamSet params_;
  bool trained_ = false;
};

// ---------------------------------------------------------------------------
// Training.

/// Per-clip training material: fMRI, and for every retained frame its image
/// embedding and the text embedding of its caption.
struct SrSample {
  Tensor fmri;
  std::vector<Tensor> frame_embeddings;  ///< [16, 64] each
  std::vector<Tensor> text_embeddings;   ///< [64] each
};

SrSample make_sr_sample(const data::Dataset& dataset, std::size_t index, const codecs::CodecBundle& codecs);

/// Middle retained frame: the fixed evaluation keyframe.
std::size_t eval_keyframe(std::size_t n_frames);

struct SrTrainConfig {
  std::size_t phase1_epochs = 30;
  std::size_t phase1_batch = 128;
  std::size_t phase2_epochs = 60;
  std::size_t phase2_batch = 64;
  double lr = 3e-4;
  double weight_decay = 1e-4;
  double ridge_lambda = 1e-4;  ///< L2 penalty on the ridge weight, added to the phase 1 loss
  double tau = 0.07;           ///< shared by BiMixCo and Reftm
  LossWeights weights;
  BetaParams beta;
  std::uint64_t seed = 0;
};

void to_json(nlohmann::json& j, const SrTrainConfig& c);

struct SrTrainResult {
  SemanticsModel model;
  std::vector<double> phase1_loss;  ///< mean per epoch
  std::vector<double> phase2_loss;
  nlohmann::json schedule;          ///< phase boundaries, recorded in the manifest
};

/// Two-phase schedule. The projector must be frozen (ContractViolation otherwise).
SrTrainResult train_sr(const std::vector<SrSample>& samples, SrArchitecture arch, const ReftmProjector& projector,
                       const SrTrainConfig& config,
                       const std::function<void(int, std::size_t, double)>& on_epoch = {});

/// Top-1 retrieval: fraction of queries whose most cosine-similar candidate is their own.
double top1_retrieval(const std::vector<Tensor>& queries, const std::vector<Tensor>& candidates);

// ---------------------------------------------------------------------------
// Keyframe reconstruction.

/// Toy stand-in for the embedding-conditioned image generator: picks the class
/// whose training-embedding centroid is closest to e^re, renders that class's
/// object at the position found in the blurry frame, and blends with the
/// blurry frame by the match confidence g = clamp(max cosine, 0, 1).
class KeyframeDecoder {
 public:
  static KeyframeDecoder fit(const std::vector<Tensor>& keyframe_embeddings, const std::vector<std::size_t>& labels,
                             std::size_t n_classes, std::size_t frame_size);

  struct Output {
    Tensor frame;        ///< [H, W, 3]
    std::size_t class_id;
    double confidence;   ///< g
  };
  Output decode(const Tensor& embedding, const Tensor& blurry_frame) const;

  Checkpoint to_checkpoint() const;
  static KeyframeDecoder from_checkpoint(const Checkpoint& ckpt);

 private:
  Tensor centroids_;  ///< [n_classes, tokens·dim], unit rows
  std::size_t frame_size_ = 0;
};

/// Object centre (x, y in [0, 1]) of a frame: intensity-weighted centroid of
/// the deviation from the background colour.
std::array<double, 2> locate_object(const Tensor& frame);

struct Keyframe {
  Tensor frame;
  Tensor embedding;  ///< e^re
  std::size_t class_id;
  double confidence;
};

/// Throws NotReady if the SR model is untrained or the blurry latent is empty.
Keyframe reconstruct_keyframe(SemanticsModel& model, const KeyframeDecoder& decoder, const codecs::LatentCodec& codec,
                              const Tensor& fmri, const Tensor& blurry_first_latent);

// ---------------------------------------------------------------------------
// Voxel weights.

struct VoxelWeights {
  Tensor weights;  ///< [n_voxels] in [0, 1]
  std::string warning;
};

/// Mean |W| per voxel across output dims, min-max normalised.
VoxelWeights export_voxel_weights(const RidgeLayer& layer);
void write_voxel_csv(const VoxelWeights& w, const std::filesystem::path& path);

}  // namespace neuroclips::semantics
