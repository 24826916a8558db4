#pragma once

// Multi-fMRI fusion: a same-class classifier over neighbouring keyframe
// embeddings, and tail-frame chaining of consecutive reconstructions into
// videos of up to three clips.

#include <vector>

#include "json.hpp"
#include "neuroclips/core/optim.hpp"
#include "neuroclips/core/tensor_io.hpp"
#include "neuroclips/guidance.hpp"

namespace neuroclips::fusion {

struct EmbeddingPair {
  Tensor a;
  Tensor b;
  bool same = false;
};

/// Balanced pairs: half share a label, half do not. Needs two or more classes.
std::vector<EmbeddingPair> make_balanced_pairs(const std::vector<Tensor>& embeddings,
                                               const std::vector<std::size_t>& labels, std::size_t n_pairs,
                                               std::uint64_t seed);

/// Symmetric pair features [|a - b|, a * b] of the unit-normalised embeddings.
Tensor pair_features(const Tensor& a, const Tensor& b);

struct SimilarityConfig {
  std::size_t hidden = 64;
  std::size_t epochs = 40;
  std::size_t batch_size = 64;
  double lr = 3e-3;
  double threshold = 0.5;
  std::uint64_t seed = 0;
};

/// One hidden ReLU layer, two logits; probability is the softmax mass on "same".
class SimilarityClassifier {
 public:
  SimilarityClassifier(std::size_t embed_dim, std::size_t hidden, std::uint64_t seed, double threshold = 0.5);

  double probability(const Tensor& a, const Tensor& b) const;
  bool same_class(const Tensor& a, const Tensor& b) const { return probability(a, b) > threshold_; }
  double threshold() const { return threshold_; }
  std::size_t embed_dim() const { return embed_dim_; }

  /// [B, 2 * embed_dim] features -> [B, 2] logits.
  ad::Var logits(const ad::Var& features) const;
  ParamSet& params() { return params_; }

  Checkpoint to_checkpoint() const;
  static SimilarityClassifier from_checkpoint(const Checkpoint& ckpt);

 private:
  std::size_t embed_dim_ = 0;
  double threshold_ = 0.5;
  ParamSet params_;
};

/// Cross-entropy training with Adam. Throws InvalidArgument unless the corpus
/// holds both same-class and different-class pairs.
SimilarityClassifier train_similarity_mlp(const std::vector<EmbeddingPair>& pairs, const SimilarityConfig& config);

double pair_accuracy(const SimilarityClassifier& clf, const std::vector<EmbeddingPair>& pairs);

struct FusionConfig {
  bool keep_boundary_frames = true;  ///< false drops each chained clip's first frame
  std::size_t max_chain = 3;
};

struct Boundary {
  std::size_t left = 0;  ///< clip index; right = left + 1
  double probability = 0.0;
  bool same_class = false;
  bool fused = false;  ///< same_class and the chain had room
};

struct FusedVideo {
  std::vector<std::size_t> members;
  data::VideoClip video;
};

struct FusionResult {
  std::vector<FusedVideo> videos;
  std::vector<Boundary> boundaries;  ///< one per adjacent pair
  nlohmann::json manifest() const;
};

/// Scans adjacent reconstructions. A same-class boundary regenerates the
/// latter clip from its own alpha and gamma inputs with the former clip's
/// decoded tail frame as the beta keyframe, and appends it to the chain.
/// Decisions use each clip's keyframe embedding.
FusionResult fuse_videos(const std::vector<guidance::Reconstruction>& clips, const SimilarityClassifier& clf,
                         const guidance::Denoiser& denoiser, const codecs::LatentCodec& codec,
                         const guidance::GuidanceConfig& guidance_cfg, const FusionConfig& config);

}  // namespace neuroclips::fusion
