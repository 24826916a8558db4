#pragma once

// Small deterministic stand-ins for the frozen pretrained models: a latent
// pixel codec, a token-grid semantic embedder with a text branch, and a
// template captioner backed by a frame classifier.

#include <string>
#include <vector>

#include "neuroclips/core/tensor.hpp"
#include "neuroclips/core/tensor_io.hpp"

namespace neuroclips::codecs {

inline constexpr std::size_t kLatentChannels = 4;
inline constexpr std::size_t kTokens = 16;
inline constexpr std::size_t kEmbedDim = 64;

enum class CodecKind { Orthogonal, Trained };

std::string to_string(CodecKind k);
CodecKind codec_kind_from_string(const std::string& s);

/// Patch codec. Encoding maps each p x p x 3 patch through a fixed linear map
/// to 4 latent channels; decoding reads a (2r+1)^2 latent neighbourhood.
/// The orthogonal variant uses p = 1, r = 0 and an isometric 3 -> 4 map, so
/// decode(encode(x)) = x exactly up to rounding and the clamp.
class LatentCodec {
 public:
  static LatentCodec orthogonal(std::size_t frame_size, std::uint64_t seed, double latent_scale = 1.0);
  /// PCA encoder over 4x4 patches plus a least-squares neighbourhood decoder.
  static LatentCodec fit(const std::vector<Tensor>& frames, double latent_scale = 1.0);

  CodecKind kind() const { return kind_; }
  std::size_t frame_size() const { return frame_size_; }
  double latent_scale() const { return latent_scale_; }
  Shape latent_shape() const;

  /// [H, W, 3] -> [4, h, w]
  Tensor encode(const Tensor& frame) const;
  /// [4, h, w] -> [H, W, 3], clamped to [0, 1]
  Tensor decode(const Tensor& latent) const;
  /// [n, H, W, 3] <-> [n, 4, h, w]
  Tensor encode_clip(const Tensor& frames) const;
  Tensor decode_clip(const Tensor& latents) const;

  Checkpoint to_checkpoint() const;
  static LatentCodec from_checkpoint(const Checkpoint& ckpt);

 private:
  CodecKind kind_ = CodecKind::Orthogonal;
  std::size_t frame_size_ = 0;
  std::size_t patch_ = 1;
  std::size_t radius_ = 0;
  double latent_scale_ = 1.0;
  Tensor mean_;     ///< [P]
  Tensor encoder_;  ///< [4, P]
  Tensor decoder_;  ///< [P, (2r+1)^2 * 4 + 1]
};

/// Translation-invariant appearance descriptors plus per-cell local statistics.
struct FrameDescriptors {
  Tensor global;  ///< [kGlobalFeatures]
  Tensor local;   ///< [kTokens, 4]
};
inline constexpr std::size_t kGlobalFeatures = 14;

FrameDescriptors describe_frame(const Tensor& frame);

/// Image branch: frame -> [16, 64] token grid. Text branch: caption -> [64].
class SemanticEmbedder {
 public:
  /// Fixed seeded projections; pretraining only fits descriptor standardisation.
  static SemanticEmbedder fit(const std::vector<Tensor>& frames, std::uint64_t seed);

  Tensor embed_image(const Tensor& frame) const;
  Tensor embed_text(const std::string& caption) const;
  /// Standardised global descriptors (classifier input).
  Tensor global_features(const Tensor& frame) const;

  Checkpoint to_checkpoint() const;
  static SemanticEmbedder from_checkpoint(const Checkpoint& ckpt);

 private:
  Tensor g_mean_, g_std_, l_mean_, l_std_;
  Tensor proj_global_;  ///< [64, kGlobalFeatures]
  Tensor proj_local_;   ///< [64, 4]
  Tensor words_;        ///< [vocab, 64]
};

const std::vector<std::string>& vocabulary();
std::string caption_for_class(std::size_t class_id);
inline const char* kAbstainCaption = "a video of an object";

/// Softmax regression over standardised global descriptors.
class FrameClassifier {
 public:
  static FrameClassifier fit(const SemanticEmbedder& embedder, const std::vector<Tensor>& frames,
                             const std::vector<std::size_t>& labels, std::size_t n_classes, std::uint64_t seed);

  std::size_t n_classes() const { return weight_.dim(0); }
  /// Class probabilities for one frame.
  Tensor probabilities(const SemanticEmbedder& embedder, const Tensor& frame) const;
  std::size_t predict(const SemanticEmbedder& embedder, const Tensor& frame) const;
  /// Template caption, or the abstain caption below `min_confidence`.
  std::string caption(const SemanticEmbedder& embedder, const Tensor& frame, double min_confidence = 0.5) const;

  Checkpoint to_checkpoint() const;
  static FrameClassifier from_checkpoint(const Checkpoint& ckpt);

 private:
  Tensor weight_;  ///< [n_classes, kGlobalFeatures]
  Tensor bias_;    ///< [n_classes]
};

/// Everything frozen after `pretrain-codecs`.
struct CodecBundle {
  LatentCodec latent;
  SemanticEmbedder embedder;
  FrameClassifier classifier;

  /// Hash over all three parameter sets; recorded by downstream checkpoints.
  std::string hash() const;
  void save(const std::filesystem::path& dir) const;
  static CodecBundle load(const std::filesystem::path& dir);
};

}  // namespace neuroclips::codecs
