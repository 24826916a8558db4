#pragma once

// Evaluation protocol: frame fidelity (SSIM, PSNR), N-way top-K semantic
// tests, CLIP-pcc smoothness, bidirectional retrieval, and the JSON-lines
// report that collects them.

#include <filesystem>
#include <optional>
#include <vector>

#include "json.hpp"
#include "neuroclips/codecs.hpp"
#include "neuroclips/data.hpp"

namespace neuroclips::metrics {

inline constexpr double kPsnrCap = 100.0;

/// Mean SSIM over channels and valid window positions. Frames are [H, W] or
/// [H, W, C] in [0, 1] with H, W >= 11; 11x11 Gaussian window, sigma 1.5.
double ssim(const Tensor& a, const Tensor& b);

/// 10 log10(1 / MSE), capped at kPsnrCap.
double psnr(const Tensor& a, const Tensor& b);

/// Mean success over `repeats` draws of N-1 distractor classes (uniform,
/// without replacement, excluding gt); success iff gt ranks in the top K of
/// the N restricted probabilities, ties going to the lower class index.
double nway_topk(std::size_t gt_class, const std::vector<double>& probs, std::size_t N, std::size_t K,
                 std::size_t repeats, std::uint64_t seed);

enum class PccMode { Cosine, Pearson };
std::string to_string(PccMode m);
PccMode pcc_mode_from_string(const std::string& s);

/// Mean similarity of consecutive embeddings.
double clip_pcc(const std::vector<Tensor>& frame_embeddings, PccMode mode = PccMode::Cosine);
double clip_pcc(const Tensor& frames, const codecs::SemanticEmbedder& embedder, PccMode mode = PccMode::Cosine);

struct RetrievalResult {
  double keyframe_retrieval = 0.0;  ///< fMRI embedding queries keyframe embeddings
  double fmri_retrieval = 0.0;      ///< keyframe embedding queries fMRI embeddings
};

/// Shuffles the set with `seed`, splits it into `partitions` equal parts and
/// scores top-1 cosine retrieval within consecutive pools of `pool_size` in
/// each part. Averages over pools.
RetrievalResult retrieval_topk(const std::vector<Tensor>& fmri_embeddings, const std::vector<Tensor>& keyframe_embeddings,
                               std::size_t pool_size, std::size_t partitions, std::uint64_t seed);

/// Class-probability vectors for frames and videos.
class ClassifierInterface {
 public:
  virtual ~ClassifierInterface() = default;
  virtual Tensor frame_probabilities(const Tensor& frame) const = 0;
  virtual Tensor video_probabilities(const Tensor& frames) const = 0;
};

/// World classifiers: the codec frame classifier, and its mean over frames
/// as the video classifier.
class WorldClassifiers : public ClassifierInterface {
 public:
  explicit WorldClassifiers(const codecs::CodecBundle& codecs) : codecs_(codecs) {}
  Tensor frame_probabilities(const Tensor& frame) const override;
  Tensor video_probabilities(const Tensor& frames) const override;

 private:
  const codecs::CodecBundle& codecs_;
};

struct EvalConfig {
  std::size_t nway_n = 2;
  std::size_t nway_k = 1;
  std::size_t repeats = 100;
  std::size_t pool_size = 64;
  std::size_t partitions = 1;
  PccMode pcc_mode = PccMode::Cosine;
  std::uint64_t seed = 0;
  std::size_t workers = 1;
};

struct EvalSample {
  Tensor reconstruction;  ///< [F, H, W, 3]
  Tensor ground_truth;    ///< [F, H, W, 3], frame-aligned
  std::size_t gt_class = 0;
};

struct SampleRecord {
  std::size_t idx = 0;
  double ssim = 0.0;
  double psnr_db = 0.0;
  double nway_frame = 0.0;
  double nway_video = 0.0;
  double clip_pcc = 0.0;
};

struct MetricReport {
  std::vector<SampleRecord> samples;
  nlohmann::json aggregate;  ///< means, stds, protocol and seed

  std::vector<nlohmann::json> lines() const;
  void write(const std::filesystem::path& path) const;
};

/// Scores every sample; retrieval is added when embeddings are given.
MetricReport eval_report(const std::vector<EvalSample>& samples, const ClassifierInterface& classifiers,
                         const codecs::SemanticEmbedder& embedder, const EvalConfig& config,
                         const std::optional<std::pair<std::vector<Tensor>, std::vector<Tensor>>>& retrieval = {});

}  // namespace neuroclips::metrics
