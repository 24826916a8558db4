#pragma once

// Synthetic stimulus world: moving coloured shapes, a known linear voxel
// encoding model with hemodynamic delay, and on-disk dataset layout.

#include <array>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "neuroclips/core/rng.hpp"
#include "neuroclips/core/tensor.hpp"

namespace neuroclips::data {

struct WorldSpec {
  std::size_t n_classes = 8;
  std::size_t frame_size = 64;  ///< H = W, 3 channels
  double clip_seconds = 2.0;
  double train_fps = 3.0;
  double infer_fps = 8.0;
  double source_fps = 30.0;
  std::size_t n_voxels = 2048;
  double noise_sigma = 0.25;
  double active_fraction = 0.5;
  std::size_t delay_samples = 2;  ///< 4 s at a 2 s sampling interval
  bool tag_clip_index = false;    ///< writes the clip index into voxel 0 (bookkeeping checks)
  std::uint64_t seed = 0;

  std::size_t frames_at(double fps) const;
  std::size_t train_frames() const { return frames_at(train_fps); }
  std::size_t infer_frames() const { return frames_at(infer_fps); }
  void validate() const;
};

void to_json(nlohmann::json& j, const WorldSpec& w);
void from_json(const nlohmann::json& j, WorldSpec& w);

/// Object trajectory in normalised frame coordinates; velocity per second.
struct MotionParams {
  double x0 = 0.5;
  double y0 = 0.5;
  double vx = 0.0;
  double vy = 0.0;
};

struct VideoClip {
  Tensor frames;  ///< [n_frames, H, W, 3], values in [0, 1]
  double fps = 0.0;
  std::size_t class_id = 0;
  MotionParams motion;

  std::size_t n_frames() const { return frames.dim(0); }
  Tensor frame(std::size_t i) const { return frames.slice0(i); }
};

struct FmriSample {
  Tensor voxels;  ///< [n_voxels]
  std::size_t subject_id = 1;
  std::size_t clip_index = 0;
  std::size_t repeat_count = 1;
};

/// Layout of the renderer feature vector fed to the encoding model.
struct FeatureLayout {
  std::size_t n_classes;
  static constexpr std::size_t kMotion = 4;
  static constexpr std::size_t kGrid = 4;  ///< coarse position grid is kGrid x kGrid
  std::size_t class_offset() const { return 0; }
  std::size_t motion_offset() const { return n_classes; }
  std::size_t grid_offset() const { return n_classes + kMotion; }
  std::size_t marker_offset() const { return grid_offset() + kGrid * kGrid; }
  std::size_t dim() const { return marker_offset() + 1; }
};

struct GroundTruthEncoder {
  Tensor weights;  ///< [feature_dim, n_voxels]
  std::size_t delay_samples = 2;
  std::vector<bool> active;  ///< voxels with a non-zero weight column

  std::size_t feature_dim() const { return weights.dim(0); }
  std::size_t n_voxels() const { return weights.dim(1); }
};

const std::vector<std::string>& class_names();
/// RGB of empty canvas.
std::array<double, 3> background_color();

/// Object centre at time t (seconds), clamped to the drawable area.
std::array<double, 2> object_center(const MotionParams& m, double t);

VideoClip render_clip(std::size_t class_id, const MotionParams& motion, const WorldSpec& world, double fps = 0.0);
/// A single frame with the object centred at (cx, cy).
Tensor render_frame(std::size_t class_id, double cx, double cy, std::size_t frame_size);

MotionParams sample_motion(Rng& rng);

GroundTruthEncoder make_encoder(const WorldSpec& world);
Tensor clip_features(std::size_t class_id, const MotionParams& motion, const WorldSpec& world,
                     std::size_t clip_index);
/// Noise-free voxel response Wᵀ f.
Tensor encode_features(const Tensor& features, const GroundTruthEncoder& enc);
/// One acquisition of the clip: Wᵀ f(clip) + N(0, σ²). Uses the clip's own
/// metadata, so the clip must come from this world.
FmriSample simulate_fmri(const VideoClip& clip, const GroundTruthEncoder& enc, const WorldSpec& world,
                         double noise_sigma, Rng& rng, std::size_t clip_index = 0);

/// Keeps every k-th frame (k = source / target fps) starting at frame 0.
VideoClip downsample_frames(const VideoClip& clip, double target_fps);

/// Class and trajectory of a clip; all the encoding model reads.
struct ClipSpec {
  std::size_t class_id = 0;
  MotionParams motion;
};

/// A clip paired with the acquisition that followed it by the hemodynamic delay.
struct PairedSample {
  std::size_t clip_position;  ///< position of the clip in the run
  std::size_t tr;             ///< acquisition index in the run
  FmriSample fmri;
};

/// Simulates a continuous run over `clips` where acquisition t responds to
/// clip t - delay, averages `repeats` noisy draws per acquisition, and pairs
/// clip i with acquisition i + delay. Clips whose response falls past the end
/// of the run are dropped.
std::vector<PairedSample> acquire_run(const std::vector<ClipSpec>& clips, const GroundTruthEncoder& enc,
                                      const WorldSpec& world, std::size_t repeats, std::uint64_t noise_seed,
                                      std::size_t first_clip_index);

// ---------------------------------------------------------------------------
// Persistence.

struct DatasetOptions {
  std::size_t n_train = 512;
  std::size_t n_test = 64;
  std::size_t test_repeats = 10;
  std::size_t train_repeats = 2;
};

struct ClipLabel {
  std::size_t index;
  std::size_t class_id;
  MotionParams motion;
  bool is_test;
};

/// On-disk dataset handle. Clip tensors load lazily; fMRI and labels are
/// held in memory.
class Dataset {
 public:
  static Dataset load(const std::filesystem::path& dir);

  const WorldSpec& world() const { return world_; }
  const std::vector<std::size_t>& train() const { return train_; }
  const std::vector<std::size_t>& test() const { return test_; }
  const ClipLabel& label(std::size_t idx) const { return labels_.at(idx); }
  const Tensor& fmri(std::size_t idx) const { return fmri_.at(idx); }
  VideoClip clip(std::size_t idx) const;
  const GroundTruthEncoder& encoder() const { return encoder_; }
  const nlohmann::json& manifest() const { return manifest_; }
  const std::filesystem::path& dir() const { return dir_; }
  std::size_t size() const { return labels_.size(); }

 private:
  std::filesystem::path dir_;
  nlohmann::json manifest_;
  WorldSpec world_;
  std::vector<std::size_t> train_, test_;
  std::vector<ClipLabel> labels_;
  std::vector<Tensor> fmri_;
  GroundTruthEncoder encoder_;
};

/// Renders, simulates and writes the dataset; returns the manifest.
nlohmann::json make_dataset(const WorldSpec& world, const DatasetOptions& options, const std::filesystem::path& dir);

}  // namespace neuroclips::data
