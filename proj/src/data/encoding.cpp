#include <cmath>

#include "neuroclips/core/error.hpp"
#include "neuroclips/data.hpp"

namespace neuroclips::data {

namespace {
constexpr double kGridScale = 2.0;
constexpr double kMotionScale = 1.0 / 0.15;
}  // namespace

GroundTruthEncoder make_encoder(const WorldSpec& world) {
  world.validate();
  const FeatureLayout layout{world.n_classes};
  Rng rng(derive_seed(world.seed, {stream::kEncoder}));
  GroundTruthEncoder enc;
  enc.delay_samples = world.delay_samples;
  enc.weights = Tensor(Shape{layout.dim(), world.n_voxels});
  enc.active.assign(world.n_voxels, false);

  const std::size_t reserved = world.tag_clip_index ? 1 : 0;
  const auto order = rng.permutation(world.n_voxels - reserved);
  const auto n_active = static_cast<std::size_t>(std::lround(world.active_fraction * double(world.n_voxels - reserved)));
  for (std::size_t k = 0; k < n_active; ++k) enc.active[order[k] + reserved] = true;

  for (std::size_t v = 0; v < world.n_voxels; ++v) {
    if (!enc.active[v]) continue;
    for (std::size_t f = 0; f < layout.marker_offset(); ++f) {
      const bool motion = f >= layout.motion_offset() && f < layout.grid_offset();
      enc.weights[f * world.n_voxels + v] = rng.normal(0.0, motion ? 0.5 : 1.0);
    }
  }
  if (world.tag_clip_index) enc.weights[layout.marker_offset() * world.n_voxels + 0] = 1.0;
  return enc;
}

Tensor clip_features(std::size_t class_id, const MotionParams& motion, const WorldSpec& world,
                     std::size_t clip_index) {
  if (class_id >= world.n_classes) throw InvalidArgument("class out of range");
  const FeatureLayout layout{world.n_classes};
  Tensor f(Shape{layout.dim()});
  f[layout.class_offset() + class_id] = 1.0;
  f[layout.motion_offset() + 0] = (motion.x0 - 0.5) * 4.0;
  f[layout.motion_offset() + 1] = (motion.y0 - 0.5) * 4.0;
  f[layout.motion_offset() + 2] = motion.vx * kMotionScale;
  f[layout.motion_offset() + 3] = motion.vy * kMotionScale;

  // Coarse spatial layout: soft occupancy of the object centre on a grid,
  // averaged over the retained frames. Depends on the trajectory only.
  constexpr std::size_t G = FeatureLayout::kGrid;
  const double sigma = 0.5 / static_cast<double>(G);
  const std::size_t n = world.train_frames();
  for (std::size_t k = 0; k < n; ++k) {
    const auto [cx, cy] = object_center(motion, static_cast<double>(k) / world.train_fps);
    double w[G * G];
    double total = 0.0;
    for (std::size_t a = 0; a < G; ++a)
      for (std::size_t b = 0; b < G; ++b) {
        const double dx = cx - (static_cast<double>(b) + 0.5) / G;
        const double dy = cy - (static_cast<double>(a) + 0.5) / G;
        total += (w[a * G + b] = std::exp(-(dx * dx + dy * dy) / (2.0 * sigma * sigma)));
      }
    for (std::size_t c = 0; c < G * G; ++c) f[layout.grid_offset() + c] += kGridScale * w[c] / (total * double(n));
  }
  f[layout.marker_offset()] = world.tag_clip_index ? static_cast<double>(clip_index) : 0.0;
  return f;
}

Tensor encode_features(const Tensor& features, const GroundTruthEncoder& enc) {
  if (features.numel() != enc.feature_dim()) {
    throw ContractViolation("feature vector of length " + std::to_string(features.numel()) +
                            " does not match encoder feature dim " + std::to_string(enc.feature_dim()));
  }
  const std::size_t V = enc.n_voxels();
  Tensor out(Shape{V});
  for (std::size_t f = 0; f < features.numel(); ++f) {
    const double x = features[f];
    if (x == 0.0) continue;
    const double* row = enc.weights.data() + f * V;
    for (std::size_t v = 0; v < V; ++v) out[v] += x * row[v];
  }
  return out;
}

FmriSample simulate_fmri(const VideoClip& clip, const GroundTruthEncoder& enc, const WorldSpec& world,
                         double noise_sigma, Rng& rng, std::size_t clip_index) {
  FmriSample s;
  s.voxels = encode_features(clip_features(clip.class_id, clip.motion, world, clip_index), enc);
  if (noise_sigma > 0.0)
    for (double& v : s.voxels.vec()) v += rng.normal(0.0, noise_sigma);
  s.clip_index = clip_index;
  return s;
}

std::vector<PairedSample> acquire_run(const std::vector<ClipSpec>& clips, const GroundTruthEncoder& enc,
                                      const WorldSpec& world, std::size_t repeats, std::uint64_t noise_seed,
                                      std::size_t first_clip_index) {
  if (repeats == 0) throw InvalidArgument("repeats must be positive");
  const std::size_t delay = enc.delay_samples;
  const std::size_t V = enc.n_voxels();
  std::vector<PairedSample> pairs;
  for (std::size_t i = 0; i + delay < clips.size(); ++i) {
    const std::size_t tr = i + delay;
    // Acquisition `tr` carries the response to the clip shown `delay` samples earlier.
    const ClipSpec& shown = clips[tr - delay];
    const Tensor clean = encode_features(clip_features(shown.class_id, shown.motion, world, first_clip_index + i), enc);
    Tensor avg(Shape{V});
    for (std::size_t r = 0; r < repeats; ++r) {
      Rng rng(derive_seed(noise_seed, {tr, r}));
      for (std::size_t v = 0; v < V; ++v) avg[v] += clean[v] + rng.normal(0.0, world.noise_sigma);
    }
    avg *= 1.0 / static_cast<double>(repeats);
    PairedSample p{i, tr, FmriSample{std::move(avg), 1, first_clip_index + i, repeats}};
    pairs.push_back(std::move(p));
  }
  return pairs;
}

}  // namespace neuroclips::data
