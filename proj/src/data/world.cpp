#include <algorithm>
#include <cmath>

#include "neuroclips/core/error.hpp"
#include "neuroclips/data.hpp"

namespace neuroclips::data {

namespace {

constexpr double kMargin = 0.12;      // object centre stays this far from the border
constexpr double kRadius = 0.15;      // object scale relative to frame size
constexpr double kEdgeSoftness = 0.75;  // pixels
constexpr double kMaxSpeed = 0.15;    // frame widths per second
constexpr std::array<double, 3> kBackground = {0.1, 0.1, 0.12};

struct ClassStyle {
  std::array<double, 3> color;
};

const std::array<ClassStyle, 8>& styles() {
  static const std::array<ClassStyle, 8> s = {{
      {{0.95, 0.55, 0.10}},
      {{0.90, 0.15, 0.15}},
      {{0.30, 0.60, 0.95}},
      {{0.15, 0.75, 0.25}},
      {{0.95, 0.90, 0.15}},
      {{0.92, 0.92, 0.92}},
      {{0.85, 0.20, 0.80}},
      {{0.10, 0.85, 0.85}},
  }};
  return s;
}

// Approximate signed distance (pixels) from (x, y), relative to the object
// centre, to the boundary of the class shape.
double shape_sdf(std::size_t geometry, double x, double y, double r) {
  const double ax = std::abs(x), ay = std::abs(y);
  switch (geometry % 8) {
    case 0: return std::hypot(x, y) - r;
    case 1: return std::max(ax, ay) - 0.85 * r;
    case 2: return (ax + ay - 1.2 * r) / std::sqrt(2.0);
    case 3: return 0.7 * (std::hypot(x / 1.4, y / 0.7) - r);
    case 4: return std::max(0.866 * ax + 0.5 * y, -y) - 0.55 * r;
    case 5: return std::min(std::max(ax - r, ay - 0.35 * r), std::max(ax - 0.35 * r, ay - r));
    case 6: return std::abs(std::hypot(x, y) - 0.8 * r) - 0.3 * r;
    default: return std::max(ax - 0.45 * r, ay - 1.2 * r);
  }
}

}  // namespace

std::size_t WorldSpec::frames_at(double fps) const {
  const double n = fps * clip_seconds;
  const double rounded = std::round(n);
  if (fps <= 0.0 || std::abs(n - rounded) > 1e-9 || rounded < 1.0) {
    throw InvalidArgument("fps " + std::to_string(fps) + " does not give an integer frame count over " +
                          std::to_string(clip_seconds) + " s");
  }
  return static_cast<std::size_t>(rounded);
}

void WorldSpec::validate() const {
  if (n_classes < 2) throw InvalidArgument("world needs at least two classes");
  if (n_classes > styles().size()) throw InvalidArgument("world supports at most 8 classes");
  if (frame_size < 8) throw InvalidArgument("frame_size must be at least 8");
  if (n_voxels < 1) throw InvalidArgument("n_voxels must be positive");
  if (noise_sigma < 0.0) throw InvalidArgument("noise_sigma must be non-negative");
  if (active_fraction <= 0.0 || active_fraction > 1.0) throw InvalidArgument("active_fraction must be in (0, 1]");
  train_frames();
  infer_frames();
  frames_at(source_fps);
}

void to_json(nlohmann::json& j, const WorldSpec& w) {
  j = {{"n_classes", w.n_classes},   {"frame_size", w.frame_size},       {"clip_seconds", w.clip_seconds},
       {"train_fps", w.train_fps},   {"infer_fps", w.infer_fps},         {"source_fps", w.source_fps},
       {"n_voxels", w.n_voxels},     {"noise_sigma", w.noise_sigma},     {"active_fraction", w.active_fraction},
       {"delay_samples", w.delay_samples}, {"tag_clip_index", w.tag_clip_index}, {"seed", w.seed}};
}

void from_json(const nlohmann::json& j, WorldSpec& w) {
  j.at("n_classes").get_to(w.n_classes);
  j.at("frame_size").get_to(w.frame_size);
  j.at("clip_seconds").get_to(w.clip_seconds);
  j.at("train_fps").get_to(w.train_fps);
  j.at("infer_fps").get_to(w.infer_fps);
  j.at("source_fps").get_to(w.source_fps);
  j.at("n_voxels").get_to(w.n_voxels);
  j.at("noise_sigma").get_to(w.noise_sigma);
  j.at("active_fraction").get_to(w.active_fraction);
  j.at("delay_samples").get_to(w.delay_samples);
  j.at("tag_clip_index").get_to(w.tag_clip_index);
  j.at("seed").get_to(w.seed);
}

const std::vector<std::string>& class_names() {
  static const std::vector<std::string> names = {"cat", "car", "bird", "turtle", "fish", "plane", "horse", "flower"};
  return names;
}

std::array<double, 3> background_color() { return kBackground; }

std::array<double, 2> object_center(const MotionParams& m, double t) {
  return {std::clamp(m.x0 + m.vx * t, kMargin, 1.0 - kMargin), std::clamp(m.y0 + m.vy * t, kMargin, 1.0 - kMargin)};
}

Tensor render_frame(std::size_t class_id, double cx, double cy, std::size_t frame_size) {
  const std::size_t H = frame_size;
  const double scale = static_cast<double>(H);
  const double r = kRadius * scale;
  const auto& color = styles().at(class_id).color;
  Tensor f(Shape{H, H, 3});
  for (std::size_t i = 0; i < H; ++i) {
    const double y = (static_cast<double>(i) + 0.5) - cy * scale;
    for (std::size_t j = 0; j < H; ++j) {
      const double x = (static_cast<double>(j) + 0.5) - cx * scale;
      const double d = shape_sdf(class_id, x, y, r);
      const double m = 1.0 / (1.0 + std::exp(d / kEdgeSoftness));
      for (std::size_t c = 0; c < 3; ++c) {
        f[(i * H + j) * 3 + c] = std::clamp(kBackground[c] * (1.0 - m) + color[c] * m, 0.0, 1.0);
      }
    }
  }
  return f;
}

VideoClip render_clip(std::size_t class_id, const MotionParams& motion, const WorldSpec& world, double fps) {
  if (class_id >= world.n_classes) {
    throw InvalidArgument("class " + std::to_string(class_id) + " out of range for " +
                          std::to_string(world.n_classes) + " classes");
  }
  if (fps == 0.0) fps = world.train_fps;
  const std::size_t n = world.frames_at(fps);
  const std::size_t H = world.frame_size;
  VideoClip clip;
  clip.fps = fps;
  clip.class_id = class_id;
  clip.motion = motion;
  clip.frames = Tensor(Shape{n, H, H, 3});
  for (std::size_t k = 0; k < n; ++k) {
    const auto [cx, cy] = object_center(motion, static_cast<double>(k) / fps);
    clip.frames.set_slice0(k, render_frame(class_id, cx, cy, H));
  }
  return clip;
}

MotionParams sample_motion(Rng& rng) {
  MotionParams m;
  m.x0 = rng.uniform(0.25, 0.75);
  m.y0 = rng.uniform(0.25, 0.75);
  m.vx = rng.uniform(-kMaxSpeed, kMaxSpeed);
  m.vy = rng.uniform(-kMaxSpeed, kMaxSpeed);
  return m;
}

VideoClip downsample_frames(const VideoClip& clip, double target_fps) {
  if (target_fps <= 0.0) throw InvalidArgument("target fps must be positive");
  const double ratio = clip.fps / target_fps;
  const double k_round = std::round(ratio);
  if (ratio < 1.0 || std::abs(ratio - k_round) > 1e-9) {
    throw InvalidArgument("source fps " + std::to_string(clip.fps) + " is not a multiple of target fps " +
                          std::to_string(target_fps));
  }
  const auto k = static_cast<std::size_t>(k_round);
  VideoClip out = clip;
  out.fps = target_fps;
  const std::size_t n_out = (clip.n_frames() + k - 1) / k;
  Shape shape = clip.frames.shape();
  shape[0] = n_out;
  out.frames = Tensor(shape);
  for (std::size_t i = 0; i < n_out; ++i) out.frames.set_slice0(i, clip.frames.slice0(i * k));
  return out;
}

}  // namespace neuroclips::data
