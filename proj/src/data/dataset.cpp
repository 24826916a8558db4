#include <system_error>

#include "neuroclips/core/error.hpp"
#include "neuroclips/core/tensor_io.hpp"
#include "neuroclips/data.hpp"

namespace neuroclips::data {

namespace fs = std::filesystem;

namespace {

constexpr int kDatasetVersion = 1;

nlohmann::json motion_json(const MotionParams& m) {
  return {{"x0", m.x0}, {"y0", m.y0}, {"vx", m.vx}, {"vy", m.vy}};
}

MotionParams motion_from(const nlohmann::json& j) {
  return {j.at("x0").get<double>(), j.at("y0").get<double>(), j.at("vx").get<double>(), j.at("vy").get<double>()};
}

std::string idx_name(std::size_t idx) { return std::to_string(idx) + ".tns"; }

// One run: n usable clips plus `delay` trailing clips whose responses fall
// past the end of the acquisition and are dropped.
std::vector<ClipSpec> draw_run(const WorldSpec& world, std::size_t run, std::size_t n_usable) {
  std::vector<ClipSpec> specs;
  for (std::size_t pos = 0; pos < n_usable + world.delay_samples; ++pos) {
    Rng rng(derive_seed(world.seed, {stream::kClipParams, run, pos}));
    ClipSpec s;
    s.class_id = rng.index(world.n_classes);
    s.motion = sample_motion(rng);
    specs.push_back(s);
  }
  return specs;
}

}  // namespace

nlohmann::json make_dataset(const WorldSpec& world, const DatasetOptions& options, const fs::path& dir) {
  world.validate();
  if (options.n_train < 1 || options.n_test < 1) throw InvalidArgument("dataset counts must be at least 1");
  if (options.train_repeats < 1 || options.test_repeats < 1) throw InvalidArgument("repeat counts must be at least 1");

  std::error_code ec;
  fs::create_directories(dir / "clips", ec);
  if (!ec) fs::create_directories(dir / "fmri", ec);
  if (ec) throw IoError("cannot create dataset directory " + dir.string() + ": " + ec.message());

  const GroundTruthEncoder enc = make_encoder(world);
  nlohmann::json labels = nlohmann::json::array();
  std::vector<std::size_t> train_idx, test_idx;

  struct Run {
    std::size_t run, n, repeats, first;
    bool test;
  };
  const Run runs[] = {{0, options.n_train, options.train_repeats, 0, false},
                      {1, options.n_test, options.test_repeats, options.n_train, true}};
  for (const Run& r : runs) {
    const auto specs = draw_run(world, r.run, r.n);
    const auto pairs = acquire_run(specs, enc, world, r.repeats, derive_seed(world.seed, {stream::kFmriNoise, r.run}),
                                   r.first);
    for (const PairedSample& p : pairs) {
      const std::size_t idx = r.first + p.clip_position;
      const ClipSpec& s = specs[p.clip_position];
      const VideoClip source = render_clip(s.class_id, s.motion, world, world.source_fps);
      const VideoClip clip = downsample_frames(source, world.train_fps);
      save_tensor(clip.frames, dir / "clips" / idx_name(idx), DType::F32);
      save_tensor(p.fmri.voxels, dir / "fmri" / idx_name(idx), DType::F64);
      labels.push_back({{"index", idx},
                        {"class_id", s.class_id},
                        {"class_name", class_names()[s.class_id]},
                        {"motion", motion_json(s.motion)},
                        {"split", r.test ? "test" : "train"},
                        {"tr", p.tr},
                        {"repeat_count", p.fmri.repeat_count}});
      (r.test ? test_idx : train_idx).push_back(idx);
    }
  }

  nlohmann::json manifest = {{"kind", "dataset"},
                             {"version", kDatasetVersion},
                             {"world", world},
                             {"seed", world.seed},
                             {"counts", {{"train", train_idx.size()}, {"test", test_idx.size()}}},
                             {"repeats", {{"train", options.train_repeats}, {"test", options.test_repeats}}},
                             {"split", {{"train", train_idx}, {"test", test_idx}}},
                             {"rows", labels.size()}};
  write_json(dir / "labels.json", labels);
  write_json(dir / "manifest.json", manifest);
  return manifest;
}

Dataset Dataset::load(const fs::path& dir) {
  if (!fs::exists(dir / "manifest.json")) throw NotReady("no dataset at " + dir.string());
  Dataset d;
  d.dir_ = dir;
  d.manifest_ = read_json(dir / "manifest.json");
  d.world_ = d.manifest_.at("world").get<WorldSpec>();
  d.train_ = d.manifest_.at("split").at("train").get<std::vector<std::size_t>>();
  d.test_ = d.manifest_.at("split").at("test").get<std::vector<std::size_t>>();

  const nlohmann::json labels = read_json(dir / "labels.json");
  if (labels.size() != d.manifest_.at("rows").get<std::size_t>()) {
    throw CorruptFile("labels.json row count disagrees with manifest in " + dir.string());
  }
  d.labels_.resize(labels.size());
  d.fmri_.resize(labels.size());
  for (const auto& row : labels) {
    const auto idx = row.at("index").get<std::size_t>();
    if (idx >= labels.size()) throw CorruptFile("label index out of range in " + dir.string());
    d.labels_[idx] = ClipLabel{idx, row.at("class_id").get<std::size_t>(), motion_from(row.at("motion")),
                               row.at("split").get<std::string>() == "test"};
    d.fmri_[idx] = load_tensor_values(dir / "fmri" / idx_name(idx));
    if (d.fmri_[idx].numel() != d.world_.n_voxels) throw CorruptFile("fMRI vector length mismatch for clip " + std::to_string(idx));
  }
  d.encoder_ = make_encoder(d.world_);
  return d;
}

VideoClip Dataset::clip(std::size_t idx) const {
  const ClipLabel& l = label(idx);
  VideoClip c;
  c.frames = load_tensor_values(dir_ / "clips" / idx_name(idx));
  c.fps = world_.train_fps;
  c.class_id = l.class_id;
  c.motion = l.motion;
  return c;
}

}  // namespace neuroclips::data
