#include <algorithm>
#include <ostream>

#include "neuroclips/cli.hpp"
#include "neuroclips/core/error.hpp"
#include "neuroclips/core/hash.hpp"
#include "neuroclips/core/parallel.hpp"
#include "neuroclips/core/stats.hpp"

namespace neuroclips::cli {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

void log(const Context& ctx, const std::string& line) {
  if (ctx.log) *ctx.log << line << std::endl;
}

std::string rel(const Context& ctx, const fs::path& p) { return fs::relative(p, ctx.workspace.root).generic_string(); }

// Missing upstream artifacts name the command that produces them.
void require(const Context& ctx, const fs::path& dir, const std::string& what, const std::string& producer) {
  if (!fs::exists(dir / "manifest.json")) {
    throw NotReady(what + " not found at " + rel(ctx, dir) + "; run `" + producer + "` first");
  }
}

// Hash over every file below `dir`, by relative path, in sorted order.
std::string directory_hash(const fs::path& dir) {
  std::vector<fs::path> files;
  for (const auto& e : fs::recursive_directory_iterator(dir)) {
    if (e.is_regular_file()) files.push_back(fs::relative(e.path(), dir));
  }
  std::sort(files.begin(), files.end());
  Sha256 h;
  for (const auto& f : files) {
    h.update(f.generic_string());
    h.update(std::string_view("\0", 1));
    h.update(sha256_file(dir / f));
    h.update("\n");
  }
  return h.hex();
}

std::string checkpoint_hash(const fs::path& dir) {
  return read_json(dir / "manifest.json").at("content_hash").get<std::string>();
}

json base_manifest(const Context& ctx, const std::string& command) {
  return {{"command", command},
          {"version", kVersion},
          {"config", ctx.config.values()},
          {"config_hash", ctx.config.hash()},
          {"seed", ctx.config.seed()},
          {"inputs", json::object()},
          {"outputs", json::object()}};
}

json finish(const Context& ctx, const std::string& command, const json& manifest) {
  fs::create_directories(ctx.workspace.manifest(command).parent_path());
  write_json(ctx.workspace.manifest(command), manifest);
  log(ctx, command + ": wrote " + rel(ctx, ctx.workspace.manifest(command)));
  return manifest;
}

data::Dataset load_dataset(const Context& ctx) {
  require(ctx, ctx.workspace.dataset(), "dataset", "synth");
  return data::Dataset::load(ctx.workspace.dataset());
}

codecs::CodecBundle load_codecs(const Context& ctx) {
  require(ctx, ctx.workspace.codecs() / "latent", "codecs", "pretrain-codecs");
  return codecs::CodecBundle::load(ctx.workspace.codecs());
}

Checkpoint load_stage(const Context& ctx, const fs::path& dir, const std::string& what, const std::string& producer) {
  require(ctx, dir, what, producer);
  return load_checkpoint(dir);
}

void reset_dir(const fs::path& dir) {
  fs::remove_all(dir);
  fs::create_directories(dir);
}

double clip_rate(const Context& ctx, const data::WorldSpec& w) {
  return double(ctx.config.uint("out_frames")) / w.clip_seconds;
}

std::vector<semantics::SrSample> sr_samples(const data::Dataset& ds, const std::vector<std::size_t>& idx,
                                            const codecs::CodecBundle& codecs, std::size_t workers) {
  std::vector<semantics::SrSample> out(idx.size());
  parallel_for(idx.size(), workers, [&](std::size_t k) { out[k] = semantics::make_sr_sample(ds, idx[k], codecs); });
  return out;
}

fs::path sample_dir(const Context& ctx, std::size_t k) {
  char name[32];
  std::snprintf(name, sizeof(name), "sample_%04zu", k);
  return ctx.workspace.infer() / name;
}

struct StoredReconstruction {
  guidance::Reconstruction rec;
  Tensor fmri_embedding;
  std::size_t dataset_index = 0;
};

StoredReconstruction load_reconstruction(const Context& ctx, std::size_t k) {
  const Checkpoint ck = load_stage(ctx, sample_dir(ctx, k), "reconstruction " + std::to_string(k), "infer");
  StoredReconstruction s;
  auto& r = s.rec;
  r.video.frames = ck.get("video");
  r.video.fps = ck.manifest.at("fps").get<double>();
  r.video.class_id = ck.manifest.at("keyframe_class").get<std::size_t>();
  r.latents = ck.get("latents");
  r.inputs.blurry_latents = ck.get("blurry_latents");
  r.inputs.keyframe_latent = ck.get("keyframe_latent");
  r.inputs.caption_embedding = ck.get("caption_embedding");
  r.inputs.seed = ck.manifest.at("seed").get<std::uint64_t>();
  r.keyframe.frame = ck.get("keyframe_frame");
  r.keyframe.embedding = ck.get("keyframe_embedding");
  r.keyframe.class_id = r.video.class_id;
  r.keyframe.confidence = ck.manifest.at("confidence").get<double>();
  r.caption = ck.manifest.at("caption").get<std::string>();
  r.blurry.frames = ck.get("blurry_frames");
  s.fmri_embedding = ck.get("fmri_embedding");
  s.dataset_index = ck.manifest.at("dataset_index").get<std::size_t>();
  return s;
}

std::vector<StoredReconstruction> load_reconstructions(const Context& ctx) {
  require(ctx, ctx.workspace.infer(), "inference outputs", "infer");
  const json m = read_json(ctx.workspace.infer() / "manifest.json");
  std::vector<StoredReconstruction> out(m.at("n_samples").get<std::size_t>());
  parallel_for(out.size(), ctx.workers, [&](std::size_t k) { out[k] = load_reconstruction(ctx, k); });
  return out;
}

}  // namespace

const std::vector<std::string>& command_names() {
  static const std::vector<std::string> names = {"synth",  "pretrain-codecs", "train-pr", "train-sr",
                                                 "infer", "fuse",            "eval",     "export-weights"};
  return names;
}

json cmd_synth(const Context& ctx) {
  const auto world = ctx.config.world();
  reset_dir(ctx.workspace.dataset());
  const json ds = data::make_dataset(world, ctx.config.dataset_options(), ctx.workspace.dataset());
  json m = base_manifest(ctx, "synth");
  m["outputs"]["dataset"] = directory_hash(ctx.workspace.dataset());
  m["results"] = {{"counts", ds.at("counts")}, {"world", world}};
  log(ctx, "synth: " + ds.at("counts").dump());
  return finish(ctx, "synth", m);
}

json cmd_pretrain_codecs(const Context& ctx) {
  const auto ds = load_dataset(ctx);
  const auto& world = ds.world();
  const std::uint64_t seed = ctx.config.seed();
  json m = base_manifest(ctx, "pretrain-codecs");
  m["inputs"]["dataset"] = directory_hash(ctx.workspace.dataset());

  std::vector<Tensor> frames;
  std::vector<std::size_t> labels;
  for (std::size_t i : ds.train()) {
    const auto clip = ds.clip(i);
    for (std::size_t f = 0; f < clip.n_frames(); ++f) {
      frames.push_back(clip.frame(f));
      labels.push_back(clip.class_id);
    }
  }
  const double scale = ctx.config.num("latent_scale");
  codecs::CodecBundle bundle{ctx.config.str("codec_variant") == "orthogonal"
                                 ? codecs::LatentCodec::orthogonal(world.frame_size, derive_seed(seed, {stream::kCodec, 0}), scale)
                                 : codecs::LatentCodec::fit(frames, scale),
                             codecs::SemanticEmbedder::fit(frames, derive_seed(seed, {stream::kCodec, 1})),
                             {}};
  bundle.classifier = codecs::FrameClassifier::fit(bundle.embedder, frames, labels, world.n_classes,
                                                   derive_seed(seed, {stream::kCodec, 2}));
  fs::remove_all(ctx.workspace.codecs());
  bundle.save(ctx.workspace.codecs());
  m["outputs"]["codecs"] = bundle.hash();
  log(ctx, "pretrain-codecs: codecs fitted (" + ctx.config.str("codec_variant") + ")");

  const auto train = sr_samples(ds, ds.train(), bundle, ctx.workers);
  std::vector<semantics::ProjectorPair> pairs;
  std::vector<Tensor> key_embeddings;
  std::vector<std::size_t> key_labels;
  for (std::size_t k = 0; k < train.size(); ++k) {
    const auto& s = train[k];
    for (std::size_t f = 0; f < s.frame_embeddings.size(); ++f) pairs.push_back({s.frame_embeddings[f], s.text_embeddings[f]});
    key_embeddings.push_back(s.frame_embeddings[semantics::eval_keyframe(s.frame_embeddings.size())]);
    key_labels.push_back(ds.label(ds.train()[k]).class_id);
  }
  const auto projector = semantics::pretrain_projector(pairs, ctx.config.projector_config());
  fs::remove_all(ctx.workspace.projector());
  save_checkpoint(ctx.workspace.projector(), projector.projector.to_checkpoint());
  m["outputs"]["projector"] = checkpoint_hash(ctx.workspace.projector());
  log(ctx, "pretrain-codecs: projector image->text " + std::to_string(projector.image_to_text));

  const auto decoder = semantics::KeyframeDecoder::fit(key_embeddings, key_labels, world.n_classes, world.frame_size);
  fs::remove_all(ctx.workspace.keyframe_decoder());
  save_checkpoint(ctx.workspace.keyframe_decoder(), decoder.to_checkpoint());
  m["outputs"]["keyframe_decoder"] = checkpoint_hash(ctx.workspace.keyframe_decoder());

  std::vector<Tensor> videos(ds.train().size()), captions;
  std::vector<std::size_t> video_labels;
  parallel_for(videos.size(), ctx.workers, [&](std::size_t k) {
    const auto& l = ds.label(ds.train()[k]);
    videos[k] = bundle.latent.encode_clip(data::render_clip(l.class_id, l.motion, world, clip_rate(ctx, world)).frames);
  });
  for (std::size_t i : ds.train()) video_labels.push_back(ds.label(i).class_id);
  for (std::size_t k = 0; k < world.n_classes; ++k) captions.push_back(bundle.embedder.embed_text(codecs::caption_for_class(k)));
  const auto denoiser = guidance::TinyVideoDenoiser::fit(videos, video_labels, captions, ctx.config.denoiser_config());
  fs::remove_all(ctx.workspace.denoiser());
  save_checkpoint(ctx.workspace.denoiser(), denoiser.to_checkpoint());
  m["outputs"]["denoiser"] = checkpoint_hash(ctx.workspace.denoiser());
  log(ctx, "pretrain-codecs: video denoiser indexed " + std::to_string(videos.size()) + " clips");

  m["results"] = {{"projector_image_to_text", projector.image_to_text},
                  {"projector_text_to_image", projector.text_to_image},
                  {"latent_shape", bundle.latent.latent_shape()}};
  return finish(ctx, "pretrain-codecs", m);
}

json cmd_train_pr(const Context& ctx) {
  const auto ds = load_dataset(ctx);
  const auto codecs = load_codecs(ctx);
  json m = base_manifest(ctx, "train-pr");
  m["inputs"] = {{"dataset", directory_hash(ctx.workspace.dataset())}, {"codecs", codecs.hash()}};

  std::vector<Tensor> x(ds.train().size()), y(ds.train().size());
  parallel_for(x.size(), ctx.workers, [&](std::size_t k) {
    x[k] = ds.fmri(ds.train()[k]);
    y[k] = codecs.latent.encode_clip(ds.clip(ds.train()[k]).frames);
  });
  const auto arch = pr_architecture(ds.world().n_voxels, codecs.latent.latent_shape()[1]);
  const auto result = perception::train_pr(x, y, arch, ctx.config.pr_config(), [&](std::size_t e, double loss) {
    log(ctx, "train-pr: epoch " + std::to_string(e) + " loss " + std::to_string(loss));
  });
  fs::remove_all(ctx.workspace.pr());
  Checkpoint ck = result.model.to_checkpoint();
  ck.manifest["codecs_hash"] = codecs.hash();
  save_checkpoint(ctx.workspace.pr(), ck);
  m["outputs"]["pr"] = checkpoint_hash(ctx.workspace.pr());
  m["results"] = {{"epoch_loss", result.epoch_loss}, {"validation_loss", result.validation_loss}, {"architecture", arch}};
  return finish(ctx, "train-pr", m);
}

json cmd_train_sr(const Context& ctx) {
  const auto ds = load_dataset(ctx);
  const auto codecs = load_codecs(ctx);
  const auto projector =
      semantics::ReftmProjector::from_checkpoint(load_stage(ctx, ctx.workspace.projector(), "Reftm projector", "pretrain-codecs"));
  json m = base_manifest(ctx, "train-sr");
  m["inputs"] = {{"dataset", directory_hash(ctx.workspace.dataset())},
                 {"codecs", codecs.hash()},
                 {"projector", checkpoint_hash(ctx.workspace.projector())}};

  const auto samples = sr_samples(ds, ds.train(), codecs, ctx.workers);
  const auto result = semantics::train_sr(samples, sr_architecture(ds.world().n_voxels), projector, ctx.config.sr_config(),
                                          [&](int phase, std::size_t e, double loss) {
                                            log(ctx, "train-sr: phase " + std::to_string(phase) + " epoch " +
                                                         std::to_string(e) + " loss " + std::to_string(loss));
                                          });
  fs::remove_all(ctx.workspace.sr());
  Checkpoint ck = result.model.to_checkpoint();
  ck.manifest["codecs_hash"] = codecs.hash();
  save_checkpoint(ctx.workspace.sr(), ck);
  m["outputs"]["sr"] = checkpoint_hash(ctx.workspace.sr());
  m["results"] = {{"phase1_loss", result.phase1_loss}, {"phase2_loss", result.phase2_loss}, {"schedule", result.schedule}};
  return finish(ctx, "train-sr", m);
}

json cmd_infer(const Context& ctx) {
  const auto ds = load_dataset(ctx);
  const auto codecs = load_codecs(ctx);
  const auto decoder = semantics::KeyframeDecoder::from_checkpoint(
      load_stage(ctx, ctx.workspace.keyframe_decoder(), "keyframe decoder", "pretrain-codecs"));
  const auto denoiser = guidance::TinyVideoDenoiser::from_checkpoint(
      load_stage(ctx, ctx.workspace.denoiser(), "video denoiser", "pretrain-codecs"));
  auto pr = perception::PerceptionModel::from_checkpoint(load_stage(ctx, ctx.workspace.pr(), "perception reconstructor", "train-pr"));
  auto sr = semantics::SemanticsModel::from_checkpoint(load_stage(ctx, ctx.workspace.sr(), "semantics reconstructor", "train-sr"));
  const auto gcfg = ctx.config.guidance();
  if (denoiser.video_shape()[0] != gcfg.out_frames) {
    throw ConfigError("out_frames", "out_frames differs from the denoiser's clip length; rerun `pretrain-codecs`");
  }

  json m = base_manifest(ctx, "infer");
  m["inputs"] = {{"dataset", directory_hash(ctx.workspace.dataset())},
                 {"codecs", codecs.hash()},
                 {"keyframe_decoder", checkpoint_hash(ctx.workspace.keyframe_decoder())},
                 {"denoiser", checkpoint_hash(ctx.workspace.denoiser())},
                 {"pr", checkpoint_hash(ctx.workspace.pr())},
                 {"sr", checkpoint_hash(ctx.workspace.sr())}};
  m["guidance"] = gcfg;

  const guidance::Stages stages{&pr, &sr, &decoder, &codecs, &denoiser};
  const auto& test = ds.test();
  reset_dir(ctx.workspace.infer());
  std::vector<std::string> hashes(test.size());
  parallel_for(test.size(), ctx.workers, [&](std::size_t k) {
    const std::size_t idx = test[k];
    const std::uint64_t seed = derive_seed(ctx.config.seed(), {stream::kDiffusion, 100, idx});
    const auto rec = guidance::reconstruct_video(stages, ds.fmri(idx), gcfg, seed);
    Checkpoint ck;
    ck.manifest = {{"kind", "reconstruction"},
                   {"sample", k},
                   {"dataset_index", idx},
                   {"seed", seed},
                   {"fps", rec.video.fps},
                   {"caption", rec.caption},
                   {"keyframe_class", rec.keyframe.class_id},
                   {"confidence", rec.keyframe.confidence}};
    ck.tensors = {{"video", rec.video.frames},
                  {"latents", rec.latents},
                  {"blurry_latents", rec.inputs.blurry_latents},
                  {"blurry_frames", rec.blurry.frames},
                  {"keyframe_latent", rec.inputs.keyframe_latent},
                  {"keyframe_frame", rec.keyframe.frame},
                  {"keyframe_embedding", rec.keyframe.embedding},
                  {"caption_embedding", rec.inputs.caption_embedding},
                  {"fmri_embedding", sr.fmri_embedding(ds.fmri(idx))}};
    hashes[k] = ck.content_hash();
    save_checkpoint(sample_dir(ctx, k), std::move(ck));
  });
  m["n_samples"] = test.size();
  m["outputs"]["samples"] = hashes;
  // The directory manifest marks inference as complete for downstream commands.
  write_json(ctx.workspace.infer() / "manifest.json", {{"kind", "inference"}, {"n_samples", test.size()}});
  log(ctx, "infer: reconstructed " + std::to_string(test.size()) + " clips");
  return finish(ctx, "infer", m);
}

json cmd_fuse(const Context& ctx) {
  const auto ds = load_dataset(ctx);
  const auto codecs = load_codecs(ctx);
  const auto denoiser = guidance::TinyVideoDenoiser::from_checkpoint(
      load_stage(ctx, ctx.workspace.denoiser(), "video denoiser", "pretrain-codecs"));
  auto sr = semantics::SemanticsModel::from_checkpoint(load_stage(ctx, ctx.workspace.sr(), "semantics reconstructor", "train-sr"));
  const auto stored = load_reconstructions(ctx);
  json m = base_manifest(ctx, "fuse");
  m["inputs"] = {{"codecs", codecs.hash()},
                 {"denoiser", checkpoint_hash(ctx.workspace.denoiser())},
                 {"sr", checkpoint_hash(ctx.workspace.sr())},
                 {"infer", read_json(ctx.workspace.manifest("infer")).at("outputs")}};

  // Same-class classifier on reconstructed keyframe embeddings of training fMRI.
  std::vector<Tensor> emb(ds.train().size());
  std::vector<std::size_t> labels;
  parallel_for(emb.size(), ctx.workers, [&](std::size_t k) { emb[k] = sr.reconstruction_embedding(ds.fmri(ds.train()[k])); });
  for (std::size_t i : ds.train()) labels.push_back(ds.label(i).class_id);
  const auto pairs = fusion::make_balanced_pairs(emb, labels, ctx.config.uint("similarity_pairs"),
                                                 derive_seed(ctx.config.seed(), {stream::kShuffle, 99}));
  const auto clf = fusion::train_similarity_mlp(pairs, ctx.config.similarity_config());

  std::vector<Tensor> test_emb;
  std::vector<std::size_t> test_labels;
  std::vector<guidance::Reconstruction> clips;
  for (const auto& s : stored) {
    test_emb.push_back(s.rec.keyframe.embedding);
    test_labels.push_back(ds.label(s.dataset_index).class_id);
    clips.push_back(s.rec);
  }
  const double held_out = fusion::pair_accuracy(
      clf, fusion::make_balanced_pairs(test_emb, test_labels, 1000, derive_seed(ctx.config.seed(), {stream::kEval, 99})));
  log(ctx, "fuse: held-out pair accuracy " + std::to_string(held_out));

  const auto result = fusion::fuse_videos(clips, clf, denoiser, codecs.latent, ctx.config.guidance(), ctx.config.fusion_config());
  reset_dir(ctx.workspace.fuse());
  save_checkpoint(ctx.workspace.fuse() / "similarity", clf.to_checkpoint());
  Checkpoint videos;
  videos.manifest = {{"kind", "fused_videos"}};
  for (std::size_t v = 0; v < result.videos.size(); ++v) videos.tensors["video_" + std::to_string(v)] = result.videos[v].video.frames;
  save_checkpoint(ctx.workspace.fuse() / "videos", videos);
  write_json(ctx.workspace.fuse() / "manifest.json", {{"kind", "fusion"}, {"n_videos", result.videos.size()}});

  json fused = result.manifest();
  for (auto& chain : fused["chains"]) {
    json members = json::array();
    for (const auto& k : chain["members"]) members.push_back(stored[k.get<std::size_t>()].dataset_index);
    chain["dataset_indices"] = members;
  }
  m["outputs"] = {{"similarity", checkpoint_hash(ctx.workspace.fuse() / "similarity")},
                  {"videos", checkpoint_hash(ctx.workspace.fuse() / "videos")}};
  m["results"] = {{"held_out_pair_accuracy", held_out}, {"fusion", fused}, {"config", {{"keep_boundary_frames", ctx.config.flag("keep_boundary_frames")}, {"max_chain", ctx.config.uint("max_chain")}}}};
  return finish(ctx, "fuse", m);
}

json cmd_eval(const Context& ctx) {
  const auto ds = load_dataset(ctx);
  const auto codecs = load_codecs(ctx);
  const auto stored = load_reconstructions(ctx);
  const auto& world = ds.world();
  const auto ecfg = ctx.config.eval_config(ctx.workers);
  json m = base_manifest(ctx, "eval");
  m["inputs"] = {{"codecs", codecs.hash()}, {"infer", read_json(ctx.workspace.manifest("infer")).at("outputs")}};

  const std::size_t n = stored.size();
  std::vector<metrics::EvalSample> samples(n);
  std::vector<Tensor> fmri_emb(n), key_emb(n), gt_train(n);
  std::vector<double> keyframe_hit(n);
  parallel_for(n, ctx.workers, [&](std::size_t k) {
    const auto& s = stored[k];
    const auto& label = ds.label(s.dataset_index);
    const auto gt = data::render_clip(label.class_id, label.motion, world, s.rec.video.fps);
    if (gt.n_frames() != s.rec.video.n_frames()) throw ContractViolation("ground truth and reconstruction frame counts differ");
    samples[k] = {s.rec.video.frames, gt.frames, label.class_id};
    gt_train[k] = ds.clip(s.dataset_index).frames;
    key_emb[k] = codecs.embedder.embed_image(gt_train[k].slice0(semantics::eval_keyframe(gt_train[k].dim(0))));
    fmri_emb[k] = s.fmri_embedding;
    keyframe_hit[k] = codecs.classifier.predict(codecs.embedder, s.rec.keyframe.frame) == label.class_id;
  });
  const metrics::WorldClassifiers clf(codecs);
  auto report = metrics::eval_report(samples, clf, codecs.embedder, ecfg, std::pair{fmri_emb, key_emb});

  // Blurry frames against their own ground truth and against a shifted pairing.
  Rng rng(derive_seed(ctx.config.seed(), {stream::kEval, 3}));
  const std::size_t shift = 1 + rng.index(n - 1);
  std::vector<double> own, shuffled;
  for (std::size_t k = 0; k < n; ++k) {
    const Tensor& blurry = stored[k].rec.blurry.frames;
    for (std::size_t f = 0; f < blurry.dim(0); ++f) {
      own.push_back(stats::pearson(blurry.slice0(f).vec(), gt_train[k].slice0(f).vec()));
      shuffled.push_back(stats::pearson(blurry.slice0(f).vec(), gt_train[(k + shift) % n].slice0(f).vec()));
    }
  }
  report.aggregate["pipeline"] = {{"keyframe_class_accuracy", stats::mean(keyframe_hit)},
                                  {"keyframe_class_chance", 1.0 / double(world.n_classes)},
                                  {"blurry_correlation", stats::mean(own)},
                                  {"blurry_correlation_shuffled", stats::mean(shuffled)},
                                  {"retrieval_chance", 1.0 / double(ecfg.pool_size)}};
  fs::create_directories(ctx.workspace.eval());
  report.write(ctx.workspace.eval() / "report.jsonl");
  m["outputs"]["report"] = sha256_file(ctx.workspace.eval() / "report.jsonl");
  m["results"] = report.aggregate;
  log(ctx, "eval: " + report.aggregate["mean"].dump());
  return finish(ctx, "eval", m);
}

json cmd_export_weights(const Context& ctx) {
  auto sr = semantics::SemanticsModel::from_checkpoint(load_stage(ctx, ctx.workspace.sr(), "semantics reconstructor", "train-sr"));
  json m = base_manifest(ctx, "export-weights");
  m["inputs"]["sr"] = checkpoint_hash(ctx.workspace.sr());
  const auto w = semantics::export_voxel_weights(sr.ridge_layer());
  fs::create_directories(ctx.workspace.weights());
  const fs::path csv = ctx.workspace.weights() / "voxel_weights.csv";
  semantics::write_voxel_csv(w, csv);
  m["outputs"]["voxel_weights"] = sha256_file(csv);
  m["results"] = {{"n_voxels", w.weights.numel()}, {"warning", w.warning}};
  if (!w.warning.empty()) log(ctx, "export-weights: " + w.warning);
  return finish(ctx, "export-weights", m);
}

}  // namespace neuroclips::cli
