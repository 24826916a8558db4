// Acceptance runner: evaluates criteria 1-9 and prints one PASS/FAIL line per
// criterion. Exit status is 0 only when every selected criterion passes.

#include <algorithm>
#include <chrono>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>
#include <unistd.h>

#include "CLI11.hpp"
#include "grad_check.hpp"
#include "neuroclips/cli.hpp"
#include "neuroclips/core/error.hpp"
#include "neuroclips/core/stats.hpp"
#include "oracles.hpp"

namespace fs = std::filesystem;
using namespace neuroclips;
using ad::Var;

namespace {

struct Verdict {
  bool pass = false;
  std::string detail;
};

std::string fmt(const char* f, auto... args) {
  char buf[512];
  std::snprintf(buf, sizeof(buf), f, args...);
  return buf;
}

double seconds_since(std::chrono::steady_clock::time_point t0) {
  return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
}

// ---------------------------------------------------------------------------
// 1. Gradients against central differences.

Verdict gradients() {
  const auto t0 = std::chrono::steady_clock::now();
  Rng rng(101);
  double worst = 0.0;
  std::string worst_name;
  auto track = [&](const std::string& name, double err) {
    if (err > worst) worst = err, worst_name = name;
  };
  for (int trial = 0; trial < 4; ++trial) {
    const std::size_t b = 1 + rng.index(3), n = 2 + rng.index(3), c = 1 + rng.index(2), h = 1 + rng.index(3);
    Var ex = Var::parameter(rng.normal_tensor({b, n, c, h, h})), ey = Var::parameter(rng.normal_tensor({b, n, c, h, h}));
    const double tau = rng.uniform(0.05, 1.0);
    track("pr_loss", nc_test::check_gradients({&ex, &ey}, [&] { return perception::pr_loss(ex, ey, tau); }).rel_error);

    const std::size_t bb = 2 + rng.index(6), d = 2 + rng.index(6);
    Var y = Var::parameter(rng.normal_tensor({bb, d})), x = Var::parameter(rng.normal_tensor({bb, d}));
    const auto mixed = semantics::mixco_mix(rng.normal_tensor({bb, 3}), {0.15, 0.15}, rng);
    track("bimixco_loss",
          nc_test::check_gradients({&y, &x}, [&] { return semantics::bimixco_loss(y, x, mixed.pairs, tau); }).rel_error);

    Var p = Var::parameter(rng.normal_tensor({bb, d}));
    const Var target = Var::constant(rng.normal_tensor({bb, d}));
    track("prior_loss", nc_test::check_gradients({&p}, [&] { return semantics::prior_loss(p, target); }).rel_error);

    semantics::ReftmProjector proj(2 * d, 5, derive_seed(101, {std::uint64_t(trial)}));
    proj.freeze();
    Var e = Var::parameter(rng.normal_tensor({bb, 2, d}));
    const Var text = Var::constant(rng.normal_tensor({bb, 5}));
    track("reftm_loss",
          nc_test::check_gradients({&e}, [&] { return semantics::reftm_loss(proj.project(e), text, tau); }).rel_error);

    perception::PrArchitecture a;
    a.n_voxels = 6 + rng.index(6);
    a.n_frames = 2 + rng.index(3);
    a.hidden = 5;
    a.code_dim = 4;
    a.channels = 2;
    a.coarse_size = 2;
    a.stages = {{2, 2}, {4, 1}};
    a.target_size = 4;
    perception::PerceptionModel m(a, derive_seed(102, {std::uint64_t(trial)}));
    std::vector<Var*> etas;
    for (auto& [name, v] : m.params().items()) {
      if (name.find("eta") == std::string::npos) continue;
      m.params().get(name).mutable_value()[0] = rng.normal();
      etas.push_back(&m.params().get(name));
    }
    Var coarse = Var::parameter(rng.normal_tensor({2, a.n_frames, a.channels, 2, 2}));
    std::vector<Var*> params = m.params().all();
    params.push_back(&coarse);
    auto up = [&] { return ad::sum(m.temporal_upsample(coarse)); };
    track("temporal upsampler", nc_test::check_gradients(params, up).rel_error);
    track("temporal upsampler eta", nc_test::check_gradients(etas, up).rel_error);
  }
  const double secs = seconds_since(t0);
  return {worst <= 1e-4 && secs < 120.0,
          fmt("max rel err %.2e (%s), %.1f s", worst, worst_name.c_str(), secs)};
}

// ---------------------------------------------------------------------------
// 2. Alpha guidance.

Verdict alpha_guidance() {
  const auto s = guidance::make_schedule(1000);
  Rng rng(201);
  const Tensor zb = rng.normal_tensor({3, 4, 4, 4});
  const bool passthrough = guidance::inject_alpha_guidance(zb, s, 1.0, 9) == zb;
  double identity = 0.0;
  for (int g = 1; g <= 20; ++g) {
    const auto [a, b] = guidance::alpha_coefficients(s, g / 20.0);
    identity = std::max(identity, std::abs(a * a + b * b - 1.0));
  }
  const double ratio = s.alpha_bar[1000] / s.alpha_bar[300], var = 1.0 - ratio;
  const Tensor base = Tensor::from({2.0, -1.0, 0.5, 10.0});
  const std::size_t n = 10000;
  std::vector<std::vector<double>> draws(base.numel());
  for (std::size_t k = 0; k < n; ++k) {
    const Tensor z = guidance::inject_alpha_guidance(base, s, 0.3, derive_seed(202, {k}));
    for (std::size_t i = 0; i < base.numel(); ++i) draws[i].push_back(z[i]);
  }
  double worst_z = 0.0;
  for (std::size_t i = 0; i < base.numel(); ++i) {
    const double m = stats::mean(draws[i]), sd = stats::stddev(draws[i]);
    worst_z = std::max(worst_z, std::abs(m - std::sqrt(ratio) * base[i]) / std::sqrt(var / n));
    worst_z = std::max(worst_z, std::abs(sd * sd - var) / (var * std::sqrt(2.0 / (n - 1))));
  }
  return {passthrough && identity <= 1e-12 && worst_z <= 3.0,
          fmt("passthrough %s, |a^2+b^2-1| %.1e, moments within %.2f sigma", passthrough ? "exact" : "broken", identity,
              worst_z)};
}

// ---------------------------------------------------------------------------
// 3. Deterministic sampler.

Verdict sampler() {
  const auto s = guidance::make_schedule(1000);
  Rng rng(301);
  const Tensor mean = rng.normal_tensor({4, 2, 3, 3});
  const guidance::LinearGaussianDenoiser den(mean, 0.7);
  const Tensor z_T = rng.normal_tensor({4, 2, 3, 3});
  const Tensor out = guidance::reverse_sample(z_T, den, s, {}, 25, 5);
  const double err = nc_test::max_diff(out, nc_test::sampler_replay(z_T, mean, 0.7, 1000, 25, nullptr, nullptr));
  const bool same = guidance::reverse_sample(z_T, den, s, {}, 25, 5) == out;
  return {err <= 1e-9 && same, fmt("max |sampler - replay| %.2e, rerun %s", err, same ? "bit-identical" : "differs")};
}

// ---------------------------------------------------------------------------
// 4. BiMixCo at unit weights vs bidirectional InfoNCE.

Verdict bimixco_identity() {
  Rng rng(401);
  double worst = 0.0;
  for (std::size_t b = 2; b <= 16; ++b) {
    for (int rep = 0; rep < 3; ++rep) {
      const Tensor y = rng.normal_tensor({b, 3, 5}), x = rng.normal_tensor({b, 3, 5});
      std::vector<semantics::MixPair> pairs(b);
      for (std::size_t i = 0; i < b; ++i) pairs[i] = {(i + 1 + rng.index(b - 1)) % b, 1.0};
      const double tau = rng.uniform(0.05, 1.0);
      const double got = semantics::bimixco_loss(Var::constant(y), Var::constant(x), pairs, tau).item();
      worst = std::max(worst, std::abs(got - nc_test::infonce_oracle(y, x, tau)));
    }
  }
  return {worst <= 1e-10, fmt("max |BiMixCo - InfoNCE| %.2e over batches 2-16", worst)};
}

// ---------------------------------------------------------------------------
// 5. Metric oracles.

Verdict metric_oracles() {
  Rng rng(501);
  double ssim_err = 0.0, psnr_err = 0.0;
  for (int t = 0; t < 50; ++t) {
    Tensor a(Shape{16, 16, 3});
    for (double& v : a.vec()) v = rng.uniform();
    Tensor b = a;
    const double noise = rng.uniform(0.0, 0.5);
    for (double& v : b.vec()) v = std::clamp(v + rng.normal(0.0, noise), 0.0, 1.0);
    ssim_err = std::max(ssim_err, std::abs(metrics::ssim(a, b) - nc_test::ssim_oracle(a, b)));
    psnr_err = std::max(psnr_err, double(std::abs(nc_test::LD(metrics::psnr(a, b)) - nc_test::psnr_oracle(a, b))));
  }
  bool nway_ok = true;
  std::string nway_detail;
  for (auto [N, K] : {std::pair<std::size_t, std::size_t>{2, 1}, {10, 1}, {50, 1}}) {
    const std::size_t trials = 6000;
    double hits = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      std::vector<double> p(50);
      double total = 0.0;
      for (double& v : p) total += v = rng.uniform();
      for (double& v : p) v /= total;
      hits += metrics::nway_topk(rng.index(50), p, N, K, 1, derive_seed(502, {t}));
    }
    const double expect = double(K) / double(N), rate = hits / double(trials);
    const double z = std::abs(rate - expect) / std::sqrt(expect * (1 - expect) / double(trials));
    nway_ok = nway_ok && z <= 3.0;
    nway_detail += fmt(" %zu-way %.3f", N, rate);
  }
  double kf = 0.0, fm = 0.0;
  const std::size_t reruns = 20, items = 1200, pool = 300;
  for (std::size_t r = 0; r < reruns; ++r) {
    std::vector<Tensor> f, k;
    for (std::size_t i = 0; i < items; ++i) f.push_back(rng.normal_tensor({24})), k.push_back(rng.normal_tensor({24}));
    const auto res = metrics::retrieval_topk(f, k, pool, 4, derive_seed(503, {r}));
    kf += res.keyframe_retrieval / double(reruns);
    fm += res.fmri_retrieval / double(reruns);
  }
  const double p = 1.0 / double(pool), sigma = std::sqrt(p * (1 - p) / double(items * reruns));
  const bool retrieval_ok = std::abs(kf - p) <= 3 * sigma && std::abs(fm - p) <= 3 * sigma;
  return {ssim_err <= 1e-8 && psnr_err <= 1e-8 && nway_ok && retrieval_ok,
          fmt("ssim err %.1e, psnr err %.1e,%s, retrieval %.4f/%.4f vs %.4f", ssim_err, psnr_err, nway_detail.c_str(),
              kf, fm, p)};
}

// ---------------------------------------------------------------------------
// 6 and 9. CLI pipeline.

const std::vector<std::string> kPipeline = {"synth", "pretrain-codecs", "train-pr", "train-sr",
                                            "infer", "fuse",            "eval",     "export-weights"};

void run_pipeline(const fs::path& home, const std::string& config, std::size_t workers, const std::string& tag) {
  for (const auto& cmd : kPipeline) {
    const auto t0 = std::chrono::steady_clock::now();
    std::vector<std::string> args = {"neuroclips", "--home", home.string(), "--workers", std::to_string(workers)};
    if (!config.empty()) args.insert(args.end(), {"--config", config});
    args.push_back(cmd);
    std::vector<const char*> argv;
    for (const auto& a : args) argv.push_back(a.c_str());
    std::ostringstream out, err;
    const int code = cli::run(int(argv.size()), argv.data(), out, err);
    std::cerr << "  [" << tag << "] " << cmd << " " << fmt("%.1f s", seconds_since(t0)) << "\n";
    if (code != cli::kExitOk) throw std::runtime_error(cmd + " exited " + std::to_string(code) + ": " + err.str());
  }
}

nlohmann::json last_line(const fs::path& report) {
  std::ifstream in(report);
  std::string line, last;
  while (std::getline(in, line)) last = line;
  return nlohmann::json::parse(last);
}

Verdict end_to_end(const fs::path& work, std::size_t workers) {
  const auto t0 = std::chrono::steady_clock::now();
  const fs::path home = work / "e2e";
  run_pipeline(home, "", workers, "6");
  const double secs = seconds_since(t0);
  const auto agg = last_line(home / "default/eval/report.jsonl").at("aggregate");
  const auto& p = agg.at("pipeline");
  const double acc = p.at("keyframe_class_accuracy"), chance = p.at("keyframe_class_chance");
  const double corr = p.at("blurry_correlation"), shuffled = p.at("blurry_correlation_shuffled");
  const double retrieval = agg.at("retrieval").at("fmri"), rchance = p.at("retrieval_chance");
  const bool ok = acc >= 3 * chance && corr - shuffled >= 0.05 && retrieval >= 10 * rchance && secs <= 1800.0;
  return {ok, fmt("keyframe acc %.3f (need %.3f), blurry corr %.3f vs shuffled %.3f, retrieval %.3f (need %.3f), "
                  "%.0f s",
                  acc, 3 * chance, corr, shuffled, retrieval, 10 * rchance, secs)};
}

const char* kReproConfig = R"(run_name: repro
seed: 11
frame_size: 32
n_voxels: 256
n_train: 96
n_test: 16
train_repeats: 1
test_repeats: 3
pr_epochs: 4
sr_phase1_epochs: 4
sr_phase2_epochs: 4
sr_phase1_batch: 32
sr_phase2_batch: 32
projector_epochs: 4
similarity_epochs: 6
similarity_pairs: 600
pool_size: 16
nway_repeats: 20
)";

std::map<std::string, std::string> read_tree(const fs::path& root) {
  std::map<std::string, std::string> files;
  for (const auto& e : fs::recursive_directory_iterator(root)) {
    if (!e.is_regular_file()) continue;
    std::ifstream f(e.path(), std::ios::binary);
    files[fs::relative(e.path(), root).generic_string()] = std::string(std::istreambuf_iterator<char>(f), {});
  }
  return files;
}

Verdict reproducibility(const fs::path& work, std::size_t workers) {
  const fs::path config = work / "repro.yaml";
  std::ofstream(config) << kReproConfig;
  // A different worker count on the second run: sharding must not change results.
  workers = std::max<std::size_t>(workers, 4);
  run_pipeline(work / "repro_a", config.string(), workers, "9a");
  run_pipeline(work / "repro_b", config.string(), 1, "9b");
  const auto a = read_tree(work / "repro_a/repro"), b = read_tree(work / "repro_b/repro");
  std::size_t manifests = 0, differing = 0;
  std::string first;
  for (const auto& [name, bytes] : a) {
    if (name.starts_with("manifests/") || name == "eval/report.jsonl") ++manifests;
    const auto it = b.find(name);
    if (it == b.end() || it->second != bytes) {
      if (first.empty()) first = name;
      ++differing;
    }
  }
  const bool ok = differing == 0 && a.size() == b.size() && manifests == kPipeline.size() + 1;
  return {ok, fmt("%zu files compared (%zu manifests and reports), workers %zu vs 1, %zu differ%s%s", a.size(),
                  manifests, workers, differing, first.empty() ? "" : ", first ", first.c_str())};
}

// ---------------------------------------------------------------------------
// 7. Fusion.

Tensor class_embedding(std::size_t k, Rng& rng) {
  Tensor e(Shape{16});
  for (double& v : e.vec()) v = rng.normal(0.0, 0.25);
  e[k] += 1.0;
  return e;
}

Verdict fusion_rules() {
  Rng rng(701);
  std::vector<Tensor> embs;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 512; ++i) labels.push_back(i % 8), embs.push_back(class_embedding(i % 8, rng));
  fusion::SimilarityConfig scfg;
  scfg.seed = 702;
  const auto clf = fusion::train_similarity_mlp(fusion::make_balanced_pairs(embs, labels, 4000, 703), scfg);

  const auto codec = codecs::LatentCodec::orthogonal(8, 704);
  const guidance::LinearGaussianDenoiser den(Tensor(Shape{16, 4, 8, 8}, 0.4), 0.2);
  const guidance::GuidanceConfig gcfg;
  auto make = [&](std::size_t cls, std::uint64_t seed) {
    Rng r(seed);
    guidance::Reconstruction rec;
    rec.keyframe.embedding = class_embedding(cls, r);
    rec.keyframe.class_id = cls;
    rec.inputs.blurry_latents = r.normal_tensor({16, 4, 8, 8}) * 0.2;
    rec.inputs.keyframe_latent = codec.encode(Tensor(Shape{8, 8, 3}, 0.1 * double(cls)));
    rec.inputs.seed = seed;
    rec.latents = guidance::generate_latents(rec.inputs, den, gcfg);
    rec.video.frames = codec.decode_clip(rec.latents);
    rec.video.fps = 8.0;
    rec.video.class_id = cls;
    return rec;
  };
  auto fuse = [&](const std::vector<guidance::Reconstruction>& clips) {
    return fusion::fuse_videos(clips, clf, den, codec, gcfg, {});
  };

  const auto same = fuse({make(2, 10), make(2, 11), make(2, 12)});
  bool three_ok = same.videos.size() == 1;
  if (three_ok) {
    const auto& v = same.videos[0].video;
    three_ok = v.n_frames() == 48 && v.fps == 8.0 && double(v.n_frames()) / v.fps == 6.0;
    for (std::size_t boundary : {16u, 32u}) {
      three_ok = three_ok && v.frame(boundary) == codec.decode(codec.encode(v.frame(boundary - 1)));
    }
  }

  // Random class sequences: no fusion across a classifier mismatch, chains of at most 3.
  std::size_t boundaries = 0, violations = 0, longest = 0;
  for (int trial = 0; trial < 10; ++trial) {
    std::vector<guidance::Reconstruction> clips;
    for (std::size_t i = 0; i < 8; ++i) clips.push_back(make(rng.index(3), 1000 + trial * 10 + i));
    const auto r = fuse(clips);
    for (const auto& b : r.boundaries) {
      ++boundaries;
      const bool mismatch =
          clf.probability(clips[b.left].keyframe.embedding, clips[b.left + 1].keyframe.embedding) <= clf.threshold();
      if (b.fused && mismatch) ++violations;
    }
    for (const auto& v : r.videos) longest = std::max(longest, v.members.size());
  }
  const auto aba = fuse({make(0, 20), make(5, 21), make(0, 22)});
  const bool aba_ok = aba.videos.size() == 3;
  return {three_ok && aba_ok && violations == 0 && longest <= 3,
          fmt("same-class triple %s, A-B-A %s, %zu/%zu boundaries fused across a mismatch, longest chain %zu",
              three_ok ? "48 frames / 6 s / exact boundaries" : "wrong", aba_ok ? "unfused" : "fused", violations,
              boundaries, longest)};
}

// ---------------------------------------------------------------------------
// 8. Ridge layer and voxel weights.

Verdict ridge() {
  Rng rng(801);
  const Tensor X = rng.normal_tensor({120, 16}), Wt = rng.normal_tensor({16, 4});
  Tensor Y(Shape{120, 4});
  for (std::size_t n = 0; n < 120; ++n)
    for (std::size_t q = 0; q < 4; ++q)
      for (std::size_t p = 0; p < 16; ++p) Y[n * 4 + q] += X[n * 16 + p] * Wt[p * 4 + q];
  double worst = 0.0;
  for (double lambda : {0.0, 0.5, 10.0}) {
    const auto trained = semantics::train_ridge_layer(X, Y, lambda);
    const auto exact = semantics::fit_ridge_closed_form(X, Y, lambda);
    worst = std::max(worst, norm2((trained.weight - exact.weight).span()) / norm2(exact.weight.span()));
  }

  data::WorldSpec world;
  world.n_voxels = 256;
  const auto enc = data::make_encoder(world);
  const std::size_t n = 300, fd = enc.feature_dim();
  Tensor Xv(Shape{n, world.n_voxels}), Yv(Shape{n, fd});
  for (std::size_t i = 0; i < n; ++i) {
    const auto f = data::clip_features(i % world.n_classes, data::sample_motion(rng), world, i);
    const Tensor v = data::encode_features(f, enc);
    for (std::size_t k = 0; k < world.n_voxels; ++k) Xv[i * world.n_voxels + k] = v[k] + rng.normal(0, world.noise_sigma);
    for (std::size_t k = 0; k < fd; ++k) Yv[i * fd + k] = f[k];
  }
  const auto w = semantics::export_voxel_weights(semantics::fit_ridge_closed_form(Xv, Yv, 10.0));
  std::vector<double> active, inactive;
  bool in_range = true;
  for (std::size_t k = 0; k < world.n_voxels; ++k) {
    in_range = in_range && w.weights[k] >= 0.0 && w.weights[k] <= 1.0;
    (enc.active[k] ? active : inactive).push_back(w.weights[k]);
  }
  const double p = stats::mann_whitney_greater_p(active, inactive);
  return {worst <= 1e-3 && in_range && p < 0.01,
          fmt("rel weight err %.1e, weights in [0,1] %s, active > inactive p = %.1e", worst, in_range ? "yes" : "no", p)};
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Acceptance criteria runner", "acceptance"};
  std::vector<int> only;
  std::string work_arg;
  bool keep = false;
  std::size_t workers = std::max(1u, std::thread::hardware_concurrency());
  app.add_option("--only", only, "run only these criteria (1-9)")->check(CLI::Range(1, 9));
  app.add_option("--work", work_arg, "directory for pipeline artifacts (default: a fresh temp directory)");
  app.add_flag("--keep", keep, "keep the artifact directory");
  app.add_option("--workers", workers, "worker threads for pipeline runs")->check(CLI::PositiveNumber);
  CLI11_PARSE(app, argc, argv);

  const fs::path work = work_arg.empty()
                            ? fs::temp_directory_path() / ("neuroclips_acceptance_" + std::to_string(::getpid()))
                            : fs::path(work_arg);
  fs::remove_all(work);
  fs::create_directories(work);

  const std::vector<std::pair<std::string, std::function<Verdict()>>> criteria = {
      {"gradient suite", gradients},
      {"alpha guidance", alpha_guidance},
      {"deterministic sampler", sampler},
      {"BiMixCo reduction", bimixco_identity},
      {"metric oracles", metric_oracles},
      {"end-to-end synthetic recovery", [&] { return end_to_end(work, workers); }},
      {"fusion", fusion_rules},
      {"ridge oracle and voxel weights", ridge},
      {"CLI reproducibility", [&] { return reproducibility(work, workers); }},
  };

  bool all = true;
  for (std::size_t i = 0; i < criteria.size(); ++i) {
    const int id = int(i) + 1;
    if (!only.empty() && std::find(only.begin(), only.end(), id) == only.end()) continue;
    Verdict v;
    try {
      v = criteria[i].second();
    } catch (const std::exception& e) {
      v = {false, std::string("error: ") + e.what()};
    }
    all = all && v.pass;
    std::cout << "criterion " << id << " " << (v.pass ? "PASS" : "FAIL") << "  " << criteria[i].first << ": "
              << v.detail << std::endl;
  }
  if (!keep) fs::remove_all(work);
  return all ? 0 : 1;
}
