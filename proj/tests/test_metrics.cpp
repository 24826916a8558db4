#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "oracles.hpp"
#include "neuroclips/core/error.hpp"
#include "neuroclips/metrics.hpp"

using namespace neuroclips;
using namespace neuroclips::metrics;

namespace {

using LD = long double;

using nc_test::ssim_oracle;

Tensor random_image(Rng& rng, std::size_t H, std::size_t W) {
  Tensor t(Shape{H, W, 3});
  for (std::size_t i = 0; i < t.numel(); ++i) t[i] = rng.uniform();
  return t;
}

// Correlated pair so SSIM values are spread away from 0.
std::pair<Tensor, Tensor> image_pair(Rng& rng) {
  const Tensor a = random_image(rng, 16, 16);
  Tensor b = a;
  const double noise = rng.uniform(0.0, 0.5);
  for (std::size_t i = 0; i < b.numel(); ++i) b[i] = std::clamp(b[i] + rng.normal(0.0, noise), 0.0, 1.0);
  return {a, b};
}

std::vector<double> random_probs(Rng& rng, std::size_t n) {
  std::vector<double> p(n);
  double s = 0.0;
  for (double& v : p) s += v = rng.uniform();
  for (double& v : p) v /= s;
  return p;
}

codecs::CodecBundle small_codecs() {
  data::WorldSpec world;
  world.frame_size = 16;
  Rng rng(6);
  std::vector<Tensor> frames;
  std::vector<std::size_t> labels;
  for (std::size_t i = 0; i < 64; ++i) {
    const auto clip = data::render_clip(i % world.n_classes, data::sample_motion(rng), world, world.infer_fps);
    frames.push_back(clip.frame(i % clip.n_frames()));
    labels.push_back(clip.class_id);
  }
  codecs::CodecBundle c{codecs::LatentCodec::orthogonal(16, 1), {}, {}};
  c.embedder = codecs::SemanticEmbedder::fit(frames, 1);
  c.classifier = codecs::FrameClassifier::fit(c.embedder, frames, labels, world.n_classes, 1);
  return c;
}

}  // namespace

TEST_CASE("ssim: identity, symmetry, brute-force oracle, errors") {
  Rng rng(1);
  double max_err = 0.0;
  for (int t = 0; t < 50; ++t) {
    const auto [a, b] = image_pair(rng);
    CHECK(std::abs(ssim(a, a) - 1.0) <= 1e-9);
    CHECK(std::abs(ssim(a, b) - ssim(b, a)) <= 1e-12);
    max_err = std::max(max_err, std::abs(ssim(a, b) - ssim_oracle(a, b)));
    CHECK(ssim(a, b) <= 1.0);
    CHECK(ssim(a, b) >= -1.0);
  }
  CHECK(max_err <= 1e-8);
  Tensor gray(Shape{12, 12}, 0.5);
  CHECK(ssim(gray, gray) == doctest::Approx(1.0));
  CHECK_THROWS_AS(ssim(random_image(rng, 16, 16), random_image(rng, 16, 12)), InvalidArgument);
  CHECK_THROWS_AS(ssim(random_image(rng, 8, 8), random_image(rng, 8, 8)), InvalidArgument);
}

TEST_CASE("psnr: cap, uniform offset, direct formula") {
  Rng rng(2);
  const Tensor a = random_image(rng, 16, 16);
  CHECK(psnr(a, a) == kPsnrCap);
  Tensor lo(Shape{16, 16, 3}, 0.3), hi(Shape{16, 16, 3}, 0.4);
  CHECK(std::abs(psnr(lo, hi) - 20.0) <= 1e-9);
  for (int t = 0; t < 50; ++t) {
    const auto [x, y] = image_pair(rng);
    const LD expect = nc_test::psnr_oracle(x, y);
    CHECK(std::abs(LD(psnr(x, y)) - expect) <= 1e-10L);
  }
  CHECK_THROWS_AS(psnr(a, Tensor(Shape{3})), InvalidArgument);
}

TEST_CASE("nway top-K: oracle classifier, ties, chance rate, errors") {
  Rng rng(3);
  for (auto [N, K] : {std::pair{2, 1}, {5, 1}, {8, 3}, {50, 1}, {50, 10}}) {
    std::vector<double> p(50, 0.0);
    p[17] = 1.0;
    CHECK(nway_topk(17, p, N, K, 100, 5) == 1.0);
  }
  const std::vector<double> flat(10, 0.1);
  CHECK(nway_topk(0, flat, 10, 1, 50, 1) == 1.0);
  CHECK(nway_topk(9, flat, 10, 1, 50, 1) == 0.0);
  const std::vector<double> hand = {0.1, 0.5, 0.4};
  CHECK(nway_topk(2, hand, 3, 1, 20, 1) == 0.0);
  CHECK(nway_topk(2, hand, 3, 2, 20, 1) == 1.0);
  CHECK(nway_topk(2, hand, 2, 1, 400, 9) == nway_topk(2, hand, 2, 1, 400, 9));

  // Uniform random classifier, 100 repeats x 200 trials.
  double rate = 0.0;
  for (int t = 0; t < 200; ++t) rate += nway_topk(0, random_probs(rng, 8), 2, 1, 100, derive_seed(4, {std::uint64_t(t)}));
  CHECK(std::abs(rate / 200.0 - 0.5) <= 0.03);

  // Expectation K / N within 3 sigma with independent trials.
  for (auto [N, K] : {std::pair{2, 1}, {10, 1}, {50, 1}}) {
    const std::size_t trials = 6000;
    double hits = 0.0;
    for (std::size_t t = 0; t < trials; ++t) {
      hits += nway_topk(rng.index(50), random_probs(rng, 50), N, K, 1, derive_seed(8, {t}));
    }
    const double p = double(K) / double(N);
    CHECK(std::abs(hits / double(trials) - p) <= 3.0 * std::sqrt(p * (1 - p) / double(trials)));
  }

  CHECK_THROWS_AS(nway_topk(0, flat, 1, 1, 10, 1), InvalidArgument);
  CHECK_THROWS_AS(nway_topk(0, flat, 11, 1, 10, 1), InvalidArgument);
  CHECK_THROWS_AS(nway_topk(0, flat, 3, 4, 10, 1), InvalidArgument);
}

TEST_CASE("clip-pcc") {
  std::vector<Tensor> constant(5, Tensor::from({0.3, -1.0, 2.0}));
  CHECK(std::abs(clip_pcc(constant) - 1.0) <= 1e-9);
  std::vector<Tensor> alternating;
  for (int i = 0; i < 6; ++i) alternating.push_back(i % 2 ? Tensor::from({0.0, 2.0}) : Tensor::from({3.0, 0.0}));
  CHECK(clip_pcc(alternating) == 0.0);

  const std::vector<Tensor> three = {Tensor::from({1, 2, 2}), Tensor::from({2, 0, 1}), Tensor::from({0, 3, 4})};
  // cos(e0, e1) = 4 / (3 sqrt5), cos(e1, e2) = 4 / (5 sqrt5)
  const double expect = 0.5 * (4.0 / (3.0 * std::sqrt(5.0)) + 4.0 / (5.0 * std::sqrt(5.0)));
  CHECK(std::abs(clip_pcc(three) - expect) <= 1e-12);
  // Pearson: centred e0 = (-2/3, 1/3, 1/3), e1 = (1, -1, 0), e2 = (-7/3, 2/3, 5/3)
  const double r01 = -1.0 / (std::sqrt(2.0 / 3.0) * std::sqrt(2.0));
  const double r12 = -3.0 / (std::sqrt(2.0) * std::sqrt(26.0 / 3.0));
  CHECK(std::abs(clip_pcc(three, PccMode::Pearson) - 0.5 * (r01 + r12)) <= 1e-12);
  CHECK_THROWS_AS(clip_pcc(std::vector<Tensor>{Tensor::from({1.0})}), InvalidArgument);
  CHECK(pcc_mode_from_string("pearson") == PccMode::Pearson);
  CHECK_THROWS_AS(pcc_mode_from_string("spearman"), InvalidArgument);
}

TEST_CASE("retrieval: exact codes, chance level on random embeddings, errors") {
  std::vector<Tensor> codes;
  for (std::size_t i = 0; i < 64; ++i) {
    Tensor e(Shape{64});
    e[i] = 1.0;
    codes.push_back(e);
  }
  const auto exact = retrieval_topk(codes, codes, 64, 1, 3);
  CHECK(exact.keyframe_retrieval == 1.0);
  CHECK(exact.fmri_retrieval == 1.0);

  Rng rng(4);
  double kf = 0.0, fm = 0.0;
  const std::size_t reruns = 50;
  for (std::size_t r = 0; r < reruns; ++r) {
    std::vector<Tensor> f, k;
    for (std::size_t i = 0; i < 1200; ++i) f.push_back(rng.normal_tensor({24})), k.push_back(rng.normal_tensor({24}));
    const auto res = retrieval_topk(f, k, 300, 4, r);
    kf += res.keyframe_retrieval;
    fm += res.fmri_retrieval;
  }
  const double p = 1.0 / 300.0, sigma = std::sqrt(p * (1 - p) / (1200.0 * double(reruns)));
  CHECK(std::abs(kf / double(reruns) - p) <= 3 * sigma);
  CHECK(std::abs(fm / double(reruns) - p) <= 3 * sigma);

  CHECK_THROWS_AS(retrieval_topk(codes, codes, 65, 1, 1), InvalidArgument);
  CHECK_THROWS_AS(retrieval_topk(codes, codes, 32, 4, 1), InvalidArgument);
  CHECK_THROWS_AS(retrieval_topk(codes, std::vector<Tensor>(codes.begin(), codes.end() - 1), 8, 1, 1), InvalidArgument);
}

TEST_CASE("evaluation report") {
  const auto codecs = small_codecs();
  const WorldClassifiers clf(codecs);
  data::WorldSpec world;
  world.frame_size = 16;
  Rng rng(5);
  std::vector<EvalSample> gt_vs_gt, noisy;
  for (std::size_t i = 0; i < 6; ++i) {
    const auto clip = data::render_clip(i % 8, data::sample_motion(rng), world, world.infer_fps);
    gt_vs_gt.push_back({clip.frames, clip.frames, clip.class_id});
    Tensor rec = clip.frames;
    for (std::size_t k = 0; k < rec.numel(); ++k) rec[k] = std::clamp(rec[k] + rng.normal(0, 0.05), 0.0, 1.0);
    noisy.push_back({rec, clip.frames, clip.class_id});
  }
  for (const auto& s : gt_vs_gt) {
    double total = 0.0;
    const Tensor p = clf.frame_probabilities(s.reconstruction.slice0(0));
    for (double v : p.vec()) total += v;
    CHECK(std::abs(total - 1.0) <= 1e-6);
    total = 0.0;
    const Tensor pv = clf.video_probabilities(s.reconstruction);
    for (double v : pv.vec()) total += v;
    CHECK(std::abs(total - 1.0) <= 1e-6);
  }

  EvalConfig cfg;
  cfg.seed = 11;
  const MetricReport ideal = eval_report(gt_vs_gt, clf, codecs.embedder, cfg);
  for (std::size_t i = 0; i < gt_vs_gt.size(); ++i) {
    CHECK(std::abs(ideal.samples[i].ssim - 1.0) <= 1e-9);
    CHECK(ideal.samples[i].psnr_db == kPsnrCap);
    CHECK(ideal.samples[i].clip_pcc == clip_pcc(gt_vs_gt[i].ground_truth, codecs.embedder));
  }
  CHECK(ideal.lines().size() == gt_vs_gt.size() + 1);

  std::vector<Tensor> fe, ke;
  for (std::size_t i = 0; i < 64; ++i) fe.push_back(rng.normal_tensor({8})), ke.push_back(rng.normal_tensor({8}));
  const auto dir = std::filesystem::temp_directory_path() / "nc_test_metrics";
  std::filesystem::create_directories(dir);
  auto bytes = [&](std::size_t workers) {
    EvalConfig c = cfg;
    c.workers = workers;
    const MetricReport r = eval_report(noisy, clf, codecs.embedder, c, std::pair{fe, ke});
    const auto path = dir / ("report_" + std::to_string(workers) + ".jsonl");
    r.write(path);
    std::ifstream f(path, std::ios::binary);
    std::stringstream ss;
    ss << f.rdbuf();
    return ss.str();
  };
  const std::string one = bytes(1);
  CHECK(one == bytes(1));
  CHECK(one == bytes(4));

  const MetricReport r = eval_report(noisy, clf, codecs.embedder, cfg, std::pair{fe, ke});
  for (const char* m : {"ssim", "psnr_db", "clip_pcc"}) {
    double s = 0.0;
    for (const auto& line : r.lines()) {
      if (line.contains(m)) s += line[m].get<double>();
    }
    CHECK(std::abs(r.aggregate["mean"][m].get<double>() - s / double(noisy.size())) <= 1e-12);
  }
  CHECK(r.aggregate.contains("retrieval"));
  const auto first = nlohmann::json::parse(one.substr(0, one.find('\n')));
  CHECK(first.contains("idx"));
  CHECK(first["nway"]["N"] == 2);

  auto misaligned = noisy;
  misaligned[2].reconstruction = misaligned[2].reconstruction.slice0(0);
  CHECK_THROWS_AS(eval_report(misaligned, clf, codecs.embedder, cfg), InvalidArgument);
  CHECK_THROWS_AS(eval_report({}, clf, codecs.embedder, cfg), InvalidArgument);
}
