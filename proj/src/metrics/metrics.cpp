#include "neuroclips/metrics.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <fstream>
#include <numeric>

#include "neuroclips/core/error.hpp"
#include "neuroclips/core/parallel.hpp"
#include "neuroclips/core/rng.hpp"
#include "neuroclips/core/stats.hpp"

namespace neuroclips::metrics {

namespace {

constexpr std::size_t kWindow = 11;
constexpr double kSigma = 1.5;
constexpr double kC1 = 0.01 * 0.01;
constexpr double kC2 = 0.03 * 0.03;

std::array<double, kWindow> gaussian_window() {
  std::array<double, kWindow> g{};
  double total = 0.0;
  for (std::size_t i = 0; i < kWindow; ++i) {
    const double d = double(i) - double(kWindow / 2);
    g[i] = std::exp(-d * d / (2.0 * kSigma * kSigma));
    total += g[i];
  }
  for (double& v : g) v /= total;
  return g;
}

// Valid-position separable filter of an H x W plane read with stride C.
std::vector<double> filter_valid(const std::vector<double>& plane, std::size_t H, std::size_t W) {
  static const auto g = gaussian_window();
  const std::size_t oh = H - kWindow + 1, ow = W - kWindow + 1;
  std::vector<double> rows(H * ow, 0.0), out(oh * ow, 0.0);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) s += g[k] * plane[i * W + j + k];
      rows[i * ow + j] = s;
    }
  for (std::size_t i = 0; i < oh; ++i)
    for (std::size_t j = 0; j < ow; ++j) {
      double s = 0.0;
      for (std::size_t k = 0; k < kWindow; ++k) s += g[k] * rows[(i + k) * ow + j];
      out[i * ow + j] = s;
    }
  return out;
}

}  // namespace

double ssim(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) throw InvalidArgument("ssim needs equal shapes, got " + shape_str(a.shape()) + " and " + shape_str(b.shape()));
  if (a.rank() != 2 && a.rank() != 3) throw InvalidArgument("ssim expects [H, W] or [H, W, C] frames");
  const std::size_t H = a.dim(0), W = a.dim(1), C = a.rank() == 3 ? a.dim(2) : 1;
  if (H < kWindow || W < kWindow) throw InvalidArgument("ssim needs frames of at least 11 x 11");
  double total = 0.0;
  std::size_t count = 0;
  std::vector<double> x(H * W), y(H * W), xx(H * W), yy(H * W), xy(H * W);
  for (std::size_t c = 0; c < C; ++c) {
    for (std::size_t p = 0; p < H * W; ++p) {
      x[p] = a[p * C + c];
      y[p] = b[p * C + c];
      xx[p] = x[p] * x[p];
      yy[p] = y[p] * y[p];
      xy[p] = x[p] * y[p];
    }
    const auto mx = filter_valid(x, H, W), my = filter_valid(y, H, W);
    const auto sxx = filter_valid(xx, H, W), syy = filter_valid(yy, H, W), sxy = filter_valid(xy, H, W);
    for (std::size_t p = 0; p < mx.size(); ++p) {
      const double vx = sxx[p] - mx[p] * mx[p], vy = syy[p] - my[p] * my[p], cxy = sxy[p] - mx[p] * my[p];
      total += ((2.0 * mx[p] * my[p] + kC1) * (2.0 * cxy + kC2)) /
               ((mx[p] * mx[p] + my[p] * my[p] + kC1) * (vx + vy + kC2));
    }
    count += mx.size();
  }
  return total / double(count);
}

double psnr(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape() || a.empty()) throw InvalidArgument("psnr needs equal non-empty shapes");
  double se = 0.0;
  for (std::size_t i = 0; i < a.numel(); ++i) se += (a[i] - b[i]) * (a[i] - b[i]);
  const double mse = se / double(a.numel());
  if (mse == 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(1.0 / mse));
}

double nway_topk(std::size_t gt_class, const std::vector<double>& probs, std::size_t N, std::size_t K,
                 std::size_t repeats, std::uint64_t seed) {
  if (N < 2) throw InvalidArgument("N-way test needs N >= 2");
  if (N > probs.size()) throw InvalidArgument("N exceeds the number of classes");
  if (K < 1 || K > N) throw InvalidArgument("K must lie in [1, N]");
  if (gt_class >= probs.size()) throw InvalidArgument("ground-truth class outside the probability vector");
  if (repeats == 0) throw InvalidArgument("N-way test needs at least one repeat");
  std::vector<std::size_t> others;
  for (std::size_t k = 0; k < probs.size(); ++k) {
    if (k != gt_class) others.push_back(k);
  }
  Rng rng(seed);
  std::size_t hits = 0;
  for (std::size_t r = 0; r < repeats; ++r) {
    // Partial Fisher-Yates: the first N - 1 entries are the distractors.
    for (std::size_t i = 0; i + 1 < N; ++i) std::swap(others[i], others[i + rng.index(others.size() - i)]);
    std::size_t better = 0;
    for (std::size_t i = 0; i + 1 < N; ++i) {
      const std::size_t k = others[i];
      better += probs[k] > probs[gt_class] || (probs[k] == probs[gt_class] && k < gt_class);
    }
    hits += better < K;
  }
  return double(hits) / double(repeats);
}

std::string to_string(PccMode m) { return m == PccMode::Cosine ? "cosine" : "pearson"; }

PccMode pcc_mode_from_string(const std::string& s) {
  if (s == "cosine") return PccMode::Cosine;
  if (s == "pearson") return PccMode::Pearson;
  throw InvalidArgument("unknown CLIP-pcc mode '" + s + "'");
}

double clip_pcc(const std::vector<Tensor>& e, PccMode mode) {
  if (e.size() < 2) throw InvalidArgument("CLIP-pcc needs at least two frames");
  double total = 0.0;
  for (std::size_t i = 0; i + 1 < e.size(); ++i) {
    total += mode == PccMode::Cosine ? cosine(e[i].span(), e[i + 1].span())
                                     : stats::pearson(e[i].vec(), e[i + 1].vec());
  }
  return total / double(e.size() - 1);
}

double clip_pcc(const Tensor& frames, const codecs::SemanticEmbedder& embedder, PccMode mode) {
  std::vector<Tensor> e;
  for (std::size_t f = 0; f < frames.dim(0); ++f) e.push_back(embedder.embed_image(frames.slice0(f)));
  return clip_pcc(e, mode);
}

RetrievalResult retrieval_topk(const std::vector<Tensor>& fmri, const std::vector<Tensor>& keys, std::size_t pool_size,
                               std::size_t partitions, std::uint64_t seed) {
  if (fmri.size() != keys.size()) throw InvalidArgument("retrieval needs aligned embedding sets");
  if (pool_size < 2 || partitions < 1) throw InvalidArgument("retrieval needs pool >= 2 and partitions >= 1");
  const std::size_t part = fmri.size() / partitions;
  if (pool_size > part) {
    throw InvalidArgument("pool of " + std::to_string(pool_size) + " exceeds partition size " + std::to_string(part));
  }
  Rng rng(seed);
  const auto order = rng.permutation(fmri.size());
  std::vector<double> unit_f(fmri.size()), unit_k(keys.size());
  for (std::size_t i = 0; i < fmri.size(); ++i) {
    unit_f[i] = std::max(norm2(fmri[i].span()), 1e-300);
    unit_k[i] = std::max(norm2(keys[i].span()), 1e-300);
  }
  auto sim = [&](std::size_t q, std::size_t c) { return dot(fmri[q].span(), keys[c].span()) / (unit_f[q] * unit_k[c]); };

  std::size_t hits_k = 0, hits_f = 0, queries = 0;
  for (std::size_t p = 0; p < partitions; ++p) {
    for (std::size_t start = p * part; start + pool_size <= (p + 1) * part; start += pool_size) {
      const std::vector<std::size_t> pool(order.begin() + long(start), order.begin() + long(start + pool_size));
      for (std::size_t q = 0; q < pool_size; ++q) {
        std::size_t best_k = 0, best_f = 0;
        double sk = -2.0, sf = -2.0;
        for (std::size_t c = 0; c < pool_size; ++c) {
          const double a = sim(pool[q], pool[c]);
          if (a > sk) sk = a, best_k = c;
          const double b = sim(pool[c], pool[q]);
          if (b > sf) sf = b, best_f = c;
        }
        hits_k += best_k == q;
        hits_f += best_f == q;
        ++queries;
      }
    }
  }
  return {double(hits_k) / double(queries), double(hits_f) / double(queries)};
}

Tensor WorldClassifiers::frame_probabilities(const Tensor& frame) const {
  return codecs_.classifier.probabilities(codecs_.embedder, frame);
}

Tensor WorldClassifiers::video_probabilities(const Tensor& frames) const {
  if (frames.rank() != 4 || frames.dim(0) == 0) throw InvalidArgument("video classifier expects [F, H, W, 3] frames");
  Tensor total = frame_probabilities(frames.slice0(0));
  for (std::size_t f = 1; f < frames.dim(0); ++f) total = total + frame_probabilities(frames.slice0(f));
  return total * (1.0 / double(frames.dim(0)));
}

// ---------------------------------------------------------------------------

std::vector<nlohmann::json> MetricReport::lines() const {
  std::vector<nlohmann::json> out;
  const std::size_t n = aggregate.at("protocol").at("nway_n"), k = aggregate.at("protocol").at("nway_k");
  for (const auto& s : samples) {
    out.push_back({{"idx", s.idx},
                   {"ssim", s.ssim},
                   {"psnr_db", s.psnr_db},
                   {"nway", {{"N", n}, {"K", k}, {"rate", s.nway_frame}}},
                   {"nway_video", {{"N", n}, {"K", k}, {"rate", s.nway_video}}},
                   {"clip_pcc", s.clip_pcc}});
  }
  out.push_back({{"aggregate", aggregate}});
  return out;
}

void MetricReport::write(const std::filesystem::path& path) const {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot write report " + path.string());
  for (const auto& line : lines()) f << line.dump() << '\n';
  if (!f) throw IoError("failed writing report " + path.string());
}

MetricReport eval_report(const std::vector<EvalSample>& samples, const ClassifierInterface& classifiers,
                         const codecs::SemanticEmbedder& embedder, const EvalConfig& cfg,
                         const std::optional<std::pair<std::vector<Tensor>, std::vector<Tensor>>>& retrieval) {
  if (samples.empty()) throw InvalidArgument("evaluation needs at least one sample");
  for (const auto& s : samples) {
    if (s.reconstruction.shape() != s.ground_truth.shape()) {
      throw InvalidArgument("reconstruction " + shape_str(s.reconstruction.shape()) + " is not aligned with ground truth " +
                            shape_str(s.ground_truth.shape()));
    }
  }
  MetricReport report;
  report.samples.resize(samples.size());
  parallel_for(samples.size(), cfg.workers, [&](std::size_t i) {
    const auto& s = samples[i];
    const std::size_t F = s.reconstruction.dim(0);
    SampleRecord r;
    r.idx = i;
    for (std::size_t f = 0; f < F; ++f) {
      const Tensor a = s.reconstruction.slice0(f), b = s.ground_truth.slice0(f);
      r.ssim += ssim(a, b);
      r.psnr_db += psnr(a, b);
      r.nway_frame += nway_topk(s.gt_class, classifiers.frame_probabilities(a).vec(), cfg.nway_n, cfg.nway_k,
                                cfg.repeats, derive_seed(cfg.seed, {stream::kEval, i, 0, f}));
    }
    r.ssim /= double(F);
    r.psnr_db /= double(F);
    r.nway_frame /= double(F);
    r.nway_video = nway_topk(s.gt_class, classifiers.video_probabilities(s.reconstruction).vec(), cfg.nway_n,
                             cfg.nway_k, cfg.repeats, derive_seed(cfg.seed, {stream::kEval, i, 1}));
    r.clip_pcc = clip_pcc(s.reconstruction, embedder, cfg.pcc_mode);
    report.samples[i] = r;
  });

  nlohmann::json means, stds;
  auto summarise = [&](const char* name, double SampleRecord::*field) {
    std::vector<double> v;
    for (const auto& r : report.samples) v.push_back(r.*field);
    means[name] = stats::mean(v);
    stds[name] = v.size() > 1 ? stats::stddev(v) : 0.0;
  };
  summarise("ssim", &SampleRecord::ssim);
  summarise("psnr_db", &SampleRecord::psnr_db);
  summarise("nway_frame", &SampleRecord::nway_frame);
  summarise("nway_video", &SampleRecord::nway_video);
  summarise("clip_pcc", &SampleRecord::clip_pcc);
  report.aggregate = {{"n_samples", samples.size()},
                      {"mean", means},
                      {"std", stds},
                      {"protocol",
                       {{"nway_n", cfg.nway_n},
                        {"nway_k", cfg.nway_k},
                        {"repeats", cfg.repeats},
                        {"pool_size", cfg.pool_size},
                        {"partitions", cfg.partitions},
                        {"pcc_mode", to_string(cfg.pcc_mode)}}},
                      {"seed", cfg.seed}};
  if (retrieval) {
    const auto r = retrieval_topk(retrieval->first, retrieval->second, cfg.pool_size, cfg.partitions,
                                  derive_seed(cfg.seed, {stream::kEval, 2}));
    report.aggregate["retrieval"] = {{"keyframe", r.keyframe_retrieval}, {"fmri", r.fmri_retrieval}};
  }
  return report;
}

}  // namespace neuroclips::metrics
