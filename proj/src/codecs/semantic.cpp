#include <algorithm>
#include <cmath>
#include <sstream>

#include "neuroclips/codecs.hpp"
#include "neuroclips/core/autodiff.hpp"
#include "neuroclips/core/error.hpp"
#include "neuroclips/core/hash.hpp"
#include "neuroclips/core/optim.hpp"
#include "neuroclips/core/rng.hpp"
#include "neuroclips/data.hpp"

namespace neuroclips::codecs {

namespace {

constexpr std::array<double, 3> kBackground = {0.1, 0.1, 0.12};
constexpr double kMaskScale = 0.3;
// Colour distances below this count as background, so codec noise spread
// over the canvas does not add foreground mass.
constexpr double kMaskFloor = 0.05;
constexpr std::size_t kGridSide = 4;
constexpr double kLocalWeight = 0.5;
constexpr std::array<double, 6> kRadialEdges = {0.0, 0.04, 0.08, 0.12, 0.16, 0.20};

double mask_value(const Tensor& f, std::size_t px) {
  double d2 = 0.0;
  for (std::size_t c = 0; c < 3; ++c) d2 += std::pow(f[px * 3 + c] - kBackground[c], 2);
  return std::clamp((std::sqrt(d2) - kMaskFloor) / (kMaskScale - kMaskFloor), 0.0, 1.0);
}

Tensor standardise(const Tensor& x, const Tensor& mean, const Tensor& sd) {
  Tensor out = x;
  const std::size_t d = mean.numel();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = (out[i] - mean[i % d]) / sd[i % d];
  return out;
}

void fit_moments(const std::vector<Tensor>& rows, std::size_t d, Tensor& mean, Tensor& sd) {
  mean = Tensor(Shape{d});
  sd = Tensor(Shape{d});
  double n = 0.0;
  for (const Tensor& r : rows)
    for (std::size_t i = 0; i < r.numel(); i += d) {
      for (std::size_t k = 0; k < d; ++k) mean[k] += r[i + k];
      n += 1.0;
    }
  mean *= 1.0 / n;
  for (const Tensor& r : rows)
    for (std::size_t i = 0; i < r.numel(); i += d)
      for (std::size_t k = 0; k < d; ++k) sd[k] += std::pow(r[i + k] - mean[k], 2);
  for (std::size_t k = 0; k < d; ++k) {
    sd[k] = std::sqrt(sd[k] / n);
    if (sd[k] < 1e-8) sd[k] = 1.0;
  }
}

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) {
    std::transform(w.begin(), w.end(), w.begin(), [](unsigned char ch) { return std::tolower(ch); });
    out.push_back(w);
  }
  return out;
}

}  // namespace

FrameDescriptors describe_frame(const Tensor& frame) {
  if (frame.rank() != 3 || frame.dim(2) != 3 || frame.dim(0) != frame.dim(1)) {
    throw InvalidArgument("expected a square [H, W, 3] frame, got " + shape_str(frame.shape()));
  }
  const std::size_t H = frame.dim(0);
  const double inv = 1.0 / static_cast<double>(H);
  FrameDescriptors d{Tensor(Shape{kGlobalFeatures}), Tensor(Shape{kTokens, 4})};

  double mass = 0.0, cx = 0.0, cy = 0.0;
  std::array<double, 3> colour{};
  std::vector<double> m(H * H);
  for (std::size_t i = 0; i < H; ++i)
    for (std::size_t j = 0; j < H; ++j) {
      const std::size_t px = i * H + j;
      m[px] = mask_value(frame, px);
      mass += m[px];
      cx += m[px] * (static_cast<double>(j) + 0.5) * inv;
      cy += m[px] * (static_cast<double>(i) + 0.5) * inv;
      for (std::size_t c = 0; c < 3; ++c) colour[c] += m[px] * frame[px * 3 + c];
    }

  if (mass > 1e-9) {
    cx /= mass;
    cy /= mass;
    double m20 = 0.0, m02 = 0.0, m11 = 0.0, r4 = 0.0;
    std::array<double, kRadialEdges.size()> radial{};
    for (std::size_t i = 0; i < H; ++i)
      for (std::size_t j = 0; j < H; ++j) {
        const double w = m[i * H + j];
        const double dx = (static_cast<double>(j) + 0.5) * inv - cx;
        const double dy = (static_cast<double>(i) + 0.5) * inv - cy;
        const double r2 = dx * dx + dy * dy;
        m20 += w * dx * dx;
        m02 += w * dy * dy;
        m11 += w * dx * dy;
        r4 += w * r2 * r2;
        const double r = std::sqrt(r2);
        std::size_t bin = 0;
        while (bin + 1 < kRadialEdges.size() && r >= kRadialEdges[bin + 1]) ++bin;
        radial[bin] += w;
      }
    for (std::size_t c = 0; c < 3; ++c) d.global[c] = colour[c] / mass;
    d.global[3] = std::sqrt(mass) * inv;
    d.global[4] = std::sqrt(m20 / mass);
    d.global[5] = std::sqrt(m02 / mass);
    d.global[6] = m11 / mass / (std::sqrt(m20 / mass) * std::sqrt(m02 / mass) + 1e-12);
    for (std::size_t b = 0; b < radial.size(); ++b) d.global[7 + b] = radial[b] / mass;
    const double r2_mean = (m20 + m02) / mass;
    d.global[13] = (r4 / mass) / (r2_mean * r2_mean + 1e-12);
  } else {
    for (std::size_t c = 0; c < 3; ++c) d.global[c] = kBackground[c];
  }

  const std::size_t cell = H / kGridSide;
  for (std::size_t a = 0; a < kGridSide; ++a)
    for (std::size_t b = 0; b < kGridSide; ++b) {
      std::array<double, 4> acc{};
      for (std::size_t i = a * cell; i < (a + 1) * cell; ++i)
        for (std::size_t j = b * cell; j < (b + 1) * cell; ++j) {
          const std::size_t px = i * H + j;
          acc[0] += m[px];
          for (std::size_t c = 0; c < 3; ++c) acc[1 + c] += frame[px * 3 + c];
        }
      const double n = static_cast<double>(cell * cell);
      for (std::size_t k = 0; k < 4; ++k) d.local[(a * kGridSide + b) * 4 + k] = acc[k] / n;
    }
  return d;
}

const std::vector<std::string>& vocabulary() {
  static const std::vector<std::string> v = [] {
    std::vector<std::string> words = {"a", "video", "of", "an", "object"};
    for (const auto& n : data::class_names()) words.push_back(n);
    return words;
  }();
  return v;
}

std::string caption_for_class(std::size_t class_id) {
  return "a video of a " + data::class_names().at(class_id);
}

SemanticEmbedder SemanticEmbedder::fit(const std::vector<Tensor>& frames, std::uint64_t seed) {
  if (frames.empty()) throw InvalidArgument("embedder fit needs at least one frame");
  std::vector<Tensor> globals, locals;
  for (const Tensor& f : frames) {
    auto d = describe_frame(f);
    globals.push_back(std::move(d.global));
    locals.push_back(std::move(d.local));
  }
  SemanticEmbedder e;
  fit_moments(globals, kGlobalFeatures, e.g_mean_, e.g_std_);
  fit_moments(locals, 4, e.l_mean_, e.l_std_);

  Rng rng(derive_seed(seed, {stream::kCodec, 1}));
  e.proj_global_ = rng.normal_tensor({kEmbedDim, kGlobalFeatures}, 1.0 / std::sqrt(double(kGlobalFeatures)));
  e.proj_local_ = rng.normal_tensor({kEmbedDim, 4}, 1.0 / 2.0);
  e.words_ = rng.normal_tensor({vocabulary().size(), kEmbedDim}, 1.0 / std::sqrt(double(kEmbedDim)));
  return e;
}

Tensor SemanticEmbedder::global_features(const Tensor& frame) const {
  return standardise(describe_frame(frame).global, g_mean_, g_std_);
}

Tensor SemanticEmbedder::embed_image(const Tensor& frame) const {
  const FrameDescriptors d = describe_frame(frame);
  const Tensor g = standardise(d.global, g_mean_, g_std_);
  const Tensor l = standardise(d.local, l_mean_, l_std_);
  Tensor shared(Shape{kEmbedDim});
  for (std::size_t o = 0; o < kEmbedDim; ++o)
    for (std::size_t k = 0; k < kGlobalFeatures; ++k) shared[o] += proj_global_[o * kGlobalFeatures + k] * g[k];
  Tensor out(Shape{kTokens, kEmbedDim});
  for (std::size_t t = 0; t < kTokens; ++t)
    for (std::size_t o = 0; o < kEmbedDim; ++o) {
      double acc = shared[o];
      for (std::size_t k = 0; k < 4; ++k) acc += kLocalWeight * proj_local_[o * 4 + k] * l[t * 4 + k];
      out[t * kEmbedDim + o] = acc;
    }
  return out;
}

Tensor SemanticEmbedder::embed_text(const std::string& caption) const {
  const auto words = split_words(caption);
  if (words.empty()) throw InvalidArgument("empty caption");
  const auto& vocab = vocabulary();
  Tensor out(Shape{kEmbedDim});
  for (const auto& w : words) {
    const auto it = std::find(vocab.begin(), vocab.end(), w);
    if (it == vocab.end()) throw InvalidArgument("unknown vocabulary token '" + w + "'");
    const auto row = static_cast<std::size_t>(it - vocab.begin());
    for (std::size_t o = 0; o < kEmbedDim; ++o) out[o] += words_[row * kEmbedDim + o];
  }
  out *= 1.0 / static_cast<double>(words.size());
  return out;
}

Checkpoint SemanticEmbedder::to_checkpoint() const {
  Checkpoint ck;
  ck.manifest = {{"kind", "semantic_embedder"}, {"tokens", kTokens}, {"dim", kEmbedDim}, {"vocabulary", vocabulary()}};
  ck.tensors = {{"g_mean", g_mean_},   {"g_std", g_std_},           {"l_mean", l_mean_}, {"l_std", l_std_},
                {"proj_global", proj_global_}, {"proj_local", proj_local_}, {"words", words_}};
  return ck;
}

SemanticEmbedder SemanticEmbedder::from_checkpoint(const Checkpoint& ck) {
  if (ck.manifest.at("vocabulary").get<std::vector<std::string>>() != vocabulary()) {
    throw CorruptFile("embedder vocabulary does not match this build");
  }
  SemanticEmbedder e;
  e.g_mean_ = ck.get("g_mean");
  e.g_std_ = ck.get("g_std");
  e.l_mean_ = ck.get("l_mean");
  e.l_std_ = ck.get("l_std");
  e.proj_global_ = ck.get("proj_global");
  e.proj_local_ = ck.get("proj_local");
  e.words_ = ck.get("words");
  return e;
}

FrameClassifier FrameClassifier::fit(const SemanticEmbedder& embedder, const std::vector<Tensor>& frames,
                                     const std::vector<std::size_t>& labels, std::size_t n_classes,
                                     std::uint64_t seed) {
  if (frames.size() != labels.size() || frames.empty()) throw InvalidArgument("classifier needs aligned frames and labels");
  const std::size_t n = frames.size();
  std::vector<Tensor> rows;
  for (const Tensor& f : frames) rows.push_back(embedder.global_features(f));
  const ad::Var x = ad::Var::constant(stack(rows));
  Tensor onehot(Shape{n, n_classes});
  for (std::size_t i = 0; i < n; ++i) onehot[i * n_classes + labels[i]] = -1.0 / static_cast<double>(n);

  Rng rng(derive_seed(seed, {stream::kInit, 100}));
  ParamSet params;
  ad::Var& w = params.add("weight", init_weight(rng, n_classes, kGlobalFeatures));
  ad::Var& b = params.add("bias", Tensor(Shape{n_classes}));
  Adam opt(params.all(), AdamConfig{0.05, 0.9, 0.999, 1e-8, 1e-4});
  for (int step = 0; step < 400; ++step) {
    opt.zero_grad();
    const ad::Var loss = ad::weighted_sum(ad::log_softmax_last(ad::linear(x, w, b)), onehot);
    ad::backward(loss);
    opt.step();
  }
  FrameClassifier c;
  c.weight_ = w.value();
  c.bias_ = b.value();
  return c;
}

Tensor FrameClassifier::probabilities(const SemanticEmbedder& embedder, const Tensor& frame) const {
  const Tensor g = embedder.global_features(frame);
  const std::size_t C = n_classes();
  Tensor logits(Shape{C});
  double mx = -1e300;
  for (std::size_t c = 0; c < C; ++c) {
    double acc = bias_[c];
    for (std::size_t k = 0; k < kGlobalFeatures; ++k) acc += weight_[c * kGlobalFeatures + k] * g[k];
    logits[c] = acc;
    mx = std::max(mx, acc);
  }
  double z = 0.0;
  for (double& l : logits.vec()) z += (l = std::exp(l - mx));
  logits *= 1.0 / z;
  return logits;
}

std::size_t FrameClassifier::predict(const SemanticEmbedder& embedder, const Tensor& frame) const {
  const Tensor p = probabilities(embedder, frame);
  return static_cast<std::size_t>(std::max_element(p.vec().begin(), p.vec().end()) - p.vec().begin());
}

std::string FrameClassifier::caption(const SemanticEmbedder& embedder, const Tensor& frame,
                                     double min_confidence) const {
  const Tensor p = probabilities(embedder, frame);
  const auto best = static_cast<std::size_t>(std::max_element(p.vec().begin(), p.vec().end()) - p.vec().begin());
  return p[best] < min_confidence ? std::string(kAbstainCaption) : caption_for_class(best);
}

Checkpoint FrameClassifier::to_checkpoint() const {
  Checkpoint ck;
  ck.manifest = {{"kind", "frame_classifier"}, {"n_classes", n_classes()}};
  ck.tensors = {{"weight", weight_}, {"bias", bias_}};
  return ck;
}

FrameClassifier FrameClassifier::from_checkpoint(const Checkpoint& ck) {
  FrameClassifier c;
  c.weight_ = ck.get("weight");
  c.bias_ = ck.get("bias");
  return c;
}

std::string CodecBundle::hash() const {
  Sha256 h;
  h.update(latent.to_checkpoint().content_hash());
  h.update(embedder.to_checkpoint().content_hash());
  h.update(classifier.to_checkpoint().content_hash());
  return h.hex();
}

void CodecBundle::save(const std::filesystem::path& dir) const {
  save_checkpoint(dir / "latent", latent.to_checkpoint());
  save_checkpoint(dir / "embedder", embedder.to_checkpoint());
  save_checkpoint(dir / "classifier", classifier.to_checkpoint());
}

CodecBundle CodecBundle::load(const std::filesystem::path& dir) {
  return {LatentCodec::from_checkpoint(load_checkpoint(dir / "latent")),
          SemanticEmbedder::from_checkpoint(load_checkpoint(dir / "embedder")),
          FrameClassifier::from_checkpoint(load_checkpoint(dir / "classifier"))};
}

}  // namespace neuroclips::codecs
