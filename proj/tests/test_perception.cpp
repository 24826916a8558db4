#include <cmath>
#include <limits>

#include "doctest.h"
#include "grad_check.hpp"
#include "neuroclips/core/error.hpp"
#include "neuroclips/core/stats.hpp"
#include "neuroclips/perception.hpp"

using namespace neuroclips;
using namespace neuroclips::perception;
using ad::Var;

namespace {

constexpr double kInf = std::numeric_limits<double>::infinity();

PrArchitecture tiny_arch(std::size_t n_frames = 3) {
  PrArchitecture a;
  a.n_voxels = 10;
  a.n_frames = n_frames;
  a.hidden = 6;
  a.code_dim = 5;
  a.channels = 2;
  a.coarse_size = 2;
  a.stages = {{2, 2}, {4, 1}};
  a.target_size = 4;
  return a;
}

// Row-wise softmax(q kᵀ / sqrt(c)) · v for small dense matrices stored row-major.
std::vector<double> attention_oracle(const std::vector<double>& tokens, std::size_t L, std::size_t c,
                                     const Tensor& wq, const Tensor& wk) {
  std::vector<double> q(L * c, 0.0), k(L * c, 0.0), out(L * c, 0.0);
  for (std::size_t l = 0; l < L; ++l)
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t i = 0; i < c; ++i) {
        q[l * c + o] += wq[o * c + i] * tokens[l * c + i];
        k[l * c + o] += wk[o * c + i] * tokens[l * c + i];
      }
  for (std::size_t a = 0; a < L; ++a) {
    std::vector<double> s(L);
    double mx = -1e300, z = 0.0;
    for (std::size_t b = 0; b < L; ++b) {
      double d = 0.0;
      for (std::size_t i = 0; i < c; ++i) d += q[a * c + i] * k[b * c + i];
      s[b] = d / std::sqrt(double(c));
      mx = std::max(mx, s[b]);
    }
    for (double& v : s) z += (v = std::exp(v - mx));
    for (std::size_t b = 0; b < L; ++b)
      for (std::size_t i = 0; i < c; ++i) out[a * c + i] += s[b] / z * tokens[b * c + i];
  }
  return out;
}

double sigmoid_oracle(double x) { return 1.0 / (1.0 + std::exp(-x)); }
double gelu_oracle(double x) { return 0.5 * x * (1.0 + std::erf(x / std::sqrt(2.0))); }

// Direct-loop evaluation of one temporal-upsampling stage.
Tensor stage_oracle(const Tensor& x, std::size_t batch, std::size_t n_frames, const ParamSet& p, std::size_t stage,
                    std::size_t factor) {
  auto get = [&](const std::string& name) { return p.get("stage" + std::to_string(stage) + "." + name).value(); };
  const std::size_t BN = x.dim(0), c = x.dim(1), h = x.dim(2), hw = h * h;
  const Tensor W = get("conv.w"), bias = get("conv.b");
  const double eta1 = sigmoid_oracle(get("eta1")[0]), eta2 = sigmoid_oracle(get("eta2")[0]);

  Tensor mixed(x.shape());
  for (std::size_t n = 0; n < BN; ++n) {
    std::vector<double> tokens(hw * c);
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t i = 0; i < h; ++i)
        for (std::size_t j = 0; j < h; ++j) {
          double acc = bias[o];
          for (std::size_t ci = 0; ci < c; ++ci)
            for (int di = -1; di <= 1; ++di)
              for (int dj = -1; dj <= 1; ++dj) {
                const long ii = long(i) + di, jj = long(j) + dj;
                if (ii < 0 || jj < 0 || ii >= long(h) || jj >= long(h)) continue;
                acc += W[((o * c + ci) * 3 + std::size_t(di + 1)) * 3 + std::size_t(dj + 1)] *
                       x[((n * c + ci) * h + std::size_t(ii)) * h + std::size_t(jj)];
              }
          tokens[(i * h + j) * c + o] = gelu_oracle(acc);
        }
    const auto spatial = attention_oracle(tokens, hw, c, get("spatial.wq"), get("spatial.wk"));
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t q = 0; q < hw; ++q) {
        const std::size_t at = (n * c + o) * hw + q;
        mixed[at] = eta1 * x[at] + (1.0 - eta1) * spatial[q * c + o];
      }
  }
  Tensor temporal(x.shape());
  for (std::size_t b = 0; b < batch; ++b)
    for (std::size_t q = 0; q < hw; ++q) {
      std::vector<double> seq(n_frames * c);
      for (std::size_t f = 0; f < n_frames; ++f)
        for (std::size_t o = 0; o < c; ++o) seq[f * c + o] = mixed[((b * n_frames + f) * c + o) * hw + q];
      const auto att = attention_oracle(seq, n_frames, c, get("temporal.wq"), get("temporal.wk"));
      for (std::size_t f = 0; f < n_frames; ++f)
        for (std::size_t o = 0; o < c; ++o)
          temporal[((b * n_frames + f) * c + o) * hw + q] = eta2 * seq[f * c + o] + (1.0 - eta2) * att[f * c + o];
    }
  const std::size_t H = h * factor;
  Tensor out(Shape{BN, c, H, H});
  for (std::size_t n = 0; n < BN; ++n)
    for (std::size_t o = 0; o < c; ++o)
      for (std::size_t i = 0; i < H; ++i)
        for (std::size_t j = 0; j < H; ++j)
          out[((n * c + o) * H + i) * H + j] = temporal[((n * c + o) * h + i / factor) * h + j / factor];
  return out;
}

// Direct evaluation of the PR loss for one [b, N_f, d] pair.
double pr_loss_oracle(const Tensor& ex, const Tensor& ey, double tau) {
  const std::size_t b = ex.dim(0), n = ex.dim(1), d = ex.numel() / (b * n);
  double mae = 0.0;
  for (std::size_t i = 0; i < ex.numel(); ++i) mae += std::abs(ex[i] - ey[i]);
  mae /= double(ex.numel());
  double con = 0.0;
  for (std::size_t s = 0; s < b; ++s) {
    auto sim = [&](const Tensor& u, std::size_t i, const Tensor& v, std::size_t j) {
      return cosine(std::span<const double>(u.data() + (s * n + i) * d, d),
                    std::span<const double>(v.data() + (s * n + j) * d, d)) / tau;
    };
    for (std::size_t j = 0; j < n; ++j) {
      double zx = 0.0, zy = 0.0;
      for (std::size_t k = 0; k < n; ++k) {
        zx += std::exp(sim(ex, j, ey, k));
        zy += std::exp(sim(ey, j, ex, k));
      }
      con -= (sim(ex, j, ey, j) - std::log(zx)) / (2.0 * double(n));
      con -= (sim(ey, j, ex, j) - std::log(zy)) / (2.0 * double(n));
    }
  }
  return mae + con / double(b);
}

}  // namespace

TEST_CASE("inception extension emits N_f codes") {
  PrArchitecture a = tiny_arch(6);
  PerceptionModel m(a, 3);
  Rng rng(1);
  const Var x = Var::constant(rng.normal_tensor({2, a.n_voxels}));
  const Var codes = m.inception_extend(x);
  CHECK(codes.shape() == Shape{2, 6, a.code_dim});
  CHECK_THROWS_AS(m.inception_extend(Var::constant(Tensor(Shape{2, a.n_voxels + 1}))), InvalidArgument);

  m.params().get("ext.w2").mutable_value().fill(0.0);
  m.params().get("ext.b2").mutable_value() = rng.normal_tensor({a.code_dim});
  const Tensor zeroed = m.inception_extend(x).value();
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t f = 0; f < 6; ++f)
      for (std::size_t k = 0; k < a.code_dim; ++k)
        CHECK(zeroed[(s * 6 + f) * a.code_dim + k] == m.params().get("ext.b2").value()[k]);
}

TEST_CASE("inception extension Jacobian matches finite differences") {
  PrArchitecture a = tiny_arch(6);
  PerceptionModel m(a, 4);
  Rng rng(2);
  Var x = Var::parameter(rng.normal_tensor({2, a.n_voxels}));
  const Tensor probe = rng.normal_tensor({2, 6, a.code_dim});
  std::vector<Var*> params = m.params().all();
  params.push_back(&x);
  const auto r = nc_test::check_gradients(params, [&] { return ad::weighted_sum(m.inception_extend(x), probe); });
  CHECK(r.rel_error <= 1e-4);
}

TEST_CASE("temporal attention: singleton, constant sequences, dense oracle") {
  Rng rng(5);
  const Tensor wq = rng.normal_tensor({3, 3}), wk = rng.normal_tensor({3, 3});
  const Var one = Var::constant(rng.normal_tensor({4, 1, 3}));
  CHECK(max_abs_diff(temporal_attention(one, Var::constant(wq), Var::constant(wk)).value(), one.value()) == 0.0);
  CHECK(temporal_attention_weights(one.value(), wq, wk)[0] == 1.0);

  Tensor flat(Shape{2, 5, 3});
  for (std::size_t s = 0; s < 2; ++s)
    for (std::size_t f = 0; f < 5; ++f)
      for (std::size_t k = 0; k < 3; ++k) flat[(s * 5 + f) * 3 + k] = double(s + 1) * (double(k) - 0.7);
  CHECK(max_abs_diff(temporal_attention(Var::constant(flat), Var::constant(wq), Var::constant(wk)).value(), flat) < 1e-14);

  const Tensor e = rng.normal_tensor({7, 6, 3}, 1.5);
  const Tensor got = temporal_attention(Var::constant(e), Var::constant(wq), Var::constant(wk)).value();
  for (std::size_t s = 0; s < 7; ++s) {
    const std::vector<double> seq(e.data() + s * 18, e.data() + (s + 1) * 18);
    const auto want = attention_oracle(seq, 6, 3, wq, wk);
    for (std::size_t i = 0; i < 18; ++i) CHECK(std::abs(got[s * 18 + i] - want[i]) <= 1e-10);
  }
  const Tensor w = temporal_attention_weights(e, wq, wk);
  for (std::size_t r = 0; r < 7 * 6; ++r) {
    double sum = 0.0;
    for (std::size_t k = 0; k < 6; ++k) sum += w[r * 6 + k];
    CHECK(std::abs(sum - 1.0) <= 1e-6);
  }

  // Permuting the pixel-batch axis permutes the output the same way.
  Rng prng(8);
  const auto perm = prng.permutation(7);
  Tensor permuted(e.shape());
  for (std::size_t s = 0; s < 7; ++s) permuted.set_slice0(s, e.slice0(perm[s]));
  const Tensor got_p = temporal_attention(Var::constant(permuted), Var::constant(wq), Var::constant(wk)).value();
  for (std::size_t s = 0; s < 7; ++s) CHECK(max_abs_diff(got_p.slice0(s), got.slice0(perm[s])) == 0.0);

  Tensor bad = e;
  bad[3] = std::nan("");
  CHECK_THROWS_AS(temporal_attention(Var::constant(bad), Var::constant(wq), Var::constant(wk)), NumericError);
}

TEST_CASE("temporal upsampling stage matches the direct-loop oracle, including the eta endpoints") {
  const PrArchitecture a = tiny_arch(3);
  PerceptionModel m(a, 6);
  Rng rng(9);
  const std::size_t batch = 2;
  const Tensor x = rng.normal_tensor({batch * 3, 2, 2, 2});

  for (double raw : {0.3, kInf, -kInf}) {
    for (std::size_t s = 0; s < 2; ++s) {
      m.params().get("stage" + std::to_string(s) + ".eta1").mutable_value()[0] = raw;
      m.params().get("stage" + std::to_string(s) + ".eta2").mutable_value()[0] = raw == 0.3 ? -1.1 : raw;
    }
    const Tensor got = m.stage_forward(0, Var::constant(x), batch).value();
    const Tensor want = stage_oracle(x, batch, 3, m.params(), 0, 2);
    CHECK(max_abs_diff(got, want) <= 1e-12);
    if (raw == kInf) {
      // eta = 1: both sublayer outputs are ignored; the stage is a pure upsample.
      CHECK(max_abs_diff(got, ad::upsample_nearest(Var::constant(x), 2).value()) == 0.0);
    }
  }

  // eta = 0 keeps only the sublayer path: changing the input through a
  // direction the sublayers cannot see is impossible, so compare to eta = 0.5
  // and confirm the outputs differ while matching the oracle above.
  m.params().get("stage0.eta1").mutable_value()[0] = -kInf;
  m.params().get("stage0.eta2").mutable_value()[0] = -kInf;
  const Tensor only_sub = m.stage_forward(0, Var::constant(x), batch).value();
  m.params().get("stage0.eta1").mutable_value()[0] = 0.0;
  m.params().get("stage0.eta2").mutable_value()[0] = 0.0;
  CHECK(max_abs_diff(only_sub, m.stage_forward(0, Var::constant(x), batch).value()) > 1e-6);

  PrArchitecture broken = a;
  broken.stages = {{2, 2}, {8, 1}};
  CHECK_THROWS_AS(PerceptionModel(broken, 0), ConfigError);
  broken.stages = {{2, 4}};
  CHECK_THROWS_AS(broken.validate(), ConfigError);
}

TEST_CASE("temporal upsampler gradients, including eta, match finite differences") {
  const PrArchitecture a = tiny_arch(3);
  PerceptionModel m(a, 10);
  Rng rng(11);
  for (std::size_t s = 0; s < 2; ++s) {
    m.params().get("stage" + std::to_string(s) + ".eta1").mutable_value()[0] = rng.normal();
    m.params().get("stage" + std::to_string(s) + ".eta2").mutable_value()[0] = rng.normal();
  }
  Var coarse = Var::parameter(rng.normal_tensor({2, 3, 2, 2, 2}));
  std::vector<Var*> params = m.params().all();
  params.push_back(&coarse);
  const auto r = nc_test::check_gradients(params, [&] { return ad::sum(m.temporal_upsample(coarse)); });
  CHECK(r.rel_error <= 1e-4);

  std::vector<Var*> etas;
  for (auto& [name, v] : m.params().items())
    if (name.find("eta") != std::string::npos) etas.push_back(&m.params().get(name));
  REQUIRE(etas.size() == 4);
  const auto re = nc_test::check_gradients(etas, [&] { return ad::sum(m.temporal_upsample(coarse)); });
  CHECK(re.rel_error <= 1e-4);
}

TEST_CASE("pr_loss: identities, oracle, gradients") {
  Rng rng(12);
  const Tensor single = rng.normal_tensor({3, 1, 2, 3, 3});
  CHECK(pr_loss(Var::constant(single), Var::constant(single), 0.07).item() == doctest::Approx(0.0).epsilon(1e-15));

  const Tensor same = rng.normal_tensor({1, 6, 2, 3, 3});
  const double got_same = pr_loss(Var::constant(same), Var::constant(same), 0.07).item();
  CHECK(std::abs(got_same - pr_loss_oracle(same, same, 0.07)) <= 1e-10);

  const Tensor ex = rng.normal_tensor({3, 4, 2, 2, 2}), ey = rng.normal_tensor({3, 4, 2, 2, 2});
  const double got = pr_loss(Var::constant(ex), Var::constant(ey), 0.5).item();
  CHECK(std::abs(got - pr_loss_oracle(ex, ey, 0.5)) <= 1e-10);
  CHECK(got >= 0.0);

  CHECK_THROWS_AS(pr_loss(Var::constant(ex), Var::constant(ey), 0.0), InvalidArgument);
  CHECK_THROWS_AS(pr_loss(Var::constant(ex), Var::constant(single), 0.1), InvalidArgument);

  Var px = Var::parameter(ex);
  Var py = Var::parameter(ey);
  const auto r = nc_test::check_gradients({&px, &py}, [&] { return pr_loss(px, py, 0.5); });
  CHECK(r.rel_error <= 1e-4);

  // Full model through the loss.
  const PrArchitecture a = tiny_arch(3);
  PerceptionModel m(a, 13);
  const Var fmri = Var::constant(rng.normal_tensor({2, a.n_voxels}));
  const Var target = Var::constant(rng.normal_tensor({2, 3, 2, 4, 4}));
  const auto rm = nc_test::check_gradients(m.params().all(), [&] { return pr_loss(target, m.forward(fmri), 0.07); });
  CHECK(rm.rel_error <= 1e-4);
}

namespace {

struct ToyData {
  std::vector<Tensor> fmri, targets, frames;
  codecs::LatentCodec codec = codecs::LatentCodec::orthogonal(16, 1);
};

ToyData toy_data(std::size_t n, std::uint64_t seed) {
  data::WorldSpec w;
  w.frame_size = 16;
  w.n_voxels = 96;
  w.seed = 5;
  const auto enc = data::make_encoder(w);
  ToyData d;
  Rng rng(seed);
  for (std::size_t i = 0; i < n; ++i) {
    const auto clip = data::render_clip(rng.index(w.n_classes), data::sample_motion(rng), w);
    d.fmri.push_back(data::simulate_fmri(clip, enc, w, w.noise_sigma, rng).voxels);
    d.targets.push_back(d.codec.encode_clip(clip.frames));
    d.frames.push_back(clip.frames);
  }
  return d;
}

PrArchitecture toy_arch() {
  PrArchitecture a;
  a.hidden = 32;
  a.code_dim = 16;
  a.coarse_size = 8;
  a.stages = {{8, 1}, {8, 2}};
  a.target_size = 16;
  return a;
}

double mean_frame_corr(const std::vector<Tensor>& recon, const std::vector<Tensor>& gt, std::size_t shift) {
  double total = 0.0;
  std::size_t count = 0;
  for (std::size_t i = 0; i < recon.size(); ++i) {
    const Tensor& g = gt[(i + shift) % gt.size()];
    for (std::size_t f = 0; f < recon[i].dim(0); ++f) {
      total += stats::pearson(recon[i].slice0(f).span(), g.slice0(f).span());
      ++count;
    }
  }
  return total / double(count);
}

}  // namespace

TEST_CASE("train_pr: overfit, validation descent, determinism, blurry recovery") {
  SUBCASE("two-clip overfit drops below 10% of the initial loss within 200 steps") {
    // The contrastive term cannot go below the InfoNCE value of the targets
    // against themselves, which is large when consecutive frames look alike.
    // Fast diagonal motion keeps that floor well under 10% of the start.
    data::WorldSpec w;
    w.n_voxels = 256;
    Rng rng(21);
    std::vector<Tensor> frames;
    for (int i = 0; i < 60; ++i) {
      const auto c = data::render_clip(rng.index(8), data::sample_motion(rng), w);
      for (std::size_t k = 0; k < c.n_frames(); ++k) frames.push_back(c.frame(k));
    }
    const auto codec = codecs::LatentCodec::fit(frames);
    const auto enc = data::make_encoder(w);
    const data::MotionParams motions[2] = {{0.3, 0.3, 0.15, 0.15}, {0.7, 0.4, -0.15, 0.12}};
    std::vector<Tensor> fmri, targets;
    for (std::size_t i = 0; i < 2; ++i) {
      const auto clip = data::render_clip(i * 3, motions[i], w);
      fmri.push_back(data::simulate_fmri(clip, enc, w, w.noise_sigma, rng).voxels);
      targets.push_back(codec.encode_clip(clip.frames));
    }
    PrArchitecture arch;
    arch.hidden = 32;
    arch.code_dim = 16;
    PrTrainConfig cfg;
    cfg.epochs = 200;
    cfg.batch_size = 2;
    cfg.lr = 3e-3;
    cfg.weight_decay = 0.0;
    const auto r = train_pr(fmri, targets, arch, cfg);
    MESSAGE("overfit loss " << r.validation_loss.front() << " -> " << r.validation_loss.back());
    CHECK(r.validation_loss.back() < 0.1 * r.validation_loss.front());
  }

  SUBCASE("validation loss strictly decreases over the first 10 epochs; reruns are identical") {
    const ToyData d = toy_data(48, 22);
    PrTrainConfig cfg;
    cfg.epochs = 10;
    cfg.batch_size = 16;
    cfg.seed = 3;
    const auto r1 = train_pr(d.fmri, d.targets, toy_arch(), cfg);
    for (std::size_t e = 1; e < r1.validation_loss.size(); ++e) CHECK(r1.validation_loss[e] < r1.validation_loss[e - 1]);
    const auto r2 = train_pr(d.fmri, d.targets, toy_arch(), cfg);
    CHECK(r1.model.to_checkpoint().content_hash() == r2.model.to_checkpoint().content_hash());
    CHECK(cfg.lr == 3e-4);
  }

  SUBCASE("trained model beats the shuffled baseline; untrained model does not") {
    const ToyData train = toy_data(160, 23);
    const ToyData test = toy_data(32, 24);
    PrTrainConfig cfg;
    cfg.epochs = 30;
    cfg.batch_size = 16;
    cfg.lr = 1e-3;
    auto r = train_pr(train.fmri, train.targets, toy_arch(), cfg);
    PrArchitecture arch = toy_arch();
    arch.n_voxels = 96;
    PerceptionModel untrained(arch, 99);

    std::vector<Tensor> trained_frames, random_frames;
    for (const Tensor& f : test.fmri) {
      const BlurryVideo v = reconstruct_blurry(r.model, test.codec, f);
      CHECK(v.frames.dim(0) == 6);
      CHECK(*std::min_element(v.frames.vec().begin(), v.frames.vec().end()) >= 0.0);
      CHECK(*std::max_element(v.frames.vec().begin(), v.frames.vec().end()) <= 1.0);
      trained_frames.push_back(v.frames);
      random_frames.push_back(reconstruct_blurry(untrained, test.codec, f).frames);
    }
    double shuffled = 0.0, shuffled_random = 0.0;
    for (std::size_t s = 1; s <= 5; ++s) {
      shuffled += mean_frame_corr(trained_frames, test.frames, s) / 5.0;
      shuffled_random += mean_frame_corr(random_frames, test.frames, s) / 5.0;
    }
    const double matched = mean_frame_corr(trained_frames, test.frames, 0);
    const double matched_random = mean_frame_corr(random_frames, test.frames, 0);
    MESSAGE("trained " << matched << " vs shuffled " << shuffled << "; untrained " << matched_random << " vs "
                       << shuffled_random);
    CHECK(matched > shuffled + 0.05);
    CHECK(std::abs(matched_random - shuffled_random) < 0.05);
  }
}

TEST_CASE("perception checkpoints round-trip") {
  const PrArchitecture a = tiny_arch(3);
  PerceptionModel m(a, 30);
  PerceptionModel back = PerceptionModel::from_checkpoint(m.to_checkpoint());
  Rng rng(1);
  const Tensor x = rng.normal_tensor({a.n_voxels});
  CHECK(max_abs_diff(m.predict(x), back.predict(x)) == 0.0);
}
