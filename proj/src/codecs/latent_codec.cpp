#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "neuroclips/codecs.hpp"
#include "neuroclips/core/error.hpp"
#include "neuroclips/core/rng.hpp"

namespace neuroclips::codecs {

namespace {

constexpr std::size_t kTrainedPatch = 4;
constexpr std::size_t kTrainedRadius = 1;
constexpr double kDecoderRidge = 1e-8;

void check_frame(const Tensor& frame, std::size_t size) {
  if (frame.shape() != Shape{size, size, 3}) {
    throw InvalidArgument("frame shape " + shape_str(frame.shape()) + " does not match codec input [" +
                          std::to_string(size) + "," + std::to_string(size) + ",3]");
  }
}

}  // namespace

std::string to_string(CodecKind k) { return k == CodecKind::Orthogonal ? "orthogonal" : "trained"; }

CodecKind codec_kind_from_string(const std::string& s) {
  if (s == "orthogonal") return CodecKind::Orthogonal;
  if (s == "trained") return CodecKind::Trained;
  throw InvalidArgument("unknown codec variant '" + s + "' (expected orthogonal or trained)");
}

LatentCodec LatentCodec::orthogonal(std::size_t frame_size, std::uint64_t seed, double latent_scale) {
  if (latent_scale <= 0.0) throw InvalidArgument("latent_scale must be positive");
  Rng rng(derive_seed(seed, {stream::kCodec, 0}));
  Eigen::Matrix4d g;
  for (int i = 0; i < 4; ++i)
    for (int j = 0; j < 4; ++j) g(i, j) = rng.normal();
  const Eigen::Matrix4d q = g.householderQr().householderQ();

  LatentCodec c;
  c.kind_ = CodecKind::Orthogonal;
  c.frame_size_ = frame_size;
  c.patch_ = 1;
  c.radius_ = 0;
  c.latent_scale_ = latent_scale;
  c.mean_ = Tensor(Shape{3});
  c.encoder_ = Tensor(Shape{kLatentChannels, 3});
  c.decoder_ = Tensor(Shape{3, kLatentChannels + 1});
  for (std::size_t k = 0; k < kLatentChannels; ++k)
    for (std::size_t ch = 0; ch < 3; ++ch) {
      c.encoder_[k * 3 + ch] = q(int(k), int(ch));
      c.decoder_[ch * (kLatentChannels + 1) + k] = q(int(k), int(ch));
    }
  return c;
}

LatentCodec LatentCodec::fit(const std::vector<Tensor>& frames, double latent_scale) {
  if (frames.empty()) throw InvalidArgument("codec fit needs at least one frame");
  if (latent_scale <= 0.0) throw InvalidArgument("latent_scale must be positive");
  const std::size_t H = frames.front().dim(0);
  if (H % kTrainedPatch != 0) throw InvalidArgument("frame size must be a multiple of the patch size");
  const std::size_t p = kTrainedPatch;
  const std::size_t P = p * p * 3;
  const std::size_t h = H / p;

  auto patch_at = [&](const Tensor& f, std::size_t i, std::size_t j, Eigen::VectorXd& out) {
    std::size_t q = 0;
    for (std::size_t dy = 0; dy < p; ++dy)
      for (std::size_t dx = 0; dx < p; ++dx)
        for (std::size_t ch = 0; ch < 3; ++ch) out(long(q++)) = f[((i * p + dy) * H + (j * p + dx)) * 3 + ch];
  };

  Eigen::VectorXd mean = Eigen::VectorXd::Zero(long(P));
  Eigen::MatrixXd second = Eigen::MatrixXd::Zero(long(P), long(P));
  Eigen::VectorXd v(static_cast<long>(P));
  double count = 0.0;
  for (const Tensor& f : frames) {
    check_frame(f, H);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < h; ++j) {
        patch_at(f, i, j, v);
        mean += v;
        second.selfadjointView<Eigen::Lower>().rankUpdate(v);
        count += 1.0;
      }
  }
  mean /= count;
  Eigen::MatrixXd cov = second.selfadjointView<Eigen::Lower>();
  cov = cov / count - mean * mean.transpose();
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);

  LatentCodec c;
  c.kind_ = CodecKind::Trained;
  c.frame_size_ = H;
  c.patch_ = p;
  c.radius_ = kTrainedRadius;
  c.latent_scale_ = latent_scale;
  c.mean_ = Tensor(Shape{P});
  for (std::size_t q = 0; q < P; ++q) c.mean_[q] = mean(long(q));
  c.encoder_ = Tensor(Shape{kLatentChannels, P});
  for (std::size_t k = 0; k < kLatentChannels; ++k) {
    Eigen::VectorXd u = eig.eigenvectors().col(long(P - 1 - k));
    Eigen::Index arg;
    u.cwiseAbs().maxCoeff(&arg);
    if (u(arg) < 0) u = -u;
    for (std::size_t q = 0; q < P; ++q) c.encoder_[k * P + q] = u(long(q));
  }

  // Decoder: least squares from the latent neighbourhood (plus bias) to the patch.
  const std::size_t n_side = 2 * c.radius_ + 1;
  const std::size_t U = n_side * n_side * kLatentChannels + 1;
  c.decoder_ = Tensor(Shape{P, U});
  c.latent_scale_ = 1.0;
  Eigen::MatrixXd uu = Eigen::MatrixXd::Zero(long(U), long(U));
  Eigen::MatrixXd pu = Eigen::MatrixXd::Zero(long(P), long(U));
  Eigen::VectorXd u(static_cast<long>(U));
  for (const Tensor& f : frames) {
    const Tensor z = c.encode(f);
    for (std::size_t i = 0; i < h; ++i)
      for (std::size_t j = 0; j < h; ++j) {
        std::size_t q = 0;
        for (std::size_t a = 0; a < n_side; ++a)
          for (std::size_t b = 0; b < n_side; ++b) {
            const long ii = std::clamp(long(i) + long(a) - long(c.radius_), 0L, long(h) - 1);
            const long jj = std::clamp(long(j) + long(b) - long(c.radius_), 0L, long(h) - 1);
            for (std::size_t k = 0; k < kLatentChannels; ++k) u(long(q++)) = z[(k * h + std::size_t(ii)) * h + std::size_t(jj)];
          }
        u(long(q)) = 1.0;
        patch_at(f, i, j, v);
        uu.selfadjointView<Eigen::Lower>().rankUpdate(u);
        pu.noalias() += v * u.transpose();
      }
  }
  Eigen::MatrixXd full = uu.selfadjointView<Eigen::Lower>();
  full += kDecoderRidge * count * Eigen::MatrixXd::Identity(long(U), long(U));
  const Eigen::MatrixXd d = full.ldlt().solve(pu.transpose()).transpose();
  for (std::size_t q = 0; q < P; ++q)
    for (std::size_t k = 0; k < U; ++k) c.decoder_[q * U + k] = d(long(q), long(k));
  c.latent_scale_ = latent_scale;
  return c;
}

Shape LatentCodec::latent_shape() const {
  const std::size_t h = frame_size_ / patch_;
  return {kLatentChannels, h, h};
}

Tensor LatentCodec::encode(const Tensor& frame) const {
  check_frame(frame, frame_size_);
  const std::size_t H = frame_size_, p = patch_, h = H / p, P = p * p * 3;
  Tensor z(latent_shape());
  std::vector<double> patch(P);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      std::size_t q = 0;
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t ch = 0; ch < 3; ++ch, ++q) patch[q] = frame[((i * p + dy) * H + (j * p + dx)) * 3 + ch] - mean_[q];
      for (std::size_t k = 0; k < kLatentChannels; ++k) {
        double acc = 0.0;
        const double* row = encoder_.data() + k * P;
        for (std::size_t q2 = 0; q2 < P; ++q2) acc += row[q2] * patch[q2];
        z[(k * h + i) * h + j] = latent_scale_ * acc;
      }
    }
  return z;
}

Tensor LatentCodec::decode(const Tensor& latent) const {
  if (latent.shape() != latent_shape()) {
    throw InvalidArgument("latent shape " + shape_str(latent.shape()) + " does not match codec latent " +
                          shape_str(latent_shape()));
  }
  const std::size_t H = frame_size_, p = patch_, h = H / p;
  const std::size_t n_side = 2 * radius_ + 1;
  const std::size_t U = n_side * n_side * kLatentChannels + 1;
  Tensor frame(Shape{H, H, 3});
  std::vector<double> u(U);
  for (std::size_t i = 0; i < h; ++i)
    for (std::size_t j = 0; j < h; ++j) {
      std::size_t q = 0;
      for (std::size_t a = 0; a < n_side; ++a)
        for (std::size_t b = 0; b < n_side; ++b) {
          const auto ii = std::size_t(std::clamp(long(i) + long(a) - long(radius_), 0L, long(h) - 1));
          const auto jj = std::size_t(std::clamp(long(j) + long(b) - long(radius_), 0L, long(h) - 1));
          for (std::size_t k = 0; k < kLatentChannels; ++k) u[q++] = latent[(k * h + ii) * h + jj] / latent_scale_;
        }
      u[q] = 1.0;
      std::size_t out = 0;
      for (std::size_t dy = 0; dy < p; ++dy)
        for (std::size_t dx = 0; dx < p; ++dx)
          for (std::size_t ch = 0; ch < 3; ++ch, ++out) {
            const double* row = decoder_.data() + out * U;
            double acc = 0.0;
            for (std::size_t k = 0; k < U; ++k) acc += row[k] * u[k];
            frame[((i * p + dy) * H + (j * p + dx)) * 3 + ch] = std::clamp(acc, 0.0, 1.0);
          }
    }
  return frame;
}

Tensor LatentCodec::encode_clip(const Tensor& frames) const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < frames.dim(0); ++i) out.push_back(encode(frames.slice0(i)));
  return stack(out);
}

Tensor LatentCodec::decode_clip(const Tensor& latents) const {
  std::vector<Tensor> out;
  for (std::size_t i = 0; i < latents.dim(0); ++i) out.push_back(decode(latents.slice0(i)));
  return stack(out);
}

Checkpoint LatentCodec::to_checkpoint() const {
  Checkpoint ck;
  ck.manifest = {{"kind", "latent_codec"},
                 {"variant", to_string(kind_)},
                 {"frame_size", frame_size_},
                 {"patch", patch_},
                 {"radius", radius_},
                 {"latent_scale", latent_scale_}};
  ck.tensors = {{"mean", mean_}, {"encoder", encoder_}, {"decoder", decoder_}};
  return ck;
}

LatentCodec LatentCodec::from_checkpoint(const Checkpoint& ck) {
  LatentCodec c;
  c.kind_ = codec_kind_from_string(ck.manifest.at("variant").get<std::string>());
  c.frame_size_ = ck.manifest.at("frame_size").get<std::size_t>();
  c.patch_ = ck.manifest.at("patch").get<std::size_t>();
  c.radius_ = ck.manifest.at("radius").get<std::size_t>();
  c.latent_scale_ = ck.manifest.at("latent_scale").get<double>();
  c.mean_ = ck.get("mean");
  c.encoder_ = ck.get("encoder");
  c.decoder_ = ck.get("decoder");
  return c;
}

}  // namespace neuroclips::codecs
