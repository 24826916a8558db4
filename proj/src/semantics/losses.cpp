#include <Eigen/Dense>
#include <algorithm>
#include <cmath>

#include "neuroclips/core/error.hpp"
#include "neuroclips/core/hash.hpp"
#include "neuroclips/semantics.hpp"

namespace neuroclips::semantics {

using ad::Var;

namespace {

using Mat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

Mat to_mat(const Tensor& t) {
  Mat m(static_cast<long>(t.dim(0)), static_cast<long>(t.numel() / t.dim(0)));
  std::copy(t.data(), t.data() + t.numel(), m.data());
  return m;
}

Tensor from_mat(const Mat& m) {
  Tensor t(Shape{static_cast<std::size_t>(m.rows()), static_cast<std::size_t>(m.cols())});
  std::copy(m.data(), m.data() + m.size(), t.data());
  return t;
}

void check_design(const Tensor& x, const Tensor& y, double lambda) {
  if (lambda < 0.0) throw InvalidArgument("ridge penalty must be non-negative");
  if (x.rank() != 2 || y.rank() != 2 || x.dim(0) != y.dim(0) || x.numel() == 0 || y.numel() == 0) {
    throw InvalidArgument("ridge expects X [n, p] and Y [n, q], got " + shape_str(x.shape()) + " and " +
                          shape_str(y.shape()));
  }
}

Var flatten_rows(const Var& v) {
  const std::size_t b = v.shape().at(0);
  return ad::reshape(v, {b, v.value().numel() / b});
}

// [b, b] matrix of cosine similarities sim(a_i, c_k) / tau.
Var similarity(const Var& a, const Var& c, double tau) {
  return ad::scale(ad::matmul(ad::normalize_last(flatten_rows(a)), ad::transpose2d(ad::normalize_last(flatten_rows(c)))),
                   1.0 / tau);
}

void check_batch(const Var& a, const Var& c, double tau, const char* what) {
  if (tau <= 0.0) throw InvalidArgument(std::string(what) + ": temperature must be positive");
  if (a.shape().empty() || c.shape().empty() || a.shape()[0] != c.shape()[0] || a.shape()[0] == 0) {
    throw InvalidArgument(std::string(what) + ": batches are not aligned, " + shape_str(a.shape()) + " vs " +
                          shape_str(c.shape()));
  }
}

}  // namespace

Tensor ridge_fit_oracle(const Tensor& x, const Tensor& y, double lambda) {
  check_design(x, y, lambda);
  const Mat X = to_mat(x), Y = to_mat(y);
  Eigen::MatrixXd gram = X.transpose() * X;
  gram.diagonal().array() += lambda;
  const Eigen::LLT<Eigen::MatrixXd> llt(gram);
  if (llt.info() != Eigen::Success || llt.rcond() < 1e-14) {
    throw SingularSystem("ridge normal equations are singular (lambda = " + std::to_string(lambda) + ")");
  }
  return from_mat(llt.solve(Eigen::MatrixXd(X.transpose() * Y)));
}

Tensor ridge_apply(const Tensor& fmri, const RidgeLayer& layer) {
  if (fmri.numel() != layer.in_dim()) {
    throw InvalidArgument("ridge layer expects " + std::to_string(layer.in_dim()) + " inputs, got " +
                          std::to_string(fmri.numel()));
  }
  Tensor out = layer.bias;
  const std::size_t p = layer.in_dim();
  for (std::size_t o = 0; o < layer.out_dim(); ++o) {
    out[o] += dot(std::span<const double>(layer.weight.data() + o * p, p), fmri.span());
  }
  return out;
}

RidgeLayer fit_ridge_closed_form(const Tensor& x, const Tensor& y, double lambda) {
  const Mat w = to_mat(ridge_fit_oracle(x, y, lambda)).transpose();
  return {from_mat(w), Tensor(Shape{static_cast<std::size_t>(w.rows())}), lambda};
}

RidgeLayer train_ridge_layer(const Tensor& x, const Tensor& y, double lambda, const RidgeTrainConfig& config) {
  check_design(x, y, lambda);
  const Mat X = to_mat(x);
  const Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(Eigen::MatrixXd(X.transpose() * X),
                                                           Eigen::EigenvaluesOnly);
  // The loss Hessian is 2 (XᵀX + λI); a 1/L step is the largest monotone one.
  const double step = 1.0 / (2.0 * (eig.eigenvalues().maxCoeff() + lambda));

  const Var xv = Var::constant(x), yv = Var::constant(y);
  Var w = Var::parameter(Tensor(Shape{y.dim(1), x.dim(1)}));
  for (std::size_t it = 0; it < config.steps; ++it) {
    w.zero_grad();
    const Var resid = ad::sub(ad::linear(xv, w, Var()), yv);
    const Var loss = ad::add(ad::sum(ad::square(resid)), ad::scale(ad::sum(ad::square(w)), lambda));
    if (!std::isfinite(loss.item())) throw NumericError("ridge training diverged at step " + std::to_string(it));
    ad::backward(loss);
    Tensor& value = w.mutable_value();
    const double before = norm2(value.span());
    const Tensor delta = w.grad() * (-step);
    value += delta;
    if (norm2(delta.span()) <= config.tolerance * std::max(before, 1e-300)) break;
  }
  return {w.value(), Tensor(Shape{y.dim(1)}), lambda};
}

MixedBatch mixco_mix(const Tensor& batch, const BetaParams& beta, Rng& rng) {
  if (batch.rank() < 1 || batch.dim(0) < 2) throw InvalidArgument("MixCo needs a batch of at least two samples");
  if (beta.a <= 0.0 || beta.b <= 0.0) throw InvalidArgument("Beta parameters must be positive");
  const std::size_t b = batch.dim(0);
  MixedBatch out;
  for (std::size_t c = 0; c < b; ++c) {
    const std::size_t partner = (c + 1 + rng.index(b - 1)) % b;
    out.pairs.push_back({partner, rng.beta(beta.a, beta.b)});
  }
  out.mixed = apply_mix(batch, out.pairs);
  return out;
}

Tensor apply_mix(const Tensor& batch, const std::vector<MixPair>& pairs) {
  const std::size_t b = batch.dim(0);
  if (pairs.size() != b) throw ContractViolation("one mix pair per batch row is required");
  Tensor out(batch.shape());
  for (std::size_t c = 0; c < b; ++c) {
    const auto [m, lam] = pairs[c];
    if (m >= b) throw ContractViolation("mix partner " + std::to_string(m) + " outside batch of " + std::to_string(b));
    out.set_slice0(c, batch.slice0(c) * lam + batch.slice0(m) * (1.0 - lam));
  }
  return out;
}

Var bimixco_loss(const Var& mixed, const Var& keyframes, const std::vector<MixPair>& pairs, double tau) {
  check_batch(mixed, keyframes, tau, "BiMixCo");
  const std::size_t b = mixed.shape()[0];
  if (pairs.size() != b) throw ContractViolation("BiMixCo needs one mix pair per batch row");
  const double w = -1.0 / (2.0 * static_cast<double>(b));
  // rows[i][k]: weight on log softmax_k sim(Y*_i, X_k); cols[j][l]: on log softmax_l sim(Y*_l, X_j).
  Tensor rows(Shape{b, b}), cols(Shape{b, b});
  for (std::size_t i = 0; i < b; ++i) {
    const auto [m, lam] = pairs[i];
    if (m >= b || m == i) throw ContractViolation("invalid mix partner " + std::to_string(m) + " for row " + std::to_string(i));
    if (!(lam >= 0.0 && lam <= 1.0)) throw ContractViolation("mix weight outside [0, 1]");
    rows[i * b + i] += w * lam;
    rows[i * b + m] += w * (1.0 - lam);
    cols[i * b + i] += w * lam;
  }
  for (std::size_t l = 0; l < b; ++l) {
    const std::size_t j = pairs[l].partner;
    cols[j * b + l] += w * (1.0 - pairs[j].lambda);
  }
  const Var sim = similarity(mixed, keyframes, tau);
  return ad::add(ad::weighted_sum(ad::log_softmax_last(sim), rows),
                 ad::weighted_sum(ad::log_softmax_last(ad::transpose2d(sim)), cols));
}

Var prior_loss(const Var& predicted, const Var& target) {
  if (predicted.shape() != target.shape()) {
    throw InvalidArgument("prior loss shapes differ: " + shape_str(predicted.shape()) + " vs " +
                          shape_str(target.shape()));
  }
  return ad::mean(ad::square(ad::sub(predicted, target)));
}

Var reftm_loss(const Var& projected, const Var& text, double tau) {
  check_batch(projected, text, tau, "Reftm");
  const std::size_t b = projected.shape()[0];
  Tensor diag(Shape{b, b});
  for (std::size_t i = 0; i < b; ++i) diag[i * b + i] = -1.0 / (2.0 * static_cast<double>(b));
  const Var sim = similarity(projected, text, tau);
  return ad::add(ad::weighted_sum(ad::log_softmax_last(sim), diag),
                 ad::weighted_sum(ad::log_softmax_last(ad::transpose2d(sim)), diag));
}

Var sr_total_loss(const Var& bimixco, const Var& prior, const Var& reftm, const LossWeights& w) {
  if (w.delta < 0.0 || w.mu < 0.0) throw InvalidArgument("loss coefficients must be non-negative");
  return ad::add(bimixco, ad::add(ad::scale(prior, w.delta), ad::scale(reftm, w.mu)));
}

// ---------------------------------------------------------------------------

ReftmProjector::ReftmProjector(std::size_t in_dim, std::size_t out_dim, std::uint64_t seed) {
  Rng rng(derive_seed(seed, {stream::kInit, 77}));
  weight_ = Var::parameter(init_weight(rng, out_dim, in_dim));
}

void ReftmProjector::freeze() {
  weight_ = Var::constant(weight_.value());
  frozen_ = true;
}

Var ReftmProjector::project(const Var& embeddings) const {
  return ad::linear(flatten_rows(embeddings), weight_, Var());
}

Tensor ReftmProjector::project(const Tensor& embedding) const {
  const std::size_t in = weight_.value().dim(1);
  if (embedding.numel() != in) throw InvalidArgument("projector expects " + std::to_string(in) + " inputs");
  return project(Var::constant(embedding.reshaped({1, in}))).value().reshaped({weight_.value().dim(0)});
}

std::string ReftmProjector::hash() const { return to_checkpoint().content_hash(); }

Checkpoint ReftmProjector::to_checkpoint() const {
  Checkpoint ck;
  ck.manifest = {{"kind", "reftm_projector"}, {"frozen", frozen_}};
  ck.tensors["weight"] = weight_.value();
  return ck;
}

ReftmProjector ReftmProjector::from_checkpoint(const Checkpoint& ck) {
  if (ck.manifest.value("kind", "") != "reftm_projector") throw CorruptFile("not a projector checkpoint");
  ReftmProjector p;
  p.weight_ = Var::parameter(ck.get("weight"));
  if (ck.manifest.at("frozen").get<bool>()) p.freeze();
  return p;
}

namespace {

std::pair<double, double> matching_accuracy(const ReftmProjector& proj, const std::vector<ProjectorPair>& pairs,
                                            const std::vector<std::size_t>& idx) {
  std::vector<Tensor> img, txt;
  for (std::size_t i : idx) {
    img.push_back(proj.project(pairs[i].image));
    txt.push_back(pairs[i].text);
  }
  const std::size_t n = idx.size();
  std::size_t i2t = 0, t2i = 0;
  for (std::size_t q = 0; q < n; ++q) {
    std::size_t best_t = 0, best_i = 0;
    double st = -2.0, si = -2.0;
    for (std::size_t k = 0; k < n; ++k) {
      const double a = cosine(img[q].span(), txt[k].span());
      if (a > st) st = a, best_t = k;
      const double c = cosine(img[k].span(), txt[q].span());
      if (c > si) si = c, best_i = k;
    }
    i2t += txt[best_t] == txt[q];
    t2i += txt[best_i] == txt[q];
  }
  return {double(i2t) / double(n), double(t2i) / double(n)};
}

}  // namespace

ProjectorResult pretrain_projector(const std::vector<ProjectorPair>& pairs, const ProjectorTrainConfig& config) {
  if (pairs.size() < 200) throw InvalidArgument("projector pretraining needs at least 200 pairs");
  const std::size_t in = pairs.front().image.numel(), out = pairs.front().text.numel();
  Rng split(derive_seed(config.seed, {stream::kSplitTest, 77}));
  const auto order = split.permutation(pairs.size());
  const auto n_hold = static_cast<std::size_t>(std::ceil(config.holdout_fraction * double(pairs.size())));
  const std::vector<std::size_t> held(order.begin(), order.begin() + long(n_hold));
  const std::vector<std::size_t> train(order.begin() + long(n_hold), order.end());

  ProjectorResult result{ReftmProjector(in, out, config.seed), 0.0, 0.0};
  Var w = result.projector.weight();
  Adam opt({&w}, AdamConfig{config.lr, 0.9, 0.999, 1e-8, 0.0});
  for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
    Rng shuffle(derive_seed(config.seed, {stream::kShuffle, 77, epoch}));
    const auto perm = shuffle.permutation(train.size());
    for (std::size_t start = 0; start + 1 < perm.size(); start += config.batch_size) {
      std::vector<Tensor> img, txt;
      for (std::size_t k = start; k < std::min(perm.size(), start + config.batch_size); ++k) {
        img.push_back(pairs[train[perm[k]]].image);
        txt.push_back(pairs[train[perm[k]]].text);
      }
      opt.zero_grad();
      const Var loss = reftm_loss(result.projector.project(Var::constant(stack(img))), Var::constant(stack(txt)),
                                  config.tau);
      if (!std::isfinite(loss.item())) {
        throw NumericError("projector pretraining diverged at epoch " + std::to_string(epoch));
      }
      ad::backward(loss);
      opt.step();
    }
  }
  result.projector.freeze();
  std::tie(result.image_to_text, result.text_to_image) = matching_accuracy(result.projector, pairs, held);
  return result;
}

}  // namespace neuroclips::semantics
