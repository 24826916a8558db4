#include "neuroclips/core/optim.hpp"

#include <cmath>

#include "neuroclips/core/error.hpp"

namespace neuroclips {

ad::Var& ParamSet::add(const std::string& name, Tensor init) {
  auto [it, inserted] = params_.emplace(name, ad::Var::parameter(std::move(init)));
  if (!inserted) throw ContractViolation("duplicate parameter name " + name);
  return it->second;
}

ad::Var& ParamSet::get(const std::string& name) {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractViolation("unknown parameter " + name);
  return it->second;
}

const ad::Var& ParamSet::get(const std::string& name) const {
  auto it = params_.find(name);
  if (it == params_.end()) throw ContractViolation("unknown parameter " + name);
  return it->second;
}

std::vector<ad::Var*> ParamSet::all() {
  std::vector<ad::Var*> out;
  for (auto& [name, v] : params_) out.push_back(&v);
  return out;
}

void ParamSet::zero_grad() {
  for (auto& [name, v] : params_) v.zero_grad();
}

std::map<std::string, Tensor> ParamSet::snapshot() const { return snapshot(""); }

std::map<std::string, Tensor> ParamSet::snapshot(const std::string& prefix) const {
  std::map<std::string, Tensor> out;
  for (const auto& [name, v] : params_) out.emplace(prefix + name, v.value());
  return out;
}

void ParamSet::load(const std::map<std::string, Tensor>& tensors, const std::string& prefix) {
  for (auto& [name, v] : params_) {
    auto it = tensors.find(prefix + name);
    if (it == tensors.end()) throw CorruptFile("checkpoint is missing parameter " + prefix + name);
    if (it->second.numel() != v.value().numel()) {
      throw CorruptFile("parameter " + prefix + name + " has shape " + shape_str(it->second.shape()) +
                        ", expected " + shape_str(v.shape()));
    }
    v.mutable_value() = it->second.reshaped(v.shape());
  }
}

Tensor init_weight(Rng& rng, std::size_t out, std::size_t in, double gain) {
  const double limit = gain * std::sqrt(6.0 / static_cast<double>(in + out));
  Tensor w(Shape{out, in});
  for (double& v : w.vec()) v = rng.uniform(-limit, limit);
  return w;
}

Adam::Adam(std::vector<ad::Var*> params, AdamConfig config) : params_(std::move(params)), config_(config) {
  for (ad::Var* p : params_) {
    if (!p->requires_grad()) throw ContractViolation("Adam given a non-trainable tensor");
    m_.emplace_back(p->shape(), 0.0);
    v_.emplace_back(p->shape(), 0.0);
  }
}

void Adam::zero_grad() {
  for (ad::Var* p : params_) p->zero_grad();
}

void Adam::step() {
  ++t_;
  const double bc1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
  const double bc2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
  for (std::size_t k = 0; k < params_.size(); ++k) {
    Tensor& w = params_[k]->mutable_value();
    const Tensor& g = params_[k]->grad();
    Tensor& m = m_[k];
    Tensor& v = v_[k];
    for (std::size_t i = 0; i < w.numel(); ++i) {
      const double gi = g[i] + config_.weight_decay * w[i];
      m[i] = config_.beta1 * m[i] + (1.0 - config_.beta1) * gi;
      v[i] = config_.beta2 * v[i] + (1.0 - config_.beta2) * gi * gi;
      w[i] -= config_.lr * (m[i] / bc1) / (std::sqrt(v[i] / bc2) + config_.eps);
    }
  }
}

}  // namespace neuroclips
