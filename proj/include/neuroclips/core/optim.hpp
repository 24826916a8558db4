#pragma once

#include <map>
#include <string>
#include <vector>

#include "neuroclips/core/autodiff.hpp"
#include "neuroclips/core/rng.hpp"

namespace neuroclips {

/// Named trainable parameters. Names are stable checkpoint keys.
class ParamSet {
 public:
  ad::Var& add(const std::string& name, Tensor init);
  ad::Var& get(const std::string& name);
  const ad::Var& get(const std::string& name) const;
  bool contains(const std::string& name) const { return params_.count(name) != 0; }

  std::vector<ad::Var*> all();
  void zero_grad();
  std::map<std::string, Tensor> snapshot() const;
  /// Overwrites values of every parameter from `tensors`; shapes must match.
  void load(const std::map<std::string, Tensor>& tensors, const std::string& prefix = "");
  std::map<std::string, Tensor> snapshot(const std::string& prefix) const;

  const std::map<std::string, ad::Var>& items() const { return params_; }

 private:
  std::map<std::string, ad::Var> params_;
};

/// Glorot-uniform style init for a [out, in] weight.
Tensor init_weight(Rng& rng, std::size_t out, std::size_t in, double gain = 1.0);

struct AdamConfig {
  double lr = 3e-4;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
  double weight_decay = 0.0;
};

class Adam {
 public:
  Adam(std::vector<ad::Var*> params, AdamConfig config);
  void step();
  void zero_grad();
  AdamConfig& config() { return config_; }

 private:
  std::vector<ad::Var*> params_;
  std::vector<Tensor> m_, v_;
  AdamConfig config_;
  long t_ = 0;
};

}  // namespace neuroclips
