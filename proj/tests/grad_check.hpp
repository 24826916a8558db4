#pragma once

// Central finite-difference oracle for reverse-mode gradients.

#include <algorithm>
#include <cmath>
#include <functional>
#include <vector>

#include "neuroclips/core/autodiff.hpp"
#include "neuroclips/core/rng.hpp"

namespace nc_test {

struct GradCheck {
  double rel_error = 0.0;
  std::size_t checked = 0;
};

/// Compares d f / d params against (f(x+h) - f(x-h)) / 2h on up to
/// `max_entries` randomly chosen coordinates per parameter. The error is the
/// norm of the difference over the larger of the two gradient norms.
inline GradCheck check_gradients(const std::vector<neuroclips::ad::Var*>& params,
                                 const std::function<neuroclips::ad::Var()>& f, double h = 1e-6,
                                 std::size_t max_entries = 64, std::uint64_t seed = 7) {
  using neuroclips::ad::Var;
  for (Var* p : params) p->zero_grad();
  Var y = f();
  neuroclips::ad::backward(y);
  neuroclips::Rng rng(seed);
  double diff2 = 0.0, a2 = 0.0, n2 = 0.0;
  std::size_t checked = 0;
  for (Var* p : params) {
    const neuroclips::Tensor analytic = p->grad();
    const std::size_t n = p->value().numel();
    std::vector<std::size_t> idx;
    if (n <= max_entries) {
      for (std::size_t i = 0; i < n; ++i) idx.push_back(i);
    } else {
      auto perm = rng.permutation(n);
      idx.assign(perm.begin(), perm.begin() + static_cast<long>(max_entries));
    }
    for (std::size_t i : idx) {
      double& w = p->mutable_value()[i];
      const double orig = w;
      w = orig + h;
      const double fp = f().item();
      w = orig - h;
      const double fm = f().item();
      w = orig;
      const double num = (fp - fm) / (2.0 * h);
      diff2 += (num - analytic[i]) * (num - analytic[i]);
      a2 += analytic[i] * analytic[i];
      n2 += num * num;
      ++checked;
    }
  }
  const double denom = std::max({std::sqrt(a2), std::sqrt(n2), 1e-12});
  return {std::sqrt(diff2) / denom, checked};
}

}  // namespace nc_test
