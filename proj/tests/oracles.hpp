#pragma once

// Independent reference implementations, written directly from the formulas
// in extended precision. Shared by the unit tests and the acceptance runner.

#include <cmath>
#include <span>
#include <vector>

#include "neuroclips/core/tensor.hpp"

namespace nc_test {

using LD = long double;
using Rows = std::vector<std::vector<double>>;

inline Rows rows_of(const neuroclips::Tensor& t) {
  const std::size_t b = t.dim(0), d = t.numel() / b;
  Rows r(b);
  for (std::size_t i = 0; i < b; ++i) r[i].assign(t.data() + i * d, t.data() + (i + 1) * d);
  return r;
}

inline double cos_sim(const std::vector<double>& a, const std::vector<double>& b) {
  LD ab = 0, aa = 0, bb = 0;
  for (std::size_t i = 0; i < a.size(); ++i) ab += a[i] * b[i], aa += a[i] * a[i], bb += b[i] * b[i];
  return double(ab / std::sqrt(aa * bb));
}

// Symmetric InfoNCE written out term by term.
inline double infonce_oracle(const neuroclips::Tensor& a, const neuroclips::Tensor& c, double tau) {
  const Rows x = rows_of(a), y = rows_of(c);
  const std::size_t n = x.size();
  LD total = 0;
  for (std::size_t i = 0; i < n; ++i) {
    LD row = 0, col = 0;
    for (std::size_t k = 0; k < n; ++k) {
      row += std::exp(LD(cos_sim(x[i], y[k])) / tau);
      col += std::exp(LD(cos_sim(x[k], y[i])) / tau);
    }
    const LD pos = cos_sim(x[i], y[i]) / tau;
    total += (pos - std::log(row)) + (pos - std::log(col));
  }
  return double(-total / (2.0L * n));
}

// Window-by-window SSIM with a full 2-D Gaussian kernel over [H, W, C].
inline double ssim_oracle(const neuroclips::Tensor& a, const neuroclips::Tensor& b) {
  const std::size_t H = a.dim(0), W = a.dim(1), C = a.dim(2);
  LD k[11][11], ksum = 0;
  for (int i = 0; i < 11; ++i)
    for (int j = 0; j < 11; ++j) ksum += k[i][j] = std::exp(-LD((i - 5) * (i - 5) + (j - 5) * (j - 5)) / (2 * 2.25L));
  const LD c1 = 1e-4L, c2 = 9e-4L;
  LD total = 0;
  std::size_t n = 0;
  for (std::size_t c = 0; c < C; ++c)
    for (std::size_t y = 0; y + 11 <= H; ++y)
      for (std::size_t x = 0; x + 11 <= W; ++x) {
        LD mx = 0, my = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const std::size_t p = ((y + i) * W + x + j) * C + c;
            mx += k[i][j] / ksum * a[p];
            my += k[i][j] / ksum * b[p];
          }
        LD vx = 0, vy = 0, cxy = 0;
        for (int i = 0; i < 11; ++i)
          for (int j = 0; j < 11; ++j) {
            const std::size_t p = ((y + i) * W + x + j) * C + c;
            const LD w = k[i][j] / ksum;
            vx += w * (a[p] - mx) * (a[p] - mx);
            vy += w * (b[p] - my) * (b[p] - my);
            cxy += w * (a[p] - mx) * (b[p] - my);
          }
        total += (2 * mx * my + c1) * (2 * cxy + c2) / ((mx * mx + my * my + c1) * (vx + vy + c2));
        ++n;
      }
  return double(total / LD(n));
}

// PSNR for data range 1.
inline LD psnr_oracle(const neuroclips::Tensor& x, const neuroclips::Tensor& y) {
  LD se = 0;
  for (std::size_t i = 0; i < x.numel(); ++i) se += LD(x[i] - y[i]) * LD(x[i] - y[i]);
  return 10.0L * std::log10(LD(x.numel()) / se);
}

// Deterministic reverse recursion for a Gaussian prior N(mean, sd^2), replayed
// with its own linear-beta schedule and timesteps. `key`/`eps_key` pin entries
// [0, key.numel()) to the forward-noised keyframe at every level.
inline std::vector<LD> sampler_replay(const neuroclips::Tensor& z_T, const neuroclips::Tensor& mean, double sd,
                                      std::size_t T, std::size_t steps, const neuroclips::Tensor* key,
                                      const neuroclips::Tensor* eps_key) {
  std::vector<LD> ab(T + 1, 1.0L);
  for (std::size_t t = 1; t <= T; ++t) {
    const LD beta = 1e-4L + (0.02L - 1e-4L) * LD(t - 1) / LD(T - 1);
    ab[t] = ab[t - 1] * (1.0L - beta);
  }
  std::vector<std::size_t> ts;
  for (std::size_t i = 0; i < steps; ++i) ts.push_back(T - (i * T) / steps);
  std::vector<LD> z(z_T.vec().begin(), z_T.vec().end());
  auto pin = [&](LD a) {
    if (!key) return;
    for (std::size_t i = 0; i < key->numel(); ++i) z[i] = std::sqrt(a) * (*key)[i] + std::sqrt(1 - a) * (*eps_key)[i];
  };
  pin(ab[ts[0]]);
  for (std::size_t k = 0; k < ts.size(); ++k) {
    const std::size_t t = ts[k], prev = k + 1 < ts.size() ? ts[k + 1] : 0;
    const LD a = std::sqrt(ab[t]), b = std::sqrt(1 - ab[t]);
    for (std::size_t i = 0; i < z.size(); ++i) {
      const LD eps = b * (z[i] - a * mean[i]) / (ab[t] * LD(sd) * LD(sd) + 1 - ab[t]);
      const LD x0 = (z[i] - b * eps) / a;
      z[i] = std::sqrt(ab[prev]) * x0 + std::sqrt(1 - ab[prev]) * eps;
    }
    pin(ab[prev]);
  }
  return z;
}

inline double max_diff(const neuroclips::Tensor& a, const std::vector<LD>& b) {
  double m = 0.0;
  for (std::size_t i = 0; i < b.size(); ++i) m = std::max(m, double(std::abs(LD(a[i]) - b[i])));
  return m;
}

}  // namespace nc_test
