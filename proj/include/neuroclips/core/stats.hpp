#pragma once

#include <functional>
#include <span>

namespace neuroclips::stats {

double mean(std::span<const double> x);
/// Sample standard deviation (n - 1 denominator); 0 for fewer than 2 values.
double stddev(std::span<const double> x);
double pearson(std::span<const double> a, std::span<const double> b);

/// Upper-tail p-value of Pearson's chi-square goodness-of-fit test against
/// equal expected counts.
double chi_square_uniform_p(std::span<const std::size_t> counts);

/// Two-sided one-sample Kolmogorov-Smirnov p-value (asymptotic Kolmogorov
/// distribution with Stephens' small-sample correction).
double ks_test_p(std::span<const double> sample, const std::function<double(double)>& cdf);

/// One-sided Mann-Whitney U p-value for H1: values in `high` tend to exceed
/// values in `low`. Normal approximation with tie correction.
double mann_whitney_greater_p(std::span<const double> high, std::span<const double> low);

double beta_cdf(double x, double a, double b);

}  // namespace neuroclips::stats
