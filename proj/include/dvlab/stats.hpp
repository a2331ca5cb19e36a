#pragma once

#include <cstddef>
#include <span>
#include <utility>
#include <vector>

namespace dvlab {

/// log(sum exp(x_i)); -inf for an empty or all -inf input.
double log_sum_exp(std::span<const double> xs);

/// Numerically stable log(exp(a) + exp(b)).
double log_add_exp(double a, double b);

/// Welford running mean / variance.
class RunningStats {
 public:
  void add(double x);
  std::size_t count() const { return n_; }
  double mean() const { return mean_; }
  /// Unbiased sample variance (0 for fewer than two samples).
  double variance() const;
  /// Standard error of the mean.
  double std_error() const;

 private:
  std::size_t n_ = 0;
  double mean_ = 0.0;
  double m2_ = 0.0;
};

struct Interval {
  double lo = 0.0;
  double hi = 0.0;
  bool contains(double x) const { return lo <= x && x <= hi; }
};

/// Wilson score interval for a binomial proportion at `z` standard normal
/// quantiles.
Interval wilson_interval(std::size_t hits, std::size_t trials, double z);

/// Exact (Clopper-Pearson) two-sided interval at confidence 1 - alpha.
Interval clopper_pearson(std::size_t hits, std::size_t trials, double alpha);

/// Ordinary least squares y = intercept + slope * x.
struct LinearFit {
  double slope = 0.0;
  double intercept = 0.0;
  double r_squared = 0.0;
  double slope_std_error = 0.0;
  std::size_t points = 0;
};

LinearFit fit_line(std::span<const double> x, std::span<const double> y);

/// Two-sided Kolmogorov-Smirnov statistic sup |F_n - F| of a sample against a
/// continuous CDF. Sorts a copy of the sample.
template <class Cdf>
double ks_statistic(std::vector<double> sample, Cdf cdf);

/// Asymptotic Kolmogorov tail P(sqrt(n) D_n > t).
double kolmogorov_tail(double t);

}  // namespace dvlab

#include <algorithm>
#include <cmath>

template <class Cdf>
double dvlab::ks_statistic(std::vector<double> sample, Cdf cdf) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double f = cdf(sample[i]);
    d = std::max({d, (static_cast<double>(i) + 1.0) / n - f, f - static_cast<double>(i) / n});
  }
  return d;
}
