#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <set>
#include <stdexcept>
#include <vector>

#include "tsrd/bootstrap.hpp"

namespace tsrd {

struct SelectionMetrics {
  double tp_rate = 0.0;  // |S_hat ∩ S| / k_s
  double fp_rate = 0.0;  // |S_hat \ S| / (p - k_s)
  double cer = 0.0;      // (fp_count + fn_count) / p
};

inline SelectionMetrics selection_metrics(const std::vector<int>& S_hat,
                                          const std::vector<int>& S_true, int p) {
  if (S_true.empty()) throw std::invalid_argument("selection_metrics: empty true support");
  const std::set<int> truth(S_true.begin(), S_true.end());
  long tp = 0, fp = 0;
  for (int j : S_hat) {
    if (j < 0 || j >= p) throw std::invalid_argument("selection_metrics: index out of range");
    if (truth.count(j))
      ++tp;
    else
      ++fp;
  }
  const long k_s = long(truth.size());
  const long fn = k_s - tp;
  SelectionMetrics m;
  m.tp_rate = double(tp) / double(k_s);
  m.fp_rate = (p > k_s) ? double(fp) / double(p - k_s) : 0.0;
  m.cer = double(fp + fn) / double(p);
  return m;
}

inline double normal_cdf(double x, double mean = 0.0, double sd = 1.0) {
  return 0.5 * std::erfc(-(x - mean) / (sd * 1.4142135623730950488));
}

//! One-sample Kolmogorov-Smirnov distance against a CDF callable.
template <class Cdf>
double ks_distance(std::vector<double> sample, Cdf cdf) {
  if (sample.empty()) throw std::invalid_argument("ks_distance: empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = double(sample.size());
  double d = 0.0;
  for (std::size_t i = 0; i < sample.size(); ++i) {
    const double F = cdf(sample[i]);
    d = std::max(d, std::max((double(i) + 1.0) / n - F, F - double(i) / n));
  }
  return d;
}

//! Two-sample Kolmogorov-Smirnov distance.
inline double ks_two_sample(std::vector<double> a, std::vector<double> b) {
  if (a.empty() || b.empty()) throw std::invalid_argument("ks_two_sample: empty sample");
  std::sort(a.begin(), a.end());
  std::sort(b.begin(), b.end());
  std::size_t i = 0, j = 0;
  double d = 0.0;
  while (i < a.size() && j < b.size()) {
    const double x = std::min(a[i], b[j]);
    while (i < a.size() && a[i] <= x) ++i;
    while (j < b.size() && b[j] <= x) ++j;
    d = std::max(d, std::abs(double(i) / double(a.size()) - double(j) / double(b.size())));
  }
  return d;
}

//! Per-slope-coordinate KS distance between the empirical law of
//! sqrt(n) (beta_R - beta_hat) and N(0, sigma^2 / efficiency * [design_cov^{-1}]_jj).
//! `replicates` carries the intercept in column 0; it is skipped.
inline std::vector<double> convergence_check(const Matrix& replicates, const Vector& beta_hat,
                                             long n, double sigma, double efficiency,
                                             const Matrix& design_cov) {
  const Eigen::Index q = replicates.cols();
  if (beta_hat.size() != q) throw std::invalid_argument("convergence_check: dim mismatch");
  if (q < 2) throw std::invalid_argument("convergence_check: no slope coordinates");
  const Eigen::Index k = q - 1;
  Matrix cov_inv;
  if (design_cov.size() == 0) {
    cov_inv = Matrix::Identity(k, k);
  } else {
    if (design_cov.rows() != k || design_cov.cols() != k)
      throw std::invalid_argument("convergence_check: design covariance must be k x k");
    cov_inv = design_cov.inverse();
  }
  const double root_n = std::sqrt(double(n));
  std::vector<double> out;
  out.reserve(std::size_t(k));
  std::vector<double> sample(static_cast<std::size_t>(replicates.rows()));
  for (Eigen::Index j = 1; j < q; ++j) {
    for (Eigen::Index i = 0; i < replicates.rows(); ++i)
      sample[std::size_t(i)] = root_n * (replicates(i, j) - beta_hat[j]);
    const double sd = sigma * std::sqrt(cov_inv(j - 1, j - 1) / efficiency);
    out.push_back(ks_distance(sample, [&](double x) { return normal_cdf(x, 0.0, sd); }));
  }
  return out;
}

}  // namespace tsrd
