#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <stdexcept>
#include <vector>

#include "tsrd/rho.hpp"

namespace tsrd {

using Vector = Eigen::VectorXd;
using Matrix = Eigen::MatrixXd;

struct ScaleConfig {
  RhoParams rho0{1.5476449809282264, RhoKind::rho0};
  RhoParams rho1{6.08, RhoKind::rho1};
  double delta = 0.5;   // breakdown constant of the M-scale
  double tol = 1e-9;    // relative convergence tolerance
  int max_iter = 200;

  void validate() const {
    if (!(delta > 0.0 && delta <= 0.5)) throw std::invalid_argument("ScaleConfig: delta outside (0, 0.5]");
    if (!(tol > 0.0)) throw std::invalid_argument("ScaleConfig: tol must be positive");
    if (max_iter < 1) throw std::invalid_argument("ScaleConfig: max_iter < 1");
  }
};

struct ConvergenceError : std::runtime_error {
  double last_iterate;
  ConvergenceError(const std::string& what, double last)
      : std::runtime_error(what), last_iterate(last) {}
};

struct DegenerateDataError : std::runtime_error {
  int column;
  DegenerateDataError(const std::string& what, int col = -1)
      : std::runtime_error(what), column(col) {}
};

struct MScaleResult {
  double sigma = 0.0;
  bool degenerate = false;  // more than (1-delta) of the residuals exactly zero
  int iterations = 0;
};

inline double mad_scale(const Vector& r) {
  std::vector<double> a(r.size());
  for (Eigen::Index i = 0; i < r.size(); ++i) a[i] = std::abs(r[i]);
  const std::size_t mid = a.size() / 2;
  std::nth_element(a.begin(), a.begin() + mid, a.end());
  double med = a[mid];
  if (a.size() % 2 == 0) {
    double lo = *std::max_element(a.begin(), a.begin() + mid);
    med = 0.5 * (lo + med);
  }
  return med / 0.675;
}

//! M-scale of residuals: the sigma solving (1/b) sum rho0(r_l / sigma) = delta,
//! found by the re-scaling iteration sigma_{k+1}^2 = sigma_k^2 * (1/(b delta)) sum rho0(r_l/sigma_k).
//! Returns sigma = 0 with the degenerate flag when the fraction of exact zeros
//! exceeds 1 - delta (the defining equation then has no positive root).
inline MScaleResult m_scale_full(const Vector& residuals, const ScaleConfig& cfg) {
  cfg.validate();
  const Eigen::Index b = residuals.size();
  if (b < 1) throw std::invalid_argument("m_scale: empty residual vector");
  const double c0 = cfg.rho0.c;

  Eigen::Index zeros = 0;
  for (Eigen::Index i = 0; i < b; ++i)
    if (residuals[i] == 0.0) ++zeros;
  if (double(zeros) / double(b) > 1.0 - cfg.delta) return {0.0, true, 0};

  double sigma = mad_scale(residuals);
  if (sigma <= 0.0) {
    // MAD zero but not degenerate: fall back to the mean absolute residual
    sigma = residuals.cwiseAbs().mean();
    if (sigma <= 0.0) return {0.0, true, 0};
  }

  auto mean_rho = [&](double s) {
    double acc = 0.0;
    for (Eigen::Index i = 0; i < b; ++i) acc += rho(residuals[i] / s, c0);
    return acc / double(b);
  };

  // re-scaling iteration; contraction degrades near the breakdown boundary,
  // so fall through to bisection on the (monotone) defining equation
  const int rescale_cap = std::min(50, cfg.max_iter);
  int it = 1;
  for (; it <= rescale_cap; ++it) {
    const double next = sigma * std::sqrt(mean_rho(sigma) / cfg.delta);
    if (std::abs(next / sigma - 1.0) < cfg.tol) return {next, false, it};
    sigma = next;
  }
  double lo = sigma, hi = sigma;
  while (mean_rho(lo) < cfg.delta && lo > 1e-300) lo *= 0.5;
  while (mean_rho(hi) > cfg.delta && hi < 1e300) hi *= 2.0;
  for (; it <= cfg.max_iter + 200; ++it) {
    const double mid = 0.5 * (lo + hi);
    (mean_rho(mid) > cfg.delta ? lo : hi) = mid;
    if ((hi - lo) < cfg.tol * lo) return {0.5 * (lo + hi), false, it};
  }
  throw ConvergenceError("m_scale: iteration cap exceeded", sigma);
}

inline double m_scale(const Vector& residuals, const ScaleConfig& cfg) {
  return m_scale_full(residuals, cfg).sigma;
}

struct TauScaleResult {
  double tau_sq = 0.0;
  double sigma_m = 0.0;
};

//! tau^2 = (sigma_M^2 / b) sum rho1(r_l / sigma_M), with sigma_M the M-scale.
inline TauScaleResult tau_scale_sq(const Vector& residuals, const ScaleConfig& cfg) {
  const MScaleResult ms = m_scale_full(residuals, cfg);
  if (ms.degenerate || ms.sigma == 0.0) return {0.0, 0.0};
  double acc = 0.0;
  for (Eigen::Index i = 0; i < residuals.size(); ++i)
    acc += rho(residuals[i] / ms.sigma, cfg.rho1.c);
  return {ms.sigma * ms.sigma * acc / double(residuals.size()), ms.sigma};
}

// Bisquare M-location with tuning constant c; preliminary scale is the
// normalized MAD about the median.
inline double bisquare_location(const Vector& x, double c = 4.685, double tol = 1e-10,
                                int max_iter = 200) {
  std::vector<double> a(x.size());
  for (Eigen::Index i = 0; i < x.size(); ++i) a[i] = x[i];
  const std::size_t mid = a.size() / 2;
  std::nth_element(a.begin(), a.begin() + mid, a.end());
  double mu = a[mid];
  if (a.size() % 2 == 0) {
    double lo = *std::max_element(a.begin(), a.begin() + mid);
    mu = 0.5 * (lo + mu);
  }
  Vector r = x.array() - mu;
  const double s = mad_scale(r);
  if (s <= 0.0) return mu;  // half the points coincide with the median
  for (int it = 0; it < max_iter; ++it) {
    double wsum = 0.0, wx = 0.0;
    for (Eigen::Index i = 0; i < x.size(); ++i) {
      const double t = (x[i] - mu) / s;
      // psi(t)/t limit 6/c^2 at 0
      const double w = (t == 0.0) ? 6.0 / (c * c) : psi(t, c) / t;
      wsum += w;
      wx += w * x[i];
    }
    if (wsum <= 0.0) return mu;
    const double next = wx / wsum;
    if (std::abs(next - mu) < tol * (1.0 + std::abs(mu))) return next;
    mu = next;
  }
  return mu;
}

struct StandardizationRecord {
  Vector centers;          // per-column robust location
  Vector scales;           // per-column robust scale
  double response_center;  // robust location of y
};

//! Robustly standardize the design and center the response: each column gets
//! bisquare M-location 0 and bisquare M-scale 1; y is centered by its bisquare
//! location. The record maps coefficients and intervals back to original units.
inline StandardizationRecord robust_standardize(const Matrix& X, const Vector& y, Matrix& Xs,
                                                Vector& ys, const ScaleConfig& cfg) {
  const Eigen::Index b = X.rows(), p = X.cols();
  if (y.size() != b) throw std::invalid_argument("robust_standardize: size mismatch");
  StandardizationRecord rec;
  rec.centers.resize(p);
  rec.scales.resize(p);
  Xs.resize(b, p);
  for (Eigen::Index j = 0; j < p; ++j) {
    const Vector col = X.col(j);
    if ((col.array() == col[0]).all())
      throw DegenerateDataError("robust_standardize: constant column", int(j));
    const double center = bisquare_location(col);
    Vector centered = col.array() - center;
    const MScaleResult ms = m_scale_full(centered, cfg);
    if (ms.degenerate || ms.sigma <= 0.0)
      throw DegenerateDataError("robust_standardize: zero robust scale in column", int(j));
    rec.centers[j] = center;
    rec.scales[j] = ms.sigma;
    Xs.col(j) = centered / ms.sigma;
  }
  rec.response_center = bisquare_location(y);
  ys = y.array() - rec.response_center;
  return rec;
}

//! Map standardized-fit coefficients back to original units.
//! y = intercept_orig + X beta_orig where ys = Xs beta_s + intercept_s.
inline void destandardize(const StandardizationRecord& rec, const Vector& beta_s,
                          double intercept_s, Vector& beta, double& intercept) {
  const Eigen::Index p = beta_s.size();
  beta.resize(p);
  double shift = 0.0;
  for (Eigen::Index j = 0; j < p; ++j) {
    beta[j] = beta_s[j] / rec.scales[j];
    shift += beta[j] * rec.centers[j];
  }
  intercept = rec.response_center + intercept_s - shift;
}

}  // namespace tsrd
