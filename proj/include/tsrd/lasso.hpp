#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <stdexcept>

#include "tsrd/scale.hpp"

namespace tsrd {

inline double soft_threshold(double z, double gamma) noexcept {
  if (z > gamma) return z - gamma;
  if (z < -gamma) return z + gamma;
  return 0.0;
}

struct WeightedLassoResult {
  Vector beta;
  double intercept = 0.0;
  bool converged = false;
  int sweeps = 0;
};

//! Penalized weighted least squares
//!   min_{b0, beta}  sum_l w_l (y_l - b0 - x_l^T beta)^2 + lambda_prime ||beta||_1
//! by cyclic coordinate descent with soft-thresholding; the intercept is
//! unpenalized. Satisfies the KKT conditions to `tol` at return.
inline WeightedLassoResult weighted_lasso(const Matrix& X, const Vector& y, const Vector& w,
                                          double lambda_prime, const Vector& warm_beta,
                                          double warm_intercept, double tol = 1e-8,
                                          int max_sweeps = 2000) {
  const Eigen::Index b = X.rows(), p = X.cols();
  if (y.size() != b || w.size() != b) throw std::invalid_argument("weighted_lasso: size mismatch");
  if (lambda_prime < 0.0) throw std::invalid_argument("weighted_lasso: negative penalty");
  if ((w.array() < 0.0).any()) throw std::invalid_argument("weighted_lasso: negative weight");

  WeightedLassoResult out;
  out.beta = (warm_beta.size() == p) ? warm_beta : Vector::Zero(p);
  out.intercept = warm_intercept;

  const double wsum = w.sum();
  if (wsum <= 0.0) throw DegenerateDataError("weighted_lasso: all weights zero");

  Vector a(p);  // a_j = sum_l w_l x_lj^2
  for (Eigen::Index j = 0; j < p; ++j) a[j] = (w.array() * X.col(j).array().square()).sum();

  Vector r = y - X * out.beta;
  r.array() -= out.intercept;

  // Convergence is measured on the scale of the data.
  const double big = std::max(1.0, y.cwiseAbs().maxCoeff());
  auto sweep = [&](bool active_only) {
    double max_delta = 0.0;
    // intercept
    {
      const double delta = (w.array() * r.array()).sum() / wsum;
      out.intercept += delta;
      r.array() -= delta;
      max_delta = std::max(max_delta, std::abs(delta));
    }
    for (Eigen::Index j = 0; j < p; ++j) {
      if (active_only && out.beta[j] == 0.0) continue;
      if (a[j] <= 0.0) continue;  // zero-weighted column stays put
      const double bj = out.beta[j];
      const double z = (w.array() * X.col(j).array() * r.array()).sum() + a[j] * bj;
      const double nj = soft_threshold(z, 0.5 * lambda_prime) / a[j];
      if (nj != bj) {
        r += X.col(j) * (bj - nj);
        out.beta[j] = nj;
        max_delta = std::max(max_delta, std::abs(nj - bj));
      }
    }
    return max_delta;
  };

  // Alternate a full pass with active-set passes until a full pass is quiet.
  int sweeps = 0;
  while (sweeps < max_sweeps) {
    const double d_full = sweep(false);
    ++sweeps;
    if (d_full < tol * big) {
      out.converged = true;
      break;
    }
    while (sweeps < max_sweeps) {
      const double d_act = sweep(true);
      ++sweeps;
      if (d_act < tol * big) break;
    }
  }
  out.sweeps = sweeps;  // converged stays false when the sweep cap was exhausted
  return out;
}

//! Smallest penalty at which the all-zero slope solution is stationary for the
//! given weights: max_j |2 sum_l w_l x_lj (y_l - ybar_w)|.
inline double weighted_lasso_lambda_max(const Matrix& X, const Vector& y, const Vector& w) {
  const double wsum = w.sum();
  if (wsum <= 0.0) throw DegenerateDataError("lambda_max: all weights zero");
  const double ybar = (w.array() * y.array()).sum() / wsum;
  double lam = 0.0;
  for (Eigen::Index j = 0; j < X.cols(); ++j) {
    const double g = 2.0 * (w.array() * X.col(j).array() * (y.array() - ybar)).sum();
    lam = std::max(lam, std::abs(g));
  }
  return lam;
}

}  // namespace tsrd
