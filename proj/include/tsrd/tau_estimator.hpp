#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <limits>
#include <stdexcept>

#include "tsrd/scale.hpp"

namespace tsrd {

//! Joint regression/scale estimate at (or near) the fixed point of the
//! tau-estimating equations. The design is expected to carry its intercept as
//! an explicit column; beta includes that coordinate.
struct ThetaEstimate {
  Vector beta;
  double sigma = 0.0;
  Vector residuals;   // y - X beta at the returned beta
  Vector w;           // per-observation regression weights at the fixed point
  Vector v;           // per-observation scale weights at the fixed point
  double w_tau = 0.0;
  double fixed_point_residual = std::numeric_limits<double>::infinity();
  double gradient_norm = std::numeric_limits<double>::infinity();  // Eq. of first-order condition
  double scale_residual = std::numeric_limits<double>::infinity();
  bool converged = false;
  bool degenerate = false;  // exact interpolation; sigma = 0
  int iterations = 0;
};

struct RankDeficiencyError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FixedPointMap {
  Vector beta_next;
  double sigma_next = 0.0;
  Vector w, v;
  double w_tau = 0.0;
  bool singular = false;
};

//! One application of the fixed-point map theta -> f(theta): a weighted-LS
//! step for beta and the rescaling step for sigma, with the weights evaluated
//! at the given theta. `mult` are optional observation multiplicities with
//! total `total` (the bootstrap-weighted form); empty means ones with total b.
inline FixedPointMap fixed_point_map(const Matrix& X, const Vector& y, const Vector& beta,
                                     double sigma, const ScaleConfig& cfg,
                                     const Vector& mult = Vector(), double total = -1.0) {
  const Eigen::Index b = X.rows(), q = X.cols();
  const bool weighted = mult.size() == b;
  const double W = weighted ? (total > 0.0 ? total : mult.sum()) : double(b);
  const double c0 = cfg.rho0.c, c1 = cfg.rho1.c;

  FixedPointMap out;
  out.w.resize(b);
  out.v.resize(b);

  const Vector r = y - X * beta;
  double num = 0.0, den = 0.0;
  for (Eigen::Index l = 0; l < b; ++l) {
    const double m = weighted ? mult[l] : 1.0;
    if (m == 0.0) continue;
    const double rt = r[l] / sigma;
    const RhoEval e1 = rho_eval(rt, c1);
    num += m * (2.0 * e1.rho - e1.psi * rt);
    den += m * psi(rt, c0) * rt;
  }
  if (!(den > 0.0)) {
    out.singular = true;
    return out;
  }
  out.w_tau = num / den;

  const double w_limit = (out.w_tau * 6.0 / (c0 * c0) + 6.0 / (c1 * c1)) / sigma;
  for (Eigen::Index l = 0; l < b; ++l) {
    const double rl = r[l];
    const double rt = rl / sigma;
    if (rl == 0.0) {
      out.w[l] = w_limit;
      out.v[l] = 0.0;  // rho0(t)/t -> 0 (removable singularity)
    } else {
      out.w[l] = (out.w_tau * psi(rt, c0) + psi(rt, c1)) / rl;
      out.v[l] = rho(rt, c0) / (rt * W * cfg.delta);
    }
  }

  Matrix G = Matrix::Zero(q, q);
  Vector h = Vector::Zero(q);
  double sig = 0.0;
  for (Eigen::Index l = 0; l < b; ++l) {
    const double m = weighted ? mult[l] : 1.0;
    if (m == 0.0) continue;
    const double wm = m * out.w[l];
    G.selfadjointView<Eigen::Lower>().rankUpdate(X.row(l).transpose(), wm);
    h += wm * y[l] * X.row(l).transpose();
    sig += m * out.v[l] * r[l];
  }
  Eigen::LLT<Matrix> llt(G.selfadjointView<Eigen::Lower>());
  if (llt.info() != Eigen::Success) {
    out.singular = true;
    return out;
  }
  out.beta_next = llt.solve(h);
  out.sigma_next = sig;
  return out;
}

//! First-order-condition diagnostics at (beta, sigma): the sup-norm of
//! (1/W) sum m_l [w_tau psi0(r~) + psi1(r~)] x_l and |(1/W) sum m_l rho0(r~) - delta|.
inline std::pair<double, double> estimating_equation_residuals(const Matrix& X, const Vector& y,
                                                               const Vector& beta, double sigma,
                                                               const ScaleConfig& cfg,
                                                               const Vector& mult = Vector(),
                                                               double total = -1.0) {
  const Eigen::Index b = X.rows(), q = X.cols();
  const bool weighted = mult.size() == b;
  const double W = weighted ? (total > 0.0 ? total : mult.sum()) : double(b);
  const double c0 = cfg.rho0.c, c1 = cfg.rho1.c;
  const Vector r = y - X * beta;
  double num = 0.0, den = 0.0, rhosum = 0.0;
  for (Eigen::Index l = 0; l < b; ++l) {
    const double m = weighted ? mult[l] : 1.0;
    const double rt = r[l] / sigma;
    const RhoEval e1 = rho_eval(rt, c1);
    num += m * (2.0 * e1.rho - e1.psi * rt);
    den += m * psi(rt, c0) * rt;
    rhosum += m * rho(rt, c0);
  }
  const double w_tau = num / den;
  Vector g = Vector::Zero(q);
  for (Eigen::Index l = 0; l < b; ++l) {
    const double m = weighted ? mult[l] : 1.0;
    const double rt = r[l] / sigma;
    g += m * (w_tau * psi(rt, c0) + psi(rt, c1)) * X.row(l).transpose();
  }
  return {(g / W).lpNorm<Eigen::Infinity>(), std::abs(rhosum / W - cfg.delta)};
}

namespace detail {

// exact interpolation of most rows: plain LS pins beta, sigma = 0
inline void finish_degenerate_theta(const Matrix& X, const Vector& y, ThetaEstimate& est) {
  Eigen::LLT<Matrix> llt((X.transpose() * X).eval());
  if (llt.info() == Eigen::Success) est.beta = llt.solve(X.transpose() * y);
  est.sigma = 0.0;
  est.degenerate = true;
  est.converged = true;
  est.residuals = y - X * est.beta;
  est.w = Vector::Zero(X.rows());
  est.v = Vector::Zero(X.rows());
  est.fixed_point_residual = 0.0;
  est.gradient_norm = 0.0;
  est.scale_residual = 0.0;
}

}  // namespace detail

//! Solve the tau fixed point by iterating f with halving damping when the
//! fixed-point residual grows. Iterates past the 1e-8 contract toward the
//! rounding floor so that the anchor identity of the one-step bootstrap holds
//! to machine precision.
inline ThetaEstimate tau_fit(const Matrix& X, const Vector& y, const ScaleConfig& cfg,
                             const Vector& init, int max_iter = 500, double fp_tol = 1e-8,
                             const Vector& mult = Vector(), double total = -1.0) {
  cfg.validate();
  const Eigen::Index b = X.rows(), q = X.cols();
  if (y.size() != b) throw std::invalid_argument("tau_fit: size mismatch");
  if (b <= q + 1) throw std::invalid_argument("tau_fit: need b > |S| + 1 observations");
  const bool weighted = mult.size() == b;
  const double W = weighted ? (total > 0.0 ? total : mult.sum()) : double(b);

  ThetaEstimate est;
  est.beta = (init.size() == q) ? init : Vector::Zero(q);

  // initial scale: the M-scale of the starting residuals (the fixed point of
  // the sigma-update at fixed beta), which also detects exact interpolation
  {
    Vector r = y - X * est.beta;
    if (weighted) {
      double zeros = 0.0;
      for (Eigen::Index l = 0; l < b; ++l)
        if (r[l] == 0.0) zeros += mult[l];
      if (zeros / W > 1.0 - cfg.delta) {
        est.degenerate = true;
      } else {
        double s = mad_scale(r);
        if (s <= 0.0) s = r.cwiseAbs().mean();
        for (int it = 0; it < cfg.max_iter && s > 0.0; ++it) {
          double acc = 0.0;
          for (Eigen::Index l = 0; l < b; ++l) acc += mult[l] * rho(r[l] / s, cfg.rho0.c);
          const double next = s * std::sqrt(acc / (W * cfg.delta));
          if (std::abs(next / s - 1.0) < cfg.tol) {
            s = next;
            break;
          }
          s = next;
        }
        est.sigma = s;
      }
    } else {
      const MScaleResult ms = m_scale_full(r, cfg);
      est.degenerate = ms.degenerate;
      est.sigma = ms.sigma;
    }
    if (est.degenerate || !(est.sigma > 0.0)) {
      detail::finish_degenerate_theta(X, y, est);
      return est;
    }
  }
  const double sigma_floor = 1e-14 * std::max(1.0, y.cwiseAbs().maxCoeff());

  const double hard_floor = 1e-13;
  double prev_res = std::numeric_limits<double>::infinity();
  int no_progress = 0;
  int it = 0;
  for (; it < max_iter; ++it) {
    FixedPointMap fp = fixed_point_map(X, y, est.beta, est.sigma, cfg, mult, total);
    if (fp.singular)
      throw RankDeficiencyError("tau_fit: singular weighted Gram matrix");
    Vector beta_next = fp.beta_next;
    double sigma_next = fp.sigma_next;
    double res = std::max((beta_next - est.beta).lpNorm<Eigen::Infinity>(),
                          std::abs(sigma_next - est.sigma));
    if (res > prev_res) {
      for (int d = 0; d < 5 && res > prev_res; ++d) {
        beta_next = 0.5 * (beta_next + est.beta);
        sigma_next = 0.5 * (sigma_next + est.sigma);
        res = std::max((beta_next - est.beta).lpNorm<Eigen::Infinity>(),
                       std::abs(sigma_next - est.sigma));
      }
    }
    est.beta = beta_next;
    est.sigma = sigma_next;
    est.fixed_point_residual = res;
    // interpolation: residuals collapse before the sigma sequence catches up
    if (!(est.sigma > sigma_floor) ||
        (y - X * est.beta).lpNorm<Eigen::Infinity>() < sigma_floor) {
      detail::finish_degenerate_theta(X, y, est);
      return est;
    }
    const double scale = 1.0 + std::max(est.beta.lpNorm<Eigen::Infinity>(), est.sigma);
    if (res < hard_floor * scale) break;
    if (res >= prev_res * 0.999) {
      if (++no_progress >= 8 && res < fp_tol * scale) break;  // rounding stall past contract
    } else {
      no_progress = 0;
    }
    prev_res = res;
  }
  est.iterations = it + 1;

  // cache the weights of the returned theta and the exit diagnostics
  FixedPointMap fp = fixed_point_map(X, y, est.beta, est.sigma, cfg, mult, total);
  est.residuals = y - X * est.beta;
  if (!fp.singular) {
    est.w = fp.w;
    est.v = fp.v;
    est.w_tau = fp.w_tau;
    est.fixed_point_residual =
        std::max((fp.beta_next - est.beta).lpNorm<Eigen::Infinity>(),
                 std::abs(fp.sigma_next - est.sigma));
  }
  auto [grad, scl] = estimating_equation_residuals(X, y, est.beta, est.sigma, cfg, mult, total);
  est.gradient_norm = grad;
  est.scale_residual = scl;
  const double scale = 1.0 + std::max(est.beta.lpNorm<Eigen::Infinity>(), est.sigma);
  est.converged = est.fixed_point_residual < fp_tol * scale;
  return est;
}

}  // namespace tsrd
