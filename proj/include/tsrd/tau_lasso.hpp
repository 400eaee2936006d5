#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <limits>
#include <map>
#include <numeric>
#include <vector>

#include "tsrd/lasso.hpp"
#include "tsrd/rng.hpp"
#include "tsrd/scale.hpp"
#include "tsrd/tau_estimator.hpp"

namespace tsrd {

struct TauLassoConfig {
  ScaleConfig scale_cfg;
  int lambda_grid_len = 70;
  double lambda_ratio = 1.1;   // lambda_k / lambda_{k+1}
  int max_outer_iter = 30;
  double inner_tol = 1e-8;     // weighted-lasso tolerance
  double beta_tol = 1e-7;      // outer sup-norm convergence
  double support_tol = 1e-6;   // magnitude threshold on standardized coefficients

  void validate() const {
    scale_cfg.validate();
    if (!(lambda_ratio > 1.0)) throw std::invalid_argument("TauLassoConfig: lambda_ratio <= 1");
    if (lambda_grid_len < 1) throw std::invalid_argument("TauLassoConfig: empty grid");
    if (!(inner_tol > 0.0) || !(beta_tol > 0.0) || !(support_tol > 0.0))
      throw std::invalid_argument("TauLassoConfig: tolerances must be positive");
  }
};

struct SparseFit {
  Vector beta;            // original units, length p
  double intercept = 0.0;
  Vector beta_std;        // standardized units (support extraction and voting)
  double intercept_std = 0.0;
  double sigma = 0.0;     // final M-scale of residuals
  double lambda = 0.0;
  double objective = std::numeric_limits<double>::infinity();
  std::vector<int> support;
  bool converged = false;
  int outer_iterations = 0;
};

struct IrlsWeights {
  Vector w;      // per-observation weights of the reweighted Lasso
  double w_tau;  // common mixing constant
};

//! Weights of the iteratively reweighted Lasso: w_l = [w_tau psi0(r~_l) + psi1(r~_l)] / r_l,
//! with r~ = r / sigma, and the removable singularity at r = 0 filled by its
//! Taylor limit (w_tau rho0''(0) + rho1''(0)) / sigma.
inline IrlsWeights irls_weights(const Vector& residuals, double sigma, const RhoParams& rho0,
                                const RhoParams& rho1) {
  if (!(sigma > 0.0)) throw std::invalid_argument("irls_weights: sigma must be positive");
  const Eigen::Index b = residuals.size();
  const double c0 = rho0.c, c1 = rho1.c;
  double num = 0.0, den = 0.0;
  for (Eigen::Index l = 0; l < b; ++l) {
    const double rt = residuals[l] / sigma;
    const RhoEval e1 = rho_eval(rt, c1);
    num += 2.0 * e1.rho - e1.psi * rt;
    den += psi(rt, c0) * rt;
  }
  if (den <= 0.0)
    throw DegenerateDataError("irls_weights: no observation inside the rho0 support");
  const double w_tau = num / den;

  Vector w(b);
  const double w0 = (w_tau * 6.0 / (c0 * c0) + 6.0 / (c1 * c1)) / sigma;
  for (Eigen::Index l = 0; l < b; ++l) {
    const double r = residuals[l];
    if (r == 0.0) {
      w[l] = w0;
    } else {
      const double rt = r / sigma;
      w[l] = (w_tau * psi(rt, c0) + psi(rt, c1)) / r;
    }
  }
  return {std::move(w), w_tau};
}

//! Support of a coefficient vector: indices with |beta_j| > tol (0-based).
inline std::vector<int> support(const Vector& beta, double support_tol) {
  std::vector<int> s;
  for (Eigen::Index j = 0; j < beta.size(); ++j)
    if (std::abs(beta[j]) > support_tol) s.push_back(int(j));
  return s;
}

//! Holds one partition's standardized data and fits the tau-Lasso objective
//!   sigma_tau^2(r(beta)) + lambda ||beta||_1
//! at given penalties via IR-LASSO (alternating M-scale update, weight
//! computation and penalized weighted least squares).
class TauLassoProblem {
 public:
  TauLassoProblem(const Matrix& X, const Vector& y, TauLassoConfig cfg)
      : cfg_(std::move(cfg)), b_(X.rows()), p_(X.cols()) {
    cfg_.validate();
    record_ = robust_standardize(X, y, Xs_, ys_, cfg_.scale_cfg);
  }

  const TauLassoConfig& config() const { return cfg_; }
  const Matrix& standardized_design() const { return Xs_; }
  const Vector& centered_response() const { return ys_; }
  const StandardizationRecord& record() const { return record_; }
  Eigen::Index rows() const { return b_; }
  Eigen::Index cols() const { return p_; }

  double objective(const Vector& beta_std, double intercept_std, double lambda) const {
    const Vector r = residuals(beta_std, intercept_std);
    const TauScaleResult t = tau_scale_sq(r, cfg_.scale_cfg);
    return t.tau_sq + lambda * beta_std.lpNorm<1>();
  }

  //! One IR-LASSO fit at `lambda` from the given standardized-scale start.
  //! `objective_trace`, when given, records the objective at the start and
  //! after every accepted step.
  SparseFit fit(double lambda, const Vector& init_std, double init_intercept = 0.0,
                std::vector<double>* objective_trace = nullptr) const {
    Vector beta = (init_std.size() == p_) ? init_std : Vector::Zero(p_);
    double b0 = init_intercept;
    Vector r = residuals(beta, b0);
    MScaleResult ms = m_scale_full(r, cfg_.scale_cfg);
    double obj = objective_from(r, ms, lambda, beta);
    if (objective_trace) objective_trace->push_back(obj);
    bool converged = false;
    bool stalled = false;
    int outer = 0;

    for (; outer < cfg_.max_outer_iter && !ms.degenerate; ++outer) {
      WeightedLassoResult wl;
      try {
        const IrlsWeights iw = irls_weights(r, ms.sigma, cfg_.scale_cfg.rho0, cfg_.scale_cfg.rho1);
        const double lambda_prime = 2.0 * double(b_) * lambda / ms.sigma;
        wl = weighted_lasso(Xs_, ys_, iw.w, lambda_prime, beta, b0, cfg_.inner_tol);
      } catch (const DegenerateDataError&) {
        stalled = true;  // every observation rejected at the current scale
        break;
      }

      // accept only non-increasing objective steps, halving toward the
      // previous iterate otherwise
      Vector cand = wl.beta;
      double cand_b0 = wl.intercept;
      bool accepted = false;
      for (int h = 0; h <= 10; ++h) {
        const Vector rc = residuals(cand, cand_b0);
        const MScaleResult msc = m_scale_full(rc, cfg_.scale_cfg);
        const double oc = objective_from(rc, msc, lambda, cand);
        if (oc <= obj * (1.0 + 1e-12) + 1e-300) {
          const double step = (cand - beta).lpNorm<Eigen::Infinity>();
          beta = cand;
          b0 = cand_b0;
          r = rc;
          ms = msc;
          obj = oc;
          accepted = true;
          if (objective_trace) objective_trace->push_back(obj);
          if (step < cfg_.beta_tol) converged = true;
          break;
        }
        cand = 0.5 * (cand + beta);
        cand_b0 = 0.5 * (cand_b0 + b0);
      }
      if (!accepted) {
        stalled = true;
        break;
      }
      if (converged) break;
    }
    if (ms.degenerate) converged = true;  // exact interpolation of > (1-delta) of the rows

    SparseFit out;
    out.beta_std = beta;
    out.intercept_std = b0;
    destandardize(record_, beta, b0, out.beta, out.intercept);
    out.sigma = ms.sigma;
    out.lambda = lambda;
    out.objective = obj;
    out.support = tsrd::support(beta, cfg_.support_tol);
    out.converged = converged && !stalled;
    out.outer_iterations = outer;
    return out;
  }

  //! Multi-start fit: zero vector, a weighted-lasso start with MAD-scaled
  //! initial weights, and 5 elemental-subset LS candidates; keeps the fit with
  //! the lowest objective.
  SparseFit fit_multistart(double lambda, std::uint64_t seed) const {
    SparseFit best = fit(lambda, Vector::Zero(p_));
    auto consider = [&](const Vector& init, double init_b0) {
      SparseFit f = fit(lambda, init, init_b0);
      if (f.objective < best.objective) best = std::move(f);
    };
    // (b) one reweighted-lasso step from the MAD-scaled response
    {
      const double s0 = mad_scale(ys_);
      if (s0 > 0.0) {
        try {
          const IrlsWeights iw = irls_weights(ys_, s0, cfg_.scale_cfg.rho0, cfg_.scale_cfg.rho1);
          const double lambda_prime = 2.0 * double(b_) * lambda / s0;
          WeightedLassoResult wl =
              weighted_lasso(Xs_, ys_, iw.w, lambda_prime, Vector::Zero(p_), 0.0, cfg_.inner_tol);
          consider(wl.beta, wl.intercept);
        } catch (const DegenerateDataError&) {
        }
      }
    }
    // (c) elemental-subset least squares
    std::mt19937_64 eng = make_engine(seed, stream::kInit);
    const Eigen::Index m = std::min<Eigen::Index>(b_, p_ + 1);
    for (int k = 0; k < 5; ++k) {
      std::vector<Eigen::Index> rows(static_cast<std::size_t>(b_));
      std::iota(rows.begin(), rows.end(), 0);
      for (Eigen::Index i = 0; i < m; ++i) {
        std::uniform_int_distribution<Eigen::Index> pick(i, b_ - 1);
        std::swap(rows[i], rows[pick(eng)]);
      }
      Matrix A(m, p_ + 1);
      Vector yy(m);
      for (Eigen::Index i = 0; i < m; ++i) {
        A(i, 0) = 1.0;
        A.row(i).tail(p_) = Xs_.row(rows[i]);
        yy[i] = ys_[rows[i]];
      }
      const Vector sol = A.colPivHouseholderQr().solve(yy);
      consider(sol.tail(p_), sol[0]);
    }
    return best;
  }

  //! lambda_max: smallest penalty on a doubling search from the robust
  //! correlation bound at which the zero-initialized fit has empty support.
  double lambda_max() const {
    const double s_y = mad_scale(ys_);
    if (!(s_y > 0.0)) throw DegenerateDataError("lambda_max: degenerate response");
    double lam = seed_lambda(s_y);
    if (!(lam > 0.0)) throw DegenerateDataError("lambda_max: non-positive seed estimate");
    for (int k = 0; k < 64; ++k) {
      SparseFit f = fit(lam, Vector::Zero(p_));
      if (f.support.empty()) return lam;
      lam *= 2.0;
    }
    throw DegenerateDataError("lambda_max: doubling search failed to sparsify");
  }

  //! Decreasing penalty grid lambda_1 = lambda_max, lambda_{k+1} = lambda_k / ratio.
  std::vector<double> lambda_grid() const {
    std::vector<double> grid(cfg_.lambda_grid_len);
    grid[0] = lambda_max();
    for (int k = 1; k < cfg_.lambda_grid_len; ++k) grid[k] = grid[k - 1] / cfg_.lambda_ratio;
    return grid;
  }

  //! RBIC(sigma, |S|) = b log(sigma^2) + C(b, p) |S|.
  double rbic(double sigma, std::size_t support_size) const {
    if (!(sigma > 0.0)) return std::numeric_limits<double>::infinity();  // interpolating fit
    const double C =
        (p_ < b_) ? std::log(double(b_)) : std::log(std::log(double(b_))) * std::log(double(p_));
    return double(b_) * std::log(sigma * sigma) + C * double(support_size);
  }

  //! RBIC of a path fit, scored on the residual M-scale of the support's own
  //! unpenalized tau refit. The refit scale depends on the support alone, so
  //! it is constant across the correct-support plateau of the path; scoring
  //! the penalized fit's scale instead lets the l1-shrinkage bias drag the
  //! minimum into the overfit region.
  double rbic(const SparseFit& f) const { return rbic(refit_sigma(f), f.support.size()); }

  //! Residual M-scale of the unpenalized tau fit restricted to the support
  //! (plus intercept), warm-started from the penalized coefficients and
  //! cached per distinct support. Empty support keeps the fit's own scale.
  double refit_sigma(const SparseFit& f) const {
    if (f.support.empty() || !(f.sigma > 0.0)) return f.sigma;
    if (long(f.support.size()) + 2 >= b_) return 0.0;  // saturated model
    const auto hit = refit_cache_.find(f.support);
    if (hit != refit_cache_.end()) return hit->second;

    const long q = long(f.support.size()) + 1;
    Matrix D(b_, q);
    D.col(0).setOnes();
    Vector init(q);
    init[0] = f.intercept_std;
    for (std::size_t k = 0; k < f.support.size(); ++k) {
      D.col(long(k) + 1) = Xs_.col(f.support[k]);
      init[long(k) + 1] = f.beta_std[f.support[k]];
    }
    double sigma = f.sigma;
    try {
      const ThetaEstimate theta = tau_fit(D, ys_, cfg_.scale_cfg, init, 200);
      sigma = theta.degenerate ? 0.0 : theta.sigma;
    } catch (const std::exception&) {
      // singular restricted design: keep the penalized scale
    }
    refit_cache_.emplace(f.support, sigma);
    return sigma;
  }

  struct Selection {
    double lambda_star = 0.0;
    SparseFit fit;
    std::vector<double> grid;
    std::vector<double> rbic_path;
  };

  //! Warm-started path over the grid, model chosen by minimum RBIC with ties
  //! broken toward the larger (sparser) penalty.
  Selection rbic_select(const std::vector<double>& grid) const {
    if (grid.empty()) throw std::invalid_argument("rbic_select: empty grid");
    Selection sel;
    sel.grid = grid;
    Vector warm = Vector::Zero(p_);
    double warm_b0 = 0.0;
    double best = std::numeric_limits<double>::infinity();
    bool any = false;
    for (double lam : grid) {
      SparseFit f = fit(lam, warm, warm_b0);
      warm = f.beta_std;
      warm_b0 = f.intercept_std;
      const double crit = rbic(f);
      sel.rbic_path.push_back(crit);
      if (std::isfinite(crit) && crit < best) {  // strict: ties keep the sparser model
        best = crit;
        sel.lambda_star = lam;
        sel.fit = std::move(f);
        any = true;
      }
    }
    if (!any) throw DegenerateDataError("rbic_select: every path fit failed");
    return sel;
  }

  Selection rbic_select() const { return rbic_select(lambda_grid()); }

 private:
  Vector residuals(const Vector& beta, double b0) const {
    Vector r = ys_ - Xs_ * beta;
    r.array() -= b0;
    return r;
  }

  double objective_from(const Vector& r, const MScaleResult& ms, double lambda,
                        const Vector& beta) const {
    double tau_sq = 0.0;
    if (!ms.degenerate && ms.sigma > 0.0) {
      double acc = 0.0;
      for (Eigen::Index l = 0; l < b_; ++l) acc += rho(r[l] / ms.sigma, cfg_.scale_cfg.rho1.c);
      tau_sq = ms.sigma * ms.sigma * acc / double(b_);
    }
    return tau_sq + lambda * beta.lpNorm<1>();
  }

  double seed_lambda(double s_y) const {
    // bisquare weights from the MAD-scaled centered response
    Vector u(b_);
    for (Eigen::Index l = 0; l < b_; ++l) {
      const double t = ys_[l] / s_y;
      u[l] = (t == 0.0) ? 6.0 / (cfg_.scale_cfg.rho0.c * cfg_.scale_cfg.rho0.c)
                        : psi(t, cfg_.scale_cfg.rho0.c) / t;
    }
    double best = 0.0;
    const double sy2 = (u.array() * ys_.array().square()).sum();
    for (Eigen::Index j = 0; j < p_; ++j) {
      const double sxy = (u.array() * Xs_.col(j).array() * ys_.array()).sum();
      const double sx2 = (u.array() * Xs_.col(j).array().square()).sum();
      if (sx2 > 0.0 && sy2 > 0.0) best = std::max(best, std::abs(sxy) / std::sqrt(sx2 * sy2));
    }
    return best * s_y;
  }

  TauLassoConfig cfg_;
  Eigen::Index b_, p_;
  mutable std::map<std::vector<int>, double> refit_cache_;
  Matrix Xs_;
  Vector ys_;
  StandardizationRecord record_;
};

//! Convenience wrappers matching the operation-level API.
inline SparseFit tau_lasso_fit(const Matrix& X, const Vector& y, double lambda, const Vector& init,
                               const TauLassoConfig& cfg) {
  return TauLassoProblem(X, y, cfg).fit(lambda, init);
}

inline std::vector<double> lambda_grid(const Matrix& X, const Vector& y,
                                       const TauLassoConfig& cfg) {
  return TauLassoProblem(X, y, cfg).lambda_grid();
}

}  // namespace tsrd
