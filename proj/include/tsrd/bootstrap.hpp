#pragma once

#include <Eigen/Dense>
#include <algorithm>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <vector>

#include "tsrd/rng.hpp"
#include "tsrd/tau_estimator.hpp"

namespace tsrd {

struct BootstrapWeights {
  Eigen::VectorXd omega;  // nonnegative integer counts, sum = n
  long n = 0;
};

//! omega ~ Multinomial(n, uniform over b cells), drawn as a binomial chain.
inline BootstrapWeights multinomial_weights(long n, long b, std::mt19937_64& eng) {
  if (n < 1 || b < 1) throw std::invalid_argument("multinomial_weights: n and b must be >= 1");
  BootstrapWeights out;
  out.n = n;
  out.omega = Eigen::VectorXd::Zero(b);
  long remaining = n;
  for (long l = 0; l < b - 1 && remaining > 0; ++l) {
    std::binomial_distribution<long> bin(remaining, 1.0 / double(b - l));
    const long k = bin(eng);
    out.omega[l] = double(k);
    remaining -= k;
  }
  out.omega[b - 1] = double(remaining);
  return out;
}

inline BootstrapWeights multinomial_weights(long n, long b, std::uint64_t seed,
                                            std::uint64_t stream_id = stream::kBootstrap,
                                            std::uint64_t counter = 0) {
  std::mt19937_64 eng = make_engine(seed, stream_id, counter);
  return multinomial_weights(n, b, eng);
}

struct OneStepReplicate {
  Vector beta1;
  double sigma1 = 0.0;
  bool singular = false;
};

//! One-step bootstrap replicate evaluated at the anchor estimate, without
//! re-iteration: the omega-weighted LS step with weights w*_l and the
//! rescaled sigma step with v*_l = (b/n) v_l.
inline OneStepReplicate one_step_replicate(const ThetaEstimate& theta, const Matrix& X,
                                           const Vector& y, const BootstrapWeights& omega,
                                           const ScaleConfig& cfg) {
  const Eigen::Index b = X.rows(), q = X.cols();
  if (theta.beta.size() != q || omega.omega.size() != b)
    throw std::invalid_argument("one_step_replicate: dimension mismatch");
  OneStepReplicate out;

  const double c0 = cfg.rho0.c, c1 = cfg.rho1.c;
  const Vector& r = theta.residuals;
  const double sigma = theta.sigma;

  double num = 0.0, den = 0.0;
  for (Eigen::Index l = 0; l < b; ++l) {
    const double m = omega.omega[l];
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
  const double w_tau_star = num / den;
  const double w_limit = (w_tau_star * 6.0 / (c0 * c0) + 6.0 / (c1 * c1)) / sigma;

  Matrix G = Matrix::Zero(q, q);
  Vector h = Vector::Zero(q);
  double sig = 0.0;
  const double scale_v = double(b) / double(omega.n);  // v*_l = (b/n) v_l
  for (Eigen::Index l = 0; l < b; ++l) {
    const double m = omega.omega[l];
    if (m == 0.0) continue;
    const double rl = r[l];
    const double rt = rl / sigma;
    const double w =
        (rl == 0.0) ? w_limit : (w_tau_star * psi(rt, c0) + psi(rt, c1)) / rl;
    G.selfadjointView<Eigen::Lower>().rankUpdate(X.row(l).transpose(), m * w);
    h += m * w * y[l] * X.row(l).transpose();
    sig += m * scale_v * theta.v[l] * rl;
  }
  Eigen::LLT<Matrix> llt(G.selfadjointView<Eigen::Lower>());
  if (llt.info() != Eigen::Success) {
    out.singular = true;
    return out;
  }
  out.beta1 = llt.solve(h);
  out.sigma1 = sig;
  return out;
}

struct CorrectionError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! Blocks of [I - grad f(theta)]^{-1} assembled analytically via the Schur
//! complement: M maps beta deviations, d maps sigma deviations.
struct CorrectionFactors {
  Matrix M;          // q x q
  Vector d;          // q
  Vector N;          // 1 x q block (stored as a vector)
  double q_scalar = 0.0;
  double cond = 0.0;  // condition number of [I - grad f]
  Matrix A_block;     // the assembled [I - grad f] for diagnostics/tests
};

inline CorrectionFactors correction_matrices(const ThetaEstimate& theta, const Matrix& X,
                                             const ScaleConfig& cfg) {
  const Eigen::Index b = X.rows(), q = X.cols();
  if (theta.beta.size() != q) throw std::invalid_argument("correction_matrices: dim mismatch");
  if (theta.degenerate || !(theta.sigma > 0.0))
    throw CorrectionError("correction_matrices: degenerate anchor");
  const double c0 = cfg.rho0.c, c1 = cfg.rho1.c;
  const double sigma = theta.sigma;
  const double bd = double(b) * cfg.delta;
  const Vector& r = theta.residuals;

  // shared sums
  double S_psi0t = 0.0;   // sum rho0'(rt) rt
  Vector u = Vector::Zero(q);        // sum rho0'(rt) x_l
  Vector grad_w_beta_n1 = Vector::Zero(q);  // sum [rho1'' rt - rho1'] x_l / sigma
  Vector grad_w_beta_n0 = Vector::Zero(q);  // sum [rho0'' rt + rho0'] x_l / sigma
  double grad_w_sig_n1 = 0.0, grad_w_sig_n0 = 0.0;
  Matrix A2 = Matrix::Zero(q, q);
  Vector eta2 = Vector::Zero(q);
  Matrix Ahat = Matrix::Zero(q, q);
  double a = 0.0;
  Vector zeta = Vector::Zero(q);

  for (Eigen::Index l = 0; l < b; ++l) {
    const double rt = r[l] / sigma;
    const RhoEval e0 = rho_eval(rt, c0);
    const RhoEval e1 = rho_eval(rt, c1);
    const auto x = X.row(l).transpose();
    S_psi0t += e0.psi * rt;
    u += e0.psi * x;
    grad_w_beta_n1 += (e1.psi_prime * rt - e1.psi) / sigma * x;
    grad_w_beta_n0 += (e0.psi_prime * rt + e0.psi) / sigma * x;
    grad_w_sig_n1 += (e1.psi_prime * rt - e1.psi) * rt / sigma;
    grad_w_sig_n0 += (e0.psi_prime * rt + e0.psi) * rt / sigma;
    const double curv = theta.w_tau * e0.psi_prime + e1.psi_prime;
    A2.selfadjointView<Eigen::Lower>().rankUpdate(x, curv / (double(b) * sigma));
    eta2 += curv * rt / (double(b) * sigma) * x;
    Ahat.selfadjointView<Eigen::Lower>().rankUpdate(x, theta.w[l] / double(b));
    a += e0.psi * rt / bd;
    zeta += e0.psi / bd * x;
  }
  A2 = A2.selfadjointView<Eigen::Lower>();
  Ahat = Ahat.selfadjointView<Eigen::Lower>();

  if (!(std::abs(S_psi0t) > 0.0))
    throw CorrectionError("correction_matrices: vanishing rho0' weight sum");
  const Vector grad_w_beta = (grad_w_beta_n1 + theta.w_tau * grad_w_beta_n0) / S_psi0t;
  const double grad_w_sigma = (grad_w_sig_n1 + theta.w_tau * grad_w_sig_n0) / S_psi0t;

  const Matrix A1 = (u / double(b)) * grad_w_beta.transpose();
  const Vector eta1 = grad_w_sigma / double(b) * u;

  Eigen::PartialPivLU<Matrix> Ahat_lu(Ahat);
  const Matrix Acal = Ahat_lu.solve(A2 - A1);
  const Vector eta = Ahat_lu.solve(eta2 - eta1);

  if (std::abs(a) < 1e-12) throw CorrectionError("correction_matrices: a vanishes");

  CorrectionFactors out;
  out.A_block.resize(q + 1, q + 1);
  out.A_block.topLeftCorner(q, q) = Acal;
  out.A_block.topRightCorner(q, 1) = eta;
  out.A_block.bottomLeftCorner(1, q) = zeta.transpose();
  out.A_block(q, q) = a;

  // M = (Acal - eta a^{-1} zeta^T)^{-1}; d = -Acal^{-1} eta (a - zeta^T Acal^{-1} eta)^{-1}
  const Matrix schur_beta = Acal - (eta / a) * zeta.transpose();
  Eigen::PartialPivLU<Matrix> schur_lu(schur_beta);
  const Matrix I_q = Matrix::Identity(q, q);
  out.M = schur_lu.solve(I_q);
  if (!out.M.allFinite()) throw CorrectionError("correction_matrices: singular Schur complement");

  Eigen::PartialPivLU<Matrix> Acal_lu(Acal);
  const Vector Ainv_eta = Acal_lu.solve(eta);
  const double schur_sigma = a - zeta.dot(Ainv_eta);
  if (std::abs(schur_sigma) < 1e-300)
    throw CorrectionError("correction_matrices: singular scale Schur complement");
  out.q_scalar = 1.0 / schur_sigma;
  out.d = -Ainv_eta * out.q_scalar;
  Eigen::PartialPivLU<Matrix> AcalT_lu(Acal.transpose().eval());
  out.N = -out.q_scalar * AcalT_lu.solve(zeta);

  Eigen::JacobiSVD<Matrix> svd(out.A_block);
  const auto& sv = svd.singularValues();
  out.cond = sv(0) / sv(sv.size() - 1);

  if (!out.d.allFinite() || !out.N.allFinite())
    throw CorrectionError("correction_matrices: non-finite correction blocks");
  return out;
}

//! Linearly corrected replicate: beta_R = beta_hat + M (beta1 - beta_hat) + d (sigma1 - sigma_hat).
inline Vector corrected_replicate(const ThetaEstimate& theta, const Vector& beta1, double sigma1,
                                  const CorrectionFactors& f) {
  return theta.beta + f.M * (beta1 - theta.beta) + f.d * (sigma1 - theta.sigma);
}

//! B corrected replicates for one partition plus bookkeeping. Row j of
//! `replicates` is reproducible in isolation from seeds[j].
struct ReplicateSet {
  Matrix replicates;       // B_ok x q (intercept coordinate included)
  Vector sigma_replicates; // B_ok
  ThetaEstimate theta_hat;
  std::vector<std::uint64_t> seeds;  // per attempted replicate
  int requested = 0;
  int failed = 0;
};

struct Interval {
  double lower = 0.0;
  double upper = 0.0;
  Interval() = default;
  Interval(double lo, double hi) : lower(lo), upper(hi) {}
};

//! Empirical quantile with linear interpolation of order statistics at
//! h = (B - 1) q + 1 (1-based).
inline double empirical_quantile(std::vector<double> v, double prob) {
  if (v.empty()) throw std::invalid_argument("empirical_quantile: empty sample");
  std::sort(v.begin(), v.end());
  const double h = (double(v.size()) - 1.0) * prob;
  const std::size_t lo = std::size_t(std::floor(h));
  const std::size_t hi = std::min(lo + 1, v.size() - 1);
  return v[lo] + (h - double(lo)) * (v[hi] - v[lo]);
}

struct InsufficientReplicatesError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! Per-coordinate bootstrap percentile intervals at level alpha.
inline std::vector<Interval> percentile_ci(const Matrix& replicates, double alpha,
                                           int min_replicates = 20) {
  if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("percentile_ci: bad alpha");
  const Eigen::Index B = replicates.rows();
  if (B < min_replicates)
    throw InsufficientReplicatesError("percentile_ci: fewer replicates than the floor");
  std::vector<Interval> out;
  out.reserve(std::size_t(replicates.cols()));
  std::vector<double> col(static_cast<std::size_t>(B));
  for (Eigen::Index j = 0; j < replicates.cols(); ++j) {
    for (Eigen::Index i = 0; i < B; ++i) col[std::size_t(i)] = replicates(i, j);
    out.emplace_back(empirical_quantile(col, alpha / 2.0), empirical_quantile(col, 1.0 - alpha / 2.0));
  }
  return out;
}

//! Bootstrap SD: per-coordinate, per-bag sample SD (denominator B-1), averaged
//! over bags, then averaged over coordinates.
inline double bootstrap_sd(const std::vector<Matrix>& replicate_sets) {
  if (replicate_sets.empty()) throw std::invalid_argument("bootstrap_sd: no replicate sets");
  const Eigen::Index q = replicate_sets.front().cols();
  double coord_acc = 0.0;
  for (Eigen::Index j = 0; j < q; ++j) {
    double bag_acc = 0.0;
    for (const Matrix& R : replicate_sets) {
      const Eigen::Index B = R.rows();
      if (B < 2) throw std::invalid_argument("bootstrap_sd: a bag has fewer than 2 replicates");
      const double mean = R.col(j).mean();
      const double ss = (R.col(j).array() - mean).square().sum();
      bag_acc += std::sqrt(ss / double(B - 1));
    }
    coord_acc += bag_acc / double(replicate_sets.size());
  }
  return coord_acc / double(q);
}

//! Relative error of the bootstrap SD against sigma / sqrt(n * efficiency).
inline double relative_error(double sd_hat, long n, double sigma, double efficiency) {
  if (!(sigma > 0.0)) throw std::invalid_argument("relative_error: sigma must be positive");
  if (!(efficiency > 0.0 && efficiency <= 1.0))
    throw std::invalid_argument("relative_error: efficiency outside (0,1]");
  const double ref = sigma / std::sqrt(double(n) * efficiency);
  return (sd_hat - ref) / ref;
}

}  // namespace tsrd
