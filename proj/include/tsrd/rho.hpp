#pragma once

#include <cmath>
#include <stdexcept>
#include <string>

namespace tsrd {

//! Role of a bounded rho-function in the two-function family: rho0 drives the
//! M-scale (breakdown), rho1 drives the efficient part of the tau-scale.
enum class RhoKind { rho0, rho1 };

enum class EstimatorKind { tau, m };

//! Tukey bisquare rho-function with tuning constant c.
//! rho(t) = 1 - (1 - (t/c)^2)^3 for |t| <= c, and 1 outside.
struct RhoParams {
  double c;
  RhoKind kind;

  RhoParams(double c_, RhoKind kind_) : c(c_), kind(kind_) {
    if (!(c > 0.0)) throw std::invalid_argument("RhoParams: c must be positive");
  }
};

struct RhoEval {
  double rho;        // in [0, 1]
  double psi;        // rho'
  double psi_prime;  // rho''
};

//! Evaluate rho, rho' and rho'' of the bisquare at t. Total function: all
//! three vanish appropriately beyond |t| = c (rho = 1, psi = psi' = 0).
inline RhoEval rho_eval(double t, double c) noexcept {
  const double u = (t / c) * (t / c);
  if (u >= 1.0) return {1.0, 0.0, 0.0};
  const double v = 1.0 - u;
  return {1.0 - v * v * v,                      // 3u - 3u^2 + u^3
          6.0 * t / (c * c) * v * v,            // (6/c^2) t (1-u)^2
          6.0 / (c * c) * v * (1.0 - 5.0 * u)};
}

inline RhoEval rho_eval(double t, const RhoParams& p) noexcept { return rho_eval(t, p.c); }

inline double rho(double t, double c) noexcept { return rho_eval(t, c).rho; }
inline double psi(double t, double c) noexcept { return rho_eval(t, c).psi; }
inline double psi_prime(double t, double c) noexcept { return rho_eval(t, c).psi_prime; }

//! Inverse of rho on [0, c]: the t >= 0 with rho(t) = y, y in [0, 1].
inline double rho_inverse(double y, double c) {
  if (y < 0.0 || y > 1.0) throw std::invalid_argument("rho_inverse: y outside [0,1]");
  // (1-u)^3 = 1-y  =>  u = 1 - cbrt(1-y)
  return c * std::sqrt(1.0 - std::cbrt(1.0 - y));
}

struct CalibrationTargets {
  double delta_star = 0.5;       // target breakdown fraction, in (0, 0.5]
  double efficiency_star = 0.95; // target Gaussian efficiency, in (0, 1)
  int quadrature_order = 60;     // order of the Gauss-Hermite utility (oracle use)

  void validate() const {
    if (!(delta_star > 0.0 && delta_star <= 0.5))
      throw std::invalid_argument("CalibrationTargets: delta_star outside (0, 0.5]");
    if (!(efficiency_star > 0.0 && efficiency_star < 1.0))
      throw std::invalid_argument("CalibrationTargets: efficiency_star outside (0,1)");
    if (quadrature_order < 1)
      throw std::invalid_argument("CalibrationTargets: quadrature_order < 1");
  }
};

struct CalibrationError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline double normal_pdf(double t) noexcept {
  return std::exp(-0.5 * t * t) * 0.3989422804014326779;
}

// Truncated even moments M_k = E[Z^k 1{|Z|<=c}], Z ~ N(0,1), via
// M_k = (k-1) M_{k-2} - 2 c^{k-1} phi(c), M_0 = erf(c/sqrt(2)).
struct TruncatedMoments {
  double m[6];  // M_0, M_2, ..., M_10
  explicit TruncatedMoments(double c) {
    const double p = normal_pdf(c);
    m[0] = std::erf(c * 0.7071067811865475244);
    double cp = c;  // c^{k-1} running power
    for (int i = 1; i < 6; ++i) {
      m[i] = (2 * i - 1) * m[i - 1] - 2.0 * cp * p;
      cp *= c * c;
    }
  }
  double operator()(int k) const { return m[k / 2]; }
};

}  // namespace detail

//! E[rho(Z; c)], Z ~ N(0,1). Exact (closed form).
inline double expect_rho(double c) {
  detail::TruncatedMoments M(c);
  const double c2 = c * c;
  return 3.0 * M(2) / c2 - 3.0 * M(4) / (c2 * c2) + M(6) / (c2 * c2 * c2) + (1.0 - M(0));
}

//! E[psi(Z; c) Z]. Exact.
inline double expect_psi_t(double c) {
  detail::TruncatedMoments M(c);
  const double c2 = c * c;
  return 6.0 / c2 * (M(2) - 2.0 * M(4) / c2 + M(6) / (c2 * c2));
}

//! E[psi'(Z; c)]. Exact.
inline double expect_psi_prime(double c) {
  detail::TruncatedMoments M(c);
  const double c2 = c * c;
  return 6.0 / c2 * (M(0) - 6.0 * M(2) / c2 + 5.0 * M(4) / (c2 * c2));
}

//! E[psi(Z; c)^2]. Exact.
inline double expect_psi_sq(double c) {
  detail::TruncatedMoments M(c);
  const double c2 = c * c;
  const double c4 = c2 * c2;
  return 36.0 / c4 *
         (M(2) - 4.0 * M(4) / c2 + 6.0 * M(6) / c4 - 4.0 * M(8) / (c4 * c2) + M(10) / (c4 * c4));
}

//! E[psi(Z; ca) psi(Z; cb)]; the product is supported on |Z| <= min(ca, cb).
inline double expect_psi_cross(double ca, double cb) {
  detail::TruncatedMoments M(std::min(ca, cb));
  const double a = 1.0 / (ca * ca), b = 1.0 / (cb * cb);
  const double s = M(2) - 2.0 * (a + b) * M(4) + ((a + b) * (a + b) + 2.0 * a * b) * M(6) -
                   2.0 * a * b * (a + b) * M(8) + a * a * b * b * M(10);
  return 36.0 * a * b * s;
}

//! The mixing constant of the composite score: W = (2E[rho1] - E[psi1 t]) / E[psi0 t].
inline double tau_w_constant(double c0, double c1) {
  return (2.0 * expect_rho(c1) - expect_psi_t(c1)) / expect_psi_t(c0);
}

//! Gaussian efficiency of the estimator score. For the tau kind the score is
//! the composite W psi0 + psi1; for the m kind it is psi1 alone.
inline double gaussian_efficiency(double c0, double c1, EstimatorKind kind) {
  if (kind == EstimatorKind::m) {
    const double n = expect_psi_prime(c1);
    return n * n / expect_psi_sq(c1);
  }
  const double w = tau_w_constant(c0, c1);
  const double num = w * expect_psi_prime(c0) + expect_psi_prime(c1);
  const double den =
      w * w * expect_psi_sq(c0) + 2.0 * w * expect_psi_cross(c0, c1) + expect_psi_sq(c1);
  return num * num / den;
}

namespace detail {

template <class F>
double bisect(F f, double lo, double hi, double xtol, int max_iter, const char* what) {
  double flo = f(lo), fhi = f(hi);
  if (flo == 0.0) return lo;
  if (fhi == 0.0) return hi;
  if ((flo > 0.0) == (fhi > 0.0))
    throw CalibrationError(std::string(what) + ": no sign change in bracket");
  for (int i = 0; i < max_iter; ++i) {
    const double mid = 0.5 * (lo + hi);
    const double fm = f(mid);
    if (fm == 0.0 || hi - lo < xtol) return mid;
    if ((fm > 0.0) == (flo > 0.0)) {
      lo = mid;
      flo = fm;
    } else {
      hi = mid;
    }
  }
  throw CalibrationError(std::string(what) + ": bisection did not converge");
}

}  // namespace detail

//! Tuning constant c0 with E[rho0(Z; c0)] = delta_star. Strictly decreasing in
//! delta_star. Solved by bisection on [0.1, 50] to 1e-12.
inline double calibrate_c0(const CalibrationTargets& targets) {
  targets.validate();
  return detail::bisect([&](double c) { return expect_rho(c) - targets.delta_star; }, 0.1, 50.0,
                        1e-12, 200, "calibrate_c0");
}

//! Tuning constant c1 with gaussian_efficiency(c0, c1, kind) = efficiency_star.
inline double calibrate_c1(const CalibrationTargets& targets, double c0, EstimatorKind kind) {
  targets.validate();
  if (kind == EstimatorKind::tau && !(c0 > 0.0))
    throw std::invalid_argument("calibrate_c1: tau kind needs a valid c0");
  return detail::bisect(
      [&](double c) { return gaussian_efficiency(c0, c, kind) - targets.efficiency_star; }, 0.1,
      50.0, 1e-10, 200, "calibrate_c1");
}

//! Generic Gauss-Hermite expectation E[f(Z)], Z ~ N(0,1). Adequate for smooth
//! integrands; test oracles use it to cross-check the closed forms.
template <class F>
double gauss_hermite_expectation(F f, int order = 60) {
  // Golub-Welsch on the Hermite Jacobi matrix (symmetric tridiagonal with
  // off-diagonals sqrt(k)), eigenvalues by bisection-free QL is overkill here;
  // Newton iteration on the recurrence is standard and stable for order <= 200.
  std::vector<double> nodes(order), weights(order);
  const double pi_quarter = 0.7511255444649425;  // pi^{-1/4}
  auto hermite = [&](double x) {
    // orthonormal Hermite functions; returns {H_n(x), H_{n-1}(x)}
    double p1 = pi_quarter, p2 = 0.0;
    for (int j = 0; j < order; ++j) {
      const double p3 = p2;
      p2 = p1;
      p1 = x * std::sqrt(2.0 / (j + 1)) * p2 - std::sqrt(double(j) / (j + 1)) * p3;
    }
    return std::pair<double, double>(p1, p2);
  };
  const int half = (order + 1) / 2;
  std::vector<double> root(half);  // positive roots, largest first
  double z = 0.0;
  for (int i = 0; i < half; ++i) {
    // initial guesses per Numerical Recipes gauher
    if (i == 0)
      z = std::sqrt(2.0 * order + 1.0) - 1.85575 * std::pow(2.0 * order + 1.0, -1.0 / 6.0);
    else if (i == 1)
      z -= 1.14 * std::pow(double(order), 0.426) / z;
    else if (i == 2)
      z = 1.86 * z - 0.86 * root[0];
    else if (i == 3)
      z = 1.91 * z - 0.91 * root[1];
    else
      z = 2.0 * z - root[i - 2];
    for (int it = 0; it < 100; ++it) {
      auto [p1, p2] = hermite(z);
      const double dp = std::sqrt(2.0 * order) * p2;
      const double dz = p1 / dp;
      z -= dz;
      if (std::abs(dz) < 1e-14) break;
    }
    root[i] = z;
    auto [p1, p2] = hermite(z);
    (void)p1;
    const double w = 2.0 / (2.0 * order * p2 * p2);
    nodes[order - 1 - i] = z;
    nodes[i] = -z;
    weights[order - 1 - i] = w;
    weights[i] = w;
  }
  // E[f(Z)] = (1/sqrt(pi)) sum w_i f(sqrt(2) x_i)
  double acc = 0.0;
  for (int i = 0; i < order; ++i) acc += weights[i] * f(std::sqrt(2.0) * nodes[i]);
  return acc / std::sqrt(M_PI);
}

}  // namespace tsrd
