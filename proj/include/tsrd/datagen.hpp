#pragma once

#include <Eigen/Dense>
#include <cmath>
#include <cstdint>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsrd/rng.hpp"
#include "tsrd/scale.hpp"

namespace tsrd {

enum class BetaPlacement { leading_block, random_positions };

struct ScenarioSpec {
  long n = 0;
  int p = 0;
  long b = 0;
  int k_s = 0;
  double snr_db = 15.0;
  int B = 300;                       // bootstrap replicates per partition
  double correlation = 0.0;          // rho of the Toeplitz design; 0 = identity
  std::vector<double> beta_values;   // nonzero values; size 1 means constant
  BetaPlacement placement = BetaPlacement::random_positions;
  std::uint64_t seed = 0;

  void validate() const {
    if (n < 1 || p < 1) throw std::invalid_argument("ScenarioSpec: empty data");
    if (k_s > p) throw std::invalid_argument("ScenarioSpec: k_s > p");
    if (b > n) throw std::invalid_argument("ScenarioSpec: b > n");
    if (!(correlation >= 0.0 && correlation < 1.0))
      throw std::invalid_argument("ScenarioSpec: correlation outside [0,1)");
    if (!std::isfinite(snr_db)) throw std::invalid_argument("ScenarioSpec: SNR not finite");
  }

  //! The paper's five simulation settings, scaled by `shrink` in n (>= 1
  //! shrinks; b is scaled alongside to preserve the b/n ratio).
  static ScenarioSpec paper_scenario(int which, double shrink = 1.0) {
    ScenarioSpec s;
    switch (which) {
      case 1: s = make(27000, 30000, 900, 40, 15.0, 1000, 0.5, {3.0}); break;
      case 2: s = make(2000000, 80, 40000, 20, 30.0, 400, 0.0, {3.0}); break;
      case 3: s = make(80000, 100, 4000, 10, 15.0, 300, 0.5, {3.0}); break;
      case 4:
        s = make(4900, 6000, 350, 10, 15.0, 1000, 0.5,
                 {2.5, 2.5, 2.5, 2.0, 3.0, 3.0, 3.0, 3.5, 3.5, 3.5});
        s.placement = BetaPlacement::leading_block;
        break;
      case 5:
        s = make(20000, 80, 4000, 15, 15.0, 300, 0.5,
                 {3.5, 3.5, 3.5, 5.0, 5.0, 5.0, 2.5, 2.5, 2.5, 1.5, 2.0, 2.0, 2.0, 2.0, 2.0});
        s.placement = BetaPlacement::leading_block;
        break;
      default: throw std::invalid_argument("paper_scenario: index must be 1..5");
    }
    if (shrink > 1.0) {
      s.n = std::max<long>(s.b, long(std::llround(double(s.n) / shrink)));
      s.b = std::max<long>(1, long(std::llround(double(s.b) / shrink)));
    }
    return s;
  }

 private:
  static ScenarioSpec make(long n, int p, long b, int k, double snr, int B, double rho,
                           std::vector<double> vals) {
    ScenarioSpec s;
    s.n = n; s.p = p; s.b = b; s.k_s = k; s.snr_db = snr; s.B = B;
    s.correlation = rho; s.beta_values = std::move(vals);
    return s;
  }
};

struct GeneratedData {
  Matrix X;
  Vector y;
  Vector beta_true;         // length p
  std::vector<int> support; // realized nonzero positions, sorted
  double sigma_v = 0.0;     // SNR-calibrated noise SD
};

//! Rows of X i.i.d. N(0, Sigma) with Sigma_ij = rho^|i-j| (AR(1) sampler; exact
//! for the Toeplitz structure) or identity; v i.i.d. N(0, sigma_v^2) with
//! sigma_v^2 = ||X beta||^2 10^{-SNR/10} / n.
inline GeneratedData generate_scenario(const ScenarioSpec& spec) {
  spec.validate();
  GeneratedData out;
  std::mt19937_64 eng = make_engine(spec.seed, stream::kDataGen);
  std::normal_distribution<double> gauss(0.0, 1.0);

  out.X.resize(spec.n, spec.p);
  const double rho = spec.correlation;
  const double innov = std::sqrt(1.0 - rho * rho);
  for (long i = 0; i < spec.n; ++i) {
    double prev = gauss(eng);
    out.X(i, 0) = prev;
    for (int j = 1; j < spec.p; ++j) {
      prev = rho * prev + innov * gauss(eng);
      out.X(i, j) = prev;
    }
  }

  out.beta_true = Vector::Zero(spec.p);
  std::vector<int> pos(static_cast<std::size_t>(spec.p));
  std::iota(pos.begin(), pos.end(), 0);
  if (spec.placement == BetaPlacement::random_positions) {
    for (int i = 0; i < spec.k_s; ++i) {
      std::uniform_int_distribution<int> pick(i, spec.p - 1);
      std::swap(pos[std::size_t(i)], pos[std::size_t(pick(eng))]);
    }
  }
  pos.resize(std::size_t(spec.k_s));
  std::sort(pos.begin(), pos.end());
  for (int i = 0; i < spec.k_s; ++i) {
    const double v = spec.beta_values.empty()
                         ? 3.0
                         : spec.beta_values[std::size_t(i) % spec.beta_values.size()];
    out.beta_true[pos[std::size_t(i)]] = v;
  }
  out.support = pos;

  const Vector signal = out.X * out.beta_true;
  out.sigma_v = std::sqrt(signal.squaredNorm() * std::pow(10.0, -spec.snr_db / 10.0) /
                          double(spec.n));
  out.y = signal;
  for (long i = 0; i < spec.n; ++i) out.y[i] += out.sigma_v * gauss(eng);
  return out;
}

enum class ContaminationScheme {
  scheme1,         // y and X rows replaced by zero-mean Gaussians with sigma_e
  scheme2,         // gross shifts: y ~ N(250, 1), X rows ~ N(50 1_p, I)
  scheme3,         // noise redrawn from Student-t (df = 1); no row replacement
  scheme4,         // scheme 1 replacement on top of scheme 3 noise
  response_gauss,  // y replaced by N(0, sigma_e^2); X untouched
  decimal_shift    // one random response multiplied by 10^{alpha_o}
};

struct ContaminationSpec {
  ContaminationScheme scheme = ContaminationScheme::response_gauss;
  double fraction = 0.0;     // xi_o
  double sigma_e = 250.0;
  double shift_y = 250.0;    // scheme 2 response mean
  double shift_x = 50.0;     // scheme 2 regressor mean
  double alpha_o = 5.0;      // decimal-shift exponent
  std::uint64_t seed = 0;

  void validate() const {
    if (!(fraction >= 0.0 && fraction < 1.0))
      throw std::invalid_argument("ContaminationSpec: fraction outside [0,1)");
  }
};

struct ContaminationResult {
  std::vector<int> mask;  // modified row indices, sorted
};

namespace detail {

// rows replaced across schemes under a shared seed are the same set
inline std::vector<long> pick_rows(long n, long m, std::mt19937_64& eng) {
  std::vector<long> rows(static_cast<std::size_t>(n));
  std::iota(rows.begin(), rows.end(), 0);
  for (long i = 0; i < m; ++i) {
    std::uniform_int_distribution<long> pick(i, n - 1);
    std::swap(rows[std::size_t(i)], rows[std::size_t(pick(eng))]);
  }
  rows.resize(std::size_t(m));
  std::sort(rows.begin(), rows.end());
  return rows;
}

inline double student_t1(std::mt19937_64& eng) {
  // ratio of independent standard Gaussians
  std::normal_distribution<double> gauss(0.0, 1.0);
  double den = 0.0;
  do {
    den = gauss(eng);
  } while (den == 0.0);
  return gauss(eng) / den;
}

}  // namespace detail

//! Contaminate (X, y) in place per the scheme; returns the modified-row mask.
//! The replaced-row set depends only on (seed, n), so schemes 1/2/4 hit the
//! same observations under a shared seed.
inline ContaminationResult contaminate(Matrix& X, Vector& y, const GeneratedData& truth,
                                       const ContaminationSpec& spec) {
  spec.validate();
  const long n = X.rows();
  const int p = int(X.cols());
  std::mt19937_64 row_eng = make_engine(spec.seed, stream::kContaminate, 0);
  std::mt19937_64 val_eng = make_engine(spec.seed, stream::kContaminate, 1);
  std::normal_distribution<double> gauss(0.0, 1.0);
  ContaminationResult out;

  const long m = long(std::ceil(spec.fraction * double(n)));
  auto replaced = [&]() {
    std::vector<long> rows = detail::pick_rows(n, m, row_eng);
    out.mask.assign(rows.begin(), rows.end());
    return rows;
  };

  switch (spec.scheme) {
    case ContaminationScheme::scheme1:
      for (long i : replaced()) {
        y[i] = spec.sigma_e * gauss(val_eng);
        for (int j = 0; j < p; ++j) X(i, j) = spec.sigma_e * gauss(val_eng);
      }
      break;
    case ContaminationScheme::scheme2:
      for (long i : replaced()) {
        y[i] = spec.shift_y + gauss(val_eng);
        for (int j = 0; j < p; ++j) X(i, j) = spec.shift_x + gauss(val_eng);
      }
      break;
    case ContaminationScheme::scheme3:
      // heavy-tailed noise on every row; the mask stays empty (no replacement)
      y = X * truth.beta_true;
      for (long i = 0; i < n; ++i) y[i] += truth.sigma_v * detail::student_t1(val_eng);
      break;
    case ContaminationScheme::scheme4: {
      y = X * truth.beta_true;
      for (long i = 0; i < n; ++i) y[i] += truth.sigma_v * detail::student_t1(val_eng);
      for (long i : replaced()) {
        y[i] = spec.sigma_e * gauss(val_eng);
        for (int j = 0; j < p; ++j) X(i, j) = spec.sigma_e * gauss(val_eng);
      }
      break;
    }
    case ContaminationScheme::response_gauss:
      for (long i : replaced()) y[i] = spec.sigma_e * gauss(val_eng);
      break;
    case ContaminationScheme::decimal_shift: {
      std::uniform_int_distribution<long> pick(0, n - 1);
      const long i = pick(row_eng);
      y[i] *= std::pow(10.0, spec.alpha_o);
      out.mask.assign(1, int(i));
      break;
    }
  }
  return out;
}

inline ContaminationScheme scheme_from_string(const std::string& s) {
  if (s == "1" || s == "scheme1") return ContaminationScheme::scheme1;
  if (s == "2" || s == "scheme2") return ContaminationScheme::scheme2;
  if (s == "3" || s == "scheme3") return ContaminationScheme::scheme3;
  if (s == "4" || s == "scheme4") return ContaminationScheme::scheme4;
  if (s == "response" || s == "response_gauss") return ContaminationScheme::response_gauss;
  if (s == "decimal" || s == "decimal_shift") return ContaminationScheme::decimal_shift;
  throw std::invalid_argument("unknown contamination scheme: " + s);
}

}  // namespace tsrd
