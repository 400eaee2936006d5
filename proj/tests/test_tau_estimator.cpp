#include <catch2/catch_amalgamated.hpp>

#include <random>

#include "tsrd/tau_estimator.hpp"

using namespace tsrd;
using Catch::Approx;

namespace {

struct Inst {
  Matrix X;  // intercept column first
  Vector y;
  Vector beta_true;
  double sigma_v;
};

Inst make_inst(long b, int slopes, double sigma, std::uint64_t seed, double beta0 = 1.0) {
  std::mt19937_64 eng(seed);
  std::normal_distribution<double> g(0.0, 1.0);
  Inst inst;
  inst.X.resize(b, slopes + 1);
  inst.X.col(0).setOnes();
  inst.beta_true.resize(slopes + 1);
  inst.beta_true[0] = beta0;
  for (int j = 1; j <= slopes; ++j) inst.beta_true[j] = 3.0;
  for (long i = 0; i < b; ++i)
    for (int j = 1; j <= slopes; ++j) inst.X(i, j) = g(eng);
  inst.y = inst.X * inst.beta_true;
  for (long i = 0; i < b; ++i) inst.y[i] += sigma * g(eng);
  inst.sigma_v = sigma;
  return inst;
}

}  // namespace

TEST_CASE("exact interpolation degenerates with the true coefficients") {
  Inst inst = make_inst(60, 3, 0.0, 1);
  const ThetaEstimate est = tau_fit(inst.X, inst.y, ScaleConfig{}, Vector());
  CHECK(est.degenerate);
  CHECK(est.sigma == 0.0);
  CHECK((est.beta - inst.beta_true).lpNorm<Eigen::Infinity>() < 1e-8);
}

TEST_CASE("regression equivariance under y + X delta") {
  Inst inst = make_inst(300, 4, 0.7, 3);
  const ScaleConfig cfg;
  const ThetaEstimate base = tau_fit(inst.X, inst.y, cfg, Vector());
  Vector delta(5);
  delta << -2.0, 1.0, 0.5, -4.0, 3.0;
  const Vector y2 = inst.y + inst.X * delta;
  const ThetaEstimate shifted = tau_fit(inst.X, y2, cfg, Vector());
  CHECK((shifted.beta - base.beta - delta).lpNorm<Eigen::Infinity>() < 1e-7);
  CHECK(shifted.sigma == Approx(base.sigma).epsilon(1e-7));
}

TEST_CASE("first-order conditions and the fixed-point property hold at return") {
  for (std::uint64_t seed : {11, 12, 13, 14, 15}) {
    Inst inst = make_inst(250, 5, 1.2, seed);
    const ScaleConfig cfg;
    const ThetaEstimate est = tau_fit(inst.X, inst.y, cfg, Vector());
    REQUIRE(est.converged);
    CHECK(est.gradient_norm <= 1e-6);
    CHECK(est.scale_residual <= 1e-8);
    CHECK(est.fixed_point_residual <= 1e-8 * (1.0 + est.beta.lpNorm<Eigen::Infinity>()));
  }
}

TEST_CASE("clean Gaussian estimate tracks least squares at the efficiency rate") {
  const long b = 4000;
  const ScaleConfig cfg;
  int fails = 0;
  for (std::uint64_t seed = 1; seed <= 50; ++seed) {
    Inst inst = make_inst(b, 10, 1.0, 1000 + seed);
    const ThetaEstimate est = tau_fit(inst.X, inst.y, cfg, Vector());
    const Vector ls = (inst.X.transpose() * inst.X).ldlt().solve(inst.X.transpose() * inst.y);
    const double bound = 3.0 * std::sqrt(1.0 / (0.95 * double(b)));
    if (((est.beta - ls).cwiseAbs().maxCoeff()) > bound) ++fails;
  }
  CHECK(fails == 0);
}

TEST_CASE("sigma estimates the noise scale on clean data") {
  Inst inst = make_inst(4000, 5, 2.5, 77);
  const ThetaEstimate est = tau_fit(inst.X, inst.y, ScaleConfig{}, Vector());
  CHECK(est.sigma == Approx(2.5).epsilon(0.06));
}

TEST_CASE("observations beyond the rejection point carry zero weight and no influence") {
  Inst inst = make_inst(400, 3, 1.0, 21);
  const ScaleConfig cfg;
  Matrix Xc = inst.X;
  Vector yc = inst.y;
  for (long i = 0; i < 40; ++i) yc[i] = 1e6;  // gross response outliers
  const ThetaEstimate est = tau_fit(Xc, yc, cfg, inst.beta_true);
  REQUIRE(est.converged);
  const double cmax = std::max(cfg.rho0.c, cfg.rho1.c);
  for (long i = 0; i < 40; ++i) {
    CHECK(std::abs(est.residuals[i] / est.sigma) >= cmax);
    CHECK(est.w[i] == 0.0);
  }
  // zero weight means no term in the weighted normal equations: the estimate
  // solves the system assembled from the clean rows alone
  Matrix G = Matrix::Zero(4, 4);
  Vector h = Vector::Zero(4);
  for (long i = 40; i < 400; ++i) {
    G += est.w[i] * Xc.row(i).transpose() * Xc.row(i);
    h += est.w[i] * yc[i] * Xc.row(i).transpose();
  }
  const Vector beta_clean = G.ldlt().solve(h);
  CHECK((beta_clean - est.beta).lpNorm<Eigen::Infinity>() <
        1e-7 * (1.0 + est.beta.lpNorm<Eigen::Infinity>()));
}

TEST_CASE("multiplicity-weighted fit matches the replicated-rows fit") {
  Inst inst = make_inst(80, 2, 0.8, 5);
  const ScaleConfig cfg;
  std::mt19937_64 eng(9);
  Vector mult(80);
  std::uniform_int_distribution<int> cnt(0, 3);
  long total = 0;
  for (int i = 0; i < 80; ++i) {
    mult[i] = double(cnt(eng));
    total += long(mult[i]);
  }
  const ThetaEstimate weighted =
      tau_fit(inst.X, inst.y, cfg, Vector(), 500, 1e-8, mult, double(total));

  Matrix Xrep(total, 3);
  Vector yrep(total);
  long k = 0;
  for (int i = 0; i < 80; ++i)
    for (int c = 0; c < int(mult[i]); ++c) {
      Xrep.row(k) = inst.X.row(i);
      yrep[k] = inst.y[i];
      ++k;
    }
  const ThetaEstimate expanded = tau_fit(Xrep, yrep, cfg, Vector());
  CHECK((weighted.beta - expanded.beta).lpNorm<Eigen::Infinity>() < 1e-7);
  CHECK(weighted.sigma == Approx(expanded.sigma).epsilon(1e-7));
}

TEST_CASE("rank deficiency raises the dedicated signal") {
  Inst inst = make_inst(50, 3, 1.0, 2);
  inst.X.col(3) = inst.X.col(2);  // exact collinearity
  CHECK_THROWS_AS(tau_fit(inst.X, inst.y, ScaleConfig{}, Vector()), RankDeficiencyError);
}

TEST_CASE("b <= q + 1 is rejected") {
  Inst inst = make_inst(5, 3, 1.0, 2);
  CHECK_THROWS_AS(tau_fit(inst.X, inst.y, ScaleConfig{}, Vector()), std::invalid_argument);
}
