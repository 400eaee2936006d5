#include <set>
#include <catch2/catch_amalgamated.hpp>

#include "tsrd/datagen.hpp"

using namespace tsrd;
using Catch::Approx;

TEST_CASE("SNR calibration of the noise variance") {
  ScenarioSpec spec;
  spec.n = 2000;
  spec.p = 5;
  spec.b = 2000;
  spec.k_s = 5;
  spec.snr_db = 0.0;
  spec.beta_values = {1.0};
  spec.placement = BetaPlacement::leading_block;
  spec.seed = 3;
  const GeneratedData d = generate_scenario(spec);
  const double signal = (d.X * d.beta_true).squaredNorm();
  CHECK(d.sigma_v * d.sigma_v == Approx(signal / 2000.0).epsilon(1e-12));  // 0 dB
}

TEST_CASE("scenario 3 parameters and the Toeplitz design moment check") {
  const ScenarioSpec s3 = ScenarioSpec::paper_scenario(3);
  CHECK(s3.n == 80000);
  CHECK(s3.p == 100);
  CHECK(s3.b == 4000);
  CHECK(s3.k_s == 10);
  CHECK(s3.correlation == 0.5);
  CHECK(s3.beta_values == std::vector<double>{3.0});

  ScenarioSpec spec;
  spec.n = 100000;
  spec.p = 5;
  spec.b = spec.n;
  spec.k_s = 2;
  spec.correlation = 0.5;
  spec.seed = 11;
  spec.beta_values = {3.0};
  const GeneratedData d = generate_scenario(spec);
  const Matrix C = (d.X.transpose() * d.X) / double(spec.n);
  for (int i = 0; i < 5; ++i)
    for (int j = 0; j < 5; ++j)
      CHECK(C(i, j) == Approx(std::pow(0.5, std::abs(i - j))).margin(0.01));
}

TEST_CASE("random nonzero positions are recorded and deterministic") {
  ScenarioSpec spec;
  spec.n = 50;
  spec.p = 40;
  spec.b = 50;
  spec.k_s = 7;
  spec.seed = 21;
  spec.beta_values = {3.0};
  spec.placement = BetaPlacement::random_positions;
  const GeneratedData a = generate_scenario(spec);
  const GeneratedData b = generate_scenario(spec);
  CHECK(a.support == b.support);
  CHECK(int(a.support.size()) == 7);
  for (int j : a.support) CHECK(a.beta_true[j] == 3.0);
  int nonzero = 0;
  for (int j = 0; j < 40; ++j) nonzero += a.beta_true[j] != 0.0;
  CHECK(nonzero == 7);
}

TEST_CASE("contamination schemes") {
  ScenarioSpec spec;
  spec.n = 1000;
  spec.p = 4;
  spec.b = 1000;
  spec.k_s = 2;
  spec.seed = 5;
  spec.beta_values = {3.0};
  spec.placement = BetaPlacement::leading_block;
  const GeneratedData d = generate_scenario(spec);

  SECTION("zero fraction leaves the data untouched") {
    Matrix X = d.X;
    Vector y = d.y;
    ContaminationSpec cs;
    cs.fraction = 0.0;
    const auto res = contaminate(X, y, d, cs);
    CHECK(res.mask.empty());
    CHECK((X - d.X).cwiseAbs().maxCoeff() == 0.0);
    CHECK((y - d.y).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("scheme 1 replaces exactly ceil(xi n) rows in both X and y") {
    Matrix X = d.X;
    Vector y = d.y;
    ContaminationSpec cs;
    cs.scheme = ContaminationScheme::scheme1;
    cs.fraction = 0.1;
    cs.seed = 9;
    const auto res = contaminate(X, y, d, cs);
    CHECK(int(res.mask.size()) == 100);
    for (int i : res.mask) CHECK((X.row(i) - d.X.row(i)).cwiseAbs().maxCoeff() > 0.0);
    // unmasked rows are untouched
    std::set<int> masked(res.mask.begin(), res.mask.end());
    for (long i = 0; i < 1000; ++i)
      if (!masked.count(int(i))) {
        CHECK(y[i] == d.y[i]);
        CHECK((X.row(i) - d.X.row(i)).cwiseAbs().maxCoeff() == 0.0);
      }
  }
  SECTION("schemes 1, 2 and 4 replace the same rows under a shared seed") {
    ContaminationSpec cs;
    cs.fraction = 0.07;
    cs.seed = 31;
    Matrix X1 = d.X;
    Vector y1 = d.y;
    cs.scheme = ContaminationScheme::scheme1;
    const auto r1 = contaminate(X1, y1, d, cs);
    Matrix X2 = d.X;
    Vector y2 = d.y;
    cs.scheme = ContaminationScheme::scheme2;
    const auto r2 = contaminate(X2, y2, d, cs);
    Matrix X4 = d.X;
    Vector y4 = d.y;
    cs.scheme = ContaminationScheme::scheme4;
    const auto r4 = contaminate(X4, y4, d, cs);
    CHECK(r1.mask == r2.mask);
    CHECK(r1.mask == r4.mask);
  }
  SECTION("scheme 2 shifts rows grossly") {
    Matrix X = d.X;
    Vector y = d.y;
    ContaminationSpec cs;
    cs.scheme = ContaminationScheme::scheme2;
    cs.fraction = 0.05;
    cs.seed = 77;
    const auto res = contaminate(X, y, d, cs);
    for (int i : res.mask) {
      CHECK(y[i] > 200.0);
      CHECK(X.row(i).mean() > 40.0);
    }
  }
  SECTION("scheme 3 redraws the noise only, empty mask") {
    Matrix X = d.X;
    Vector y = d.y;
    ContaminationSpec cs;
    cs.scheme = ContaminationScheme::scheme3;
    cs.seed = 13;
    const auto res = contaminate(X, y, d, cs);
    CHECK(res.mask.empty());
    CHECK((X - d.X).cwiseAbs().maxCoeff() == 0.0);   // design untouched
    CHECK((y - d.y).cwiseAbs().maxCoeff() > 0.0);    // noise redrawn
    // heavy tails: some residual far beyond the Gaussian range
    const Vector resid = y - X * d.beta_true;
    CHECK(resid.cwiseAbs().maxCoeff() > 10.0 * d.sigma_v);
  }
  SECTION("decimal shift multiplies one response by 10^alpha") {
    Matrix X = d.X;
    Vector y = d.y;
    ContaminationSpec cs;
    cs.scheme = ContaminationScheme::decimal_shift;
    cs.alpha_o = 5.0;
    cs.seed = 3;
    const auto res = contaminate(X, y, d, cs);
    REQUIRE(int(res.mask.size()) == 1);
    const int i = res.mask[0];
    CHECK(y[i] == Approx(d.y[i] * 1e5).epsilon(1e-12));
    CHECK((X - d.X).cwiseAbs().maxCoeff() == 0.0);
  }
  SECTION("invalid fraction") {
    Matrix X = d.X;
    Vector y = d.y;
    ContaminationSpec cs;
    cs.fraction = 1.0;
    CHECK_THROWS_AS(contaminate(X, y, d, cs), std::invalid_argument);
  }
}

TEST_CASE("determinism of generation under a fixed seed") {
  ScenarioSpec spec = ScenarioSpec::paper_scenario(5, 40.0);
  spec.seed = 123;
  const GeneratedData a = generate_scenario(spec);
  const GeneratedData b = generate_scenario(spec);
  CHECK((a.X - b.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK((a.y - b.y).cwiseAbs().maxCoeff() == 0.0);
  CHECK(a.sigma_v == b.sigma_v);
}
