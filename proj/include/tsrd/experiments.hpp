#pragma once

#include <chrono>
#include <cmath>
#include <functional>
#include <string>
#include <vector>

#include "tsrd/datagen.hpp"
#include "tsrd/metrics.hpp"
#include "tsrd/pipeline.hpp"

namespace tsrd {

// Experiment drivers behind both the CLI and the acceptance suite. Every
// driver returns plain rows; CSV emission is the caller's concern.

struct SelectionTrialRow {
  int trial = 0;
  std::string scheme;
  double xi = 0.0;
  double tp = 0.0, fp = 0.0, cer = 0.0;
  double seconds = 0.0;
};

//! Stage-1 + voting fusion on freshly generated contaminated data; one row per
//! Monte Carlo trial.
inline std::vector<SelectionTrialRow> selection_experiment(
    const ScenarioSpec& base, const std::vector<std::pair<std::string, ContaminationSpec>>& cases,
    int trials, int threads, std::uint64_t seed0) {
  std::vector<SelectionTrialRow> rows(cases.size() * std::size_t(trials));
  detail::parallel_for(int(rows.size()), threads, [&](int idx) {
    const int case_i = idx / trials;
    const int trial = idx % trials;
    const auto t0 = std::chrono::steady_clock::now();
    ScenarioSpec spec = base;
    spec.seed = mix_key(seed0, 100 + case_i, std::uint64_t(trial));
    GeneratedData d = generate_scenario(spec);
    ContaminationSpec cs = cases[std::size_t(case_i)].second;
    cs.seed = mix_key(seed0, 200 + case_i, std::uint64_t(trial));
    contaminate(d.X, d.y, d, cs);

    PipelineConfig cfg;
    cfg.b = spec.b;
    cfg.seed = spec.seed;
    cfg.threads = 1;
    const PartitionPlan plan = plan_partitions(spec.n, cfg.b, 0, spec.p, cfg.seed);
    const auto parts = partition_rows(plan);
    std::vector<std::vector<int>> supports;
    for (int i = 0; i < int(plan.s); ++i) {
      const Matrix Xp = detail::gather_rows(d.X, parts[std::size_t(i)]);
      const Vector yp = detail::gather_rows(d.y, parts[std::size_t(i)]);
      const Stage1Result r = stage1_for_partition(Xp, yp, cfg, i);
      if (r.ok) supports.push_back(r.fit.support);
    }
    SelectionTrialRow row;
    row.trial = trial;
    row.scheme = cases[std::size_t(case_i)].first;
    row.xi = cs.fraction;
    if (!supports.empty()) {
      const FusedSupport fused = fuse_supports(supports, spec.p, cfg.vote);
      const SelectionMetrics m = selection_metrics(fused.support, d.support, spec.p);
      row.tp = m.tp_rate;
      row.fp = m.fp_rate;
      row.cer = m.cer;
    }
    row.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
    rows[std::size_t(idx)] = row;
  });
  return rows;
}

//! Least-squares bag-of-little-bootstraps baseline: per bag, the LS fit and B
//! multinomial-weighted LS replicates; Eq.-(17)-style SD aggregation.
inline double ls_blb_sd(const Matrix& X, const Vector& y, long b, int B, std::uint64_t seed) {
  const long n = X.rows();
  const int p = int(X.cols());
  const PartitionPlan plan = plan_partitions(n, b, 0, p, seed);
  const auto parts = partition_rows(plan);
  std::vector<Matrix> replicate_sets;
  for (int i = 0; i < int(plan.s); ++i) {
    Matrix D(b, p + 1);
    Vector yp(b);
    for (long r = 0; r < b; ++r) {
      D(r, 0) = 1.0;
      D.row(r).tail(p) = X.row(parts[std::size_t(i)][std::size_t(r)]);
      yp[r] = y[parts[std::size_t(i)][std::size_t(r)]];
    }
    Matrix reps(B, p);
    for (int j = 0; j < B; ++j) {
      const std::uint64_t key = (std::uint64_t(std::uint32_t(i)) << 32) | std::uint64_t(j);
      const BootstrapWeights w = multinomial_weights(n, b, seed, stream::kBootstrap, key);
      Matrix G = Matrix::Zero(p + 1, p + 1);
      Vector h = Vector::Zero(p + 1);
      for (long l = 0; l < b; ++l) {
        if (w.omega[l] == 0.0) continue;
        G.selfadjointView<Eigen::Lower>().rankUpdate(D.row(l).transpose(), w.omega[l]);
        h += w.omega[l] * yp[l] * D.row(l).transpose();
      }
      const Vector sol =
          Eigen::LLT<Matrix>(G.selfadjointView<Eigen::Lower>()).solve(h);
      reps.row(j) = sol.tail(p).transpose();
    }
    replicate_sets.push_back(std::move(reps));
  }
  return bootstrap_sd(replicate_sets);
}

//! RSOB SD on a known support ("post-selection" stage 2 only).
inline double rsob_sd(const Matrix& X, const Vector& y, long b, int B, std::uint64_t seed,
                      int threads = 1) {
  const long n = X.rows();
  const int p = int(X.cols());
  PipelineConfig cfg;
  cfg.b = b;
  cfg.B = B;
  cfg.seed = seed;
  cfg.threads = threads;
  const PartitionPlan plan = plan_partitions(n, b, 0, p, seed);
  const auto parts = partition_rows(plan);
  std::vector<int> full_support(p);
  std::iota(full_support.begin(), full_support.end(), 0);
  std::vector<Matrix> replicate_sets(static_cast<std::size_t>(plan.s));
  std::vector<char> ok(std::size_t(plan.s), 0);
  detail::parallel_for(int(plan.s), threads, [&](int i) {
    const Matrix Xp = detail::gather_rows(X, parts[std::size_t(i)]);
    const Vector yp = detail::gather_rows(y, parts[std::size_t(i)]);
    // robust start: multi-start unpenalized tau objective on the restricted fit
    TauLassoConfig lcfg;
    Vector init;
    try {
      TauLassoProblem prob(Xp, yp, lcfg);
      const SparseFit f = prob.fit_multistart(0.0, mix_key(seed, stream::kInit, std::uint64_t(i)));
      init.resize(p + 1);
      init[0] = f.intercept;
      for (int j = 0; j < p; ++j) init[j + 1] = f.beta[j];
    } catch (const std::exception&) {
      init = Vector();
    }
    const Stage2Result r = stage2_for_partition(Xp, yp, full_support, init, cfg, i, n);
    if (r.ok) {
      replicate_sets[std::size_t(i)] = r.slope_replicates;
      ok[std::size_t(i)] = 1;
    }
  });
  std::vector<Matrix> kept;
  for (std::size_t i = 0; i < replicate_sets.size(); ++i)
    if (ok[i]) kept.push_back(std::move(replicate_sets[i]));
  if (kept.empty()) throw PipelineError("rsob_sd: every bag failed");
  return bootstrap_sd(kept);
}

struct SdRobustnessRow {
  std::string label;
  double epsilon_rsob = 0.0;
  double epsilon_ls = 0.0;
};

//! Fig. 3/4 analog: one decimal-shift outlier of growing magnitude plus a
//! gross-contamination level, with the LS-BLB baseline alongside.
inline std::vector<SdRobustnessRow> sd_robustness_experiment(long n, long b, int p, int B,
                                                             std::uint64_t seed, int threads,
                                                             const std::vector<double>& alpha_os,
                                                             double gross_fraction) {
  ScenarioSpec spec;
  spec.n = n;
  spec.p = p;
  spec.b = b;
  spec.k_s = p;  // post-selection: every column is a true regressor
  spec.snr_db = 15.0;
  spec.beta_values = {3.0};
  spec.placement = BetaPlacement::leading_block;
  spec.seed = seed;
  const GeneratedData d = generate_scenario(spec);

  std::vector<SdRobustnessRow> rows;
  auto run_case = [&](const std::string& label, const Matrix& X, const Vector& y) {
    SdRobustnessRow row;
    row.label = label;
    row.epsilon_rsob = relative_error(rsob_sd(X, y, b, B, seed, threads), n, d.sigma_v, 0.95);
    row.epsilon_ls = relative_error(ls_blb_sd(X, y, b, B, seed), n, d.sigma_v, 1.0);
    rows.push_back(row);
  };

  run_case("clean", d.X, d.y);
  for (double a : alpha_os) {
    Matrix X = d.X;
    Vector y = d.y;
    ContaminationSpec cs;
    cs.scheme = ContaminationScheme::decimal_shift;
    cs.alpha_o = a;
    cs.seed = seed + 1;  // one shared outlier position across magnitudes
    contaminate(X, y, d, cs);
    run_case("decimal_1e" + std::to_string(int(a)), X, y);
  }
  if (gross_fraction > 0.0) {
    // Fig.-4 style gross contamination: multiply a fraction of responses by 1e5
    Matrix X = d.X;
    Vector y = d.y;
    std::mt19937_64 eng = make_engine(seed + 2, stream::kContaminate);
    const long m = long(std::ceil(gross_fraction * double(n)));
    std::vector<long> rows_idx = detail::pick_rows(n, m, eng);
    for (long i : rows_idx) y[i] *= 1e5;
    run_case("gross_" + std::to_string(gross_fraction), X, y);
  }
  return rows;
}

struct ConvergenceResult {
  std::vector<double> ks;   // per slope coordinate, corrected replicates
  double sd_ratio = 0.0;    // uncorrected SD / corrected SD, averaged over slopes
  double sigma_true = 0.0;
};

//! Theorem-2/Fig.-5 analog: a single bag of size b drawn from n rows of an
//! identity-design model; corrected and uncorrected replicate laws against
//! N(0, sigma^2 / efficiency).
inline ConvergenceResult convergence_experiment(long n, long b, int slopes, int B,
                                                std::uint64_t seed) {
  ScenarioSpec spec;
  spec.n = n;
  spec.p = slopes;
  spec.b = b;
  spec.k_s = slopes;
  spec.snr_db = 15.0;
  spec.beta_values = {3.0};
  spec.placement = BetaPlacement::leading_block;
  spec.seed = seed;
  const GeneratedData d = generate_scenario(spec);

  const PartitionPlan plan = plan_partitions(n, b, 0, slopes, seed);
  const auto parts = partition_rows(plan);
  Matrix D(b, slopes + 1);
  Vector yp(b);
  for (long r = 0; r < b; ++r) {
    D(r, 0) = 1.0;
    D.row(r).tail(slopes) = d.X.row(parts[0][std::size_t(r)]);
    yp[r] = d.y[parts[0][std::size_t(r)]];
  }
  const ScaleConfig cfg;
  const ThetaEstimate theta = tau_fit(D, yp, cfg, Vector());
  if (!theta.converged) throw PipelineError("convergence_experiment: anchor did not converge");
  const CorrectionFactors corr = correction_matrices(theta, D, cfg);

  Matrix corrected(B, slopes + 1), raw(B, slopes + 1);
  int ok = 0;
  for (int j = 0; j < B; ++j) {
    const BootstrapWeights w = multinomial_weights(n, b, seed, stream::kBootstrap, std::uint64_t(j));
    const OneStepReplicate one = one_step_replicate(theta, D, yp, w, cfg);
    if (one.singular) continue;
    corrected.row(ok) = corrected_replicate(theta, one.beta1, one.sigma1, corr).transpose();
    raw.row(ok) = one.beta1.transpose();
    ++ok;
  }
  corrected.conservativeResize(ok, slopes + 1);
  raw.conservativeResize(ok, slopes + 1);

  ConvergenceResult res;
  res.sigma_true = d.sigma_v;
  res.ks = convergence_check(corrected, theta.beta, n, d.sigma_v, 0.95, Matrix());
  double acc = 0.0;
  for (int j = 1; j <= slopes; ++j) {
    const double sd_c = std::sqrt((corrected.col(j).array() - corrected.col(j).mean())
                                      .square()
                                      .sum() /
                                  double(ok - 1));
    const double sd_r =
        std::sqrt((raw.col(j).array() - raw.col(j).mean()).square().sum() / double(ok - 1));
    acc += sd_r / sd_c;
  }
  res.sd_ratio = acc / double(slopes);
  return res;
}

struct OracleQuantileRow {
  int coordinate = 0;  // slope index
  double q_corrected_lo = 0.0, q_corrected_hi = 0.0;
  double q_full_lo = 0.0, q_full_hi = 0.0;
};

//! Corrected one-step quantiles against the fully re-solved bootstrap under
//! common multinomial draws; quantiles are centered at the anchor.
inline std::vector<OracleQuantileRow> oracle_equivalence_experiment(long n, int slopes, int B,
                                                                    std::uint64_t seed) {
  ScenarioSpec spec;
  spec.n = n;
  spec.p = slopes;
  spec.b = n;
  spec.k_s = slopes;
  spec.snr_db = 15.0;
  spec.beta_values = {3.0};
  spec.placement = BetaPlacement::leading_block;
  spec.seed = seed;
  const GeneratedData d = generate_scenario(spec);
  Matrix D(n, slopes + 1);
  D.col(0).setOnes();
  D.rightCols(slopes) = d.X;
  const ScaleConfig cfg;
  const ThetaEstimate theta = tau_fit(D, d.y, cfg, Vector());
  const CorrectionFactors corr = correction_matrices(theta, D, cfg);

  Matrix reps_c(B, slopes + 1), reps_f(B, slopes + 1);
  int ok = 0;
  for (int j = 0; j < B; ++j) {
    const BootstrapWeights w = multinomial_weights(n, n, seed, stream::kBootstrap, std::uint64_t(j));
    const OneStepReplicate one = one_step_replicate(theta, D, d.y, w, cfg);
    if (one.singular) continue;
    try {
      const ThetaEstimate full =
          tau_fit(D, d.y, cfg, theta.beta, 500, 1e-8, w.omega, double(w.n));
      if (!full.converged || full.degenerate) continue;
      reps_c.row(ok) = corrected_replicate(theta, one.beta1, one.sigma1, corr).transpose();
      reps_f.row(ok) = full.beta.transpose();
      ++ok;
    } catch (const std::exception&) {
      continue;  // paired drop keeps the comparison exchangeable
    }
  }
  reps_c.conservativeResize(ok, slopes + 1);
  reps_f.conservativeResize(ok, slopes + 1);

  std::vector<OracleQuantileRow> rows;
  std::vector<double> col(static_cast<std::size_t>(ok));
  for (int j = 1; j <= slopes; ++j) {
    OracleQuantileRow row;
    row.coordinate = j - 1;
    for (int i = 0; i < ok; ++i) col[std::size_t(i)] = reps_c(i, j) - theta.beta[j];
    row.q_corrected_lo = empirical_quantile(col, 0.05);
    row.q_corrected_hi = empirical_quantile(col, 0.95);
    for (int i = 0; i < ok; ++i) col[std::size_t(i)] = reps_f(i, j) - theta.beta[j];
    row.q_full_lo = empirical_quantile(col, 0.05);
    row.q_full_hi = empirical_quantile(col, 0.95);
    rows.push_back(row);
  }
  return rows;
}

struct SpeedupResult {
  double one_step_seconds_per_replicate = 0.0;
  double full_refit_seconds_per_replicate = 0.0;
  double ratio = 0.0;  // one-step / full
};

inline SpeedupResult speedup_experiment(long b, int slopes, int replicates, std::uint64_t seed) {
  ScenarioSpec spec;
  spec.n = b;
  spec.p = slopes;
  spec.b = b;
  spec.k_s = slopes;
  spec.snr_db = 15.0;
  spec.beta_values = {3.0};
  spec.placement = BetaPlacement::leading_block;
  spec.seed = seed;
  const GeneratedData d = generate_scenario(spec);
  Matrix D(b, slopes + 1);
  D.col(0).setOnes();
  D.rightCols(slopes) = d.X;
  const ScaleConfig cfg;
  const ThetaEstimate theta = tau_fit(D, d.y, cfg, Vector());
  const CorrectionFactors corr = correction_matrices(theta, D, cfg);
  const long n = 10 * b;

  std::vector<BootstrapWeights> draws;
  for (int j = 0; j < replicates; ++j)
    draws.push_back(multinomial_weights(n, b, seed, stream::kBootstrap, std::uint64_t(j)));

  SpeedupResult res;
  {
    const auto t0 = std::chrono::steady_clock::now();
    double sink = 0.0;
    for (const auto& w : draws) {
      const OneStepReplicate one = one_step_replicate(theta, D, d.y, w, cfg);
      if (!one.singular)
        sink += corrected_replicate(theta, one.beta1, one.sigma1, corr).sum();
    }
    res.one_step_seconds_per_replicate =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
        double(replicates);
    if (sink == 42.0) throw PipelineError("unreachable");
  }
  {
    const auto t0 = std::chrono::steady_clock::now();
    double sink = 0.0;
    for (const auto& w : draws) {
      try {
        const ThetaEstimate full =
            tau_fit(D, d.y, cfg, theta.beta, 500, 1e-8, w.omega, double(w.n));
        sink += full.beta.sum();
      } catch (const std::exception&) {
      }
    }
    res.full_refit_seconds_per_replicate =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count() /
        double(replicates);
    if (sink == 42.0) throw PipelineError("unreachable");
  }
  res.ratio = res.one_step_seconds_per_replicate / res.full_refit_seconds_per_replicate;
  return res;
}

struct BreakdownRow {
  double fraction = 0.0;
  double magnitude = 0.0;
  std::uint64_t seed = 0;
  double norm_ratio = 0.0;  // ||beta_hat|| / ||beta_true||
};

//! Theorem-1 analog: adversarial leverage rows x = k x0, y = k^2 with
//! k = sqrt(magnitude), fixed penalty chosen on the clean data.
inline std::vector<BreakdownRow> breakdown_experiment(long b, int p, double fraction,
                                                      const std::vector<double>& magnitudes,
                                                      const std::vector<std::uint64_t>& seeds) {
  std::vector<BreakdownRow> rows;
  for (std::uint64_t seed : seeds) {
    ScenarioSpec spec;
    spec.n = b;
    spec.p = p;
    spec.b = b;
    spec.k_s = 2;
    spec.snr_db = 15.0;
    spec.beta_values = {3.0};
    spec.placement = BetaPlacement::leading_block;
    spec.seed = seed;
    const GeneratedData d = generate_scenario(spec);
    TauLassoConfig lcfg;
    const double lam = 0.05 * TauLassoProblem(d.X, d.y, lcfg).lambda_max();

    std::mt19937_64 eng = make_engine(seed, stream::kContaminate);
    std::normal_distribution<double> g(0.0, 1.0);
    Vector x0(p);
    for (int j = 0; j < p; ++j) x0[j] = g(eng);
    x0.normalize();
    const long m = long(std::llround(fraction * double(b)));
    Matrix jitter(m, p);  // keeps the leverage columns non-degenerate
    for (long i = 0; i < m; ++i)
      for (int j = 0; j < p; ++j) jitter(i, j) = g(eng);

    for (double M : magnitudes) {
      Matrix X = d.X;
      Vector y = d.y;
      const double k = std::sqrt(M);
      for (long i = 0; i < m; ++i) {
        X.row(i) = (k * x0).transpose() + jitter.row(i);
        y[i] = k * X.row(i).dot(x0);  // exactly interpolated by beta = k x0
      }
      BreakdownRow row;
      row.fraction = fraction;
      row.magnitude = M;
      row.seed = seed;
      try {
        const SparseFit f = TauLassoProblem(X, y, lcfg).fit_multistart(lam, seed + 17);
        row.norm_ratio = f.beta.norm() / d.beta_true.norm();
      } catch (const std::exception&) {
        row.norm_ratio = std::numeric_limits<double>::infinity();
      }
      rows.push_back(row);
    }
  }
  return rows;
}

struct CoverageResult {
  std::vector<double> per_coordinate;  // coverage of each true nonzero over the runs
  double mean_coverage = 0.0;
  int runs = 0;
};

//! Monte Carlo coverage of the fused intervals on clean scenario data.
inline CoverageResult coverage_experiment(const ScenarioSpec& base, int runs, double alpha,
                                          int threads, std::uint64_t seed0) {
  std::vector<std::vector<char>> covered(static_cast<std::size_t>(runs));
  std::vector<char> run_ok(std::size_t(runs), 0);
  detail::parallel_for(runs, threads, [&](int t) {
    ScenarioSpec spec = base;
    spec.seed = mix_key(seed0, 300, std::uint64_t(t));
    const GeneratedData d = generate_scenario(spec);
    PipelineConfig cfg;
    cfg.b = spec.b;
    cfg.B = spec.B;
    cfg.alpha = alpha;
    cfg.seed = spec.seed;
    cfg.threads = 1;
    try {
      const PipelineResult res = run_pipeline(d.X, d.y, cfg);
      std::vector<char> cov;
      for (int j : d.support) {
        const auto it =
            std::find(res.report.support.begin(), res.report.support.end(), j);
        if (it == res.report.support.end()) {
          cov.push_back(0);  // missed variable counts as non-coverage
          continue;
        }
        const std::size_t k = std::size_t(it - res.report.support.begin());
        const Interval iv = res.report.intervals[k];
        cov.push_back(d.beta_true[j] >= iv.lower && d.beta_true[j] <= iv.upper);
      }
      covered[std::size_t(t)] = std::move(cov);
      run_ok[std::size_t(t)] = 1;
    } catch (const std::exception&) {
      run_ok[std::size_t(t)] = 0;
    }
  });

  CoverageResult out;
  std::size_t k_s = 0;
  for (int t = 0; t < runs; ++t)
    if (run_ok[std::size_t(t)]) k_s = std::max(k_s, covered[std::size_t(t)].size());
  out.per_coordinate.assign(k_s, 0.0);
  for (int t = 0; t < runs; ++t) {
    if (!run_ok[std::size_t(t)]) continue;
    ++out.runs;
    for (std::size_t j = 0; j < covered[std::size_t(t)].size(); ++j)
      out.per_coordinate[j] += covered[std::size_t(t)][j];
  }
  double acc = 0.0;
  for (auto& v : out.per_coordinate) {
    v /= double(out.runs);
    acc += v;
  }
  out.mean_coverage = k_s ? acc / double(k_s) : 0.0;
  return out;
}

}  // namespace tsrd
