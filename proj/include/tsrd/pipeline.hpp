#pragma once

#include <atomic>
#include <chrono>
#include <functional>
#include <string>
#include <thread>
#include <vector>

#include "tsrd/bootstrap.hpp"
#include "tsrd/fusion.hpp"
#include "tsrd/partition.hpp"
#include "tsrd/tau_lasso.hpp"

namespace tsrd {

struct PipelineConfig {
  TauLassoConfig lasso;
  VoteConfig vote;
  double alpha = 0.1;   // CI level: 100 (1 - alpha) %
  int B = 300;          // bootstrap replicates per partition
  long b = 0;           // batch size; must be set by the caller
  int k_s_hint = 0;
  std::uint64_t seed = 0;
  int threads = 0;      // 0 = hardware concurrency
  double trim_ratio = 0.0;
  int min_replicates = 20;

  void validate() const {
    lasso.validate();
    vote.validate();
    if (!(alpha > 0.0 && alpha < 1.0)) throw std::invalid_argument("PipelineConfig: bad alpha");
    if (B < 1) throw std::invalid_argument("PipelineConfig: B < 1");
    if (b < 1) throw std::invalid_argument("PipelineConfig: batch size b not set");
  }
};

struct Stage1Result {
  int partition_id = -1;
  bool ok = false;
  std::string error;
  SparseFit fit;
  double lambda_star = 0.0;
  double seconds = 0.0;
};

struct Stage2Result {
  int partition_id = -1;
  bool ok = false;
  std::string error;
  Vector beta;                        // intercept first, then fused-support slopes
  double sigma = 0.0;
  std::vector<Interval> slope_cis;    // fused-support coordinate order
  Interval intercept_ci{0.0, 0.0};
  Matrix slope_replicates;            // B_ok x |S_hat|
  int replicate_failures = 0;
  bool corrected = true;              // false when the correction factors failed
  double correction_cond = 0.0;
  double seconds = 0.0;
};

struct FusedReport {
  std::vector<int> support;
  std::vector<double> vote_shares;
  std::vector<Interval> intervals;     // per fused-support coordinate
  Interval intercept_interval{0.0, 0.0};
  std::vector<double> point_estimates; // per fused-support coordinate
  double intercept_estimate = 0.0;
  double sd_estimate = 0.0;
};

struct RunManifest {
  std::uint64_t seed = 0;
  long n = 0, b = 0, s = 0;
  long leftover_rows = 0;
  std::string plan_warning;
  int stage1_failures = 0;
  int stage2_failures = 0;
  int replicate_failures = 0;
  int uncorrected_partitions = 0;
  double stage1_seconds = 0.0;
  double stage2_seconds = 0.0;
  double total_seconds = 0.0;
  std::vector<std::string> partition_errors;
};

struct PipelineError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

namespace detail {

inline void parallel_for(int n_tasks, int threads, const std::function<void(int)>& body) {
  if (threads <= 0) threads = int(std::thread::hardware_concurrency());
  threads = std::max(1, std::min(threads, n_tasks));
  if (threads == 1) {
    for (int i = 0; i < n_tasks; ++i) body(i);
    return;
  }
  std::atomic<int> next{0};
  std::vector<std::thread> pool;
  pool.reserve(std::size_t(threads));
  for (int t = 0; t < threads; ++t)
    pool.emplace_back([&] {
      for (int i = next.fetch_add(1); i < n_tasks; i = next.fetch_add(1)) body(i);
    });
  for (auto& th : pool) th.join();
}

inline Matrix gather_rows(const Matrix& X, const std::vector<long>& rows) {
  Matrix out(long(rows.size()), X.cols());
  for (std::size_t i = 0; i < rows.size(); ++i) out.row(long(i)) = X.row(rows[i]);
  return out;
}

inline Vector gather_rows(const Vector& y, const std::vector<long>& rows) {
  Vector out(long(rows.size()));
  for (std::size_t i = 0; i < rows.size(); ++i) out[long(i)] = y[rows[i]];
  return out;
}

}  // namespace detail

//! Stage 1 on one partition: standardize, build the penalty grid, select by
//! RBIC, extract the support.
inline Stage1Result stage1_for_partition(const Matrix& Xp, const Vector& yp,
                                         const PipelineConfig& cfg, int partition_id) {
  Stage1Result out;
  out.partition_id = partition_id;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    TauLassoProblem prob(Xp, yp, cfg.lasso);
    auto sel = prob.rbic_select();
    out.fit = std::move(sel.fit);
    out.lambda_star = sel.lambda_star;
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

//! Restricted design for stage 2: intercept column followed by the fused
//! support columns, in support order.
inline Matrix restricted_design(const Matrix& Xp, const std::vector<int>& support) {
  Matrix D(Xp.rows(), long(support.size()) + 1);
  D.col(0).setOnes();
  for (std::size_t k = 0; k < support.size(); ++k) D.col(long(k) + 1) = Xp.col(support[k]);
  return D;
}

//! Stage 2 on one partition: tau fixed point on the fused support, correction
//! factors, B corrected one-step replicates, percentile intervals.
inline Stage2Result stage2_for_partition(const Matrix& Xp, const Vector& yp,
                                         const std::vector<int>& fused_support,
                                         const Vector& init_beta, const PipelineConfig& cfg,
                                         int partition_id, long n_total) {
  Stage2Result out;
  out.partition_id = partition_id;
  const auto t0 = std::chrono::steady_clock::now();
  try {
    const Matrix D = restricted_design(Xp, fused_support);
    const long b = D.rows();
    const Eigen::Index q = D.cols();
    ThetaEstimate theta = tau_fit(D, yp, cfg.lasso.scale_cfg, init_beta);
    if (theta.degenerate) throw PipelineError("stage 2: degenerate scale (exact interpolation)");
    if (!theta.converged) throw PipelineError("stage 2: tau fixed point did not converge");

    CorrectionFactors corr;
    bool corrected = true;
    try {
      corr = correction_matrices(theta, D, cfg.lasso.scale_cfg);
      out.correction_cond = corr.cond;
    } catch (const CorrectionError&) {
      corrected = false;  // fall back to uncorrected replicates
    }
    out.corrected = corrected;

    Matrix reps(cfg.B, q);
    int ok_count = 0;
    for (int j = 0; j < cfg.B; ++j) {
      const std::uint64_t key = (std::uint64_t(std::uint32_t(partition_id)) << 32) |
                                std::uint64_t(std::uint32_t(j));
      const BootstrapWeights w = multinomial_weights(n_total, b, cfg.seed, stream::kBootstrap, key);
      const OneStepReplicate one = one_step_replicate(theta, D, yp, w, cfg.lasso.scale_cfg);
      if (one.singular) {
        ++out.replicate_failures;
        continue;
      }
      const Vector rep = corrected
                             ? corrected_replicate(theta, one.beta1, one.sigma1, corr)
                             : one.beta1;
      reps.row(ok_count++) = rep.transpose();
    }
    if (ok_count < cfg.min_replicates)
      throw InsufficientReplicatesError("stage 2: too many failed replicates");
    reps.conservativeResize(ok_count, q);

    const auto cis = percentile_ci(reps, cfg.alpha, cfg.min_replicates);
    out.intercept_ci = cis.front();
    out.slope_cis.assign(cis.begin() + 1, cis.end());
    out.slope_replicates = reps.rightCols(q - 1);
    out.beta = theta.beta;
    out.sigma = theta.sigma;
    out.ok = true;
  } catch (const std::exception& e) {
    out.error = e.what();
    out.ok = false;
  }
  out.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  return out;
}

struct PipelineResult {
  FusedReport report;
  RunManifest manifest;
  std::vector<Stage1Result> stage1;
  std::vector<Stage2Result> stage2;
  PartitionPlan plan;
};

//! The full two-stage run: partition, per-partition selection, voting fusion,
//! per-partition inference on the fused support, interval fusion.
inline PipelineResult run_pipeline(const Matrix& X, const Vector& y, const PipelineConfig& cfg) {
  cfg.validate();
  const auto t_start = std::chrono::steady_clock::now();
  PipelineResult res;
  const long n = X.rows();
  const int p = int(X.cols());

  res.plan = plan_partitions(n, cfg.b, cfg.k_s_hint, p, cfg.seed);
  const auto parts = partition_rows(res.plan);
  const int s = int(res.plan.s);

  std::vector<Matrix> Xp(static_cast<std::size_t>(s));
  std::vector<Vector> yp(static_cast<std::size_t>(s));
  for (int i = 0; i < s; ++i) {
    Xp[std::size_t(i)] = detail::gather_rows(X, parts[std::size_t(i)]);
    yp[std::size_t(i)] = detail::gather_rows(y, parts[std::size_t(i)]);
  }

  // stage 1
  const auto t1 = std::chrono::steady_clock::now();
  res.stage1.resize(std::size_t(s));
  detail::parallel_for(s, cfg.threads, [&](int i) {
    res.stage1[std::size_t(i)] = stage1_for_partition(Xp[std::size_t(i)], yp[std::size_t(i)], cfg, i);
  });
  res.manifest.stage1_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t1).count();

  std::vector<std::vector<int>> supports;
  for (const auto& r : res.stage1) {
    if (r.ok)
      supports.push_back(r.fit.support);
    else {
      ++res.manifest.stage1_failures;
      res.manifest.partition_errors.push_back("stage1 partition " +
                                              std::to_string(r.partition_id) + ": " + r.error);
    }
  }
  if (supports.size() * 2 < std::size_t(s))
    throw PipelineError("run aborted: more than half of the partitions failed stage 1");

  const FusedSupport fused = fuse_supports(supports, p, cfg.vote);
  res.report.support = fused.support;
  res.report.vote_shares = fused.vote_shares;
  if (fused.support.empty()) throw PipelineError("run aborted: fused support is empty");

  // stage 2 (broadcast the fused support, infer per partition)
  const auto t2 = std::chrono::steady_clock::now();
  res.stage2.resize(std::size_t(s));
  detail::parallel_for(s, cfg.threads, [&](int i) {
    const auto& s1 = res.stage1[std::size_t(i)];
    Vector init = Vector::Zero(long(fused.support.size()) + 1);
    if (s1.ok) {
      init[0] = s1.fit.intercept;
      for (std::size_t k = 0; k < fused.support.size(); ++k)
        init[long(k) + 1] = s1.fit.beta[fused.support[k]];
    }
    res.stage2[std::size_t(i)] = stage2_for_partition(Xp[std::size_t(i)], yp[std::size_t(i)],
                                                      fused.support, init, cfg, i, n);
  });
  res.manifest.stage2_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t2).count();

  std::vector<std::vector<Interval>> interval_lists;
  std::vector<Interval> intercept_list;
  std::vector<Matrix> replicate_sets;
  Vector beta_acc = Vector::Zero(long(fused.support.size()));
  double intercept_acc = 0.0;
  int ok2 = 0;
  for (const auto& r : res.stage2) {
    if (!r.ok) {
      ++res.manifest.stage2_failures;
      res.manifest.partition_errors.push_back("stage2 partition " +
                                              std::to_string(r.partition_id) + ": " + r.error);
      continue;
    }
    interval_lists.push_back(r.slope_cis);
    intercept_list.push_back(r.intercept_ci);
    replicate_sets.push_back(r.slope_replicates);
    beta_acc += r.beta.tail(r.beta.size() - 1);
    intercept_acc += r.beta[0];
    res.manifest.replicate_failures += r.replicate_failures;
    if (!r.corrected) ++res.manifest.uncorrected_partitions;
    ++ok2;
  }
  if (ok2 * 2 < s) throw PipelineError("run aborted: more than half of the partitions failed stage 2");

  res.report.intervals = average_cis(interval_lists, cfg.trim_ratio);
  {
    std::vector<std::vector<Interval>> ic;
    for (const auto& iv : intercept_list) ic.push_back(std::vector<Interval>{iv});
    res.report.intercept_interval = average_cis(ic, cfg.trim_ratio).front();
  }
  res.report.point_estimates.assign(beta_acc.data(), beta_acc.data() + beta_acc.size());
  for (auto& v : res.report.point_estimates) v /= double(ok2);
  res.report.intercept_estimate = intercept_acc / double(ok2);
  res.report.sd_estimate = bootstrap_sd(replicate_sets);

  res.manifest.seed = cfg.seed;
  res.manifest.n = n;
  res.manifest.b = res.plan.b;
  res.manifest.s = res.plan.s;
  res.manifest.leftover_rows = res.plan.leftover;
  res.manifest.plan_warning = res.plan.warning;
  res.manifest.total_seconds =
      std::chrono::duration<double>(std::chrono::steady_clock::now() - t_start).count();
  return res;
}

}  // namespace tsrd
