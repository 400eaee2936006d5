// tsrd: two-stage robust distributed inference for sparse linear regression.
//
// Subcommands: generate, contaminate, select, infer, run, experiment,
// calibrate, worker (internal, sockets mode). `tsrd <cmd> --help` documents
// flags and output columns.

#include <CLI11.hpp>

#include <filesystem>
#include <iostream>

#include "tsrd/experiments.hpp"
#include "tsrd/io.hpp"
#include "tsrd/sockets.hpp"

namespace fs = std::filesystem;
using namespace tsrd;

namespace {

// exit codes: 0 ok, 1 usage (CLI11), 2 numerical failure, 3 io failure
constexpr int kNumericalFailure = 2;
constexpr int kIoFailure = 3;

struct CommonOpts {
  std::string out = ".";
  std::uint64_t seed = 0;
  int threads = 0;
};

ScenarioSpec scenario_from_json(const json& j) {
  ScenarioSpec s;
  if (j.contains("scenario")) s = ScenarioSpec::paper_scenario(j.at("scenario").get<int>(),
                                                               j.value("shrink", 1.0));
  s.n = j.value("n", s.n);
  s.p = j.value("p", s.p);
  s.b = j.value("b", s.b);
  s.k_s = j.value("k_s", s.k_s);
  s.snr_db = j.value("snr_db", s.snr_db);
  s.B = j.value("B", s.B);
  s.correlation = j.value("correlation", s.correlation);
  if (j.contains("beta_values")) s.beta_values = j.at("beta_values").get<std::vector<double>>();
  if (j.contains("placement"))
    s.placement = j.at("placement").get<std::string>() == "random"
                      ? BetaPlacement::random_positions
                      : BetaPlacement::leading_block;
  s.seed = j.value("seed", s.seed);
  return s;
}

PipelineConfig pipeline_from_json(const json& j) {
  PipelineConfig cfg;
  cfg.alpha = j.value("alpha", cfg.alpha);
  cfg.B = j.value("B", cfg.B);
  cfg.b = j.value("b", cfg.b);
  cfg.k_s_hint = j.value("k_s_hint", cfg.k_s_hint);
  cfg.seed = j.value("seed", cfg.seed);
  cfg.threads = j.value("threads", cfg.threads);
  cfg.trim_ratio = j.value("trim_ratio", cfg.trim_ratio);
  cfg.vote.K = j.value("vote_K", cfg.vote.K);
  return cfg;
}

std::vector<int> parse_support(const std::string& s) {
  std::vector<int> out;
  std::stringstream ss(s);
  std::string tok;
  while (std::getline(ss, tok, ',')) out.push_back(std::stoi(tok));
  return out;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"two-stage robust distributed inference (tau-Lasso selection + "
               "fast robust bootstrap intervals)"};
  app.require_subcommand(1);

  // ---------------- calibrate ----------------
  auto* cal = app.add_subcommand("calibrate", "print the tuning constants c0 and c1");
  double cal_delta = 0.5, cal_eff = 0.95;
  std::string cal_family = "tau";
  cal->add_option("--delta", cal_delta, "breakdown target in (0, 0.5]");
  cal->add_option("--efficiency", cal_eff, "Gaussian efficiency target in (0,1)");
  cal->add_option("--family", cal_family, "tau | m")->check(CLI::IsMember({"tau", "m"}));

  // ---------------- generate ----------------
  auto* gen = app.add_subcommand("generate", "write a synthetic dataset (CSV) and its truth file");
  CommonOpts gen_o;
  int gen_scenario = 0;
  double gen_shrink = 1.0;
  long gen_n = 0, gen_b = 0;
  int gen_p = 0, gen_k = 0;
  double gen_snr = 15.0, gen_rho = 0.0;
  std::string gen_config;
  gen->add_option("--config", gen_config, "JSON config; flags override its values");
  gen->add_option("--scenario", gen_scenario, "paper scenario 1..5");
  gen->add_option("--shrink", gen_shrink, "shrink factor applied to n and b");
  gen->add_option("--n", gen_n);
  gen->add_option("--p", gen_p);
  gen->add_option("--b", gen_b);
  gen->add_option("--k", gen_k, "number of nonzero coefficients");
  gen->add_option("--snr", gen_snr, "SNR in dB");
  gen->add_option("--rho", gen_rho, "Toeplitz correlation (0 = identity)");
  gen->add_option("--seed", gen_o.seed);
  gen->add_option("--out", gen_o.out, "output directory");

  // ---------------- contaminate ----------------
  auto* con = app.add_subcommand("contaminate", "apply a contamination scheme to a dataset");
  std::string con_dataset, con_truth, con_scheme = "response";
  double con_fraction = 0.1, con_alpha_o = 5.0, con_sigma_e = 250.0;
  CommonOpts con_o;
  con->add_option("--dataset", con_dataset)->required();
  con->add_option("--truth", con_truth)->required();
  con->add_option("--scheme", con_scheme, "1|2|3|4|response|decimal");
  con->add_option("--fraction", con_fraction, "xi_o");
  con->add_option("--alpha-o", con_alpha_o, "decimal-shift exponent");
  con->add_option("--sigma-e", con_sigma_e);
  con->add_option("--seed", con_o.seed);
  con->add_option("--out", con_o.out);

  // ---------------- run / select / infer ----------------
  auto add_pipeline_flags = [](CLI::App* cmd, std::string& dataset, std::string& config,
                               PipelineConfig& cfg, std::string& mode, CommonOpts& o) {
    cmd->add_option("--dataset", dataset)->required();
    cmd->add_option("--config", config, "JSON config; flags override");
    cmd->add_option("--seed", cfg.seed);
    cmd->add_option("--threads", cfg.threads);
    cmd->add_option("--b", cfg.b, "batch size");
    cmd->add_option("--k", cfg.k_s_hint, "sparsity hint for the plan window");
    cmd->add_option("--alpha", cfg.alpha, "CI level alpha");
    cmd->add_option("--boot", cfg.B, "bootstrap replicates per partition");
    cmd->add_option("--vote-K", cfg.vote.K, "voting threshold");
    cmd->add_option("--trim", cfg.trim_ratio, "trimmed-mean fusion ratio");
    cmd->add_option("--mode", mode, "inproc | sockets")->check(CLI::IsMember({"inproc", "sockets"}));
    cmd->add_option("--out", o.out);
  };

  auto* run = app.add_subcommand("run", "full two-stage pipeline; writes report.json + manifest.json");
  std::string run_dataset, run_config, run_mode = "inproc";
  PipelineConfig run_cfg;
  CommonOpts run_o;
  add_pipeline_flags(run, run_dataset, run_config, run_cfg, run_mode, run_o);

  auto* sel = app.add_subcommand("select", "stage 1 only: per-partition supports and the fused support");
  std::string sel_dataset, sel_config, sel_mode = "inproc";
  PipelineConfig sel_cfg;
  CommonOpts sel_o;
  add_pipeline_flags(sel, sel_dataset, sel_config, sel_cfg, sel_mode, sel_o);

  auto* inf = app.add_subcommand("infer", "stage 2 only on a given support");
  std::string inf_dataset, inf_config, inf_mode = "inproc", inf_support;
  PipelineConfig inf_cfg;
  CommonOpts inf_o;
  add_pipeline_flags(inf, inf_dataset, inf_config, inf_cfg, inf_mode, inf_o);
  inf->add_option("--support", inf_support, "comma-separated 0-based column indices")->required();

  // ---------------- experiment ----------------
  auto* exp = app.add_subcommand("experiment", "desk-scale reproductions; writes CSV tables");
  std::string exp_which, exp_scenario = "3-scaled";
  double exp_outliers = 0.1;
  int exp_trials = 20;
  CommonOpts exp_o;
  exp->add_option("which", exp_which,
                  "selection | sd-robustness | convergence | speedup | breakdown")
      ->required()
      ->check(CLI::IsMember({"selection", "sd-robustness", "convergence", "speedup", "breakdown"}));
  exp->add_option("--scenario", exp_scenario, "selection driver: 3-scaled | 5-scaled");
  exp->add_option("--outliers", exp_outliers, "selection driver: response outlier fraction");
  exp->add_option("--trials", exp_trials);
  exp->add_option("--seed", exp_o.seed);
  exp->add_option("--threads", exp_o.threads);
  exp->add_option("--out", exp_o.out);

  // ---------------- worker (internal) ----------------
  auto* wrk = app.add_subcommand("worker", "internal: sockets-mode computation node");
  int wrk_port = 0, wrk_id = -1;
  std::string wrk_dataset;
  PipelineConfig wrk_cfg;
  wrk->add_option("--port", wrk_port)->required();
  wrk->add_option("--dataset", wrk_dataset)->required();
  wrk->add_option("--id", wrk_id)->required();
  wrk->add_option("--b", wrk_cfg.b)->required();
  wrk->add_option("--seed", wrk_cfg.seed);
  wrk->add_option("--boot", wrk_cfg.B);
  wrk->add_option("--alpha", wrk_cfg.alpha);

  CLI11_PARSE(app, argc, argv);

  try {
    if (*cal) {
      CalibrationTargets t;
      t.delta_star = cal_delta;
      t.efficiency_star = cal_eff;
      const double c0 = calibrate_c0(t);
      const double c1 =
          calibrate_c1(t, c0, cal_family == "tau" ? EstimatorKind::tau : EstimatorKind::m);
      std::cout << "c0 " << c0 << "\n" << "c1 " << c1 << "\n";
      return 0;
    }

    if (*gen) {
      json j = gen_config.empty() ? json::object() : read_json(gen_config);
      ScenarioSpec s = scenario_from_json(j);
      if (gen_scenario) s = ScenarioSpec::paper_scenario(gen_scenario, gen_shrink);
      if (gen_n) s.n = gen_n;
      if (gen_p) s.p = gen_p;
      if (gen_b) s.b = gen_b;
      if (gen_k) s.k_s = gen_k;
      if (gen->count("--snr")) s.snr_db = gen_snr;
      if (gen->count("--rho")) s.correlation = gen_rho;
      if (gen->count("--seed")) s.seed = gen_o.seed;
      if (s.beta_values.empty()) s.beta_values = {3.0};
      if (s.b == 0) s.b = s.n;
      const GeneratedData d = generate_scenario(s);
      fs::create_directories(gen_o.out);
      write_dataset_csv(gen_o.out + "/dataset.csv", d.X, d.y);
      write_truth_json(gen_o.out + "/truth.json", d, {});
      std::cout << "wrote " << gen_o.out << "/dataset.csv (n=" << s.n << ", p=" << s.p
                << ", sigma_v=" << d.sigma_v << ")\n";
      return 0;
    }

    if (*con) {
      Matrix X;
      Vector y;
      read_dataset_csv(con_dataset, X, y);
      const json tj = read_json(con_truth);
      GeneratedData truth;
      const auto bt = tj.at("beta_true").get<std::vector<double>>();
      truth.beta_true = Eigen::Map<const Vector>(bt.data(), long(bt.size()));
      truth.support = tj.at("support").get<std::vector<int>>();
      truth.sigma_v = tj.at("sigma_v").get<double>();
      ContaminationSpec cs;
      cs.scheme = scheme_from_string(con_scheme);
      cs.fraction = con_fraction;
      cs.alpha_o = con_alpha_o;
      cs.sigma_e = con_sigma_e;
      cs.seed = con_o.seed;
      const ContaminationResult res = contaminate(X, y, truth, cs);
      fs::create_directories(con_o.out);
      write_dataset_csv(con_o.out + "/dataset.csv", X, y);
      write_truth_json(con_o.out + "/truth.json", truth, res.mask);
      std::cout << "wrote " << con_o.out << "/dataset.csv (" << res.mask.size()
                << " rows modified)\n";
      return 0;
    }

    if (*run || *sel || *inf) {
      const bool is_run = bool(*run);
      const bool is_sel = bool(*sel);
      std::string dataset = is_run ? run_dataset : (is_sel ? sel_dataset : inf_dataset);
      std::string config = is_run ? run_config : (is_sel ? sel_config : inf_config);
      std::string mode = is_run ? run_mode : (is_sel ? sel_mode : inf_mode);
      PipelineConfig cfg = is_run ? run_cfg : (is_sel ? sel_cfg : inf_cfg);
      CLI::App* cmd = is_run ? run : (is_sel ? sel : inf);
      CommonOpts o = is_run ? run_o : (is_sel ? sel_o : inf_o);

      if (!config.empty()) {
        PipelineConfig file_cfg = pipeline_from_json(read_json(config));
        // flags override file values
        if (!cmd->count("--seed")) cfg.seed = file_cfg.seed;
        if (!cmd->count("--threads")) cfg.threads = file_cfg.threads;
        if (!cmd->count("--b")) cfg.b = file_cfg.b;
        if (!cmd->count("--alpha")) cfg.alpha = file_cfg.alpha;
        if (!cmd->count("--boot")) cfg.B = file_cfg.B;
        if (!cmd->count("--vote-K")) cfg.vote.K = file_cfg.vote.K;
        if (!cmd->count("--trim")) cfg.trim_ratio = file_cfg.trim_ratio;
        if (!cmd->count("--k")) cfg.k_s_hint = file_cfg.k_s_hint;
      }

      Matrix X;
      Vector y;
      read_dataset_csv(dataset, X, y);
      if (cfg.b == 0) cfg.b = X.rows();
      fs::create_directories(o.out);

      if (is_sel) {
        const PartitionPlan plan = plan_partitions(X.rows(), cfg.b, cfg.k_s_hint, int(X.cols()),
                                                   cfg.seed);
        if (!plan.warning.empty()) std::cerr << "plan warning: " << plan.warning << "\n";
        const auto parts = partition_rows(plan);
        std::vector<Stage1Result> results(std::size_t(plan.s));
        detail::parallel_for(int(plan.s), cfg.threads, [&](int i) {
          results[std::size_t(i)] = stage1_for_partition(
              detail::gather_rows(X, parts[std::size_t(i)]),
              detail::gather_rows(y, parts[std::size_t(i)]), cfg, i);
        });
        std::vector<std::vector<int>> supports;
        json per_partition = json::array();
        for (const auto& r : results) {
          json e = {{"partition_id", r.partition_id}, {"ok", r.ok}};
          if (r.ok) {
            e["support"] = r.fit.support;
            e["lambda"] = r.lambda_star;
            supports.push_back(r.fit.support);
          } else {
            e["error"] = r.error;
          }
          per_partition.push_back(e);
        }
        const FusedSupport fused = fuse_supports(supports, int(X.cols()), cfg.vote);
        json out = {{"fused_support", fused.support},
                    {"vote_shares", fused.vote_shares},
                    {"partitions", per_partition}};
        write_json(o.out + "/selection.json", out);
        std::cout << "fused support:";
        for (int j : fused.support) std::cout << " " << j;
        std::cout << "\n";
        return 0;
      }

      if (is_run) {
        PipelineResult res;
        if (mode == "sockets") {
          SocketFusionCenter center(fs::read_symlink("/proc/self/exe").string(), dataset, cfg);
          res = center.run(X, y);
        } else {
          res = run_pipeline(X, y, cfg);
        }
        write_json(o.out + "/report.json", report_to_json(res.report));
        write_json(o.out + "/manifest.json", manifest_to_json(res.manifest));
        std::cout << "support size " << res.report.support.size() << ", sd estimate "
                  << res.report.sd_estimate << "\n";
        return 0;
      }

      // infer: stage 2 only on the given support
      const std::vector<int> support_idx = parse_support(inf_support);
      const PartitionPlan plan = plan_partitions(X.rows(), cfg.b, cfg.k_s_hint, int(X.cols()),
                                                 cfg.seed);
      const auto parts = partition_rows(plan);
      std::vector<Stage2Result> results(std::size_t(plan.s));
      detail::parallel_for(int(plan.s), cfg.threads, [&](int i) {
        const Matrix Xp = detail::gather_rows(X, parts[std::size_t(i)]);
        const Vector yp = detail::gather_rows(y, parts[std::size_t(i)]);
        Vector init;
        try {
          Matrix Xr(Xp.rows(), long(support_idx.size()));
          for (std::size_t k = 0; k < support_idx.size(); ++k)
            Xr.col(long(k)) = Xp.col(support_idx[k]);
          TauLassoProblem prob(Xr, yp, cfg.lasso);
          const SparseFit f =
              prob.fit_multistart(0.0, mix_key(cfg.seed, stream::kInit, std::uint64_t(i)));
          init.resize(long(support_idx.size()) + 1);
          init[0] = f.intercept;
          for (std::size_t k = 0; k < support_idx.size(); ++k) init[long(k) + 1] = f.beta[long(k)];
        } catch (const std::exception&) {
        }
        results[std::size_t(i)] =
            stage2_for_partition(Xp, yp, support_idx, init, cfg, i, X.rows());
      });
      std::vector<std::vector<Interval>> lists;
      std::vector<Matrix> reps;
      Vector beta_acc = Vector::Zero(long(support_idx.size()));
      int ok = 0;
      for (const auto& r : results) {
        if (!r.ok) continue;
        lists.push_back(r.slope_cis);
        reps.push_back(r.slope_replicates);
        beta_acc += r.beta.tail(r.beta.size() - 1);
        ++ok;
      }
      if (ok == 0) throw PipelineError("infer: every partition failed");
      FusedReport rep;
      rep.support = support_idx;
      rep.intervals = average_cis(lists, cfg.trim_ratio);
      rep.point_estimates.assign(beta_acc.data(), beta_acc.data() + beta_acc.size());
      for (auto& v : rep.point_estimates) v /= double(ok);
      rep.sd_estimate = bootstrap_sd(reps);
      write_json(o.out + "/report.json", report_to_json(rep));
      std::cout << "sd estimate " << rep.sd_estimate << "\n";
      return 0;
    }

    if (*exp) {
      fs::create_directories(exp_o.out);
      if (exp_which == "selection") {
        // columns: trial,scheme,xi,tp,fp,cer,seconds
        std::vector<std::pair<std::string, ContaminationSpec>> cases;
        ScenarioSpec base;
        if (exp_scenario == "3-scaled") {
          base = ScenarioSpec::paper_scenario(3, 10.0);  // n=8000 at p=100
          base.b = 800;
          ContaminationSpec cs;
          cs.scheme = ContaminationScheme::response_gauss;
          cs.fraction = exp_outliers;
          cases.emplace_back("response", cs);
        } else {
          base = ScenarioSpec::paper_scenario(5, 5.0);  // n=4000, b=800
          base.snr_db = 10.0;
          for (int s = 1; s <= 4; ++s) {
            ContaminationSpec cs;
            cs.scheme = scheme_from_string(std::to_string(s));
            cs.fraction = exp_outliers;
            cases.emplace_back("scheme" + std::to_string(s), cs);
          }
        }
        const auto rows =
            selection_experiment(base, cases, exp_trials, exp_o.threads, exp_o.seed);
        CsvWriter csv(exp_o.out + "/selection.csv",
                      {"trial", "scheme", "xi", "tp", "fp", "cer", "seconds"});
        double tp = 0, fp = 0;
        for (const auto& r : rows) {
          csv.row(r.trial, r.scheme, r.xi, r.tp, r.fp, r.cer, r.seconds);
          tp += r.tp;
          fp += r.fp;
        }
        std::cout << "mean TP " << tp / double(rows.size()) << ", mean FP "
                  << fp / double(rows.size()) << "\n";
      } else if (exp_which == "sd-robustness") {
        const auto rows = sd_robustness_experiment(20000, 2200, 20, 300, exp_o.seed,
                                                   exp_o.threads, {1, 2, 3, 4, 5, 6, 7}, 0.4);
        CsvWriter csv(exp_o.out + "/sd_robustness.csv",
                      {"case", "epsilon_rsob", "epsilon_ls_blb"});
        for (const auto& r : rows) {
          csv.row(r.label, r.epsilon_rsob, r.epsilon_ls);
          std::cout << r.label << ": rsob " << r.epsilon_rsob << ", ls " << r.epsilon_ls << "\n";
        }
      } else if (exp_which == "convergence") {
        const ConvergenceResult res = convergence_experiment(50000, 5000, 5, 1000, exp_o.seed);
        CsvWriter csv(exp_o.out + "/convergence.csv", {"coordinate", "ks_distance", "sd_ratio"});
        for (std::size_t j = 0; j < res.ks.size(); ++j) csv.row(j, res.ks[j], res.sd_ratio);
        std::cout << "max KS " << *std::max_element(res.ks.begin(), res.ks.end())
                  << ", uncorrected/corrected SD ratio " << res.sd_ratio << "\n";
      } else if (exp_which == "speedup") {
        const SpeedupResult res = speedup_experiment(4000, 100, 100, exp_o.seed);
        CsvWriter csv(exp_o.out + "/speedup.csv",
                      {"one_step_seconds", "full_refit_seconds", "ratio"});
        csv.row(res.one_step_seconds_per_replicate, res.full_refit_seconds_per_replicate,
                res.ratio);
        std::cout << "per-replicate ratio " << res.ratio << "\n";
      } else {  // breakdown
        std::vector<std::uint64_t> seeds;
        for (int s = 0; s < exp_trials; ++s) seeds.push_back(exp_o.seed + std::uint64_t(s));
        CsvWriter csv(exp_o.out + "/breakdown.csv",
                      {"fraction", "magnitude", "seed", "norm_ratio"});
        for (double frac : {0.3, 0.6}) {
          const auto rows = breakdown_experiment(200, 10, frac, {1e3, 1e6, 1e9},
                                                 frac < 0.5 ? seeds
                                                            : std::vector<std::uint64_t>{seeds[0]});
          for (const auto& r : rows) csv.row(r.fraction, r.magnitude, r.seed, r.norm_ratio);
        }
        std::cout << "wrote " << exp_o.out << "/breakdown.csv\n";
      }
      return 0;
    }

    if (*wrk) {
      return run_socket_worker(wrk_port, wrk_dataset, wrk_id, wrk_cfg);
    }
  } catch (const IoError& e) {
    std::cerr << "io error: " << e.what() << "\n";
    return kIoFailure;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kNumericalFailure;
  }
  return 0;
}
