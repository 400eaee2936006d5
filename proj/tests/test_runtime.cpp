#include <catch2/catch_amalgamated.hpp>

#include <cstdio>
#include <filesystem>
#include <set>

#include "tsrd/datagen.hpp"
#include "tsrd/io.hpp"
#include "tsrd/messages.hpp"
#include "tsrd/pipeline.hpp"
#include "tsrd/sockets.hpp"

using namespace tsrd;
using Catch::Approx;

namespace {

GeneratedData small_data(std::uint64_t seed, long n = 1200, int p = 12, int k = 3) {
  ScenarioSpec spec;
  spec.n = n;
  spec.p = p;
  spec.b = n;
  spec.k_s = k;
  spec.snr_db = 15.0;
  spec.correlation = 0.5;
  spec.beta_values = {3.0};
  spec.placement = BetaPlacement::leading_block;
  spec.seed = seed;
  return generate_scenario(spec);
}

bool reports_equal(const FusedReport& a, const FusedReport& b) {
  if (a.support != b.support) return false;
  if (a.vote_shares != b.vote_shares) return false;
  if (a.point_estimates != b.point_estimates) return false;
  if (a.sd_estimate != b.sd_estimate) return false;
  for (std::size_t j = 0; j < a.intervals.size(); ++j)
    if (a.intervals[j].lower != b.intervals[j].lower ||
        a.intervals[j].upper != b.intervals[j].upper)
      return false;
  return a.intercept_interval.lower == b.intercept_interval.lower &&
         a.intercept_interval.upper == b.intercept_interval.upper;
}

}  // namespace

TEST_CASE("partition plan: worked example, degenerate single bag and window warnings") {
  SECTION("the paper's worked example") {
    const PartitionPlan plan = plan_partitions(1000000, 32000, 0, 80, 1);
    CHECK(plan.s == 31);
    CHECK(plan.warning.empty());  // within [n^0.6 ~ 4000, n^0.9 ~ 251189]
    CHECK(plan.gamma == Approx(std::log(32000.0) / std::log(1e6)).epsilon(1e-12));
  }
  SECTION("single-bag degenerate mode") {
    const PartitionPlan plan = plan_partitions(100, 100, 0, 5, 1);
    CHECK(plan.s == 1);
    CHECK(plan.leftover == 0);
  }
  SECTION("below-window warning, not an error") {
    const PartitionPlan plan = plan_partitions(1000000, 1000, 0, 80, 1);
    CHECK_FALSE(plan.warning.empty());
  }
  SECTION("above-window warning") {
    const PartitionPlan plan = plan_partitions(1000, 990, 0, 5, 1);
    CHECK_FALSE(plan.warning.empty());
  }
  SECTION("b > n is an invalid plan") {
    CHECK_THROWS_AS(plan_partitions(100, 101, 0, 5, 1), InvalidPlanError);
  }
}

TEST_CASE("partitions are disjoint, exhaustive up to leftovers and seed-deterministic") {
  const PartitionPlan plan = plan_partitions(1000, 100, 0, 5, 42);
  const auto parts = partition_rows(plan);
  REQUIRE(parts.size() == 10);
  std::set<long> seen;
  for (const auto& p : parts) {
    REQUIRE(long(p.size()) == 100);
    for (long r : p) {
      CHECK(r >= 0);
      CHECK(r < 1000);
      CHECK(seen.insert(r).second);  // no duplicates across partitions
    }
  }
  CHECK(long(seen.size()) == plan.s * plan.b);

  const auto parts2 = partition_rows(plan);
  CHECK(parts == parts2);

  PartitionPlan other = plan;
  other.seed = 43;
  CHECK(partition_rows(other) != parts);
}

TEST_CASE("node messages round-trip and enforce the schema version") {
  NodeMessage m;
  m.kind = MessageKind::ci_report;
  m.partition_id = 3;
  m.payload = {{"intervals", intervals_to_payload({{1.0, 2.0}, {-0.5, 0.5}}, {4, 9})},
               {"sigma", 1.25}};
  const std::string line = m.serialize();
  CHECK(line.find('\n') == std::string::npos);  // single-line framing

  const NodeMessage back = NodeMessage::parse(line);
  CHECK(back.kind == MessageKind::ci_report);
  CHECK(back.partition_id == 3);
  const auto ivs = intervals_from_payload(back.payload.at("intervals"));
  CHECK(ivs[0].lower == 1.0);
  CHECK(ivs[1].upper == 0.5);

  SECTION("wrong schema version is rejected") {
    nlohmann::json j = nlohmann::json::parse(line);
    j["schema_version"] = 999;
    CHECK_THROWS_AS(NodeMessage::parse(j.dump()), std::invalid_argument);
  }
  SECTION("unknown kind is rejected") {
    nlohmann::json j = nlohmann::json::parse(line);
    j["kind"] = "gossip";
    CHECK_THROWS_AS(NodeMessage::parse(j.dump()), std::invalid_argument);
  }
}

TEST_CASE("pipeline is deterministic across runs and thread counts") {
  const GeneratedData d = small_data(7);
  PipelineConfig cfg;
  cfg.b = 300;
  cfg.B = 60;
  cfg.seed = 7;

  cfg.threads = 1;
  const PipelineResult r1 = run_pipeline(d.X, d.y, cfg);
  const PipelineResult r1b = run_pipeline(d.X, d.y, cfg);
  cfg.threads = 4;
  const PipelineResult r4 = run_pipeline(d.X, d.y, cfg);

  CHECK(reports_equal(r1.report, r1b.report));
  CHECK(reports_equal(r1.report, r4.report));
  CHECK(r1.report.support == std::vector<int>{0, 1, 2});
}

TEST_CASE("stage 2 for a partition depends only on its data, the fused support and seeds") {
  const GeneratedData d = small_data(11);
  PipelineConfig cfg;
  cfg.b = 300;
  cfg.B = 40;
  cfg.seed = 11;
  cfg.threads = 2;
  const PipelineResult res = run_pipeline(d.X, d.y, cfg);

  const auto parts = partition_rows(res.plan);
  const int pid = 2;
  const Matrix Xp = detail::gather_rows(d.X, parts[pid]);
  const Vector yp = detail::gather_rows(d.y, parts[pid]);
  const auto& s1 = res.stage1[pid];
  Vector init = Vector::Zero(long(res.report.support.size()) + 1);
  init[0] = s1.fit.intercept;
  for (std::size_t k = 0; k < res.report.support.size(); ++k)
    init[long(k) + 1] = s1.fit.beta[res.report.support[k]];
  const Stage2Result iso =
      stage2_for_partition(Xp, yp, res.report.support, init, cfg, pid, d.X.rows());
  REQUIRE(iso.ok);
  REQUIRE(res.stage2[pid].ok);
  CHECK((iso.beta - res.stage2[pid].beta).lpNorm<Eigen::Infinity>() == 0.0);
  for (std::size_t k = 0; k < iso.slope_cis.size(); ++k) {
    CHECK(iso.slope_cis[k].lower == res.stage2[pid].slope_cis[k].lower);
    CHECK(iso.slope_cis[k].upper == res.stage2[pid].slope_cis[k].upper);
  }
}

TEST_CASE("partition failures are excluded and reported; a majority aborts the run") {
  GeneratedData d = small_data(3);
  PipelineConfig cfg;
  cfg.b = 300;
  cfg.B = 40;
  cfg.seed = 3;

  SECTION("one partition with a degenerate column is excluded") {
    const PartitionPlan plan = plan_partitions(d.X.rows(), cfg.b, 0, int(d.X.cols()), cfg.seed);
    const auto parts = partition_rows(plan);
    Matrix X = d.X;
    for (long r : parts[1]) X(r, 5) = 4.2;  // constant inside partition 1 only
    const PipelineResult res = run_pipeline(X, d.y, cfg);
    CHECK(res.manifest.stage1_failures == 1);
    REQUIRE_FALSE(res.manifest.partition_errors.empty());
    CHECK(res.manifest.partition_errors[0].find("partition 1") != std::string::npos);
    CHECK(res.report.support == std::vector<int>{0, 1, 2});
  }
  SECTION("every partition failing aborts") {
    Matrix X = d.X;
    X.col(4).setConstant(1.0);  // constant everywhere
    CHECK_THROWS_AS(run_pipeline(X, d.y, cfg), PipelineError);
  }
}

TEST_CASE("manifest and report serialize with the documented fields") {
  const GeneratedData d = small_data(5);
  PipelineConfig cfg;
  cfg.b = 400;
  cfg.B = 40;
  cfg.seed = 5;
  const PipelineResult res = run_pipeline(d.X, d.y, cfg);
  const json rj = report_to_json(res.report);
  CHECK(rj.contains("support"));
  CHECK(rj.contains("intervals"));
  CHECK(rj.contains("sd_estimate"));
  CHECK(rj.at("intervals").size() == res.report.support.size());
  const json mj = manifest_to_json(res.manifest);
  for (const char* key : {"seed", "n", "b", "s", "leftover_rows", "stage1_failures",
                          "replicate_failures", "timings"})
    CHECK(mj.contains(key));
  CHECK(mj.at("n").get<long>() == 1200);
  CHECK(mj.at("s").get<long>() == 3);
}

TEST_CASE("dataset CSV round trip") {
  const GeneratedData d = small_data(9, 80, 4, 2);
  const std::string path = "/tmp/tsrd_test_dataset.csv";
  write_dataset_csv(path, d.X, d.y);
  Matrix X2;
  Vector y2;
  read_dataset_csv(path, X2, y2);
  CHECK((X2 - d.X).cwiseAbs().maxCoeff() == 0.0);
  CHECK((y2 - d.y).cwiseAbs().maxCoeff() == 0.0);
  std::remove(path.c_str());
}

#ifdef TSRD_CLI_PATH
TEST_CASE("sockets mode reproduces the in-process run") {
  namespace fs = std::filesystem;
  const GeneratedData d = small_data(13);
  const std::string dir = "/tmp/tsrd_sockets_test";
  fs::create_directories(dir);
  const std::string dataset = dir + "/dataset.csv";
  write_dataset_csv(dataset, d.X, d.y);

  PipelineConfig cfg;
  cfg.b = 300;
  cfg.B = 40;
  cfg.seed = 13;
  cfg.threads = 2;
  const PipelineResult inproc = run_pipeline(d.X, d.y, cfg);

  SocketFusionCenter center(TSRD_CLI_PATH, dataset, cfg);
  const PipelineResult sockets = center.run(d.X, d.y);

  CHECK(sockets.report.support == inproc.report.support);
  CHECK(sockets.report.sd_estimate == Approx(inproc.report.sd_estimate).epsilon(1e-12));
  for (std::size_t k = 0; k < inproc.report.intervals.size(); ++k) {
    CHECK(sockets.report.intervals[k].lower ==
          Approx(inproc.report.intervals[k].lower).epsilon(1e-12));
    CHECK(sockets.report.intervals[k].upper ==
          Approx(inproc.report.intervals[k].upper).epsilon(1e-12));
  }
  CHECK(sockets.report.intercept_estimate ==
        Approx(inproc.report.intercept_estimate).epsilon(1e-12));
  fs::remove_all(dir);
}
#endif
