#pragma once

#include <cmath>
#include <cstdint>
#include <numeric>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

#include "tsrd/rng.hpp"

namespace tsrd {

struct PartitionPlan {
  long n = 0;
  long b = 0;
  long s = 0;          // floor(n / b)
  double gamma = 0.0;  // implied exponent, b = n^gamma
  std::uint64_t seed = 0;
  long leftover = 0;   // n - s b, unused rows
  std::string warning; // set when b falls outside the feasibility window
};

struct InvalidPlanError : std::invalid_argument {
  using std::invalid_argument::invalid_argument;
};

//! Validate the requested batch size against the feasibility window
//! max(n^0.6, c_s k_s log p) <= b <= n^0.9 (warning only) and derive the plan.
inline PartitionPlan plan_partitions(long n, long b_requested, int k_s_hint, int p,
                                     std::uint64_t seed, double c_s = 30.0) {
  if (n < 1 || b_requested < 1) throw InvalidPlanError("plan_partitions: n and b must be >= 1");
  if (b_requested > n) throw InvalidPlanError("plan_partitions: b exceeds n");
  PartitionPlan plan;
  plan.n = n;
  plan.b = b_requested;
  plan.s = n / b_requested;
  plan.gamma = std::log(double(b_requested)) / std::log(double(n));
  plan.seed = seed;
  plan.leftover = n - plan.s * plan.b;

  double lower = std::pow(double(n), 0.6);
  if (k_s_hint > 0 && p > 1) lower = std::max(lower, c_s * double(k_s_hint) * std::log(double(p)));
  const double upper = std::pow(double(n), 0.9);
  if (double(b_requested) < lower)
    plan.warning = "b below the feasibility window (b < max(n^0.6, c_s k_s log p))";
  else if (double(b_requested) > upper)
    plan.warning = "b above the feasibility window (b > n^0.9)";
  return plan;
}

//! Disjoint row-index subsets of size b drawn by seeded sampling without
//! replacement; deterministic given the plan's seed.
inline std::vector<std::vector<long>> partition_rows(const PartitionPlan& plan) {
  std::vector<long> rows(static_cast<std::size_t>(plan.n));
  std::iota(rows.begin(), rows.end(), 0);
  std::mt19937_64 eng = make_engine(plan.seed, stream::kPartition);
  const long take = plan.s * plan.b;
  for (long i = 0; i < take; ++i) {
    std::uniform_int_distribution<long> pick(i, plan.n - 1);
    std::swap(rows[std::size_t(i)], rows[std::size_t(pick(eng))]);
  }
  std::vector<std::vector<long>> parts(static_cast<std::size_t>(plan.s));
  for (long i = 0; i < plan.s; ++i)
    parts[std::size_t(i)].assign(rows.begin() + i * plan.b, rows.begin() + (i + 1) * plan.b);
  return parts;
}

}  // namespace tsrd
