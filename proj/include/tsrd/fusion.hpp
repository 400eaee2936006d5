#pragma once

#include <algorithm>
#include <cmath>
#include <map>
#include <stdexcept>
#include <vector>

#include "tsrd/bootstrap.hpp"

namespace tsrd {

struct VoteConfig {
  double K = 0.5;  // fraction threshold, inclusive

  void validate() const {
    if (!(K > 0.0 && K <= 1.0)) throw std::invalid_argument("VoteConfig: K outside (0,1]");
  }
};

struct FusionMismatchError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct FusedSupport {
  std::vector<int> support;       // fused index set, sorted
  std::vector<double> vote_shares;  // per variable, length p
};

//! Percentage voting: variable j enters the fused support iff the fraction of
//! partitions selecting it is >= K.
inline FusedSupport fuse_supports(const std::vector<std::vector<int>>& supports, int p,
                                  const VoteConfig& cfg) {
  cfg.validate();
  if (supports.empty()) throw std::invalid_argument("fuse_supports: no partitions");
  FusedSupport out;
  out.vote_shares.assign(std::size_t(p), 0.0);
  for (const auto& s : supports)
    for (int j : s) {
      if (j < 0 || j >= p) throw std::invalid_argument("fuse_supports: index out of range");
      out.vote_shares[std::size_t(j)] += 1.0;
    }
  const double s = double(supports.size());
  for (int j = 0; j < p; ++j) {
    out.vote_shares[std::size_t(j)] /= s;
    if (out.vote_shares[std::size_t(j)] >= cfg.K) out.support.push_back(j);
  }
  return out;
}

//! Coordinate-wise mean of interval bounds across partitions. With a positive
//! trim ratio, that fraction of the smallest and largest bounds is dropped
//! from each coordinate-wise mean (for bags that may exceed 50% contamination).
inline std::vector<Interval> average_cis(const std::vector<std::vector<Interval>>& interval_lists,
                                         double trim_ratio = 0.0) {
  if (interval_lists.empty()) throw std::invalid_argument("average_cis: no partitions");
  const std::size_t q = interval_lists.front().size();
  for (const auto& list : interval_lists)
    if (list.size() != q)
      throw FusionMismatchError("average_cis: partitions report different coordinate sets");
  if (!(trim_ratio >= 0.0 && trim_ratio < 0.5))
    throw std::invalid_argument("average_cis: trim ratio outside [0, 0.5)");

  const std::size_t s = interval_lists.size();
  const std::size_t k = std::size_t(std::floor(trim_ratio * double(s)));
  auto trimmed_mean = [&](std::vector<double>& v) {
    std::sort(v.begin(), v.end());
    double acc = 0.0;
    for (std::size_t i = k; i < v.size() - k; ++i) acc += v[i];
    return acc / double(v.size() - 2 * k);
  };

  std::vector<Interval> out(q);
  std::vector<double> lo(s), hi(s);
  for (std::size_t j = 0; j < q; ++j) {
    for (std::size_t i = 0; i < s; ++i) {
      lo[i] = interval_lists[i][j].lower;
      hi[i] = interval_lists[i][j].upper;
    }
    out[j] = {trimmed_mean(lo), trimmed_mean(hi)};
  }
  return out;
}

}  // namespace tsrd
