#pragma once

#include <Eigen/Dense>
#include <fstream>
#include <iomanip>
#include <sstream>
#include <stdexcept>
#include <string>
#include <vector>

#include <json.hpp>

#include "tsrd/datagen.hpp"
#include "tsrd/pipeline.hpp"

namespace tsrd {

using json = nlohmann::json;

struct IoError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

//! Dataset CSV: header row `y,x1,...,xp`, response first.
inline void write_dataset_csv(const std::string& path, const Matrix& X, const Vector& y) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << "y";
  for (Eigen::Index j = 0; j < X.cols(); ++j) f << ",x" << (j + 1);
  f << "\n";
  f << std::setprecision(17);
  for (Eigen::Index i = 0; i < X.rows(); ++i) {
    f << y[i];
    for (Eigen::Index j = 0; j < X.cols(); ++j) f << "," << X(i, j);
    f << "\n";
  }
}

inline void read_dataset_csv(const std::string& path, Matrix& X, Vector& y) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  std::string line;
  if (!std::getline(f, line)) throw IoError("empty dataset file: " + path);
  long p = -1;  // from header
  {
    std::stringstream ss(line);
    std::string cell;
    long cols = 0;
    while (std::getline(ss, cell, ',')) ++cols;
    if (cols < 2) throw IoError("dataset needs a response and at least one regressor");
    p = cols - 1;
  }
  std::vector<double> ybuf;
  std::vector<double> xbuf;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    std::stringstream ss(line);
    std::string cell;
    long col = 0;
    while (std::getline(ss, cell, ',')) {
      const double v = std::stod(cell);
      if (col == 0)
        ybuf.push_back(v);
      else
        xbuf.push_back(v);
      ++col;
    }
    if (col != p + 1) throw IoError("ragged row in " + path);
  }
  const long n = long(ybuf.size());
  y = Eigen::Map<Vector>(ybuf.data(), n);
  X.resize(n, p);
  for (long i = 0; i < n; ++i)
    for (long j = 0; j < p; ++j) X(i, j) = xbuf[std::size_t(i * p + j)];
}

//! Companion truth file: beta_true, support (0-based), sigma_v, outlier mask.
inline void write_truth_json(const std::string& path, const GeneratedData& truth,
                             const std::vector<int>& outlier_mask) {
  json j;
  j["beta_true"] = std::vector<double>(truth.beta_true.data(),
                                       truth.beta_true.data() + truth.beta_true.size());
  j["support"] = truth.support;
  j["sigma_v"] = truth.sigma_v;
  j["outlier_mask"] = outlier_mask;
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << j.dump(2) << "\n";
}

inline json read_json(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open: " + path);
  json j;
  f >> j;
  return j;
}

inline json report_to_json(const FusedReport& r) {
  json j;
  j["support"] = r.support;
  j["vote_shares"] = r.vote_shares;
  json ivs = json::array();
  for (std::size_t k = 0; k < r.intervals.size(); ++k)
    ivs.push_back({{"coordinate", r.support[k]},
                   {"lower", r.intervals[k].lower},
                   {"upper", r.intervals[k].upper},
                   {"estimate", r.point_estimates[k]}});
  j["intervals"] = ivs;
  j["intercept"] = {{"lower", r.intercept_interval.lower},
                    {"upper", r.intercept_interval.upper},
                    {"estimate", r.intercept_estimate}};
  j["sd_estimate"] = r.sd_estimate;
  return j;
}

inline json manifest_to_json(const RunManifest& m) {
  json j;
  j["seed"] = m.seed;
  j["n"] = m.n;
  j["b"] = m.b;
  j["s"] = m.s;
  j["leftover_rows"] = m.leftover_rows;
  j["plan_warning"] = m.plan_warning;
  j["stage1_failures"] = m.stage1_failures;
  j["stage2_failures"] = m.stage2_failures;
  j["replicate_failures"] = m.replicate_failures;
  j["uncorrected_partitions"] = m.uncorrected_partitions;
  j["timings"] = {{"stage1_seconds", m.stage1_seconds},
                  {"stage2_seconds", m.stage2_seconds},
                  {"total_seconds", m.total_seconds}};
  j["partition_errors"] = m.partition_errors;
  return j;
}

inline void write_json(const std::string& path, const json& j) {
  std::ofstream f(path);
  if (!f) throw IoError("cannot open for writing: " + path);
  f << j.dump(2) << "\n";
}

//! Minimal CSV emitter for experiment tables.
class CsvWriter {
 public:
  CsvWriter(const std::string& path, const std::vector<std::string>& columns) : f_(path) {
    if (!f_) throw IoError("cannot open for writing: " + path);
    for (std::size_t i = 0; i < columns.size(); ++i) f_ << (i ? "," : "") << columns[i];
    f_ << "\n";
    f_ << std::setprecision(12);
  }
  template <class... Ts>
  void row(const Ts&... vals) {
    bool first = true;
    ((f_ << (first ? "" : ",") << vals, first = false), ...);
    f_ << "\n";
  }

 private:
  std::ofstream f_;
};

}  // namespace tsrd
