#pragma once

#include <array>
#include <fstream>
#include <limits>
#include <stdexcept>
#include <string>
#include <vector>

#include "srdo/csv.hpp"

namespace srdo {

enum class Scenario { None = 0, AllowedNumber = 1, IgnoreStragglers = 2, StaleGradients = 3 };

/// One row per iteration index k (row 0 is the initial state; row k >= 1 also
/// carries the events of the step k-1 -> k). `alpha` is the schedule value at
/// k; envelope columns are +inf until an analysis pass fills them.
struct IterationRecord {
  int k = 0;
  double alpha = 0.0;
  double ae = 0.0;
  double ce = 0.0;
  double sumsq_v_err = 0.0;
  double vmax_err = 0.0;
  std::vector<double> r_norms;
  double max_r_norm = 0.0;
  std::array<int, 4> scenario_counts{0, 0, 0, 0};  // none, s1, s2, s3
  std::vector<int> partition_drawn;                // per server; 0 = none
  std::vector<int> straggler_counts;               // per server; -1 when no pull
  bool condition1 = true;
  int division = 1;
  double bound_env_1 = std::numeric_limits<double>::infinity();
  double bound_env_2 = std::numeric_limits<double>::infinity();
};

struct TrialTrace {
  int n_servers = 0;
  int delay_bound = 0;
  double applied_scale = 1.0;  // gradient scale used by the engine update
  std::vector<IterationRecord> records;

  static constexpr const char* kCsvHeader =
      "k,alpha,AE,CE,sumsq_v_err,max_R_norm,bound_env_1,bound_env_2,"
      "scenario_counts,condition1_flag";

  void write_csv(const std::string& path) const {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw std::runtime_error("cannot open for writing: " + path);
    out << kCsvHeader << '\n';
    for (const auto& r : records) {
      out << r.k << ',' << format_double(r.alpha) << ',' << format_double(r.ae) << ','
          << format_double(r.ce) << ',' << format_double(r.sumsq_v_err) << ','
          << format_double(r.max_r_norm) << ',' << format_double(r.bound_env_1) << ','
          << format_double(r.bound_env_2) << ',' << r.scenario_counts[0] << ';'
          << r.scenario_counts[1] << ';' << r.scenario_counts[2] << ';'
          << r.scenario_counts[3] << ',' << (r.condition1 ? 1 : 0) << '\n';
    }
  }
};

}  // namespace srdo
