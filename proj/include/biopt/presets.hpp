#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "biopt/config.hpp"
#include "biopt/quadratic.hpp"

namespace biopt {

struct Verdict {
  std::string name;
  double measured = 0.0;
  double threshold = 0.0;
  bool pass = false;
  std::string detail;
};

struct ExperimentReport {
  std::string preset;
  uint64_t seed = 0;
  std::vector<Verdict> verdicts;
  std::vector<std::string> outputs;  /* files written under the out directory */
  /* named scalar measurements (timings, ratios, medians); ordered */
  std::vector<std::pair<std::string, double>> metrics;

  bool all_pass() const;
};

/* Canned experiments, selected by cfg "preset":
     denoise           two-source classification, one source with random labels;
                       passes when the corrupted source's final weight < 0.05
     mixture           validation drawn 6:4 from two planted regressions;
                       learned weights must land within 0.05 of (0.6, 0.4)
     quality           low-noise 10% source vs high-noise 90% source, clean
                       validation; the low-noise weight must exceed 0.5
     hyperclean        per-example weights under label corruption; corrupted
                       examples must fall below clean ones, and retraining on
                       the top half must beat uniform retraining
     quad-verify       closed-form diagnostics: penalty-gap scans, minimizer
                       distance bound, curvature probes, envelope identity,
                       horizon scaling of the stationarity measure
     baseline-compare  wall-clock race to a fixed gradient-norm target between
                       the minimax solver and the second-order baselines
   Artifacts (trajectory CSVs, weight plots, report.json) are written to the
   cfg "out" directory. */
ExperimentReport run_preset(const ExperimentConfig& cfg);

void write_report_json(const ExperimentReport& report, const std::string& path);

/* Small well-conditioned instance (A = I) whose schedule constraints are
   satisfiable with a lambda step large enough to move; used by the horizon
   scaling study. */
QuadraticInstance make_scaling_instance(uint64_t seed);

struct ScalingPoint {
  int64_t horizon;
  double min_grad_norm_sq;  /* min_k |grad L(lambda_k)|^2 over the run */
};

/* Runs the theoretical schedule at each horizon on the scaling instance and
   tracks the best true stationarity measure seen.  Any violated step-size
   precondition is reported through `violations`. */
std::vector<ScalingPoint> theoretical_scaling_run(uint64_t seed,
                                                  const std::vector<int64_t>& horizons,
                                                  std::vector<std::string>* violations = nullptr);

}  // namespace biopt
