#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <Eigen/Core>

namespace biopt {

struct RunRow {
  int64_t step = 0;
  Eigen::VectorXd lambda;
  Eigen::VectorXd p;  /* softmax weights; empty unless the problem is a mixture */
  double loss_val = 0.0;
  double loss_trn = 0.0;
  double lambda_update_norm = 0.0;
  double elapsed_seconds = 0.0;
};

/* Trajectory log of one optimization run.  CSV columns, in order:
   step, lambda_0.., p_0.. (mixture problems only), loss_val, loss_trn,
   lambda_update_norm, elapsed_seconds.  Values use 17 significant digits.
   With deterministic_elapsed the timing column is written as 0 so repeated
   runs with one seed serialize byte-identically; wall-clock stays available
   in memory. */
struct RunRecord {
  std::vector<RunRow> rows;
  Eigen::VectorXd final_lambda, final_w, final_u;
  int64_t steps_completed = 0;
  bool has_mixture = false;
  bool aborted = false;
  std::string abort_reason;
  double wall_seconds = 0.0;

  void write_csv(const std::string& path, bool deterministic_elapsed = true) const;
};

}  // namespace biopt
