#pragma once

#include <cstdint>
#include <optional>
#include <stdexcept>
#include <string>
#include <vector>

#include <Eigen/Core>

#include "biopt/problem.hpp"
#include "biopt/run_record.hpp"

namespace biopt {

struct BlockPartition {
  int dim = 0;
  std::vector<std::vector<int>> blocks;

  int num_blocks() const { return static_cast<int>(blocks.size()); }
  void validate() const;  /* blocks must partition {0..dim-1} */
};

enum class PartitionStrategy { contiguous, strided, singleton };

/* Split dimension `dim` into J blocks.  Contiguous blocks differ in size by
   at most one; strided assigns index i to block i mod J; singleton requires
   J == dim. */
BlockPartition make_partition(int dim, int j_blocks, PartitionStrategy strategy);

enum class StepRule { plain, adam };

/* Penalty and step sizes for the minimax solver.  In theoretical mode they
   are fixed functions of the horizon K:
     alpha = K^{1/7}, eta_u = eta_w = eta0 / K^{4/7},
     eta_lambda = eta0_lambda / K^{5/7}.
   Constant mode takes the four values directly; a zero step size freezes
   that variable (useful for diagnostics). */
struct Schedule {
  enum class Mode { constant, theoretical };
  Mode mode = Mode::constant;
  int64_t total_steps = 0;

  double alpha = 1.0;
  double eta_u = 0.0, eta_w = 0.0, eta_lambda = 0.0;  /* constant mode */
  double eta0 = 1.0, eta0_lambda = 1.0;               /* theoretical mode */

  StepRule rule = StepRule::plain;
  double adam_beta1 = 0.9, adam_beta2 = 0.999, adam_eps = 1e-8;

  static Schedule constant(int64_t total_steps, double alpha, double eta_u,
                           double eta_w, double eta_lambda,
                           StepRule rule = StepRule::plain);
  static Schedule theoretical(int64_t total_steps, double eta0, double eta0_lambda,
                              StepRule rule = StepRule::plain);
  /* alpha 100, lambda rate 1e-2, model rate 1e-5, adaptive rule */
  static Schedule practical(int64_t total_steps);

  double alpha_value() const;
  double eta_u_value() const;
  double eta_w_value() const;
  double eta_lambda_value() const;

  void validate() const;
  /* step-size preconditions of the convergence guarantee:
     eta0 <= 8 J / mu2 and eta0 / eta0_lambda >= 6 sqrt(2) kappa^2 J */
  std::vector<std::string> schedule_constraint_violations(const ProblemConstants& k,
                                                          int j_blocks) const;
};

/* First/second moment accumulators with per-coordinate bias correction, so
   block-local updates only advance the moments of coordinates they touch. */
struct AdamState {
  Eigen::VectorXd m, v;
  std::vector<int64_t> t;

  void init(int dim);
  bool initialized() const { return m.size() > 0; }
  /* feed block_grad (indexed by `idx`) through the moments; returns the
     bias-corrected direction for those coordinates */
  Eigen::VectorXd direction(const std::vector<int>& idx,
                            const Eigen::VectorXd& block_grad, double beta1,
                            double beta2, double eps);
};

struct SolverState {
  Eigen::VectorXd lambda, w, u;
  int64_t k = 0;
  BlockPartition part_u, part_w;
  AdamState adam_lambda, adam_w, adam_u;
  /* introspection from the most recent step */
  int last_block_u = -1, last_block_w = -1;
  double last_lambda_direction_norm = 0.0;
  Eigen::VectorXd last_lambda_direction;
};

/* Batch source for the stepper.  nullopt = full batch. */
class BatchSampler {
 public:
  virtual ~BatchSampler() = default;
  virtual std::optional<BatchHandle> sample(Origin origin, int64_t step) const = 0;
  virtual const SamplerConfig& config() const = 0;
};

class FullBatchSampler final : public BatchSampler {
 public:
  explicit FullBatchSampler(SamplerConfig cfg = {}) : cfg_(cfg) {}
  std::optional<BatchHandle> sample(Origin, int64_t) const override { return std::nullopt; }
  const SamplerConfig& config() const override { return cfg_; }

 private:
  SamplerConfig cfg_;
};

class MinibatchSampler final : public BatchSampler {
 public:
  MinibatchSampler(const SyntheticDataset& train, const SyntheticDataset& val,
                   SamplerConfig cfg,
                   SampleScheme train_scheme = SampleScheme::uniform_sources)
      : train_(&train), val_(&val), cfg_(cfg), train_scheme_(train_scheme) {}
  std::optional<BatchHandle> sample(Origin origin, int64_t step) const override;
  const SamplerConfig& config() const override { return cfg_; }

 private:
  const SyntheticDataset* train_;
  const SyntheticDataset* val_;
  SamplerConfig cfg_;
  SampleScheme train_scheme_;
};

/* Raised when any gradient evaluation produces a non-finite entry. */
class NanGradientError : public std::runtime_error {
 public:
  NanGradientError(int64_t step, const std::string& which)
      : std::runtime_error("non-finite gradient (" + which + ") at step " +
                           std::to_string(step)),
        step(step),
        which(which) {}
  int64_t step;
  std::string which;
};

/* One step of the first-order penalty minimax method:
   draw block j for u and r for w, draw one train and one validation batch
   (the train batch is shared by every lower-objective gradient this step),
   then with all gradients at the entering iterates
     u_j      -= alpha eta_u  * d_j L2(lambda, u; train)
     w_r      -= eta_w * [ d_r L1(lambda, w; val) + alpha d_r L2(lambda, w; train) ]
     lambda   -= eta_lambda * [ dL1/dlambda (val)
                                + alpha (dL2/dlambda(w; train) - dL2/dlambda(u; train)) ]
   Under the adaptive rule each bracketed direction passes through its
   moment accumulator before the step size is applied. */
void solver_step(const BilevelProblem& problem, SolverState& state,
                 const Schedule& schedule, const BatchSampler& sampler);

/* Runs K steps, logging every log_every steps (plus step 0 and the final
   step).  A NanGradientError mid-run is recorded as a diagnostic row and the
   partial record is returned with `aborted` set. */
RunRecord run_solver(const BilevelProblem& problem, const Schedule& schedule,
                     const BatchSampler& sampler, const BlockPartition& part_u,
                     const BlockPartition& part_w, const Eigen::VectorXd& lambda0,
                     const Eigen::VectorXd& w0, const Eigen::VectorXd& u0,
                     int64_t log_every = 100);

}  // namespace biopt
