#pragma once

#include <functional>
#include <memory>
#include <vector>

#include <Eigen/Core>

#include "biopt/problem.hpp"
#include "biopt/run_record.hpp"
#include "biopt/solver.hpp"

namespace biopt {

enum class HvpMode { analytic, finite_difference };

/* Hessian-vector products of the lower objective:
     hvp_ww: d^2 L2 / dw dw . v          (dim_w)
     hvp_lw: d^2 L2 / dlambda dw . v     (dim_lambda)
   Analytic mode is available for the quadratic family only; finite
   difference uses central differences of gradients with
   h = fd_step / max(1, |v|). */
class HvpOracle {
 public:
  virtual ~HvpOracle() = default;
  virtual Eigen::VectorXd hvp_ww(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                                 const Eigen::VectorXd& v) const = 0;
  virtual Eigen::VectorXd hvp_lw(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                                 const Eigen::VectorXd& v) const = 0;
};

std::unique_ptr<HvpOracle> make_hvp_oracle(const BilevelProblem& problem, HvpMode mode,
                                           double fd_step = 1e-5);

struct BaselineConfig {
  int inner_steps = 200;        /* T */
  double inner_step_size = 0.1;
  int neumann_terms = 64;       /* Q */
  double neumann_step = 0.0;    /* 0 selects 0.5 / ell21 when constants exist */
  int cg_iterations = 200;
  double cg_tolerance = 1e-8;
  int unroll_depth = 0;         /* 0 = full unroll over all T steps */
  HvpMode hvp_mode = HvpMode::finite_difference;
  double fd_step = 1e-5;
  bool stocbio_minibatch = false;
};

struct HypergradInfo {
  int iterations = 0;
  double residual = 0.0;  /* CG residual norm, or last Neumann term norm */
  Eigen::VectorXd w_end;
};

/* T full-batch gradient steps on the lower objective at fixed lambda;
   optionally records the iterate tape w_0..w_T. */
Eigen::VectorXd inner_solve(const BilevelProblem& problem, const Eigen::VectorXd& lambda,
                            const Eigen::VectorXd& w_init, int steps, double step_size,
                            std::vector<Eigen::VectorXd>* tape = nullptr,
                            const BatchSampler* sampler = nullptr);

/* Neumann-series estimator: after an inner solve,
     g = dL1/dlambda + H_lw . [ eta_N sum_{q<Q} (I - eta_N H_ww)^q (-dL1/dw) ].
   Aborts if a series term grows past 10x its first term (eta_N too large). */
Eigen::VectorXd stocbio_hypergrad(const BilevelProblem& problem,
                                  const Eigen::VectorXd& lambda,
                                  const BaselineConfig& config, const HvpOracle& oracle,
                                  const Eigen::VectorXd& w_init,
                                  HypergradInfo* info = nullptr,
                                  const BatchSampler* sampler = nullptr);

/* Conjugate-gradient solve of H_ww x = dL1/dw, then
   g = dL1/dlambda - H_lw x.  Throws if the residual misses cg_tolerance. */
Eigen::VectorXd cg_hypergrad(const BilevelProblem& problem, const Eigen::VectorXd& lambda,
                             const BaselineConfig& config, const HvpOracle& oracle,
                             const Eigen::VectorXd& w_init,
                             HypergradInfo* info = nullptr);

/* Backpropagation through the last unroll_depth inner gradient steps using
   Hessian-vector products on the stored tape. */
Eigen::VectorXd reverse_hypergrad(const BilevelProblem& problem,
                                  const Eigen::VectorXd& lambda,
                                  const BaselineConfig& config,
                                  const Eigen::VectorXd& w_init,
                                  HypergradInfo* info = nullptr);

/* Plain gradient descent on lambda with a pluggable hypergradient estimator.
   The estimator receives the current lambda and a warm-start w and reports
   the w it ended at. */
using HypergradMethod = std::function<Eigen::VectorXd(
    const Eigen::VectorXd& lambda, const Eigen::VectorXd& w_start, Eigen::VectorXd* w_end)>;

HypergradMethod make_stocbio_method(const BilevelProblem& problem,
                                    const BaselineConfig& config, const HvpOracle& oracle);
HypergradMethod make_cg_method(const BilevelProblem& problem, const BaselineConfig& config,
                               const HvpOracle& oracle);
HypergradMethod make_reverse_method(const BilevelProblem& problem,
                                    const BaselineConfig& config);

RunRecord outer_descent(const BilevelProblem& problem, const HypergradMethod& method,
                        int outer_steps, double outer_step_size,
                        const Eigen::VectorXd& lambda0, const Eigen::VectorXd& w0,
                        int64_t log_every = 10);

}  // namespace biopt
