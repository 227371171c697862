#pragma once

#include <cstdint>

#include <Eigen/Core>

#include "biopt/problem.hpp"

namespace biopt {

/* Verification family with closed-form solutions:
     L2(lambda, w) = 1/2 w'Aw - lambda'B'w
     L1(lambda, w) = 1/2 |Cw - y|^2 + rho/2 |lambda|^2
   A symmetric positive definite.  Lipschitz constants of L1 in w hold on the
   ball |w| <= region_radius, which must contain the iterates of interest. */
struct QuadraticInstance {
  Eigen::MatrixXd a_matrix;  /* dim_w x dim_w */
  Eigen::MatrixXd b_matrix;  /* dim_w x dim_lambda */
  Eigen::MatrixXd c_matrix;  /* rows x dim_w */
  Eigen::VectorXd y_target;  /* rows */
  double rho = 0.0;
  double region_radius = 10.0;

  int dim_lambda() const { return static_cast<int>(b_matrix.cols()); }
  int dim_w() const { return static_cast<int>(a_matrix.rows()); }
};

/* Constants from matrix spectra.  mu2 = lambda_min(A); ell21 is the spectral
   norm of the joint Hessian of L2; ell11 = max(rho, sigma_max(C)^2);
   ell10 = sigma_max(C)^2 R + |C'y| on the declared region; ell22 = 0. */
ProblemConstants quadratic_constants(const QuadraticInstance& inst);

/* Random instance with lambda_min(A) = mu2_target exactly (orthogonal basis
   times a pinned spectrum); C normalized to unit spectral norm. */
QuadraticInstance make_quadratic(int dim_lambda, int dim_w, double mu2_target,
                                 uint64_t seed, double rho = 0.0);

class QuadraticProblem final : public BilevelProblem {
 public:
  explicit QuadraticProblem(QuadraticInstance inst);

  int dim_lambda() const override { return inst_.dim_lambda(); }
  int dim_w() const override { return inst_.dim_w(); }
  const ProblemConstants& constants() const override { return constants_; }

  double l1(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
            const BatchHandle* batch = nullptr) const override;
  double l2(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
            const BatchHandle* batch = nullptr) const override;
  Eigen::VectorXd grad_l1_lambda(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                                 const BatchHandle* batch = nullptr) const override;
  Eigen::VectorXd grad_l1_w(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                            const BatchHandle* batch = nullptr) const override;
  Eigen::VectorXd grad_l2_lambda(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                                 const BatchHandle* batch = nullptr) const override;
  Eigen::VectorXd grad_l2_w(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                            const BatchHandle* batch = nullptr) const override;

  const QuadraticInstance& instance() const { return inst_; }

 private:
  QuadraticInstance inst_;
  ProblemConstants constants_;
};

}  // namespace biopt
