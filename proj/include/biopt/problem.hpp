#pragma once

#include <algorithm>
#include <Eigen/Core>

#include "biopt/dataset.hpp"

namespace biopt {

/* Smoothness/convexity constants of a bilevel pair (L1, L2):
     mu2    strong-convexity modulus of L2 in the inner variable,
     ell10  Lipschitz constant of L1 in the inner variable,
     ell11  gradient-Lipschitz constant of L1,
     ell21  gradient-Lipschitz constant of L2,
     ell22  Hessian-Lipschitz constant of L2.
   `exact` marks constants computed from matrix spectra rather than bounds
   that are merely estimated (or unavailable, reported as 0). */
struct ProblemConstants {
  double mu2 = 0.0;
  double ell10 = 0.0;
  double ell11 = 0.0;
  double ell21 = 0.0;
  double ell22 = 0.0;
  bool exact = false;

  double kappa() const {
    return std::max({ell10, ell11, ell21, ell22}) / mu2;
  }
  double c0() const { return ell10 / mu2; }
};

/* A bilevel pair: upper objective L1(lambda, w) and lower objective
   L2(lambda, w), both with exact gradients in each argument.  A null batch
   means full-batch evaluation; problems without data ignore the handle. */
class BilevelProblem {
 public:
  virtual ~BilevelProblem() = default;

  virtual int dim_lambda() const = 0;
  virtual int dim_w() const = 0;
  virtual const ProblemConstants& constants() const = 0;

  virtual double l1(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                    const BatchHandle* batch = nullptr) const = 0;
  virtual double l2(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                    const BatchHandle* batch = nullptr) const = 0;
  virtual Eigen::VectorXd grad_l1_lambda(const Eigen::VectorXd& lambda,
                                         const Eigen::VectorXd& w,
                                         const BatchHandle* batch = nullptr) const = 0;
  virtual Eigen::VectorXd grad_l1_w(const Eigen::VectorXd& lambda,
                                    const Eigen::VectorXd& w,
                                    const BatchHandle* batch = nullptr) const = 0;
  virtual Eigen::VectorXd grad_l2_lambda(const Eigen::VectorXd& lambda,
                                         const Eigen::VectorXd& w,
                                         const BatchHandle* batch = nullptr) const = 0;
  virtual Eigen::VectorXd grad_l2_w(const Eigen::VectorXd& lambda,
                                    const Eigen::VectorXd& w,
                                    const BatchHandle* batch = nullptr) const = 0;

  /* true when lambda parameterizes a softmax mixture over sources */
  virtual bool lambda_is_mixture() const { return false; }
};

}  // namespace biopt
