#pragma once

#include <functional>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <Eigen/Cholesky>
#include <Eigen/Core>

#include "biopt/problem.hpp"
#include "biopt/quadratic.hpp"

namespace biopt {

/* Closed-form reference quantities for the quadratic family.  With
   M = A^{-1}B:
     w*(lambda)  = M lambda                      u*(lambda) = w*(lambda)
     w*_a(lambda) = (C'C + aA)^{-1} (C'y + aB lambda)
     L(lambda)   = L1(lambda, w*(lambda))
     G_a(lambda) = min_w [ L1 + a (L2(lambda,w) - L2(lambda,u*)) ]
   Gradients are direct differentiations of these closed forms. */
class QuadraticOracle {
 public:
  explicit QuadraticOracle(const QuadraticInstance& inst);

  const QuadraticInstance& instance() const { return inst_; }
  const ProblemConstants& constants() const { return constants_; }

  Eigen::VectorXd w_star(const Eigen::VectorXd& lambda) const;
  Eigen::VectorXd u_star(const Eigen::VectorXd& lambda) const;
  Eigen::VectorXd w_star_alpha(const Eigen::VectorXd& lambda, double alpha) const;

  double outer_value(const Eigen::VectorXd& lambda) const;
  Eigen::VectorXd outer_grad(const Eigen::VectorXd& lambda) const;
  Eigen::MatrixXd outer_hessian() const;

  double penalty_value(const Eigen::VectorXd& lambda, double alpha) const;
  Eigen::VectorXd penalty_grad(const Eigen::VectorXd& lambda, double alpha) const;
  /* partial lambda-gradient of the saddle objective at (w*_a, u*) */
  Eigen::VectorXd penalty_grad_envelope(const Eigen::VectorXd& lambda, double alpha) const;
  Eigen::MatrixXd penalty_hessian(double alpha) const;

  /* argmin of the outer objective (needs it to be strictly convex) */
  Eigen::VectorXd lambda_star() const;

 private:
  const Eigen::LLT<Eigen::MatrixXd>& alpha_solver(double alpha) const;

  QuadraticInstance inst_;
  ProblemConstants constants_;
  Eigen::LLT<Eigen::MatrixXd> a_llt_;
  Eigen::MatrixXd m_;    /* A^{-1} B */
  Eigen::MatrixXd ctc_;
  Eigen::VectorXd cty_;
  mutable std::map<double, std::unique_ptr<Eigen::LLT<Eigen::MatrixXd>>> alpha_cache_;
};

/* hypergradient via the implicit-function route:
   rho lambda + M' C'(C M lambda - y) */
Eigen::VectorXd ift_hypergrad(const QuadraticOracle& oracle,
                              const Eigen::VectorXd& lambda);

/* central differences with h_i = max(1,|x_i|) eps^{1/3}, or a fixed h */
Eigen::VectorXd finite_diff_grad(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double h_override = 0.0);

struct GapRow {
  double alpha;
  double value_gap;  /* |L - G_a| */
  double grad_gap;   /* |grad L - grad G_a| */
};

struct GapScan {
  std::vector<GapRow> rows;
  double value_slope = 0.0;  /* log-log fit of gap against alpha */
  double grad_slope = 0.0;
};

/* Requires every alpha above the convexity threshold 2 ell11 / mu2. */
GapScan gap_scan(const QuadraticOracle& oracle, const Eigen::VectorXd& lambda,
                 const std::vector<double>& alphas);

struct DistanceRow {
  double alpha;
  double distance;  /* |w*_a - w*| */
  double bound;     /* c0 / alpha */
};

/* Errors if lambda maps outside the declared region. */
std::vector<DistanceRow> minimizer_distance_scan(const QuadraticOracle& oracle,
                                                 const Eigen::VectorXd& lambda,
                                                 const std::vector<double>& alphas);

bool distance_bound_ok(const std::vector<DistanceRow>& rows, double slack = 1.05);

struct CurvatureReport {
  int trials = 0;
  int concavity_violations = 0;
  int convexity_violations = 0;
  bool convexity_checked = false;
  std::string status;
};

/* Segment probes of the saddle objective L1 + a(L2(.,w) - L2(.,u)):
   strong concavity in u with modulus mu2 a always; strong convexity in w
   with modulus mu2 a / 2 only once a > 2 ell11 / mu2 (skipped below). */
CurvatureReport curvature_probe(const BilevelProblem& problem,
                                const Eigen::VectorXd& lambda, double alpha,
                                int trials, uint64_t seed);

/* columns: alpha, value_gap, grad_gap, wdist, wbound */
void write_scan_csv(const GapScan& gaps, const std::vector<DistanceRow>& dist,
                    const std::string& path);

}  // namespace biopt
