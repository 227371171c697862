#include "biopt/quadratic.hpp"

#include <stdexcept>

#include <Eigen/Dense>

#include "biopt/rng.hpp"

namespace biopt {

ProblemConstants quadratic_constants(const QuadraticInstance& inst) {
  const int dw = inst.dim_w();
  const int dl = inst.dim_lambda();

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_a(inst.a_matrix);
  const double mu2 = eig_a.eigenvalues().minCoeff();

  /* joint Hessian of L2 over (lambda, w): [[0, -B'], [-B, A]] */
  Eigen::MatrixXd h2 = Eigen::MatrixXd::Zero(dl + dw, dl + dw);
  h2.block(0, dl, dl, dw) = -inst.b_matrix.transpose();
  h2.block(dl, 0, dw, dl) = -inst.b_matrix;
  h2.block(dl, dl, dw, dw) = inst.a_matrix;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig_h2(h2);
  const double ell21 = eig_h2.eigenvalues().cwiseAbs().maxCoeff();

  const double c_norm2 = inst.c_matrix.rows() > 0
      ? Eigen::JacobiSVD<Eigen::MatrixXd>(inst.c_matrix).singularValues()[0]
      : 0.0;
  const double ell11 = std::max(inst.rho, c_norm2 * c_norm2);
  const double ell10 = c_norm2 * c_norm2 * inst.region_radius +
                       (inst.c_matrix.transpose() * inst.y_target).norm();

  ProblemConstants k;
  k.mu2 = mu2;
  k.ell10 = ell10;
  k.ell11 = ell11;
  k.ell21 = ell21;
  k.ell22 = 0.0;
  k.exact = true;
  return k;
}

QuadraticInstance make_quadratic(int dim_lambda, int dim_w, double mu2_target,
                                 uint64_t seed, double rho) {
  if (dim_lambda < 1 || dim_w < 1)
    throw std::invalid_argument("make_quadratic: dimensions must be >= 1");
  if (mu2_target <= 0.0)
    throw std::invalid_argument("make_quadratic: mu2_target must be > 0");
  if (rho < 0.0) throw std::invalid_argument("make_quadratic: rho must be >= 0");

  CounterRng rng(seed, stream::datagen, 0);
  QuadraticInstance inst;
  inst.rho = rho;

  /* A = Q diag(e) Q' with e_0 pinned to mu2_target */
  Eigen::MatrixXd g(dim_w, dim_w);
  for (int i = 0; i < dim_w; ++i)
    for (int j = 0; j < dim_w; ++j) g(i, j) = rng.next_gaussian();
  Eigen::HouseholderQR<Eigen::MatrixXd> qr(g);
  Eigen::MatrixXd q = qr.householderQ();
  Eigen::VectorXd e(dim_w);
  e[0] = mu2_target;
  for (int i = 1; i < dim_w; ++i)
    e[i] = mu2_target * (1.5 + 2.0 * rng.next_double());
  inst.a_matrix = q * e.asDiagonal() * q.transpose();
  inst.a_matrix = 0.5 * (inst.a_matrix + inst.a_matrix.transpose()).eval();

  inst.b_matrix.resize(dim_w, dim_lambda);
  for (int i = 0; i < dim_w; ++i)
    for (int j = 0; j < dim_lambda; ++j)
      inst.b_matrix(i, j) = rng.next_gaussian() / std::sqrt(double(dim_w));

  inst.c_matrix.resize(dim_w, dim_w);
  for (int i = 0; i < dim_w; ++i)
    for (int j = 0; j < dim_w; ++j) inst.c_matrix(i, j) = rng.next_gaussian();
  const double smax = Eigen::JacobiSVD<Eigen::MatrixXd>(inst.c_matrix).singularValues()[0];
  inst.c_matrix /= smax;  /* unit spectral norm */

  inst.y_target.resize(dim_w);
  for (int i = 0; i < dim_w; ++i) inst.y_target[i] = rng.next_gaussian();

  return inst;
}

QuadraticProblem::QuadraticProblem(QuadraticInstance inst) : inst_(std::move(inst)) {
  if (inst_.a_matrix.rows() != inst_.a_matrix.cols())
    throw std::invalid_argument("QuadraticProblem: A must be square");
  if ((inst_.a_matrix - inst_.a_matrix.transpose()).cwiseAbs().maxCoeff() > 1e-10)
    throw std::invalid_argument("QuadraticProblem: A must be symmetric");
  if (inst_.b_matrix.rows() != inst_.a_matrix.rows())
    throw std::invalid_argument("QuadraticProblem: B row count must match A");
  if (inst_.c_matrix.cols() != inst_.a_matrix.rows())
    throw std::invalid_argument("QuadraticProblem: C column count must match A");
  if (inst_.y_target.size() != inst_.c_matrix.rows())
    throw std::invalid_argument("QuadraticProblem: y length must match C rows");
  constants_ = quadratic_constants(inst_);
  if (constants_.mu2 <= 0.0)
    throw std::invalid_argument("QuadraticProblem: A must be positive definite");
}

double QuadraticProblem::l1(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                            const BatchHandle*) const {
  const Eigen::VectorXd r = inst_.c_matrix * w - inst_.y_target;
  return 0.5 * r.squaredNorm() + 0.5 * inst_.rho * lambda.squaredNorm();
}

double QuadraticProblem::l2(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                            const BatchHandle*) const {
  return 0.5 * w.dot(inst_.a_matrix * w) - (inst_.b_matrix * lambda).dot(w);
}

Eigen::VectorXd QuadraticProblem::grad_l1_lambda(const Eigen::VectorXd& lambda,
                                                 const Eigen::VectorXd&,
                                                 const BatchHandle*) const {
  return inst_.rho * lambda;
}

Eigen::VectorXd QuadraticProblem::grad_l1_w(const Eigen::VectorXd&,
                                            const Eigen::VectorXd& w,
                                            const BatchHandle*) const {
  return inst_.c_matrix.transpose() * (inst_.c_matrix * w - inst_.y_target);
}

Eigen::VectorXd QuadraticProblem::grad_l2_lambda(const Eigen::VectorXd&,
                                                 const Eigen::VectorXd& w,
                                                 const BatchHandle*) const {
  return -inst_.b_matrix.transpose() * w;
}

Eigen::VectorXd QuadraticProblem::grad_l2_w(const Eigen::VectorXd& lambda,
                                            const Eigen::VectorXd& w,
                                            const BatchHandle*) const {
  return inst_.a_matrix * w - inst_.b_matrix * lambda;
}

}  // namespace biopt
