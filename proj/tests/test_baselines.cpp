#include <doctest.h>

#include <cmath>
#include <vector>

#include <Eigen/Eigenvalues>

#include "biopt/baselines.hpp"
#include "biopt/dataset.hpp"
#include "biopt/oracle.hpp"
#include "biopt/quadratic.hpp"
#include "biopt/reweight.hpp"
#include "test_util.hpp"

using namespace biopt;
using namespace biopt::testutil;

namespace {

QuadraticInstance one_dim() {
  QuadraticInstance inst;
  inst.a_matrix = Eigen::MatrixXd::Constant(1, 1, 2.0);
  inst.b_matrix = Eigen::MatrixXd::Constant(1, 1, 1.0);
  inst.c_matrix = Eigen::MatrixXd::Constant(1, 1, 1.0);
  inst.y_target = Eigen::VectorXd::Constant(1, 1.0);
  return inst;
}

Eigen::VectorXd scalar(double v) { return Eigen::VectorXd::Constant(1, v); }

}  // namespace

TEST_CASE("analytic and finite-difference hessian products agree") {
  const QuadraticInstance inst = make_quadratic(3, 5, 1.0, 11, 0.1);
  const QuadraticProblem prob(inst);
  const auto exact = make_hvp_oracle(prob, HvpMode::analytic);
  const auto approx = make_hvp_oracle(prob, HvpMode::finite_difference);

  for (int t = 0; t < 20; ++t) {
    const Eigen::VectorXd lam = random_vec(3, 307, 3 * t, 0.5);
    const Eigen::VectorXd w = random_vec(5, 307, 3 * t + 1, 0.5);
    const Eigen::VectorXd v = random_vec(5, 307, 3 * t + 2);
    CHECK((exact->hvp_ww(lam, w, v) - inst.a_matrix * v).norm() == 0.0);
    CHECK((exact->hvp_lw(lam, w, v) + inst.b_matrix.transpose() * v).norm() == 0.0);
    CHECK(rel_err(approx->hvp_ww(lam, w, v), exact->hvp_ww(lam, w, v)) < 1e-5);
    CHECK(rel_err(approx->hvp_lw(lam, w, v), exact->hvp_lw(lam, w, v)) < 1e-5);
  }
}

TEST_CASE("finite-difference hessian products are symmetric") {
  const QuadraticProblem prob(make_quadratic(3, 5, 1.0, 11, 0.1));
  const auto oracle = make_hvp_oracle(prob, HvpMode::finite_difference);
  const Eigen::VectorXd lam = random_vec(3, 311, 0, 0.5);
  const Eigen::VectorXd w = random_vec(5, 311, 1, 0.5);
  for (int t = 0; t < 10; ++t) {
    const Eigen::VectorXd a = random_vec(5, 311, 10 + 2 * t);
    const Eigen::VectorXd b = random_vec(5, 311, 11 + 2 * t);
    CHECK(std::abs(a.dot(oracle->hvp_ww(lam, w, b)) -
                   b.dot(oracle->hvp_ww(lam, w, a))) < 1e-6);
  }
}

TEST_CASE("analytic products require the quadratic family") {
  const QuadraticProblem quad(make_quadratic(2, 3, 1.0, 13));
  CHECK_NOTHROW(make_hvp_oracle(quad, HvpMode::analytic));
  CHECK_THROWS_AS(make_hvp_oracle(quad, HvpMode::finite_difference, 0.0),
                  std::invalid_argument);

  SourceSpec sp;
  sp.n = 6;
  sp.kind = TaskKind::regression;
  const SyntheticDataset train = gen_sources({sp, sp}, 3, 21);
  const SyntheticDataset val = gen_sources({sp}, 3, 23);
  const SourceReweightProblem rw(train, val,
                                 InnerModel(ModelKind::linear_regression, 3, 0.05));
  CHECK_THROWS_WITH_AS(make_hvp_oracle(rw, HvpMode::analytic),
                       doctest::Contains("needs a quadratic problem"),
                       std::invalid_argument);
  CHECK_NOTHROW(make_hvp_oracle(rw, HvpMode::finite_difference));
}

TEST_CASE("inner solve contracts to the lower minimizer") {
  const QuadraticProblem prob(one_dim());
  const Eigen::VectorXd lam = scalar(1.0);
  const Eigen::VectorXd w0 = scalar(0.0);

  const Eigen::VectorXd w100 = inner_solve(prob, lam, w0, 100, 0.4);
  CHECK(std::abs(w100[0] - 0.5) < 1e-10);

  const Eigen::VectorXd frozen = inner_solve(prob, lam, scalar(0.3), 50, 0.0);
  CHECK(frozen[0] == 0.3);

  std::vector<Eigen::VectorXd> tape;
  inner_solve(prob, lam, w0, 40, 0.4, &tape);
  REQUIRE(tape.size() == 41);
  for (size_t t = 0; t + 1 < tape.size(); ++t)
    CHECK(prob.l2(lam, tape[t + 1]) <= prob.l2(lam, tape[t]) + 1e-12);
}

TEST_CASE("one-term neumann estimate matches hand arithmetic") {
  const QuadraticProblem prob(one_dim());
  const auto oracle = make_hvp_oracle(prob, HvpMode::analytic);
  BaselineConfig cfg;
  cfg.inner_steps = 0;
  cfg.neumann_terms = 1;
  cfg.neumann_step = 0.1;
  const Eigen::VectorXd g =
      stocbio_hypergrad(prob, scalar(1.0), cfg, *oracle, scalar(0.3));
  CHECK(g[0] == doctest::Approx(-0.07).epsilon(1e-14));
}

TEST_CASE("long neumann series reach the implicit hypergradient") {
  const QuadraticInstance inst = make_quadratic(3, 5, 1.0, 11, 0.1);
  const QuadraticProblem prob(inst);
  const QuadraticOracle oracle(inst);
  const auto hvp = make_hvp_oracle(prob, HvpMode::analytic);
  const Eigen::VectorXd lam = random_vec(3, 313, 0, 0.5);
  const Eigen::VectorXd want = ift_hypergrad(oracle, lam);

  BaselineConfig cfg;
  cfg.inner_steps = 800;
  cfg.inner_step_size = 0.9 / prob.constants().ell21;
  cfg.neumann_terms = 500;
  const Eigen::VectorXd got =
      stocbio_hypergrad(prob, lam, cfg, *hvp, Eigen::VectorXd::Zero(5));
  CHECK(rel_err(got, want) < 1e-6);

  double prev_err = std::numeric_limits<double>::infinity();
  for (int q : {1, 5, 25, 125}) {
    cfg.neumann_terms = q;
    const Eigen::VectorXd gq =
        stocbio_hypergrad(prob, lam, cfg, *hvp, Eigen::VectorXd::Zero(5));
    const double err = (gq - want).norm();
    CHECK(err <= prev_err + 1e-12);
    prev_err = err;
  }
}

TEST_CASE("neumann partial sums contract at the advertised geometric rate") {
  const QuadraticInstance inst = make_quadratic(3, 5, 1.0, 11, 0.1);
  const QuadraticProblem prob(inst);
  const auto hvp = make_hvp_oracle(prob, HvpMode::analytic);
  const ProblemConstants& k = prob.constants();
  const Eigen::VectorXd lam = random_vec(3, 317, 0, 0.5);

  BaselineConfig cfg;
  cfg.inner_steps = 400;
  cfg.inner_step_size = 0.9 / k.ell21;
  const double eta = 0.5 / k.ell21;
  cfg.neumann_step = eta;

  const Eigen::VectorXd w_t = inner_solve(prob, lam, Eigen::VectorXd::Zero(5),
                                          cfg.inner_steps, cfg.inner_step_size);
  Eigen::VectorXd v = -prob.grad_l1_w(lam, w_t);
  Eigen::VectorXd s = v;
  double prev = eta * v.norm();
  for (int q = 1; q < 5; ++q) {
    v -= eta * hvp->hvp_ww(lam, w_t, v);
    s += v;
    const double cur = eta * v.norm();
    CHECK(cur <= (1.0 - eta * k.mu2) * prev + 1e-12);
    prev = cur;
  }
  cfg.neumann_terms = 5;
  const Eigen::VectorXd got =
      stocbio_hypergrad(prob, lam, cfg, *hvp, Eigen::VectorXd::Zero(5));
  const Eigen::VectorXd rebuilt =
      prob.grad_l1_lambda(lam, w_t) + hvp->hvp_lw(lam, w_t, eta * s);
  CHECK((got - rebuilt).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("a too-large neumann step trips the divergence guard") {
  const QuadraticProblem prob(make_quadratic(3, 5, 1.0, 11, 0.1));
  const auto hvp = make_hvp_oracle(prob, HvpMode::analytic);
  BaselineConfig cfg;
  cfg.inner_steps = 50;
  cfg.inner_step_size = 0.9 / prob.constants().ell21;
  cfg.neumann_terms = 200;
  cfg.neumann_step = 3.0;
  CHECK_THROWS_WITH_AS(
      stocbio_hypergrad(prob, random_vec(3, 331, 0, 0.5), cfg, *hvp,
                        Eigen::VectorXd::Zero(5)),
      doctest::Contains("eta_N too large"), std::runtime_error);
}

TEST_CASE("conjugate gradients finish a five-dimensional solve in five steps") {
  const QuadraticInstance inst = make_quadratic(3, 5, 1.0, 11, 0.1);
  const QuadraticProblem prob(inst);
  const QuadraticOracle oracle(inst);
  const auto hvp = make_hvp_oracle(prob, HvpMode::analytic);
  const Eigen::VectorXd lam = random_vec(3, 337, 0, 0.5);

  BaselineConfig cfg;
  cfg.inner_steps = 0;
  cfg.cg_iterations = 50;
  cfg.cg_tolerance = 1e-10;
  HypergradInfo info;
  const Eigen::VectorXd got =
      cg_hypergrad(prob, lam, cfg, *hvp, oracle.w_star(lam), &info);
  CHECK(info.iterations <= 5);
  CHECK(info.residual <= 1e-10 * std::max(1.0, prob.grad_l1_w(lam, info.w_end).norm()));
  CHECK(rel_err(got, ift_hypergrad(oracle, lam)) < 1e-6);
  CHECK((info.w_end - oracle.w_star(lam)).norm() == 0.0);
}

TEST_CASE("a zero right-hand side leaves only the direct lambda gradient") {
  QuadraticInstance inst = make_quadratic(3, 5, 1.0, 41);
  inst.c_matrix = Eigen::MatrixXd::Zero(1, 5);
  inst.y_target = Eigen::VectorXd::Zero(1);
  inst.rho = 0.7;
  const QuadraticProblem prob(inst);
  const auto hvp = make_hvp_oracle(prob, HvpMode::analytic);
  const Eigen::VectorXd lam = random_vec(3, 347, 0);

  BaselineConfig cfg;
  cfg.inner_steps = 0;
  cfg.cg_iterations = 50;
  HypergradInfo info;
  const Eigen::VectorXd got =
      cg_hypergrad(prob, lam, cfg, *hvp, Eigen::VectorXd::Zero(5), &info);
  CHECK(info.iterations == 0);
  CHECK((got - 0.7 * lam).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("conjugate gradients report non-convergence with the residual") {
  const QuadraticProblem prob(make_quadratic(3, 5, 1.0, 11, 0.1));
  const auto hvp = make_hvp_oracle(prob, HvpMode::analytic);
  BaselineConfig cfg;
  cfg.inner_steps = 0;
  cfg.cg_iterations = 1;
  cfg.cg_tolerance = 1e-14;
  CHECK_THROWS_WITH_AS(
      cg_hypergrad(prob, random_vec(3, 349, 0, 0.5), cfg, *hvp, random_vec(5, 349, 1)),
      doctest::Contains("no convergence after"), std::runtime_error);
}

TEST_CASE("full unrolling recovers the implicit hypergradient") {
  const QuadraticInstance inst = make_quadratic(3, 5, 1.0, 11, 0.1);
  const QuadraticProblem prob(inst);
  const QuadraticOracle oracle(inst);
  const Eigen::VectorXd lam = random_vec(3, 353, 0, 0.5);

  BaselineConfig cfg;
  cfg.inner_steps = 400;
  cfg.inner_step_size = 0.9 / prob.constants().ell21;
  cfg.unroll_depth = 0;
  const Eigen::VectorXd got =
      reverse_hypergrad(prob, lam, cfg, Eigen::VectorXd::Zero(5));
  CHECK(rel_err(got, ift_hypergrad(oracle, lam)) < 1e-5);

  cfg.unroll_depth = cfg.inner_steps + 1;
  CHECK_THROWS_WITH_AS(reverse_hypergrad(prob, lam, cfg, Eigen::VectorXd::Zero(5)),
                       doctest::Contains("unroll depth exceeds tape length"),
                       std::invalid_argument);
}

TEST_CASE("a frozen inner map reduces reverse mode to the direct gradient") {
  const QuadraticInstance inst = make_quadratic(3, 5, 1.0, 11, 0.3);
  const QuadraticProblem prob(inst);
  const Eigen::VectorXd lam = random_vec(3, 359, 0, 0.5);
  BaselineConfig cfg;
  cfg.inner_steps = 20;
  cfg.inner_step_size = 0.0;
  cfg.unroll_depth = 0;
  const Eigen::VectorXd got = reverse_hypergrad(prob, lam, cfg, random_vec(5, 359, 1));
  CHECK((got - 0.3 * lam).lpNorm<Eigen::Infinity>() < 1e-14);
}

TEST_CASE("deeper truncation never hurts on quadratics") {
  const QuadraticInstance inst = make_quadratic(3, 5, 1.0, 11, 0.1);
  const QuadraticProblem prob(inst);
  const QuadraticOracle oracle(inst);
  const Eigen::VectorXd lam = random_vec(3, 367, 0, 0.5);
  const Eigen::VectorXd want = ift_hypergrad(oracle, lam);

  BaselineConfig cfg;
  cfg.inner_steps = 200;
  cfg.inner_step_size = 0.9 / prob.constants().ell21;
  cfg.hvp_mode = HvpMode::analytic;
  double prev_err = std::numeric_limits<double>::infinity();
  for (int depth : {1, 3, 10, 50, 200}) {
    cfg.unroll_depth = depth;
    const Eigen::VectorXd g = reverse_hypergrad(prob, lam, cfg, Eigen::VectorXd::Zero(5));
    const double err = (g - want).norm();
    CHECK(err <= prev_err + 1e-12);
    prev_err = err;
  }
}

TEST_CASE("generous budgets drive all three estimators to the same answer") {
  const QuadraticInstance inst = make_quadratic(3, 5, 1.0, 11, 0.1);
  const QuadraticProblem prob(inst);
  const QuadraticOracle oracle(inst);
  const auto hvp = make_hvp_oracle(prob, HvpMode::analytic);
  const Eigen::VectorXd lam = random_vec(3, 373, 0, 0.5);
  const Eigen::VectorXd want = ift_hypergrad(oracle, lam);
  const Eigen::VectorXd w0 = Eigen::VectorXd::Zero(5);

  BaselineConfig cfg;
  cfg.inner_steps = 800;
  cfg.inner_step_size = 0.9 / prob.constants().ell21;
  cfg.neumann_terms = 500;
  cfg.cg_iterations = 200;
  cfg.cg_tolerance = 1e-10;
  cfg.unroll_depth = 0;
  cfg.hvp_mode = HvpMode::analytic;

  const Eigen::VectorXd sb = stocbio_hypergrad(prob, lam, cfg, *hvp, w0);
  const Eigen::VectorXd cg = cg_hypergrad(prob, lam, cfg, *hvp, w0);
  const Eigen::VectorXd rv = reverse_hypergrad(prob, lam, cfg, w0);
  CHECK(rel_err(sb, want) < 1e-5);
  CHECK(rel_err(cg, want) < 1e-5);
  CHECK(rel_err(rv, want) < 1e-5);
  CHECK(rel_err(sb, cg) < 1e-5);
}

TEST_CASE("outer descent walks the one-dimensional problem to its optimum") {
  const QuadraticInstance inst = one_dim();
  const QuadraticProblem prob(inst);
  const auto hvp = make_hvp_oracle(prob, HvpMode::analytic);
  BaselineConfig cfg;
  cfg.inner_steps = 300;
  cfg.inner_step_size = 0.4;
  cfg.cg_iterations = 50;
  cfg.cg_tolerance = 1e-10;

  const RunRecord rec = outer_descent(prob, make_cg_method(prob, cfg, *hvp), 100, 2.0,
                                      scalar(0.0), scalar(0.0));
  CHECK(std::abs(rec.final_lambda[0] - 2.0) < 1e-6);
  CHECK(rec.rows.front().step == 0);
  CHECK(rec.rows.back().step == 100);

  const RunRecord still = outer_descent(prob, make_cg_method(prob, cfg, *hvp), 0, 1.0,
                                        scalar(0.4), scalar(0.0));
  CHECK(still.final_lambda[0] == 0.4);
  CHECK(still.rows.size() == 1);
}

TEST_CASE("all estimators drive the outer descent to the same optimum") {
  const QuadraticInstance inst = make_quadratic(2, 4, 1.0, 29, 0.2);
  const QuadraticProblem prob(inst);
  const QuadraticOracle oracle(inst);
  const auto hvp = make_hvp_oracle(prob, HvpMode::analytic);

  BaselineConfig cfg;
  cfg.inner_steps = 300;
  cfg.inner_step_size = 0.9 / prob.constants().ell21;
  cfg.neumann_terms = 200;
  cfg.cg_iterations = 100;
  cfg.cg_tolerance = 1e-10;
  cfg.unroll_depth = 0;
  cfg.hvp_mode = HvpMode::analytic;

  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(oracle.outer_hessian());
  const double lr = 0.9 / eig.eigenvalues().maxCoeff();
  const Eigen::VectorXd l0 = random_vec(2, 379, 0, 0.5);
  const Eigen::VectorXd w0 = Eigen::VectorXd::Zero(4);

  const Eigen::VectorXd a =
      outer_descent(prob, make_stocbio_method(prob, cfg, *hvp), 150, lr, l0, w0)
          .final_lambda;
  const Eigen::VectorXd b =
      outer_descent(prob, make_cg_method(prob, cfg, *hvp), 150, lr, l0, w0).final_lambda;
  const Eigen::VectorXd c =
      outer_descent(prob, make_reverse_method(prob, cfg), 150, lr, l0, w0).final_lambda;
  CHECK((a - b).norm() < 1e-3);
  CHECK((a - c).norm() < 1e-3);
  CHECK((b - oracle.lambda_star()).norm() < 1e-3);
}
