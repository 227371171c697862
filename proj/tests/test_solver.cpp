#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include "biopt/quadratic.hpp"
#include "biopt/reweight.hpp"
#include "biopt/rng.hpp"
#include "biopt/solver.hpp"
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

SolverState zero_state(const BilevelProblem& prob, int j_u = 1, int j_w = 1) {
  SolverState st;
  st.lambda = Eigen::VectorXd::Zero(prob.dim_lambda());
  st.w = Eigen::VectorXd::Zero(prob.dim_w());
  st.u = Eigen::VectorXd::Zero(prob.dim_w());
  st.part_u = make_partition(prob.dim_w(), j_u, PartitionStrategy::contiguous);
  st.part_w = make_partition(prob.dim_w(), j_w, PartitionStrategy::contiguous);
  return st;
}

/* problem whose lower gradient is never finite; used for the abort path */
class PoisonProblem final : public BilevelProblem {
 public:
  int dim_lambda() const override { return 1; }
  int dim_w() const override { return 1; }
  const ProblemConstants& constants() const override { return k_; }
  double l1(const Eigen::VectorXd&, const Eigen::VectorXd&,
            const BatchHandle*) const override {
    return 0.0;
  }
  double l2(const Eigen::VectorXd&, const Eigen::VectorXd&,
            const BatchHandle*) const override {
    return 0.0;
  }
  Eigen::VectorXd grad_l1_lambda(const Eigen::VectorXd&, const Eigen::VectorXd&,
                                 const BatchHandle*) const override {
    return Eigen::VectorXd::Zero(1);
  }
  Eigen::VectorXd grad_l1_w(const Eigen::VectorXd&, const Eigen::VectorXd&,
                            const BatchHandle*) const override {
    return Eigen::VectorXd::Zero(1);
  }
  Eigen::VectorXd grad_l2_lambda(const Eigen::VectorXd&, const Eigen::VectorXd&,
                                 const BatchHandle*) const override {
    return Eigen::VectorXd::Zero(1);
  }
  Eigen::VectorXd grad_l2_w(const Eigen::VectorXd&, const Eigen::VectorXd&,
                            const BatchHandle*) const override {
    return Eigen::VectorXd::Constant(1, std::numeric_limits<double>::quiet_NaN());
  }

 private:
  ProblemConstants k_{1.0, 1.0, 1.0, 1.0, 0.0, true};
};

}  // namespace

TEST_CASE("partitions split the index range as documented") {
  const BlockPartition full = make_partition(4, 1, PartitionStrategy::contiguous);
  REQUIRE(full.num_blocks() == 1);
  CHECK(full.blocks[0] == std::vector<int>{0, 1, 2, 3});

  const BlockPartition uneven = make_partition(5, 2, PartitionStrategy::contiguous);
  CHECK(uneven.blocks[0] == std::vector<int>{0, 1, 2});
  CHECK(uneven.blocks[1] == std::vector<int>{3, 4});

  const BlockPartition strided = make_partition(5, 2, PartitionStrategy::strided);
  CHECK(strided.blocks[0] == std::vector<int>{0, 2, 4});
  CHECK(strided.blocks[1] == std::vector<int>{1, 3});

  const BlockPartition single = make_partition(4, 4, PartitionStrategy::singleton);
  REQUIRE(single.num_blocks() == 4);
  for (int b = 0; b < 4; ++b) CHECK(single.blocks[b] == std::vector<int>{b});

  CHECK_THROWS_AS(make_partition(4, 5, PartitionStrategy::contiguous),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_partition(4, 0, PartitionStrategy::contiguous),
                  std::invalid_argument);
  CHECK_THROWS_AS(make_partition(4, 2, PartitionStrategy::singleton),
                  std::invalid_argument);

  BlockPartition broken;
  broken.dim = 3;
  broken.blocks = {{0, 1}, {1, 2}};
  CHECK_THROWS_WITH_AS(broken.validate(), doctest::Contains("partition the index set"),
                       std::invalid_argument);
}

TEST_CASE("theoretical schedule fixes rates as functions of the horizon") {
  const Schedule s = Schedule::theoretical(10000000, 3.0, 0.02);
  CHECK(s.alpha_value() == doctest::Approx(10.0).epsilon(1e-9));
  CHECK(s.eta_u_value() == doctest::Approx(3.0e-4).epsilon(1e-9));
  CHECK(s.eta_w_value() == doctest::Approx(3.0e-4).epsilon(1e-9));
  CHECK(s.eta_lambda_value() == doctest::Approx(2.0e-7).epsilon(1e-9));

  const Schedule p = Schedule::practical(100);
  CHECK(p.alpha_value() == doctest::Approx(100.0));
  CHECK(p.eta_lambda_value() == doctest::Approx(1e-2));
  CHECK(p.eta_u_value() == doctest::Approx(1e-5));
  CHECK(p.rule == StepRule::adam);

  CHECK_THROWS_AS(Schedule::constant(0, 10.0, 0.1, 0.1, 0.1), std::invalid_argument);
  CHECK_THROWS_AS(Schedule::constant(10, 0.0, 0.1, 0.1, 0.1), std::invalid_argument);
  CHECK_THROWS_WITH_AS(Schedule::constant(10, 10.0, 0.0, 0.0, 0.0),
                       doctest::Contains("all step sizes are zero"),
                       std::invalid_argument);
  CHECK_THROWS_AS(Schedule::theoretical(10, 0.0, 0.1), std::invalid_argument);
}

TEST_CASE("schedule constraint checks flag violations of the stated bounds") {
  ProblemConstants k;
  k.mu2 = 1.0;
  k.ell10 = k.ell11 = k.ell21 = 2.0;
  const double kappa = 2.0;

  Schedule ok = Schedule::theoretical(1000, 6.0, 6.0 / (6.0 * std::sqrt(2.0) * kappa *
                                                        kappa * 1.01));
  CHECK(ok.schedule_constraint_violations(k, 1).empty());

  Schedule hot = Schedule::theoretical(1000, 9.0, 1e-4);
  const auto complaints = hot.schedule_constraint_violations(k, 1);
  REQUIRE(complaints.size() == 1);
  CHECK(complaints[0].find("8 J / mu2") != std::string::npos);

  Schedule inverted = Schedule::theoretical(1000, 1.0, 1.0);
  const auto ratio = inverted.schedule_constraint_violations(k, 1);
  REQUIRE(ratio.size() == 1);
  CHECK(ratio[0].find("6 sqrt(2) kappa^2 J") != std::string::npos);
}

TEST_CASE("two steps on the one-dimensional quadratic match the hand trace") {
  const QuadraticProblem prob(one_dim());
  const Schedule sched = Schedule::constant(2, 10.0, 1e-2, 1e-2, 1e-3);
  const FullBatchSampler sampler;
  SolverState st = zero_state(prob);

  solver_step(prob, st, sched, sampler);
  CHECK(st.u[0] == doctest::Approx(0.0));
  CHECK(st.w[0] == doctest::Approx(0.01).epsilon(1e-12));
  CHECK(st.lambda[0] == doctest::Approx(0.0));
  CHECK(st.k == 1);

  solver_step(prob, st, sched, sampler);
  CHECK(st.u[0] == doctest::Approx(0.0));
  CHECK(st.w[0] == doctest::Approx(0.0179).epsilon(1e-12));
  CHECK(st.lambda[0] == doctest::Approx(1e-4).epsilon(1e-12));
}

TEST_CASE("with equal entries w and u differ by exactly the upper-gradient term") {
  const QuadraticProblem prob(make_quadratic(3, 5, 1.0, 11, 0.1));
  const double eta = 5e-3, alpha = 10.0;
  const Schedule sched = Schedule::constant(1, alpha, eta, eta, 1e-3);
  const FullBatchSampler sampler;

  SolverState st = zero_state(prob);
  st.lambda = random_vec(3, 271, 0, 0.5);
  st.w = st.u = random_vec(5, 271, 1, 0.5);
  const Eigen::VectorXd g1w = prob.grad_l1_w(st.lambda, st.w);
  solver_step(prob, st, sched, sampler);
  CHECK(((st.w - st.u) + eta * g1w).lpNorm<Eigen::Infinity>() < 1e-12);
}

TEST_CASE("coordinates outside the drawn blocks never move") {
  const QuadraticProblem prob(make_quadratic(3, 5, 1.0, 11, 0.1));
  const Schedule sched = Schedule::constant(1, 10.0, 1e-2, 1e-2, 1e-3);
  const FullBatchSampler sampler;

  SolverState st = zero_state(prob, 3, 3);
  st.lambda = random_vec(3, 277, 0, 0.5);
  st.w = random_vec(5, 277, 1, 0.5);
  st.u = random_vec(5, 277, 2, 0.5);
  for (int step = 0; step < 50; ++step) {
    const Eigen::VectorXd u_before = st.u;
    const Eigen::VectorXd w_before = st.w;
    solver_step(prob, st, sched, sampler);
    for (int b = 0; b < st.part_u.num_blocks(); ++b) {
      if (b == st.last_block_u) continue;
      for (int i : st.part_u.blocks[b]) CHECK(st.u[i] == u_before[i]);
    }
    for (int b = 0; b < st.part_w.num_blocks(); ++b) {
      if (b == st.last_block_w) continue;
      for (int i : st.part_w.blocks[b]) CHECK(st.w[i] == w_before[i]);
    }
  }
}

TEST_CASE("the plain-rule lambda direction equals the problem-module formula") {
  const QuadraticProblem prob(make_quadratic(3, 5, 1.0, 11, 0.1));
  const double alpha = 25.0;
  const Schedule sched = Schedule::constant(1, alpha, 1e-2, 1e-2, 1e-3);
  const FullBatchSampler sampler;

  SolverState st = zero_state(prob);
  st.lambda = random_vec(3, 281, 0, 0.5);
  st.w = random_vec(5, 281, 1, 0.5);
  st.u = random_vec(5, 281, 2, 0.5);
  const Eigen::VectorXd expected =
      prob.grad_l1_lambda(st.lambda, st.w) +
      alpha * (prob.grad_l2_lambda(st.lambda, st.w) -
               prob.grad_l2_lambda(st.lambda, st.u));
  solver_step(prob, st, sched, sampler);
  CHECK((st.last_lambda_direction - expected).lpNorm<Eigen::Infinity>() < 1e-12);
  CHECK(st.last_lambda_direction_norm == doctest::Approx(expected.norm()));
}

TEST_CASE("block draws are uniform over 1e5 steps") {
  const QuadraticProblem prob(make_quadratic(3, 8, 1.0, 13, 0.1));
  const Schedule sched = Schedule::constant(1, 10.0, 1e-4, 1e-4, 1e-5);
  const FullBatchSampler sampler;

  SolverState st = zero_state(prob, 4, 4);
  std::vector<int> hits_u(4, 0), hits_w(4, 0);
  const int steps = 100000;
  for (int s = 0; s < steps; ++s) {
    solver_step(prob, st, sched, sampler);
    ++hits_u[st.last_block_u];
    ++hits_w[st.last_block_w];
  }
  for (int b = 0; b < 4; ++b) {
    CHECK(std::abs(hits_u[b] / double(steps) - 0.25) < 0.01);
    CHECK(std::abs(hits_w[b] / double(steps) - 0.25) < 0.01);
  }
}

TEST_CASE("w-only descent is monotone below the smoothness step cap") {
  const QuadraticProblem prob(make_quadratic(3, 5, 1.0, 11, 0.1));
  const ProblemConstants& k = prob.constants();
  const double alpha = 10.0;
  const double eta_w = 1.0 / (k.ell11 + alpha * k.ell21);
  const Schedule sched = Schedule::constant(200, alpha, 0.0, eta_w, 0.0);
  const FullBatchSampler sampler;

  SolverState st = zero_state(prob);
  st.lambda = random_vec(3, 283, 0, 0.5);
  st.w = random_vec(5, 283, 1, 0.8);
  st.u = st.w;
  const Eigen::VectorXd lam0 = st.lambda;
  double prev = prob.l1(lam0, st.w) + alpha * prob.l2(lam0, st.w);
  for (int s = 0; s < 200; ++s) {
    solver_step(prob, st, sched, sampler);
    const double cur = prob.l1(lam0, st.w) + alpha * prob.l2(lam0, st.w);
    CHECK(cur <= prev + 1e-12);
    prev = cur;
  }
  CHECK((st.lambda - lam0).norm() == 0.0);
}

TEST_CASE("runs are bit-deterministic under a fixed seed") {
  SourceSpec sp;
  sp.n = 30;
  sp.kind = TaskKind::regression;
  const SyntheticDataset train = gen_sources({sp, sp}, 3, 17);
  const SyntheticDataset val = gen_sources({sp}, 3, 19);
  const SourceReweightProblem prob(
      train, val, InnerModel(ModelKind::linear_regression, 3, 1e-3));

  SamplerConfig cfg;
  cfg.batch_size_train = 8;
  cfg.batch_size_val = 8;
  cfg.seed = 7;
  cfg.gradient_noise_sigma1 = 0.01;
  cfg.gradient_noise_sigma2 = 0.01;
  const MinibatchSampler sampler(train, val, cfg);
  const Schedule sched = Schedule::constant(60, 10.0, 1e-3, 1e-2, 1e-2, StepRule::adam);
  const BlockPartition part = make_partition(3, 1, PartitionStrategy::contiguous);
  const Eigen::VectorXd l0 = Eigen::VectorXd::Zero(2);
  const Eigen::VectorXd w0 = Eigen::VectorXd::Zero(3);

  const RunRecord a = run_solver(prob, sched, sampler, part, part, l0, w0, w0, 10);
  const RunRecord b = run_solver(prob, sched, sampler, part, part, l0, w0, w0, 10);
  REQUIRE(a.rows.size() == b.rows.size());
  for (size_t i = 0; i < a.rows.size(); ++i) {
    CHECK((a.rows[i].lambda.array() == b.rows[i].lambda.array()).all());
    CHECK(a.rows[i].loss_val == b.rows[i].loss_val);
    CHECK(a.rows[i].loss_trn == b.rows[i].loss_trn);
  }
  CHECK((a.final_w.array() == b.final_w.array()).all());
  CHECK((a.final_u.array() == b.final_u.array()).all());
}

TEST_CASE("run records log step zero, multiples, and the final step in order") {
  const QuadraticProblem prob(one_dim());
  const Schedule sched = Schedule::constant(35, 10.0, 1e-3, 1e-3, 1e-4);
  const FullBatchSampler sampler;
  const BlockPartition part = make_partition(1, 1, PartitionStrategy::contiguous);
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(1);

  const RunRecord rec = run_solver(prob, sched, sampler, part, part, z, z, z, 10);
  std::vector<int64_t> steps;
  for (const auto& row : rec.rows) steps.push_back(row.step);
  CHECK(steps == std::vector<int64_t>{0, 10, 20, 30, 35});
  CHECK(rec.steps_completed == 35);
  CHECK_FALSE(rec.aborted);

  const std::string path = "tmp_runrecord.csv";
  rec.write_csv(path, true);
  const std::string text = slurp(path);
  CHECK(text.rfind("step,lambda_0,loss_val,loss_trn,lambda_update_norm,"
                   "elapsed_seconds\n", 0) == 0);
  CHECK(count_substr(text, "\n") == 6);
  std::remove(path.c_str());

  CHECK_THROWS_AS(run_solver(prob, sched, sampler, part, part, z, z, z, 0),
                  std::invalid_argument);
  const BlockPartition wrong = make_partition(2, 1, PartitionStrategy::contiguous);
  CHECK_THROWS_AS(run_solver(prob, sched, sampler, wrong, part, z, z, z, 10),
                  std::invalid_argument);
}

TEST_CASE("non-finite gradients abort with a diagnostic row") {
  const PoisonProblem prob;
  const Schedule sched = Schedule::constant(5, 10.0, 1e-2, 1e-2, 1e-3);
  const FullBatchSampler sampler;
  const BlockPartition part = make_partition(1, 1, PartitionStrategy::contiguous);
  const Eigen::VectorXd z = Eigen::VectorXd::Zero(1);

  SolverState st = zero_state(prob);
  CHECK_THROWS_AS(solver_step(prob, st, sched, sampler), NanGradientError);

  const RunRecord rec = run_solver(prob, sched, sampler, part, part, z, z, z, 10);
  CHECK(rec.aborted);
  CHECK(rec.abort_reason.find("non-finite gradient") != std::string::npos);
  CHECK(rec.abort_reason.find("dL2/du") != std::string::npos);
  REQUIRE_FALSE(rec.rows.empty());
  CHECK(std::isnan(rec.rows.back().loss_val));
  CHECK(rec.steps_completed == 0);
}

TEST_CASE("adaptive directions carry bias correction and touch only their block") {
  AdamState adam;
  adam.init(3);
  Eigen::VectorXd g = Eigen::VectorXd::Constant(1, 2.0);
  const Eigen::VectorXd d1 = adam.direction({1}, g, 0.9, 0.999, 1e-8);
  CHECK(d1[0] == doctest::Approx(2.0 / (2.0 + 1e-8)).epsilon(1e-12));
  CHECK(adam.m[0] == 0.0);
  CHECK(adam.m[2] == 0.0);
  CHECK(adam.m[1] == doctest::Approx(0.2).epsilon(1e-12));

  const Eigen::VectorXd d2 = adam.direction({1}, g, 0.9, 0.999, 1e-8);
  CHECK(d2[0] == doctest::Approx(2.0 / (2.0 + 1e-8)).epsilon(1e-9));
}

TEST_CASE("solver steps validate dimensions before touching state") {
  const QuadraticProblem prob(one_dim());
  const Schedule sched = Schedule::constant(1, 10.0, 1e-2, 1e-2, 1e-3);
  const FullBatchSampler sampler;

  SolverState st = zero_state(prob);
  st.w = Eigen::VectorXd::Zero(2);
  CHECK_THROWS_WITH_AS(solver_step(prob, st, sched, sampler),
                       doctest::Contains("dimension mismatch"), std::invalid_argument);
}
