#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <vector>

#include <Eigen/Eigenvalues>

#include "biopt/dataset.hpp"
#include "biopt/models.hpp"
#include "biopt/oracle.hpp"
#include "biopt/quadratic.hpp"
#include "biopt/rng.hpp"
#include "test_util.hpp"

using namespace biopt;
using namespace biopt::testutil;

TEST_CASE("mix64 reproduces the splitmix64 reference outputs") {
  CHECK(mix64(0) == 0xe220a8397b1dcdafull);
  CHECK(mix64(1) == 0x910a2dec89025cc1ull);
}

TEST_CASE("counter rng is a pure function of (seed, stream, step)") {
  CounterRng a(42, stream::batch_train, 7);
  CounterRng b(42, stream::batch_train, 7);
  for (int i = 0; i < 16; ++i) CHECK(a.next_u64() == b.next_u64());

  CounterRng c(42, stream::batch_train, 8);
  CounterRng d(42, stream::batch_val, 7);
  CounterRng e(43, stream::batch_train, 7);
  CounterRng base(42, stream::batch_train, 7);
  const uint64_t first = base.next_u64();
  CHECK(c.next_u64() != first);
  CHECK(d.next_u64() != first);
  CHECK(e.next_u64() != first);
}

TEST_CASE("next_below stays in range and is close to uniform") {
  CounterRng rng(9, stream::probe, 0);
  std::vector<int> hits(10, 0);
  const int draws = 100000;
  for (int i = 0; i < draws; ++i) {
    const uint64_t v = rng.next_below(10);
    REQUIRE(v < 10);
    ++hits[static_cast<int>(v)];
  }
  for (int h : hits) CHECK(std::abs(h / double(draws) - 0.1) < 0.01);
}

TEST_CASE("gaussian draws have unit-normal moments") {
  CounterRng rng(3, stream::probe, 1);
  const int n = 100000;
  double sum = 0.0, sumsq = 0.0;
  for (int i = 0; i < n; ++i) {
    const double g = rng.next_gaussian();
    sum += g;
    sumsq += g * g;
  }
  const double mean = sum / n;
  const double var = sumsq / n - mean * mean;
  CHECK(std::abs(mean) < 0.015);
  CHECK(std::abs(var - 1.0) < 0.02);
}

TEST_CASE("student t draws are finite") {
  CounterRng rng(4, stream::probe, 2);
  for (int i = 0; i < 10000; ++i) CHECK(std::isfinite(rng.next_student_t2()));
}

TEST_CASE("make_quadratic pins the smallest eigenvalue of A") {
  const QuadraticInstance one = make_quadratic(1, 1, 2.0, 3);
  CHECK(one.a_matrix(0, 0) == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(quadratic_constants(one).mu2 == doctest::Approx(2.0).epsilon(1e-12));
  CHECK(quadratic_constants(one).exact);

  const QuadraticInstance two = make_quadratic(2, 2, 0.5, 7);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(two.a_matrix);
  CHECK(eig.eigenvalues().minCoeff() == doctest::Approx(0.5).epsilon(1e-12));

  CHECK_THROWS_AS(make_quadratic(1, 1, 0.0, 1), std::invalid_argument);
  CHECK_THROWS_AS(make_quadratic(0, 1, 1.0, 1), std::invalid_argument);
}

TEST_CASE("make_quadratic is deterministic under a fixed seed") {
  const QuadraticInstance a = make_quadratic(3, 2, 1.0, 1);
  const QuadraticInstance b = make_quadratic(3, 2, 1.0, 1);
  CHECK((a.a_matrix.array() == b.a_matrix.array()).all());
  CHECK((a.b_matrix.array() == b.b_matrix.array()).all());
  CHECK((a.c_matrix.array() == b.c_matrix.array()).all());
  CHECK((a.y_target.array() == b.y_target.array()).all());
}

TEST_CASE("constants expose kappa and c0 by the stated formulas") {
  ProblemConstants k;
  k.mu2 = 2.0;
  k.ell10 = 3.0;
  k.ell11 = 5.0;
  k.ell21 = 4.0;
  k.ell22 = 0.0;
  CHECK(k.kappa() == doctest::Approx(2.5));
  CHECK(k.c0() == doctest::Approx(1.5));
}

TEST_CASE("quadratic gradients match finite differences") {
  const QuadraticProblem prob(make_quadratic(3, 5, 1.0, 11, 0.1));
  CHECK(worst_gradient_error(prob, 20, 17) < 1e-5);
}

TEST_CASE("quadratic evaluators are deterministic and w*(lambda) is stationary") {
  const QuadraticInstance inst = make_quadratic(3, 5, 1.0, 11, 0.1);
  const QuadraticProblem prob(inst);
  const QuadraticOracle oracle(inst);
  const Eigen::VectorXd lam = random_vec(3, 5, 0);
  const Eigen::VectorXd w = random_vec(5, 5, 1);
  CHECK(prob.l1(lam, w) == prob.l1(lam, w));
  CHECK(prob.l2(lam, w) == prob.l2(lam, w));
  CHECK(prob.grad_l2_w(lam, oracle.w_star(lam)).norm() < 1e-10);
}

TEST_CASE("quadratic lower objective is mu2-strongly convex along segments") {
  const QuadraticProblem prob(make_quadratic(3, 5, 1.0, 11, 0.1));
  CHECK(convexity_violations(prob, prob.constants().mu2, 50, 23) == 0);
}

TEST_CASE("gen_sources respects corruption counts and masks") {
  SourceSpec clean;
  clean.n = 100;
  clean.kind = TaskKind::regression;
  clean.corruption = 0.0;
  const SyntheticDataset d0 = gen_sources({clean}, 4, 5);
  for (bool m : d0.sources[0].corrupted_mask) CHECK_FALSE(m);

  SourceSpec partial = clean;
  partial.n = 1000;
  partial.corruption = 0.3;
  const SyntheticDataset d1 = gen_sources({partial}, 4, 5);
  int corrupted = 0;
  for (bool m : d1.sources[0].corrupted_mask) corrupted += m ? 1 : 0;
  CHECK(corrupted == 300);
}

TEST_CASE("gen_sources mirrors the 1000 clean / 9000 corrupted split") {
  SourceSpec clean;
  clean.n = 1000;
  clean.kind = TaskKind::classification;
  clean.noise_sigma = 0.0;
  SourceSpec noisy = clean;
  noisy.n = 9000;
  noisy.corruption = 1.0;
  const SyntheticDataset d = gen_sources({clean, noisy}, 6, 2);
  CHECK(d.num_sources() == 2);
  CHECK(d.sources[0].size() == 1000);
  CHECK(d.sources[1].size() == 9000);
  CHECK(d.classification);
  int corrupted = 0;
  for (bool m : d.sources[1].corrupted_mask) corrupted += m ? 1 : 0;
  CHECK(corrupted == 9000);
  for (int r = 0; r < d.sources[1].size(); ++r) {
    const double y = d.sources[1].labels[r];
    CHECK((y == 1.0 || y == -1.0));
  }
}

TEST_CASE("gen_sources is deterministic and validates its descriptors") {
  SourceSpec sp;
  sp.n = 50;
  sp.kind = TaskKind::regression;
  sp.corruption = 0.2;
  const SyntheticDataset a = gen_sources({sp}, 3, 9);
  const SyntheticDataset b = gen_sources({sp}, 3, 9);
  CHECK((a.sources[0].features.array() == b.sources[0].features.array()).all());
  CHECK((a.sources[0].labels.array() == b.sources[0].labels.array()).all());

  SourceSpec bad = sp;
  bad.corruption = 1.5;
  CHECK_THROWS_AS(gen_sources({bad}, 3, 9), std::invalid_argument);
  SourceSpec planted = sp;
  planted.planted = Eigen::VectorXd::Ones(2);
  CHECK_THROWS_AS(gen_sources({planted}, 3, 9), std::invalid_argument);
  SourceSpec other = sp;
  other.kind = TaskKind::classification;
  CHECK_THROWS_AS(gen_sources({sp, other}, 3, 9), std::invalid_argument);
}

TEST_CASE("sample_batch is deterministic and covers the trivial cases") {
  SourceSpec sp;
  sp.n = 1;
  sp.kind = TaskKind::regression;
  const SyntheticDataset one = gen_sources({sp}, 2, 1);
  SamplerConfig cfg;
  cfg.batch_size_train = 1;
  cfg.seed = 11;
  const BatchHandle h = sample_batch(one, cfg, Origin::train, 0);
  REQUIRE(h.size() == 1);
  CHECK(h.example_refs[0] == std::pair<int, int>(0, 0));

  SourceSpec big = sp;
  big.n = 40;
  const SyntheticDataset d = gen_sources({big, big}, 2, 1);
  cfg.batch_size_train = 16;
  const BatchHandle a = sample_batch(d, cfg, Origin::train, 5);
  const BatchHandle b = sample_batch(d, cfg, Origin::train, 5);
  CHECK(a.example_refs == b.example_refs);
  const BatchHandle c = sample_batch(d, cfg, Origin::train, 6);
  CHECK(a.example_refs != c.example_refs);

  CHECK_THROWS_WITH_AS(sample_batch(SyntheticDataset{}, cfg, Origin::train, 0),
                       doctest::Contains("empty dataset"), std::invalid_argument);
}

TEST_CASE("source-uniform sampling hits two equal sources at 0.5 each") {
  SourceSpec sp;
  sp.n = 500;
  sp.kind = TaskKind::regression;
  const SyntheticDataset d = gen_sources({sp, sp}, 2, 4);
  SamplerConfig cfg;
  cfg.batch_size_train = 10;
  cfg.seed = 5;
  int first = 0, total = 0;
  for (uint64_t step = 0; step < 10000; ++step) {
    const BatchHandle h =
        sample_batch(d, cfg, Origin::train, step, SampleScheme::uniform_sources);
    for (const auto& ref : h.example_refs) {
      first += ref.first == 0 ? 1 : 0;
      ++total;
    }
  }
  CHECK(std::abs(first / double(total) - 0.5) < 0.01);
}

TEST_CASE("pooled sampling weights sources by example count") {
  SourceSpec small;
  small.n = 100;
  small.kind = TaskKind::regression;
  SourceSpec large = small;
  large.n = 900;
  const SyntheticDataset d = gen_sources({small, large}, 2, 4);
  SamplerConfig cfg;
  cfg.batch_size_train = 10;
  cfg.seed = 6;
  int second = 0, total = 0;
  for (uint64_t step = 0; step < 10000; ++step) {
    const BatchHandle h =
        sample_batch(d, cfg, Origin::train, step, SampleScheme::pooled_examples);
    for (const auto& ref : h.example_refs) {
      second += ref.first == 1 ? 1 : 0;
      ++total;
    }
  }
  CHECK(std::abs(second / double(total) - 0.9) < 0.015);
}

TEST_CASE("dataset csv roundtrips exactly") {
  SourceSpec a;
  a.n = 7;
  a.kind = TaskKind::regression;
  a.corruption = 0.3;
  SourceSpec b = a;
  b.n = 5;
  const SyntheticDataset d = gen_sources({a, b}, 3, 21);
  const std::string path = "tmp_dataset_roundtrip.csv";
  write_dataset_csv(d, path);
  const SyntheticDataset r = read_dataset_csv(path);
  REQUIRE(r.num_sources() == 2);
  CHECK(r.feature_dim == 3);
  for (int s = 0; s < 2; ++s) {
    CHECK((r.sources[s].features.array() == d.sources[s].features.array()).all());
    CHECK((r.sources[s].labels.array() == d.sources[s].labels.array()).all());
    CHECK(r.sources[s].corrupted_mask == d.sources[s].corrupted_mask);
  }
  std::remove(path.c_str());
}

TEST_CASE("model losses match finite differences and hand values") {
  CounterRng rng(31, stream::probe, 4);
  const auto fd_check = [&](const InnerModel& model, double y) {
    Eigen::VectorXd x(model.feature_dim());
    for (int i = 0; i < x.size(); ++i) x[i] = rng.next_gaussian();
    Eigen::VectorXd w = model.initial_params(77);
    Eigen::VectorXd grad = Eigen::VectorXd::Zero(model.param_dim());
    model.loss_grad(w, x, y, 1.0, grad);
    const Eigen::VectorXd fd = finite_diff_grad(
        [&](const Eigen::VectorXd& v) { return model.loss(v, x, y); }, w);
    CHECK(rel_err(grad, fd) < 1e-5);
  };
  fd_check(InnerModel(ModelKind::linear_regression, 4, 0.0), 0.7);
  fd_check(InnerModel(ModelKind::logistic_regression, 4, 0.0), 1.0);
  fd_check(InnerModel(ModelKind::logistic_regression, 4, 0.0), -1.0);
  fd_check(InnerModel(ModelKind::mlp1, 3, 0.0, 4, true), 1.0);
  fd_check(InnerModel(ModelKind::mlp1, 3, 0.0, 4, false), -0.4);

  const InnerModel linear(ModelKind::linear_regression, 2, 0.0);
  Eigen::VectorXd w(2);
  w << 0.5, -1.0;
  Eigen::VectorXd x(2);
  x << 2.0, 1.0;
  CHECK(linear.loss(w, x, 1.0) == doctest::Approx(0.5).epsilon(1e-12));

  const InnerModel logit(ModelKind::logistic_regression, 2, 0.0);
  CHECK(logit.loss(Eigen::VectorXd::Zero(2), x, 1.0) ==
        doctest::Approx(std::log(2.0)).epsilon(1e-12));
}

TEST_CASE("model init is seeded and loss_grad accumulates with its scale") {
  const InnerModel mlp(ModelKind::mlp1, 3, 0.0, 4, true);
  const Eigen::VectorXd w1 = mlp.initial_params(5);
  const Eigen::VectorXd w2 = mlp.initial_params(5);
  CHECK(w1.size() == mlp.param_dim());
  CHECK((w1.array() == w2.array()).all());

  Eigen::VectorXd x(3);
  x << 0.3, -0.2, 0.9;
  Eigen::VectorXd grad = Eigen::VectorXd::Zero(mlp.param_dim());
  mlp.loss_grad(w1, x, 1.0, 1.0, grad);
  mlp.loss_grad(w1, x, 1.0, -1.0, grad);
  CHECK(grad.norm() < 1e-14);
}
