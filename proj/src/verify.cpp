#include "biopt/verify.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "biopt/oracle.hpp"
#include "biopt/reweight.hpp"
#include "biopt/rng.hpp"
#include "biopt/solver.hpp"
#include "biopt/svg.hpp"

namespace biopt {

namespace {

namespace fs = std::filesystem;

double rel_err(const Eigen::VectorXd& got, const Eigen::VectorXd& want) {
  return (got - want).norm() / std::max(1.0, want.norm());
}

/* forwards everything; adds a constant bias to the first entry of the lower
   w-gradient when enabled */
class CorruptedGradientProblem final : public BilevelProblem {
 public:
  explicit CorruptedGradientProblem(const BilevelProblem& base) : base_(base) {}

  int dim_lambda() const override { return base_.dim_lambda(); }
  int dim_w() const override { return base_.dim_w(); }
  const ProblemConstants& constants() const override { return base_.constants(); }

  double l1(const Eigen::VectorXd& l, const Eigen::VectorXd& w,
            const BatchHandle* b) const override {
    return base_.l1(l, w, b);
  }
  double l2(const Eigen::VectorXd& l, const Eigen::VectorXd& w,
            const BatchHandle* b) const override {
    return base_.l2(l, w, b);
  }
  Eigen::VectorXd grad_l1_lambda(const Eigen::VectorXd& l, const Eigen::VectorXd& w,
                                 const BatchHandle* b) const override {
    return base_.grad_l1_lambda(l, w, b);
  }
  Eigen::VectorXd grad_l1_w(const Eigen::VectorXd& l, const Eigen::VectorXd& w,
                            const BatchHandle* b) const override {
    return base_.grad_l1_w(l, w, b);
  }
  Eigen::VectorXd grad_l2_lambda(const Eigen::VectorXd& l, const Eigen::VectorXd& w,
                                 const BatchHandle* b) const override {
    return base_.grad_l2_lambda(l, w, b);
  }
  Eigen::VectorXd grad_l2_w(const Eigen::VectorXd& l, const Eigen::VectorXd& w,
                            const BatchHandle* b) const override {
    Eigen::VectorXd g = base_.grad_l2_w(l, w, b);
    g(0) += 1e-3;
    return g;
  }

 private:
  const BilevelProblem& base_;
};

/* worst relative error of the four analytic gradients against central
   differences of l1/l2, over `points` random full-batch evaluation points */
double sweep_gradients(const BilevelProblem& prob, uint64_t seed, int points) {
  CounterRng rng(seed, stream::probe, 31);
  double worst = 0.0;
  for (int t = 0; t < points; ++t) {
    Eigen::VectorXd lambda(prob.dim_lambda()), w(prob.dim_w());
    for (int i = 0; i < lambda.size(); ++i) lambda(i) = 0.5 * rng.next_gaussian();
    for (int i = 0; i < w.size(); ++i) w(i) = 0.5 * rng.next_gaussian();

    auto l1_of_w = [&](const Eigen::VectorXd& x) { return prob.l1(lambda, x); };
    auto l1_of_l = [&](const Eigen::VectorXd& x) { return prob.l1(x, w); };
    auto l2_of_w = [&](const Eigen::VectorXd& x) { return prob.l2(lambda, x); };
    auto l2_of_l = [&](const Eigen::VectorXd& x) { return prob.l2(x, w); };

    worst = std::max(worst, rel_err(prob.grad_l1_w(lambda, w), finite_diff_grad(l1_of_w, w)));
    worst = std::max(worst,
                     rel_err(prob.grad_l1_lambda(lambda, w), finite_diff_grad(l1_of_l, lambda)));
    worst = std::max(worst, rel_err(prob.grad_l2_w(lambda, w), finite_diff_grad(l2_of_w, w)));
    worst = std::max(worst,
                     rel_err(prob.grad_l2_lambda(lambda, w), finite_diff_grad(l2_of_l, lambda)));
  }
  return worst;
}

Verdict grad_row(const std::string& family, double worst) {
  return Verdict{"gradient check (" + family + ")", worst, 1e-5, worst < 1e-5,
                 "worst relative error vs central differences"};
}

SyntheticDataset tiny_dataset(uint64_t seed, TaskKind kind, int sources, int n, int d,
                              double corruption) {
  std::vector<SourceSpec> specs;
  for (int s = 0; s < sources; ++s) {
    SourceSpec spec;
    spec.n = n;
    spec.kind = kind;
    spec.corruption = corruption;
    spec.noise_sigma = kind == TaskKind::regression ? 0.1 : 0.05;
    specs.push_back(spec);
  }
  return gen_sources(specs, d, seed);
}

bool same_bytes(const std::string& a, const std::string& b) {
  std::ifstream fa(a, std::ios::binary), fb(b, std::ios::binary);
  if (!fa || !fb) return false;
  std::ostringstream sa, sb;
  sa << fa.rdbuf();
  sb << fb.rdbuf();
  return sa.str() == sb.str();
}

}  // namespace

std::vector<Verdict> verification_sweep(const VerifyOptions& options,
                                        const std::string& out_dir) {
  std::vector<Verdict> rows;
  fs::create_directories(out_dir);
  const uint64_t seed = options.seed;

  /* gradient sweeps, one per problem family */
  {
    QuadraticInstance inst = make_quadratic(3, 5, 1.0, seed, 0.1);
    QuadraticProblem quad(inst);
    if (options.corrupt_gradient) {
      CorruptedGradientProblem hooked(quad);
      rows.push_back(grad_row("quadratic", sweep_gradients(hooked, seed, 5)));
    } else {
      rows.push_back(grad_row("quadratic", sweep_gradients(quad, seed, 5)));
    }

    QuadraticOracle oracle(inst);
    CounterRng rng(seed, stream::probe, 99);
    Eigen::VectorXd lam(3);
    for (int i = 0; i < 3; ++i) lam(i) = 0.5 * rng.next_gaussian();

    auto outer = [&](const Eigen::VectorXd& l) { return oracle.outer_value(l); };
    Eigen::VectorXd fd = finite_diff_grad(outer, lam);
    double ift_err = (ift_hypergrad(oracle, lam) - fd).norm() / fd.norm();
    rows.push_back(Verdict{"implicit hypergradient vs finite differences", ift_err, 1e-7,
                           ift_err < 1e-7, ""});
  }
  {
    SyntheticDataset train = tiny_dataset(seed, TaskKind::regression, 2, 40, 5, 0.0);
    SyntheticDataset val = tiny_dataset(seed + 17, TaskKind::regression, 1, 40, 5, 0.0);
    InnerModel model(ModelKind::linear_regression, 5, 0.01);
    SourceReweightProblem prob(train, val, model);
    rows.push_back(grad_row("source reweight, linear", sweep_gradients(prob, seed, 5)));
  }
  {
    SyntheticDataset train = tiny_dataset(seed, TaskKind::classification, 2, 40, 5, 0.1);
    SyntheticDataset val = tiny_dataset(seed + 17, TaskKind::classification, 1, 40, 5, 0.0);
    InnerModel logistic(ModelKind::logistic_regression, 5, 0.01);
    SourceReweightProblem prob(train, val, logistic);
    rows.push_back(grad_row("source reweight, logistic", sweep_gradients(prob, seed, 5)));

    InnerModel mlp(ModelKind::mlp1, 5, 0.01, 4, true);
    SourceReweightProblem mlp_prob(train, val, mlp);
    rows.push_back(grad_row("source reweight, mlp", sweep_gradients(mlp_prob, seed, 3)));
  }
  {
    SyntheticDataset train = tiny_dataset(seed, TaskKind::classification, 1, 25, 5, 0.2);
    SyntheticDataset val = tiny_dataset(seed + 17, TaskKind::classification, 1, 30, 5, 0.0);
    InnerModel model(ModelKind::logistic_regression, 5, 0.0);
    HyperCleanProblem prob(train, val, model, 1e-3);
    rows.push_back(grad_row("hyperclean", sweep_gradients(prob, seed, 5)));
  }

  /* softmax algebra */
  {
    CounterRng rng(seed, stream::probe, 47);
    double shift_worst = 0.0, tangent_worst = 0.0;
    for (int t = 0; t < 20; ++t) {
      Eigen::VectorXd lam(6), g(6);
      for (int i = 0; i < 6; ++i) {
        lam(i) = 2.0 * rng.next_gaussian();
        g(i) = rng.next_gaussian();
      }
      double c = 3.0 * rng.next_gaussian();
      shift_worst = std::max(
          shift_worst,
          (softmax(lam) - softmax((lam.array() + c).matrix())).cwiseAbs().maxCoeff());
      tangent_worst = std::max(
          tangent_worst, std::abs(softmax_jacobian_apply(softmax(lam), g).sum()));
    }
    rows.push_back(Verdict{"softmax shift invariance", shift_worst, 1e-12,
                           shift_worst < 1e-12, "20 random points"});
    rows.push_back(Verdict{"softmax jacobian tangency", tangent_worst, 1e-12,
                           tangent_worst < 1e-12, "J g sums to zero"});
  }

  /* block draws uniform across 4 blocks */
  {
    const int draws = 100000, blocks = 4;
    std::vector<int64_t> count(blocks, 0);
    for (int kstep = 0; kstep < draws; ++kstep) {
      CounterRng rng(seed, stream::block_u, static_cast<uint64_t>(kstep));
      ++count[rng.next_below(blocks)];
    }
    double worst = 0.0;
    for (int b = 0; b < blocks; ++b)
      worst = std::max(worst,
                       std::abs(static_cast<double>(count[b]) / draws - 1.0 / blocks));
    rows.push_back(Verdict{"block draw uniformity", worst, 0.01, worst < 0.01,
                           "100000 draws over 4 blocks"});
  }

  /* rerunning one config yields byte-identical artifacts */
  {
    SyntheticDataset train = tiny_dataset(seed, TaskKind::regression, 2, 60, 5, 0.0);
    SyntheticDataset val = tiny_dataset(seed + 17, TaskKind::regression, 1, 50, 5, 0.0);
    InnerModel model(ModelKind::linear_regression, 5, 0.01);
    SourceReweightProblem prob(train, val, model);

    SamplerConfig sc;
    sc.batch_size_train = 16;
    sc.batch_size_val = 16;
    sc.seed = seed;
    MinibatchSampler sampler(prob.train_data(), prob.val_data(), sc);
    BlockPartition part = make_partition(prob.dim_w(), 1, PartitionStrategy::contiguous);
    Schedule sch = Schedule::constant(150, 10.0, 2e-3, 2e-2, 2e-2, StepRule::adam);
    Eigen::VectorXd l0 = Eigen::VectorXd::Zero(2);
    Eigen::VectorXd w0 = model.initial_params(seed);

    std::string csv_a = (fs::path(out_dir) / "determinism_a.csv").string();
    std::string csv_b = (fs::path(out_dir) / "determinism_b.csv").string();
    std::string svg_a = (fs::path(out_dir) / "determinism_a.svg").string();
    std::string svg_b = (fs::path(out_dir) / "determinism_b.svg").string();

    RunRecord ra = run_solver(prob, sch, sampler, part, part, l0, w0, w0, 25);
    ra.write_csv(csv_a);
    emit_weight_plot(ra, svg_a);
    RunRecord rb = run_solver(prob, sch, sampler, part, part, l0, w0, w0, 25);
    rb.write_csv(csv_b);
    emit_weight_plot(rb, svg_b);

    bool csv_same = same_bytes(csv_a, csv_b);
    bool svg_same = same_bytes(svg_a, svg_b);
    rows.push_back(Verdict{"rerun csv byte-identical", csv_same ? 1.0 : 0.0, 1.0,
                           csv_same, csv_a + " vs " + csv_b});
    rows.push_back(Verdict{"rerun svg byte-identical", svg_same ? 1.0 : 0.0, 1.0,
                           svg_same, svg_a + " vs " + svg_b});
  }

  return rows;
}

}  // namespace biopt
