#include "biopt/baselines.hpp"

#include <chrono>
#include <cmath>
#include <sstream>
#include <stdexcept>

#include "biopt/quadratic.hpp"
#include "biopt/reweight.hpp"

namespace biopt {

namespace {

class AnalyticQuadraticHvp final : public HvpOracle {
 public:
  explicit AnalyticQuadraticHvp(const QuadraticProblem& p) : inst_(&p.instance()) {}
  Eigen::VectorXd hvp_ww(const Eigen::VectorXd&, const Eigen::VectorXd&,
                         const Eigen::VectorXd& v) const override {
    return inst_->a_matrix * v;
  }
  Eigen::VectorXd hvp_lw(const Eigen::VectorXd&, const Eigen::VectorXd&,
                         const Eigen::VectorXd& v) const override {
    return -inst_->b_matrix.transpose() * v;
  }

 private:
  const QuadraticInstance* inst_;
};

class FiniteDiffHvp final : public HvpOracle {
 public:
  FiniteDiffHvp(const BilevelProblem& p, double fd_step)
      : problem_(&p), fd_step_(fd_step) {
    if (fd_step <= 0.0) throw std::invalid_argument("HvpOracle: fd_step must be > 0");
  }
  Eigen::VectorXd hvp_ww(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                         const Eigen::VectorXd& v) const override {
    const double vn = v.norm();
    if (vn == 0.0) return Eigen::VectorXd::Zero(w.size());
    const double h = fd_step_ / std::max(1.0, vn);
    return (problem_->grad_l2_w(lambda, w + h * v) -
            problem_->grad_l2_w(lambda, w - h * v)) /
           (2.0 * h);
  }
  Eigen::VectorXd hvp_lw(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                         const Eigen::VectorXd& v) const override {
    const double vn = v.norm();
    if (vn == 0.0) return Eigen::VectorXd::Zero(lambda.size());
    const double h = fd_step_ / std::max(1.0, vn);
    return (problem_->grad_l2_lambda(lambda, w + h * v) -
            problem_->grad_l2_lambda(lambda, w - h * v)) /
           (2.0 * h);
  }

 private:
  const BilevelProblem* problem_;
  double fd_step_;
};

double neumann_step_size(const BaselineConfig& config, const BilevelProblem& problem) {
  if (config.neumann_step > 0.0) return config.neumann_step;
  const double ell21 = problem.constants().ell21;
  if (ell21 <= 0.0)
    throw std::invalid_argument(
        "stocbio_hypergrad: neumann_step required (no ell21 bound available)");
  return 0.5 / ell21;
}

}  // namespace

std::unique_ptr<HvpOracle> make_hvp_oracle(const BilevelProblem& problem, HvpMode mode,
                                           double fd_step) {
  if (mode == HvpMode::analytic) {
    const auto* q = dynamic_cast<const QuadraticProblem*>(&problem);
    if (!q)
      throw std::invalid_argument("make_hvp_oracle: analytic mode needs a quadratic problem");
    return std::make_unique<AnalyticQuadraticHvp>(*q);
  }
  return std::make_unique<FiniteDiffHvp>(problem, fd_step);
}

Eigen::VectorXd inner_solve(const BilevelProblem& problem, const Eigen::VectorXd& lambda,
                            const Eigen::VectorXd& w_init, int steps, double step_size,
                            std::vector<Eigen::VectorXd>* tape,
                            const BatchSampler* sampler) {
  if (steps < 0) throw std::invalid_argument("inner_solve: steps must be >= 0");
  if (step_size < 0.0) throw std::invalid_argument("inner_solve: step size must be >= 0");
  if (w_init.size() != problem.dim_w())
    throw std::invalid_argument("inner_solve: w_init dimension mismatch");

  Eigen::VectorXd w = w_init;
  if (tape) {
    tape->clear();
    tape->reserve(steps + 1);
    tape->push_back(w);
  }
  for (int t = 0; t < steps; ++t) {
    const BatchHandle* batch = nullptr;
    std::optional<BatchHandle> h;
    if (sampler) {
      h = sampler->sample(Origin::train, t);
      if (h) batch = &*h;
    }
    const Eigen::VectorXd g = problem.grad_l2_w(lambda, w, batch);
    if (!g.allFinite()) throw NanGradientError(t, "inner solve");
    w.noalias() -= step_size * g;
    if (tape) tape->push_back(w);
  }
  return w;
}

Eigen::VectorXd stocbio_hypergrad(const BilevelProblem& problem,
                                  const Eigen::VectorXd& lambda,
                                  const BaselineConfig& config, const HvpOracle& oracle,
                                  const Eigen::VectorXd& w_init, HypergradInfo* info,
                                  const BatchSampler* sampler) {
  if (config.neumann_terms < 1)
    throw std::invalid_argument("stocbio_hypergrad: neumann_terms must be >= 1");
  const double eta = neumann_step_size(config, problem);
  const bool stochastic = config.stocbio_minibatch && sampler != nullptr;

  const Eigen::VectorXd w_t = inner_solve(problem, lambda, w_init, config.inner_steps,
                                          config.inner_step_size, nullptr,
                                          stochastic ? sampler : nullptr);

  /* batch-gradient Hessian products when running stochastically */
  const auto hvp_ww_batch = [&](const Eigen::VectorXd& v, int q) {
    if (!stochastic) return oracle.hvp_ww(lambda, w_t, v);
    const double vn = v.norm();
    if (vn == 0.0) return Eigen::VectorXd::Zero(w_t.size()).eval();
    const double h = config.fd_step / std::max(1.0, vn);
    const auto b = sampler->sample(Origin::train, config.inner_steps + 1 + q);
    const BatchHandle* bp = b ? &*b : nullptr;
    return ((problem.grad_l2_w(lambda, w_t + h * v, bp) -
             problem.grad_l2_w(lambda, w_t - h * v, bp)) /
            (2.0 * h))
        .eval();
  };

  const Eigen::VectorXd g1l = problem.grad_l1_lambda(lambda, w_t);
  const Eigen::VectorXd v0 = -problem.grad_l1_w(lambda, w_t);
  Eigen::VectorXd v = v0;
  Eigen::VectorXd s = v0;
  const double guard = 10.0 * v0.norm();
  for (int q = 1; q < config.neumann_terms; ++q) {
    v.noalias() -= eta * hvp_ww_batch(v, q);
    if (v.norm() > guard) {
      std::ostringstream msg;
      msg << "stocbio_hypergrad: series term grew to " << v.norm() << " (10x first term "
          << v0.norm() << "); eta_N too large";
      throw std::runtime_error(msg.str());
    }
    s.noalias() += v;
  }
  if (info) {
    info->iterations = config.neumann_terms;
    info->residual = v.norm();
    info->w_end = w_t;
  }
  return g1l + oracle.hvp_lw(lambda, w_t, eta * s);
}

Eigen::VectorXd cg_hypergrad(const BilevelProblem& problem, const Eigen::VectorXd& lambda,
                             const BaselineConfig& config, const HvpOracle& oracle,
                             const Eigen::VectorXd& w_init, HypergradInfo* info) {
  if (config.cg_iterations < 0)
    throw std::invalid_argument("cg_hypergrad: cg_iterations must be >= 0");
  const Eigen::VectorXd w_t = inner_solve(problem, lambda, w_init, config.inner_steps,
                                          config.inner_step_size);
  const Eigen::VectorXd g1l = problem.grad_l1_lambda(lambda, w_t);
  const Eigen::VectorXd b = problem.grad_l1_w(lambda, w_t);

  Eigen::VectorXd x = Eigen::VectorXd::Zero(b.size());
  Eigen::VectorXd r = b;
  Eigen::VectorXd p = r;
  double rs = r.squaredNorm();
  const double stop = config.cg_tolerance * std::max(1.0, b.norm());
  int it = 0;
  while (std::sqrt(rs) > stop && it < config.cg_iterations) {
    const Eigen::VectorXd hp = oracle.hvp_ww(lambda, w_t, p);
    const double a = rs / p.dot(hp);
    x.noalias() += a * p;
    r.noalias() -= a * hp;
    const double rs_new = r.squaredNorm();
    p = r + (rs_new / rs) * p;
    rs = rs_new;
    ++it;
  }
  const double residual = std::sqrt(rs);
  if (info) {
    info->iterations = it;
    info->residual = residual;
    info->w_end = w_t;
  }
  if (residual > stop) {
    std::ostringstream msg;
    msg << "cg_hypergrad: no convergence after " << it
        << " iterations; residual norm " << residual;
    throw std::runtime_error(msg.str());
  }
  return g1l - oracle.hvp_lw(lambda, w_t, x);
}

Eigen::VectorXd reverse_hypergrad(const BilevelProblem& problem,
                                  const Eigen::VectorXd& lambda,
                                  const BaselineConfig& config,
                                  const Eigen::VectorXd& w_init, HypergradInfo* info) {
  const int t_steps = config.inner_steps;
  const int depth = config.unroll_depth == 0 ? t_steps : config.unroll_depth;
  if (depth < 0 || depth > t_steps)
    throw std::invalid_argument("reverse_hypergrad: unroll depth exceeds tape length");

  std::vector<Eigen::VectorXd> tape;
  inner_solve(problem, lambda, w_init, t_steps, config.inner_step_size, &tape);
  const auto oracle = make_hvp_oracle(problem, config.hvp_mode, config.fd_step);
  const double s = config.inner_step_size;

  const Eigen::VectorXd& w_t = tape.back();
  Eigen::VectorXd g_l = problem.grad_l1_lambda(lambda, w_t);
  Eigen::VectorXd g_w = problem.grad_l1_w(lambda, w_t);
  for (int t = t_steps - 1; t >= t_steps - depth; --t) {
    const Eigen::VectorXd& wt = tape[t];
    g_l.noalias() -= s * oracle->hvp_lw(lambda, wt, g_w);
    g_w.noalias() -= s * oracle->hvp_ww(lambda, wt, g_w);
  }
  if (info) {
    info->iterations = depth;
    info->residual = 0.0;
    info->w_end = w_t;
  }
  return g_l;
}

HypergradMethod make_stocbio_method(const BilevelProblem& problem,
                                    const BaselineConfig& config,
                                    const HvpOracle& oracle) {
  return [&problem, config, &oracle](const Eigen::VectorXd& lambda,
                                     const Eigen::VectorXd& w_start,
                                     Eigen::VectorXd* w_end) {
    HypergradInfo info;
    const Eigen::VectorXd g =
        stocbio_hypergrad(problem, lambda, config, oracle, w_start, &info);
    if (w_end) *w_end = info.w_end;
    return g;
  };
}

HypergradMethod make_cg_method(const BilevelProblem& problem, const BaselineConfig& config,
                               const HvpOracle& oracle) {
  return [&problem, config, &oracle](const Eigen::VectorXd& lambda,
                                     const Eigen::VectorXd& w_start,
                                     Eigen::VectorXd* w_end) {
    HypergradInfo info;
    const Eigen::VectorXd g =
        cg_hypergrad(problem, lambda, config, oracle, w_start, &info);
    if (w_end) *w_end = info.w_end;
    return g;
  };
}

HypergradMethod make_reverse_method(const BilevelProblem& problem,
                                    const BaselineConfig& config) {
  return [&problem, config](const Eigen::VectorXd& lambda, const Eigen::VectorXd& w_start,
                            Eigen::VectorXd* w_end) {
    HypergradInfo info;
    const Eigen::VectorXd g = reverse_hypergrad(problem, lambda, config, w_start, &info);
    if (w_end) *w_end = info.w_end;
    return g;
  };
}

RunRecord outer_descent(const BilevelProblem& problem, const HypergradMethod& method,
                        int outer_steps, double outer_step_size,
                        const Eigen::VectorXd& lambda0, const Eigen::VectorXd& w0,
                        int64_t log_every) {
  if (outer_steps < 0) throw std::invalid_argument("outer_descent: outer_steps < 0");
  if (outer_step_size <= 0.0)
    throw std::invalid_argument("outer_descent: step size must be > 0");
  if (lambda0.size() != problem.dim_lambda() || w0.size() != problem.dim_w())
    throw std::invalid_argument("outer_descent: initial point dimension mismatch");
  if (log_every < 1) throw std::invalid_argument("outer_descent: log_every must be >= 1");

  Eigen::VectorXd lambda = lambda0;
  Eigen::VectorXd w = w0;
  RunRecord rec;
  rec.has_mixture = problem.lambda_is_mixture();
  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&t0] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const auto log_row = [&](int64_t step, double dir_norm) {
    RunRow row;
    row.step = step;
    row.lambda = lambda;
    if (rec.has_mixture) row.p = softmax(lambda);
    row.loss_val = problem.l1(lambda, w);
    row.loss_trn = problem.l2(lambda, w);
    row.lambda_update_norm = dir_norm;
    row.elapsed_seconds = elapsed();
    rec.rows.push_back(std::move(row));
  };

  log_row(0, 0.0);
  for (int k = 0; k < outer_steps; ++k) {
    Eigen::VectorXd w_end;
    const Eigen::VectorXd g = method(lambda, w, &w_end);
    if (w_end.size() == w.size()) w = w_end;
    lambda.noalias() -= outer_step_size * g;
    if ((k + 1) % log_every == 0 || k + 1 == outer_steps) log_row(k + 1, g.norm());
  }

  rec.final_lambda = lambda;
  rec.final_w = w;
  rec.final_u = w;
  rec.steps_completed = outer_steps;
  rec.wall_seconds = elapsed();
  return rec;
}

}  // namespace biopt
