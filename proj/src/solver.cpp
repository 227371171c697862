#include "biopt/solver.hpp"

#include <chrono>
#include <cmath>
#include <limits>

#include "biopt/reweight.hpp"
#include "biopt/rng.hpp"

namespace biopt {

void BlockPartition::validate() const {
  if (dim < 1) throw std::invalid_argument("BlockPartition: dim < 1");
  if (blocks.empty()) throw std::invalid_argument("BlockPartition: no blocks");
  std::vector<int> hit(dim, 0);
  for (const auto& b : blocks) {
    if (b.empty()) throw std::invalid_argument("BlockPartition: empty block");
    for (int i : b) {
      if (i < 0 || i >= dim) throw std::invalid_argument("BlockPartition: index out of range");
      ++hit[i];
    }
  }
  for (int h : hit)
    if (h != 1) throw std::invalid_argument("BlockPartition: blocks must partition the index set");
}

BlockPartition make_partition(int dim, int j_blocks, PartitionStrategy strategy) {
  if (dim < 1) throw std::invalid_argument("make_partition: dim < 1");
  if (j_blocks < 1 || j_blocks > dim)
    throw std::invalid_argument("make_partition: J must lie in [1, dim]");
  if (strategy == PartitionStrategy::singleton && j_blocks != dim)
    throw std::invalid_argument("make_partition: singleton requires J == dim");

  BlockPartition p;
  p.dim = dim;
  p.blocks.resize(j_blocks);
  if (strategy == PartitionStrategy::strided) {
    for (int i = 0; i < dim; ++i) p.blocks[i % j_blocks].push_back(i);
  } else {
    /* contiguous (and singleton, where J == dim): sizes differ by at most 1 */
    const int base = dim / j_blocks, extra = dim % j_blocks;
    int at = 0;
    for (int b = 0; b < j_blocks; ++b) {
      const int len = base + (b < extra ? 1 : 0);
      for (int i = 0; i < len; ++i) p.blocks[b].push_back(at++);
    }
  }
  p.validate();
  return p;
}

Schedule Schedule::constant(int64_t total_steps, double alpha, double eta_u,
                            double eta_w, double eta_lambda, StepRule rule) {
  Schedule s;
  s.mode = Mode::constant;
  s.total_steps = total_steps;
  s.alpha = alpha;
  s.eta_u = eta_u;
  s.eta_w = eta_w;
  s.eta_lambda = eta_lambda;
  s.rule = rule;
  s.validate();
  return s;
}

Schedule Schedule::theoretical(int64_t total_steps, double eta0, double eta0_lambda,
                               StepRule rule) {
  Schedule s;
  s.mode = Mode::theoretical;
  s.total_steps = total_steps;
  s.eta0 = eta0;
  s.eta0_lambda = eta0_lambda;
  s.rule = rule;
  s.validate();
  return s;
}

Schedule Schedule::practical(int64_t total_steps) {
  return constant(total_steps, 100.0, 1e-5, 1e-5, 1e-2, StepRule::adam);
}

double Schedule::alpha_value() const {
  return mode == Mode::theoretical ? std::pow(double(total_steps), 1.0 / 7.0) : alpha;
}
double Schedule::eta_u_value() const {
  return mode == Mode::theoretical ? eta0 / std::pow(double(total_steps), 4.0 / 7.0)
                                   : eta_u;
}
double Schedule::eta_w_value() const {
  return mode == Mode::theoretical ? eta0 / std::pow(double(total_steps), 4.0 / 7.0)
                                   : eta_w;
}
double Schedule::eta_lambda_value() const {
  return mode == Mode::theoretical
             ? eta0_lambda / std::pow(double(total_steps), 5.0 / 7.0)
             : eta_lambda;
}

void Schedule::validate() const {
  if (total_steps < 1) throw std::invalid_argument("Schedule: total_steps must be >= 1");
  if (mode == Mode::theoretical) {
    if (eta0 <= 0.0 || eta0_lambda <= 0.0)
      throw std::invalid_argument("Schedule: eta0 and eta0_lambda must be > 0");
  } else {
    if (alpha <= 0.0) throw std::invalid_argument("Schedule: alpha must be > 0");
    if (eta_u < 0.0 || eta_w < 0.0 || eta_lambda < 0.0)
      throw std::invalid_argument("Schedule: step sizes must be >= 0");
    if (eta_u == 0.0 && eta_w == 0.0 && eta_lambda == 0.0)
      throw std::invalid_argument("Schedule: all step sizes are zero");
  }
  if (adam_beta1 < 0.0 || adam_beta1 >= 1.0 || adam_beta2 < 0.0 || adam_beta2 >= 1.0 ||
      adam_eps <= 0.0)
    throw std::invalid_argument("Schedule: bad adaptive-rule parameters");
}

std::vector<std::string> Schedule::schedule_constraint_violations(
    const ProblemConstants& k, int j_blocks) const {
  std::vector<std::string> out;
  if (mode != Mode::theoretical) return out;
  const double cap = 8.0 * j_blocks / k.mu2;
  if (eta0 > cap)
    out.push_back("eta0 " + std::to_string(eta0) + " exceeds 8 J / mu2 = " +
                  std::to_string(cap));
  const double ratio_floor = 6.0 * std::sqrt(2.0) * k.kappa() * k.kappa() * j_blocks;
  if (eta0 / eta0_lambda < ratio_floor)
    out.push_back("eta0 / eta0_lambda " + std::to_string(eta0 / eta0_lambda) +
                  " is below 6 sqrt(2) kappa^2 J = " + std::to_string(ratio_floor));
  return out;
}

void AdamState::init(int dim) {
  m = Eigen::VectorXd::Zero(dim);
  v = Eigen::VectorXd::Zero(dim);
  t.assign(dim, 0);
}

Eigen::VectorXd AdamState::direction(const std::vector<int>& idx,
                                     const Eigen::VectorXd& block_grad, double beta1,
                                     double beta2, double eps) {
  Eigen::VectorXd dir(block_grad.size());
  for (int b = 0; b < static_cast<int>(idx.size()); ++b) {
    const int i = idx[b];
    const double g = block_grad[b];
    m[i] = beta1 * m[i] + (1.0 - beta1) * g;
    v[i] = beta2 * v[i] + (1.0 - beta2) * g * g;
    ++t[i];
    const double mhat = m[i] / (1.0 - std::pow(beta1, double(t[i])));
    const double vhat = v[i] / (1.0 - std::pow(beta2, double(t[i])));
    dir[b] = mhat / (std::sqrt(vhat) + eps);
  }
  return dir;
}

std::optional<BatchHandle> MinibatchSampler::sample(Origin origin, int64_t step) const {
  if (origin == Origin::train)
    return sample_batch(*train_, cfg_, origin, static_cast<uint64_t>(step), train_scheme_);
  return sample_batch(*val_, cfg_, origin, static_cast<uint64_t>(step),
                      SampleScheme::pooled_examples);
}

namespace {

std::vector<int> identity_index(int n) {
  std::vector<int> v(n);
  for (int i = 0; i < n; ++i) v[i] = i;
  return v;
}

void add_noise(Eigen::VectorXd& g, double sigma, CounterRng& rng) {
  if (sigma <= 0.0) return;
  for (int i = 0; i < g.size(); ++i) g[i] += sigma * rng.next_gaussian();
}

void check_finite(const Eigen::VectorXd& g, int64_t step, const char* which) {
  if (!g.allFinite()) throw NanGradientError(step, which);
}

}  // namespace

void solver_step(const BilevelProblem& problem, SolverState& state,
                 const Schedule& schedule, const BatchSampler& sampler) {
  const int64_t k = state.k;
  if (state.part_u.blocks.empty() || state.part_w.blocks.empty())
    throw std::invalid_argument("solver_step: partitions not set");
  if (state.lambda.size() != problem.dim_lambda() ||
      state.w.size() != problem.dim_w() || state.u.size() != problem.dim_w())
    throw std::invalid_argument("solver_step: state dimension mismatch");

  const SamplerConfig& cfg = sampler.config();
  const double alpha = schedule.alpha_value();
  const double eta_u = schedule.eta_u_value();
  const double eta_w = schedule.eta_w_value();
  const double eta_l = schedule.eta_lambda_value();

  /* block draws */
  const int ju = state.part_u.num_blocks();
  const int jw = state.part_w.num_blocks();
  const int j = ju == 1 ? 0
                        : static_cast<int>(CounterRng(cfg.seed, stream::block_u,
                                                      static_cast<uint64_t>(k))
                                               .next_below(ju));
  const int r = jw == 1 ? 0
                        : static_cast<int>(CounterRng(cfg.seed, stream::block_w,
                                                      static_cast<uint64_t>(k))
                                               .next_below(jw));
  state.last_block_u = j;
  state.last_block_w = r;

  /* one train batch shared by every lower-objective gradient this step */
  const std::optional<BatchHandle> dtr = sampler.sample(Origin::train, k);
  const std::optional<BatchHandle> dval = sampler.sample(Origin::val, k);
  const BatchHandle* tr = dtr ? &*dtr : nullptr;
  const BatchHandle* va = dval ? &*dval : nullptr;

  /* all gradients evaluated at the entering iterates */
  CounterRng noise(cfg.seed, stream::noise, static_cast<uint64_t>(k));
  Eigen::VectorXd g_l2_u = problem.grad_l2_w(state.lambda, state.u, tr);
  add_noise(g_l2_u, cfg.gradient_noise_sigma2, noise);
  check_finite(g_l2_u, k, "dL2/du");
  Eigen::VectorXd g_l2_w = problem.grad_l2_w(state.lambda, state.w, tr);
  add_noise(g_l2_w, cfg.gradient_noise_sigma2, noise);
  check_finite(g_l2_w, k, "dL2/dw");
  Eigen::VectorXd g_l1_w = problem.grad_l1_w(state.lambda, state.w, va);
  add_noise(g_l1_w, cfg.gradient_noise_sigma1, noise);
  check_finite(g_l1_w, k, "dL1/dw");
  Eigen::VectorXd g_l1_l = problem.grad_l1_lambda(state.lambda, state.w, va);
  add_noise(g_l1_l, cfg.gradient_noise_sigma1, noise);
  check_finite(g_l1_l, k, "dL1/dlambda");
  Eigen::VectorXd g_l2_lw = problem.grad_l2_lambda(state.lambda, state.w, tr);
  add_noise(g_l2_lw, cfg.gradient_noise_sigma2, noise);
  check_finite(g_l2_lw, k, "dL2/dlambda at w");
  Eigen::VectorXd g_l2_lu = problem.grad_l2_lambda(state.lambda, state.u, tr);
  add_noise(g_l2_lu, cfg.gradient_noise_sigma2, noise);
  check_finite(g_l2_lu, k, "dL2/dlambda at u");

  const std::vector<int>& bu = state.part_u.blocks[j];
  const std::vector<int>& bw = state.part_w.blocks[r];

  Eigen::VectorXd raw_u(bu.size());
  for (size_t i = 0; i < bu.size(); ++i) raw_u[i] = g_l2_u[bu[i]];
  Eigen::VectorXd raw_w(bw.size());
  for (size_t i = 0; i < bw.size(); ++i)
    raw_w[i] = g_l1_w[bw[i]] + alpha * g_l2_w[bw[i]];
  Eigen::VectorXd raw_l = g_l1_l + alpha * (g_l2_lw - g_l2_lu);

  Eigen::VectorXd dir_u, dir_w, dir_l;
  if (schedule.rule == StepRule::adam) {
    if (!state.adam_u.initialized()) state.adam_u.init(problem.dim_w());
    if (!state.adam_w.initialized()) state.adam_w.init(problem.dim_w());
    if (!state.adam_lambda.initialized()) state.adam_lambda.init(problem.dim_lambda());
    dir_u = state.adam_u.direction(bu, raw_u, schedule.adam_beta1, schedule.adam_beta2,
                                   schedule.adam_eps);
    dir_w = state.adam_w.direction(bw, raw_w, schedule.adam_beta1, schedule.adam_beta2,
                                   schedule.adam_eps);
    dir_l = state.adam_lambda.direction(identity_index(problem.dim_lambda()), raw_l,
                                        schedule.adam_beta1, schedule.adam_beta2,
                                        schedule.adam_eps);
  } else {
    dir_u = raw_u;
    dir_w = raw_w;
    dir_l = raw_l;
  }

  for (size_t i = 0; i < bu.size(); ++i) state.u[bu[i]] -= alpha * eta_u * dir_u[i];
  for (size_t i = 0; i < bw.size(); ++i) state.w[bw[i]] -= eta_w * dir_w[i];
  state.lambda.noalias() -= eta_l * dir_l;

  state.last_lambda_direction = dir_l;
  state.last_lambda_direction_norm = dir_l.norm();
  state.k = k + 1;
}

RunRecord run_solver(const BilevelProblem& problem, const Schedule& schedule,
                     const BatchSampler& sampler, const BlockPartition& part_u,
                     const BlockPartition& part_w, const Eigen::VectorXd& lambda0,
                     const Eigen::VectorXd& w0, const Eigen::VectorXd& u0,
                     int64_t log_every) {
  schedule.validate();
  part_u.validate();
  part_w.validate();
  if (part_u.dim != problem.dim_w() || part_w.dim != problem.dim_w())
    throw std::invalid_argument("run_solver: partition dimension mismatch");
  if (lambda0.size() != problem.dim_lambda() || w0.size() != problem.dim_w() ||
      u0.size() != problem.dim_w())
    throw std::invalid_argument("run_solver: initial point dimension mismatch");
  if (log_every < 1) throw std::invalid_argument("run_solver: log_every must be >= 1");

  SolverState state;
  state.lambda = lambda0;
  state.w = w0;
  state.u = u0;
  state.part_u = part_u;
  state.part_w = part_w;

  RunRecord rec;
  rec.has_mixture = problem.lambda_is_mixture();
  const auto t0 = std::chrono::steady_clock::now();
  const auto elapsed = [&t0] {
    return std::chrono::duration<double>(std::chrono::steady_clock::now() - t0).count();
  };
  const auto log_row = [&](double dir_norm) {
    RunRow row;
    row.step = state.k;
    row.lambda = state.lambda;
    if (rec.has_mixture) row.p = softmax(state.lambda);
    row.loss_val = problem.l1(state.lambda, state.w);
    row.loss_trn = problem.l2(state.lambda, state.w);
    row.lambda_update_norm = dir_norm;
    row.elapsed_seconds = elapsed();
    rec.rows.push_back(std::move(row));
  };

  log_row(0.0);
  const int64_t steps = schedule.total_steps;
  for (int64_t k = 0; k < steps; ++k) {
    try {
      solver_step(problem, state, schedule, sampler);
    } catch (const NanGradientError& e) {
      RunRow row;
      row.step = state.k;
      row.lambda = state.lambda;
      if (rec.has_mixture) row.p = softmax(state.lambda);
      row.loss_val = std::numeric_limits<double>::quiet_NaN();
      row.loss_trn = std::numeric_limits<double>::quiet_NaN();
      row.lambda_update_norm = std::numeric_limits<double>::quiet_NaN();
      row.elapsed_seconds = elapsed();
      if (!rec.rows.empty() && rec.rows.back().step == row.step) rec.rows.pop_back();
      rec.rows.push_back(std::move(row));
      rec.aborted = true;
      rec.abort_reason = e.what();
      break;
    }
    if (state.k % log_every == 0 || state.k == steps)
      log_row(state.last_lambda_direction_norm);
  }

  rec.final_lambda = state.lambda;
  rec.final_w = state.w;
  rec.final_u = state.u;
  rec.steps_completed = state.k;
  rec.wall_seconds = elapsed();
  return rec;
}

}  // namespace biopt
