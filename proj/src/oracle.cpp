#include "biopt/oracle.hpp"

#include <cmath>
#include <cstdio>
#include <fstream>
#include <limits>
#include <sstream>
#include <stdexcept>

#include <Eigen/Dense>

#include "biopt/rng.hpp"

namespace biopt {

QuadraticOracle::QuadraticOracle(const QuadraticInstance& inst) : inst_(inst) {
  constants_ = quadratic_constants(inst_);
  if (constants_.mu2 <= 0.0)
    throw std::invalid_argument("QuadraticOracle: A must be positive definite");
  a_llt_.compute(inst_.a_matrix);
  if (a_llt_.info() != Eigen::Success)
    throw std::invalid_argument("QuadraticOracle: Cholesky of A failed");
  m_ = a_llt_.solve(inst_.b_matrix);
  ctc_ = inst_.c_matrix.transpose() * inst_.c_matrix;
  cty_ = inst_.c_matrix.transpose() * inst_.y_target;
}

const Eigen::LLT<Eigen::MatrixXd>& QuadraticOracle::alpha_solver(double alpha) const {
  if (alpha <= 0.0) throw std::invalid_argument("QuadraticOracle: alpha must be > 0");
  auto it = alpha_cache_.find(alpha);
  if (it == alpha_cache_.end()) {
    auto llt = std::make_unique<Eigen::LLT<Eigen::MatrixXd>>(
        Eigen::MatrixXd(ctc_ + alpha * inst_.a_matrix));
    if (llt->info() != Eigen::Success)
      throw std::runtime_error("QuadraticOracle: Cholesky of C'C + alpha A failed");
    it = alpha_cache_.emplace(alpha, std::move(llt)).first;
  }
  return *it->second;
}

Eigen::VectorXd QuadraticOracle::w_star(const Eigen::VectorXd& lambda) const {
  return m_ * lambda;
}

Eigen::VectorXd QuadraticOracle::u_star(const Eigen::VectorXd& lambda) const {
  return w_star(lambda);
}

Eigen::VectorXd QuadraticOracle::w_star_alpha(const Eigen::VectorXd& lambda,
                                              double alpha) const {
  return alpha_solver(alpha).solve(cty_ + alpha * (inst_.b_matrix * lambda));
}

double QuadraticOracle::outer_value(const Eigen::VectorXd& lambda) const {
  const Eigen::VectorXd r = inst_.c_matrix * (m_ * lambda) - inst_.y_target;
  return 0.5 * r.squaredNorm() + 0.5 * inst_.rho * lambda.squaredNorm();
}

Eigen::VectorXd QuadraticOracle::outer_grad(const Eigen::VectorXd& lambda) const {
  const Eigen::VectorXd r = inst_.c_matrix * (m_ * lambda) - inst_.y_target;
  return inst_.rho * lambda + m_.transpose() * (inst_.c_matrix.transpose() * r);
}

Eigen::MatrixXd QuadraticOracle::outer_hessian() const {
  const int dl = inst_.dim_lambda();
  return m_.transpose() * ctc_ * m_ +
         inst_.rho * Eigen::MatrixXd::Identity(dl, dl);
}

double QuadraticOracle::penalty_value(const Eigen::VectorXd& lambda,
                                      double alpha) const {
  const Eigen::VectorXd w = w_star_alpha(lambda, alpha);
  const Eigen::VectorXd u = u_star(lambda);
  const Eigen::VectorXd bl = inst_.b_matrix * lambda;
  const Eigen::VectorXd r = inst_.c_matrix * w - inst_.y_target;
  const double l1v = 0.5 * r.squaredNorm() + 0.5 * inst_.rho * lambda.squaredNorm();
  const double l2w = 0.5 * w.dot(inst_.a_matrix * w) - bl.dot(w);
  const double l2u = 0.5 * u.dot(inst_.a_matrix * u) - bl.dot(u);
  return l1v + alpha * (l2w - l2u);
}

Eigen::VectorXd QuadraticOracle::penalty_grad(const Eigen::VectorXd& lambda,
                                              double alpha) const {
  /* literal chain rule through w*_a(lambda) = G lambda + h and u*(lambda);
     the stationarity terms are kept rather than cancelled */
  const Eigen::MatrixXd g_mat = alpha * alpha_solver(alpha).solve(inst_.b_matrix);
  const Eigen::VectorXd w = w_star_alpha(lambda, alpha);
  const Eigen::VectorXd u = u_star(lambda);
  const Eigen::VectorXd bl = inst_.b_matrix * lambda;
  Eigen::VectorXd out = inst_.rho * lambda;
  out.noalias() +=
      g_mat.transpose() * (inst_.c_matrix.transpose() * (inst_.c_matrix * w - inst_.y_target));
  out.noalias() += alpha * (g_mat.transpose() * (inst_.a_matrix * w - bl));
  out.noalias() -= alpha * (inst_.b_matrix.transpose() * w);
  out.noalias() += alpha * (inst_.b_matrix.transpose() * u);
  out.noalias() -= alpha * (m_.transpose() * (inst_.a_matrix * u - bl));
  return out;
}

Eigen::VectorXd QuadraticOracle::penalty_grad_envelope(const Eigen::VectorXd& lambda,
                                                       double alpha) const {
  const Eigen::VectorXd w = w_star_alpha(lambda, alpha);
  const Eigen::VectorXd u = u_star(lambda);
  return inst_.rho * lambda + alpha * (inst_.b_matrix.transpose() * (u - w));
}

Eigen::MatrixXd QuadraticOracle::penalty_hessian(double alpha) const {
  const int dl = inst_.dim_lambda();
  const Eigen::MatrixXd g_mat = alpha * alpha_solver(alpha).solve(inst_.b_matrix);
  return inst_.rho * Eigen::MatrixXd::Identity(dl, dl) +
         alpha * inst_.b_matrix.transpose() * (m_ - g_mat);
}

Eigen::VectorXd QuadraticOracle::lambda_star() const {
  Eigen::MatrixXd h = outer_hessian();
  Eigen::LLT<Eigen::MatrixXd> llt(h);
  if (llt.info() != Eigen::Success)
    throw std::runtime_error("QuadraticOracle: outer objective is not strictly convex");
  return llt.solve(m_.transpose() * cty_);
}

Eigen::VectorXd ift_hypergrad(const QuadraticOracle& oracle,
                              const Eigen::VectorXd& lambda) {
  /* grad_lambda L1 plus the sensitivity-weighted grad_w L1 at w*(lambda) */
  const QuadraticInstance& inst = oracle.instance();
  const Eigen::VectorXd w = oracle.w_star(lambda);
  const Eigen::VectorXd gw =
      inst.c_matrix.transpose() * (inst.c_matrix * w - inst.y_target);
  Eigen::LLT<Eigen::MatrixXd> a_llt(inst.a_matrix);
  const Eigen::VectorXd back = a_llt.solve(gw);
  return inst.rho * lambda + inst.b_matrix.transpose() * back;
}

Eigen::VectorXd finite_diff_grad(const std::function<double(const Eigen::VectorXd&)>& f,
                                 const Eigen::VectorXd& x, double h_override) {
  const double cbrt_eps = std::cbrt(std::numeric_limits<double>::epsilon());
  Eigen::VectorXd g(x.size());
  Eigen::VectorXd xp = x;
  for (int i = 0; i < x.size(); ++i) {
    const double h =
        h_override > 0.0 ? h_override : std::max(1.0, std::abs(x[i])) * cbrt_eps;
    const double xi = x[i];
    xp[i] = xi + h;
    const double fp = f(xp);
    xp[i] = xi - h;
    const double fm = f(xp);
    xp[i] = xi;
    g[i] = (fp - fm) / (2.0 * h);
  }
  return g;
}

namespace {

double loglog_slope(const std::vector<std::pair<double, double>>& pts) {
  std::vector<std::pair<double, double>> keep;
  for (const auto& p : pts)
    if (p.second > 0.0) keep.emplace_back(std::log(p.first), std::log(p.second));
  if (keep.size() < 2) return std::numeric_limits<double>::quiet_NaN();
  double mx = 0.0, my = 0.0;
  for (const auto& p : keep) mx += p.first, my += p.second;
  mx /= keep.size();
  my /= keep.size();
  double sxy = 0.0, sxx = 0.0;
  for (const auto& p : keep) {
    sxy += (p.first - mx) * (p.second - my);
    sxx += (p.first - mx) * (p.first - mx);
  }
  return sxy / sxx;
}

}  // namespace

GapScan gap_scan(const QuadraticOracle& oracle, const Eigen::VectorXd& lambda,
                 const std::vector<double>& alphas) {
  if (alphas.empty()) throw std::invalid_argument("gap_scan: no alpha values");
  const double threshold = 2.0 * oracle.constants().ell11 / oracle.constants().mu2;
  for (double a : alphas)
    if (!(a > threshold)) {
      std::ostringstream msg;
      msg << "gap_scan: alpha " << a << " violates alpha > 2 ell11 / mu2 = "
          << threshold;
      throw std::invalid_argument(msg.str());
    }

  GapScan scan;
  const double lv = oracle.outer_value(lambda);
  const Eigen::VectorXd lg = oracle.outer_grad(lambda);
  std::vector<std::pair<double, double>> vpts, gpts;
  for (double a : alphas) {
    GapRow row;
    row.alpha = a;
    row.value_gap = std::abs(lv - oracle.penalty_value(lambda, a));
    row.grad_gap = (lg - oracle.penalty_grad(lambda, a)).norm();
    scan.rows.push_back(row);
    vpts.emplace_back(a, row.value_gap);
    gpts.emplace_back(a, row.grad_gap);
  }
  scan.value_slope = loglog_slope(vpts);
  scan.grad_slope = loglog_slope(gpts);
  return scan;
}

std::vector<DistanceRow> minimizer_distance_scan(const QuadraticOracle& oracle,
                                                 const Eigen::VectorXd& lambda,
                                                 const std::vector<double>& alphas) {
  if (alphas.empty())
    throw std::invalid_argument("minimizer_distance_scan: no alpha values");
  const double region = oracle.instance().region_radius;
  const Eigen::VectorXd ws = oracle.w_star(lambda);
  if (ws.norm() > region)
    throw std::domain_error(
        "minimizer_distance_scan: lambda outside declared constant region");
  const double c0 = oracle.constants().c0();
  std::vector<DistanceRow> rows;
  for (double a : alphas) {
    const Eigen::VectorXd wa = oracle.w_star_alpha(lambda, a);
    if (wa.norm() > region)
      throw std::domain_error(
          "minimizer_distance_scan: lambda outside declared constant region");
    rows.push_back(DistanceRow{a, (wa - ws).norm(), c0 / a});
  }
  return rows;
}

bool distance_bound_ok(const std::vector<DistanceRow>& rows, double slack) {
  for (const auto& r : rows)
    if (r.distance > slack * r.bound) return false;
  return true;
}

CurvatureReport curvature_probe(const BilevelProblem& problem,
                                const Eigen::VectorXd& lambda, double alpha,
                                int trials, uint64_t seed) {
  if (trials < 1) throw std::invalid_argument("curvature_probe: trials < 1");
  if (alpha <= 0.0) throw std::invalid_argument("curvature_probe: alpha <= 0");
  const ProblemConstants& k = problem.constants();
  const double mu2 = k.mu2;
  const bool check_convexity = mu2 > 0.0 && alpha > 2.0 * k.ell11 / mu2;
  const double slack = 1e-9;
  const int dw = problem.dim_w();

  const auto saddle = [&](const Eigen::VectorXd& w, const Eigen::VectorXd& u) {
    return problem.l1(lambda, w) + alpha * (problem.l2(lambda, w) - problem.l2(lambda, u));
  };

  CounterRng rng(seed, stream::probe, 0);
  const auto draw = [&] {
    Eigen::VectorXd v(dw);
    for (int i = 0; i < dw; ++i) v[i] = rng.next_gaussian();
    return v;
  };

  CurvatureReport rep;
  rep.trials = trials;
  rep.convexity_checked = check_convexity;
  for (int t = 0; t < trials; ++t) {
    const Eigen::VectorXd wf = draw(), u1 = draw(), u2 = draw();
    const Eigen::VectorXd uf = draw(), w1 = draw(), w2 = draw();
    const double tau = 0.1 + 0.8 * rng.next_double();

    /* strong concavity in u with modulus mu2 * alpha */
    {
      const Eigen::VectorXd um = tau * u1 + (1.0 - tau) * u2;
      const double lhs = saddle(wf, um);
      const double rhs = tau * saddle(wf, u1) + (1.0 - tau) * saddle(wf, u2) +
                         0.5 * mu2 * alpha * tau * (1.0 - tau) * (u1 - u2).squaredNorm();
      if (lhs < rhs - slack) ++rep.concavity_violations;
    }
    /* strong convexity in w with modulus mu2 * alpha / 2 */
    if (check_convexity) {
      const Eigen::VectorXd wm = tau * w1 + (1.0 - tau) * w2;
      const double lhs = saddle(wm, uf);
      const double rhs = tau * saddle(w1, uf) + (1.0 - tau) * saddle(w2, uf) -
                         0.25 * mu2 * alpha * tau * (1.0 - tau) * (w1 - w2).squaredNorm();
      if (lhs > rhs + slack) ++rep.convexity_violations;
    }
  }
  rep.status = check_convexity ? "concavity and convexity probed"
                               : "convexity skipped (alpha <= 2 ell11 / mu2)";
  return rep;
}

void write_scan_csv(const GapScan& gaps, const std::vector<DistanceRow>& dist,
                    const std::string& path) {
  if (gaps.rows.size() != dist.size())
    throw std::invalid_argument("write_scan_csv: row count mismatch");
  std::ofstream f(path);
  if (!f) throw std::runtime_error("write_scan_csv: cannot open " + path);
  f << "alpha,value_gap,grad_gap,wdist,wbound\n";
  char buf[200];
  for (size_t i = 0; i < dist.size(); ++i) {
    if (gaps.rows[i].alpha != dist[i].alpha)
      throw std::invalid_argument("write_scan_csv: alpha grids differ");
    std::snprintf(buf, sizeof(buf), "%.17g,%.17g,%.17g,%.17g,%.17g\n",
                  gaps.rows[i].alpha, gaps.rows[i].value_gap, gaps.rows[i].grad_gap,
                  dist[i].distance, dist[i].bound);
    f << buf;
  }
}

}  // namespace biopt
