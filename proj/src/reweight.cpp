#include "biopt/reweight.hpp"

#include <cmath>
#include <stdexcept>

#include <Eigen/Dense>

namespace biopt {

namespace {

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                  : std::exp(z) / (1.0 + std::exp(z));
}

double feature_gram_max(const Eigen::MatrixXd& x) {
  /* largest eigenvalue of X'X via the d x d Gram matrix */
  if (x.rows() == 0) return 0.0;
  Eigen::MatrixXd g = x.transpose() * x;
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(g);
  return eig.eigenvalues().maxCoeff();
}

void check_batch_origin(const BatchHandle* batch, Origin want, const char* who) {
  if (batch && batch->origin != want)
    throw std::invalid_argument(std::string(who) + ": batch from wrong origin");
}

}  // namespace

Eigen::VectorXd softmax(const Eigen::VectorXd& lambda) {
  if (lambda.size() == 0) throw std::invalid_argument("softmax: empty input");
  if (!lambda.allFinite()) throw std::invalid_argument("softmax: non-finite input");
  const double m = lambda.maxCoeff();
  Eigen::VectorXd p = (lambda.array() - m).exp();
  return p / p.sum();
}

Eigen::VectorXd softmax_jacobian_apply(const Eigen::VectorXd& p,
                                       const Eigen::VectorXd& g) {
  if (p.size() != g.size())
    throw std::invalid_argument("softmax_jacobian_apply: size mismatch");
  const double pg = p.dot(g);
  return p.array() * (g.array() - pg);
}

MixtureWeights MixtureWeights::from_lambda(const Eigen::VectorXd& lambda) {
  return MixtureWeights{lambda, softmax(lambda)};
}

/* ---------------- SourceReweightProblem ---------------- */

SourceReweightProblem::SourceReweightProblem(SyntheticDataset train,
                                             SyntheticDataset validation,
                                             InnerModel model)
    : train_(std::move(train)), val_(std::move(validation)), model_(std::move(model)) {
  if (train_.num_sources() < 1 || train_.total_examples() < 1)
    throw std::invalid_argument("SourceReweightProblem: empty training data");
  if (val_.total_examples() < 1)
    throw std::invalid_argument("SourceReweightProblem: empty validation data");
  if (train_.feature_dim != model_.feature_dim() ||
      val_.feature_dim != model_.feature_dim())
    throw std::invalid_argument("SourceReweightProblem: feature dimension mismatch");

  constants_ = ProblemConstants{};
  constants_.exact = false;
  constants_.mu2 = model_.ridge();
  if (model_.kind() != ModelKind::mlp1) {
    const double curv = model_.classification() ? 0.25 : 1.0;
    double hmax = 0.0;
    for (const auto& s : train_.sources)
      hmax = std::max(hmax, feature_gram_max(s.features) / s.size());
    constants_.ell21 = curv * hmax + model_.ridge();
    double hval = 0.0;
    int nval = 0;
    double gsum = 0.0;
    const double region = 10.0;
    for (const auto& s : val_.sources) {
      hval += feature_gram_max(s.features);
      nval += s.size();
      for (int r = 0; r < s.size(); ++r) {
        const double xn = s.features.row(r).norm();
        gsum += model_.classification() ? xn : xn * (xn * region + std::abs(s.labels[r]));
      }
    }
    constants_.ell11 = curv * hval / nval;
    constants_.ell10 = gsum / nval;
  }
}

TrainEval SourceReweightProblem::weighted_train_loss_and_grads(
    const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
    const BatchHandle* batch) const {
  const int m = train_.num_sources();
  if (lambda.size() != m)
    throw std::invalid_argument("weighted_train_loss_and_grads: lambda dimension mismatch");
  if (w.size() != model_.param_dim())
    throw std::invalid_argument("weighted_train_loss_and_grads: w dimension mismatch");
  check_batch_origin(batch, Origin::train, "weighted_train_loss_and_grads");

  const Eigen::VectorXd p = softmax(lambda);
  TrainEval out;
  out.grad_w = Eigen::VectorXd::Zero(w.size());
  Eigen::VectorXd dvalue_dp = Eigen::VectorXd::Zero(m);

  if (batch) {
    const double inv_b = 1.0 / batch->size();
    for (const auto& ref : batch->example_refs) {
      if (ref.first < 0 || ref.first >= m || ref.second < 0 ||
          ref.second >= train_.sources[ref.first].size())
        throw std::out_of_range("weighted_train_loss_and_grads: bad example reference");
      const double scale = m * p[ref.first] * inv_b;
      const double loss = model_.loss_grad(w, train_.features_of(ref),
                                           train_.label_of(ref), scale, out.grad_w);
      out.value += scale * loss;
      dvalue_dp[ref.first] += m * inv_b * loss;
    }
  } else {
    for (int i = 0; i < m; ++i) {
      const auto& s = train_.sources[i];
      const double scale = p[i] / s.size();
      double avg = 0.0;
      for (int r = 0; r < s.size(); ++r)
        avg += model_.loss_grad(w, s.features.row(r).transpose(), s.labels[r], scale,
                                out.grad_w);
      avg /= s.size();
      out.value += p[i] * avg;
      dvalue_dp[i] = avg;
    }
  }
  out.value += 0.5 * model_.ridge() * w.squaredNorm();
  out.grad_w.noalias() += model_.ridge() * w;
  out.grad_lambda = softmax_jacobian_apply(p, dvalue_dp);
  return out;
}

SourceReweightProblem::ValEval SourceReweightProblem::val_loss_and_grad(
    const Eigen::VectorXd& w, const BatchHandle* batch, bool want_grad) const {
  if (w.size() != model_.param_dim())
    throw std::invalid_argument("SourceReweightProblem: w dimension mismatch");
  check_batch_origin(batch, Origin::val, "SourceReweightProblem validation loss");
  ValEval out;
  out.value = 0.0;
  out.grad_w = Eigen::VectorXd::Zero(w.size());
  if (batch) {
    const double inv_b = 1.0 / batch->size();
    for (const auto& ref : batch->example_refs) {
      if (ref.first < 0 || ref.first >= val_.num_sources() || ref.second < 0 ||
          ref.second >= val_.sources[ref.first].size())
        throw std::out_of_range("SourceReweightProblem: bad validation reference");
      if (want_grad)
        out.value += inv_b * model_.loss_grad(w, val_.features_of(ref),
                                              val_.label_of(ref), inv_b, out.grad_w);
      else
        out.value += inv_b * model_.loss(w, val_.features_of(ref), val_.label_of(ref));
    }
  } else {
    const double inv_n = 1.0 / val_.total_examples();
    for (const auto& s : val_.sources)
      for (int r = 0; r < s.size(); ++r) {
        if (want_grad)
          out.value += inv_n * model_.loss_grad(w, s.features.row(r).transpose(),
                                                s.labels[r], inv_n, out.grad_w);
        else
          out.value += inv_n * model_.loss(w, s.features.row(r).transpose(), s.labels[r]);
      }
  }
  return out;
}

double SourceReweightProblem::l1(const Eigen::VectorXd&, const Eigen::VectorXd& w,
                                 const BatchHandle* batch) const {
  return val_loss_and_grad(w, batch, false).value;
}

double SourceReweightProblem::l2(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                                 const BatchHandle* batch) const {
  return weighted_train_loss_and_grads(lambda, w, batch).value;
}

Eigen::VectorXd SourceReweightProblem::grad_l1_lambda(const Eigen::VectorXd& lambda,
                                                      const Eigen::VectorXd&,
                                                      const BatchHandle*) const {
  return Eigen::VectorXd::Zero(lambda.size());
}

Eigen::VectorXd SourceReweightProblem::grad_l1_w(const Eigen::VectorXd&,
                                                 const Eigen::VectorXd& w,
                                                 const BatchHandle* batch) const {
  return val_loss_and_grad(w, batch, true).grad_w;
}

Eigen::VectorXd SourceReweightProblem::grad_l2_lambda(const Eigen::VectorXd& lambda,
                                                      const Eigen::VectorXd& w,
                                                      const BatchHandle* batch) const {
  return weighted_train_loss_and_grads(lambda, w, batch).grad_lambda;
}

Eigen::VectorXd SourceReweightProblem::grad_l2_w(const Eigen::VectorXd& lambda,
                                                 const Eigen::VectorXd& w,
                                                 const BatchHandle* batch) const {
  return weighted_train_loss_and_grads(lambda, w, batch).grad_w;
}

/* ---------------- HyperCleanProblem ---------------- */

HyperCleanProblem::HyperCleanProblem(SyntheticDataset train, SyntheticDataset validation,
                                     InnerModel model, double c)
    : train_(std::move(train)),
      val_(std::move(validation)),
      model_(std::move(model)),
      c_(c) {
  if (train_.num_sources() != 1)
    throw std::invalid_argument("HyperCleanProblem: training data must be one source");
  if (train_.sources[0].size() < 1 || val_.total_examples() < 1)
    throw std::invalid_argument("HyperCleanProblem: empty split");
  if (train_.feature_dim != model_.feature_dim() ||
      val_.feature_dim != model_.feature_dim())
    throw std::invalid_argument("HyperCleanProblem: feature dimension mismatch");
  if (c_ <= 0.0) throw std::invalid_argument("HyperCleanProblem: c must be > 0");

  constants_ = ProblemConstants{};
  constants_.exact = false;
  constants_.mu2 = 2.0 * c_;
  if (model_.kind() != ModelKind::mlp1) {
    const double curv = model_.classification() ? 0.25 : 1.0;
    constants_.ell21 = curv * feature_gram_max(train_.sources[0].features) + 2.0 * c_;
    double hval = 0.0;
    double gsum = 0.0;
    const double region = 10.0;
    for (const auto& s : val_.sources) {
      hval += feature_gram_max(s.features);
      for (int r = 0; r < s.size(); ++r) {
        const double xn = s.features.row(r).norm();
        gsum += model_.classification() ? xn : xn * (xn * region + std::abs(s.labels[r]));
      }
    }
    constants_.ell11 = curv * hval;
    constants_.ell10 = gsum;
  }
}

TrainEval HyperCleanProblem::hyperclean_loss_and_grads(const Eigen::VectorXd& lambda,
                                                       const Eigen::VectorXd& u,
                                                       const BatchHandle* batch) const {
  const auto& src = train_.sources[0];
  const int n = src.size();
  if (lambda.size() != n)
    throw std::invalid_argument("hyperclean_loss_and_grads: lambda dimension mismatch");
  if (u.size() != model_.param_dim())
    throw std::invalid_argument("hyperclean_loss_and_grads: u dimension mismatch");
  check_batch_origin(batch, Origin::train, "hyperclean_loss_and_grads");

  TrainEval out;
  out.grad_w = Eigen::VectorXd::Zero(u.size());
  out.grad_lambda = Eigen::VectorXd::Zero(n);

  if (batch) {
    const double scale_base = static_cast<double>(n) / batch->size();
    for (const auto& ref : batch->example_refs) {
      if (ref.first != 0 || ref.second < 0 || ref.second >= n)
        throw std::out_of_range("hyperclean_loss_and_grads: bad example reference");
      const int e = ref.second;
      const double sig = sigmoid(lambda[e]);
      const double loss =
          model_.loss_grad(u, src.features.row(e).transpose(), src.labels[e],
                           scale_base * sig, out.grad_w);
      out.value += scale_base * sig * loss;
      out.grad_lambda[e] += scale_base * sig * (1.0 - sig) * loss;
    }
  } else {
    for (int e = 0; e < n; ++e) {
      const double sig = sigmoid(lambda[e]);
      const double loss = model_.loss_grad(u, src.features.row(e).transpose(),
                                           src.labels[e], sig, out.grad_w);
      out.value += sig * loss;
      out.grad_lambda[e] = sig * (1.0 - sig) * loss;
    }
  }
  out.value += c_ * u.squaredNorm();
  out.grad_w.noalias() += 2.0 * c_ * u;
  return out;
}

double HyperCleanProblem::l1(const Eigen::VectorXd&, const Eigen::VectorXd& w,
                             const BatchHandle* batch) const {
  if (w.size() != model_.param_dim())
    throw std::invalid_argument("HyperCleanProblem: w dimension mismatch");
  check_batch_origin(batch, Origin::val, "HyperCleanProblem validation loss");
  double v = 0.0;
  if (batch) {
    const double scale = static_cast<double>(val_.total_examples()) / batch->size();
    for (const auto& ref : batch->example_refs)
      v += scale * model_.loss(w, val_.features_of(ref), val_.label_of(ref));
  } else {
    for (const auto& s : val_.sources)
      for (int r = 0; r < s.size(); ++r)
        v += model_.loss(w, s.features.row(r).transpose(), s.labels[r]);
  }
  return v;
}

double HyperCleanProblem::l2(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                             const BatchHandle* batch) const {
  return hyperclean_loss_and_grads(lambda, w, batch).value;
}

Eigen::VectorXd HyperCleanProblem::grad_l1_lambda(const Eigen::VectorXd& lambda,
                                                  const Eigen::VectorXd&,
                                                  const BatchHandle*) const {
  return Eigen::VectorXd::Zero(lambda.size());
}

Eigen::VectorXd HyperCleanProblem::grad_l1_w(const Eigen::VectorXd&,
                                             const Eigen::VectorXd& w,
                                             const BatchHandle* batch) const {
  if (w.size() != model_.param_dim())
    throw std::invalid_argument("HyperCleanProblem: w dimension mismatch");
  check_batch_origin(batch, Origin::val, "HyperCleanProblem validation gradient");
  Eigen::VectorXd g = Eigen::VectorXd::Zero(w.size());
  if (batch) {
    const double scale = static_cast<double>(val_.total_examples()) / batch->size();
    for (const auto& ref : batch->example_refs)
      model_.loss_grad(w, val_.features_of(ref), val_.label_of(ref), scale, g);
  } else {
    for (const auto& s : val_.sources)
      for (int r = 0; r < s.size(); ++r)
        model_.loss_grad(w, s.features.row(r).transpose(), s.labels[r], 1.0, g);
  }
  return g;
}

Eigen::VectorXd HyperCleanProblem::grad_l2_lambda(const Eigen::VectorXd& lambda,
                                                  const Eigen::VectorXd& w,
                                                  const BatchHandle* batch) const {
  return hyperclean_loss_and_grads(lambda, w, batch).grad_lambda;
}

Eigen::VectorXd HyperCleanProblem::grad_l2_w(const Eigen::VectorXd& lambda,
                                             const Eigen::VectorXd& w,
                                             const BatchHandle* batch) const {
  return hyperclean_loss_and_grads(lambda, w, batch).grad_w;
}

}  // namespace biopt
