#include "biopt/models.hpp"

#include <cmath>
#include <stdexcept>

#include "biopt/rng.hpp"

namespace biopt {

namespace {

double softplus(double z) {
  /* log(1 + e^z) without overflow */
  return z > 0.0 ? z + std::log1p(std::exp(-z)) : std::log1p(std::exp(z));
}

double sigmoid(double z) {
  return z >= 0.0 ? 1.0 / (1.0 + std::exp(-z))
                  : std::exp(z) / (1.0 + std::exp(z));
}

}  // namespace

InnerModel::InnerModel(ModelKind kind, int feature_dim, double ridge, int hidden,
                       bool classification)
    : kind_(kind),
      feature_dim_(feature_dim),
      hidden_(hidden),
      ridge_(ridge),
      classification_(classification) {
  if (feature_dim < 1) throw std::invalid_argument("InnerModel: feature_dim < 1");
  if (ridge < 0.0) throw std::invalid_argument("InnerModel: ridge < 0");
  if (kind == ModelKind::mlp1 && hidden < 1)
    throw std::invalid_argument("InnerModel: hidden width < 1");
  if (kind == ModelKind::logistic_regression) classification_ = true;
  if (kind == ModelKind::linear_regression) classification_ = false;
}

int InnerModel::param_dim() const {
  switch (kind_) {
    case ModelKind::linear_regression:
    case ModelKind::logistic_regression:
      return feature_dim_;
    case ModelKind::mlp1:
      /* vec(W) | b | v | b2 */
      return hidden_ * feature_dim_ + hidden_ + hidden_ + 1;
  }
  return 0;
}

double InnerModel::score(const Eigen::VectorXd& w,
                         const Eigen::Ref<const Eigen::VectorXd>& x) const {
  if (w.size() != param_dim()) throw std::invalid_argument("InnerModel: bad param dim");
  if (kind_ != ModelKind::mlp1) return w.dot(x);
  const int h = hidden_, d = feature_dim_;
  double s = w[h * d + h + h];  /* b2 */
  for (int i = 0; i < h; ++i) {
    const double z = w.segment(i * d, d).dot(x) + w[h * d + i];
    s += w[h * d + h + i] * std::tanh(z);
  }
  return s;
}

double InnerModel::loss(const Eigen::VectorXd& w,
                        const Eigen::Ref<const Eigen::VectorXd>& x, double y) const {
  const double s = score(w, x);
  if (kind_ == ModelKind::logistic_regression ||
      (kind_ == ModelKind::mlp1 && classification_))
    return softplus(-y * s);
  const double r = s - y;
  return 0.5 * r * r;
}

double InnerModel::loss_grad(const Eigen::VectorXd& w,
                             const Eigen::Ref<const Eigen::VectorXd>& x, double y,
                             double scale, Eigen::VectorXd& grad) const {
  if (grad.size() != param_dim())
    throw std::invalid_argument("InnerModel: gradient buffer has bad dimension");
  const bool logistic = kind_ == ModelKind::logistic_regression ||
                        (kind_ == ModelKind::mlp1 && classification_);
  const double s = score(w, x);
  double value, dl_ds;
  if (logistic) {
    value = softplus(-y * s);
    dl_ds = -y * sigmoid(-y * s);
  } else {
    const double r = s - y;
    value = 0.5 * r * r;
    dl_ds = r;
  }
  const double c = scale * dl_ds;
  if (kind_ != ModelKind::mlp1) {
    grad.noalias() += c * x;
    return value;
  }
  const int h = hidden_, d = feature_dim_;
  for (int i = 0; i < h; ++i) {
    const double z = w.segment(i * d, d).dot(x) + w[h * d + i];
    const double t = std::tanh(z);
    const double v = w[h * d + h + i];
    const double dz = c * v * (1.0 - t * t);
    grad.segment(i * d, d).noalias() += dz * x; /* dW row i */
    grad[h * d + i] += dz;                      /* db_i */
    grad[h * d + h + i] += c * t;               /* dv_i */
  }
  grad[h * d + h + h] += c; /* db2 */
  return value;
}

Eigen::VectorXd InnerModel::initial_params(uint64_t seed) const {
  CounterRng rng(seed, stream::init, 0);
  Eigen::VectorXd w(param_dim());
  for (int i = 0; i < w.size(); ++i) w[i] = 0.1 * rng.next_gaussian();
  return w;
}

}  // namespace biopt
