#pragma once

#include <cstdint>

#include <Eigen/Core>

namespace biopt {

enum class ModelKind { linear_regression, logistic_regression, mlp1 };

/* Per-example loss families with hand-coded gradients.
     linear_regression   score = x'w,        loss = 1/2 (score - y)^2
     logistic_regression score = x'w,        loss = softplus(-y score), y in {-1,1}
     mlp1                score = v'tanh(Wx + b) + b2 (one hidden layer)
   mlp1 pairs with the logistic loss on classification data and the squared
   loss otherwise.  The parameter vector is passed in by the caller; ridge is
   stored here but applied by the owning problem. */
class InnerModel {
 public:
  InnerModel(ModelKind kind, int feature_dim, double ridge, int hidden = 8,
             bool classification = false);

  ModelKind kind() const { return kind_; }
  int feature_dim() const { return feature_dim_; }
  int hidden() const { return hidden_; }
  double ridge() const { return ridge_; }
  bool classification() const { return classification_; }
  int param_dim() const;

  double score(const Eigen::VectorXd& w,
               const Eigen::Ref<const Eigen::VectorXd>& x) const;
  double loss(const Eigen::VectorXd& w, const Eigen::Ref<const Eigen::VectorXd>& x,
              double y) const;
  /* accumulates scale * dloss/dw into grad; returns the loss */
  double loss_grad(const Eigen::VectorXd& w, const Eigen::Ref<const Eigen::VectorXd>& x,
                   double y, double scale, Eigen::VectorXd& grad) const;

  /* seeded normal entries, scale 0.1 */
  Eigen::VectorXd initial_params(uint64_t seed) const;

 private:
  ModelKind kind_;
  int feature_dim_;
  int hidden_;
  double ridge_;
  bool classification_;
};

}  // namespace biopt
