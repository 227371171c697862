#pragma once

#include <Eigen/Core>

#include "biopt/models.hpp"
#include "biopt/problem.hpp"

namespace biopt {

/* max-subtracted softmax; rejects non-finite input */
Eigen::VectorXd softmax(const Eigen::VectorXd& lambda);

/* J g with J_ij = p_i (delta_ij - p_j); J is symmetric and the result sums
   to zero (tangent to the simplex) */
Eigen::VectorXd softmax_jacobian_apply(const Eigen::VectorXd& p,
                                       const Eigen::VectorXd& g);

struct MixtureWeights {
  Eigen::VectorXd lambda;
  Eigen::VectorXd p;
  static MixtureWeights from_lambda(const Eigen::VectorXd& lambda);
};

struct TrainEval {
  double value = 0.0;
  Eigen::VectorXd grad_w;
  Eigen::VectorXd grad_lambda;
};

/* Source reweighting: softmax weights p(lambda) over m sources,
     L2(lambda, w) = sum_i p_i / n_i sum_j loss(w; a_j^i) + ridge/2 |w|^2
     L1(lambda, w) = mean validation loss (no lambda dependence).
   Train minibatches are drawn source-uniform and every sampled example is
   scaled by m p_{s(e)}, which keeps the batch value unbiased for L2. */
class SourceReweightProblem final : public BilevelProblem {
 public:
  SourceReweightProblem(SyntheticDataset train, SyntheticDataset validation,
                        InnerModel model);

  int dim_lambda() const override { return train_.num_sources(); }
  int dim_w() const override { return model_.param_dim(); }
  const ProblemConstants& constants() const override { return constants_; }
  bool lambda_is_mixture() const override { return true; }

  TrainEval weighted_train_loss_and_grads(const Eigen::VectorXd& lambda,
                                          const Eigen::VectorXd& w,
                                          const BatchHandle* batch = nullptr) const;

  double l1(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
            const BatchHandle* batch = nullptr) const override;
  double l2(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
            const BatchHandle* batch = nullptr) const override;
  Eigen::VectorXd grad_l1_lambda(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                                 const BatchHandle* batch = nullptr) const override;
  Eigen::VectorXd grad_l1_w(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                            const BatchHandle* batch = nullptr) const override;
  Eigen::VectorXd grad_l2_lambda(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                                 const BatchHandle* batch = nullptr) const override;
  Eigen::VectorXd grad_l2_w(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                            const BatchHandle* batch = nullptr) const override;

  const SyntheticDataset& train_data() const { return train_; }
  const SyntheticDataset& val_data() const { return val_; }
  const InnerModel& model() const { return model_; }

 private:
  struct ValEval {
    double value;
    Eigen::VectorXd grad_w;
  };
  ValEval val_loss_and_grad(const Eigen::VectorXd& w, const BatchHandle* batch,
                            bool want_grad) const;

  SyntheticDataset train_;
  SyntheticDataset val_;
  InnerModel model_;
  ProblemConstants constants_;
};

/* Per-example cleaning: sigmoid weights sigma(lambda_i) over the n training
   examples,
     L2(lambda, u) = sum_i sigma(lambda_i) loss(u; xi_i) + c |u|^2
     L1(lambda, w) = sum over validation of loss(w; xi_j).
   d L2 / d lambda_i = sigma(lambda_i)(1 - sigma(lambda_i)) loss(u; xi_i). */
class HyperCleanProblem final : public BilevelProblem {
 public:
  HyperCleanProblem(SyntheticDataset train, SyntheticDataset validation,
                    InnerModel model, double c = 1e-3);

  int dim_lambda() const override { return train_.sources[0].size(); }
  int dim_w() const override { return model_.param_dim(); }
  const ProblemConstants& constants() const override { return constants_; }

  TrainEval hyperclean_loss_and_grads(const Eigen::VectorXd& lambda,
                                      const Eigen::VectorXd& u,
                                      const BatchHandle* batch = nullptr) const;

  double l1(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
            const BatchHandle* batch = nullptr) const override;
  double l2(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
            const BatchHandle* batch = nullptr) const override;
  Eigen::VectorXd grad_l1_lambda(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                                 const BatchHandle* batch = nullptr) const override;
  Eigen::VectorXd grad_l1_w(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                            const BatchHandle* batch = nullptr) const override;
  Eigen::VectorXd grad_l2_lambda(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                                 const BatchHandle* batch = nullptr) const override;
  Eigen::VectorXd grad_l2_w(const Eigen::VectorXd& lambda, const Eigen::VectorXd& w,
                            const BatchHandle* batch = nullptr) const override;

  const SyntheticDataset& train_data() const { return train_; }
  const SyntheticDataset& val_data() const { return val_; }
  const InnerModel& model() const { return model_; }
  double regularizer() const { return c_; }

 private:
  SyntheticDataset train_;
  SyntheticDataset val_;
  InnerModel model_;
  double c_;
  ProblemConstants constants_;
};

}  // namespace biopt
