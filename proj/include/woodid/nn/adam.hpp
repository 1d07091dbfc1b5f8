#pragma once

#include <cmath>
#include <vector>

#include "woodid/nn/tensor.hpp"

namespace woodid::nn {

/// Adam whose learning rate and first-moment decay are supplied per step,
/// so an external schedule can anneal both.
template <typename Scalar>
class Adam {
 public:
  Adam(std::vector<Parameter<Scalar>*> params, double beta2 = 0.999, double eps = 1e-8)
      : params_(std::move(params)), beta2_(beta2), eps_(eps) {
    for (auto* p : params_) {
      first_.push_back(Mat<Scalar>::Zero(p->value.rows(), p->value.cols()));
      second_.push_back(Mat<Scalar>::Zero(p->value.rows(), p->value.cols()));
    }
  }

  void zero_grad() {
    for (auto* p : params_) p->zero_grad();
  }

  void step(double lr, double beta1) {
    ++t_;
    const double bc1 = 1.0 - std::pow(beta1, t_);
    const double bc2 = 1.0 - std::pow(beta2_, t_);
    const Scalar b1 = static_cast<Scalar>(beta1), b2 = static_cast<Scalar>(beta2_);
    const Scalar step_size = static_cast<Scalar>(lr / bc1);
    const Scalar inv_sqrt_bc2 = static_cast<Scalar>(1.0 / std::sqrt(bc2));
    for (std::size_t i = 0; i < params_.size(); ++i) {
      auto& g = params_[i]->grad;
      first_[i] = b1 * first_[i] + (Scalar(1) - b1) * g;
      second_[i] = b2 * second_[i] + (Scalar(1) - b2) * g.cwiseProduct(g);
      params_[i]->value.array() -=
          step_size * first_[i].array() /
          (second_[i].array().sqrt() * inv_sqrt_bc2 + static_cast<Scalar>(eps_));
    }
  }

  long steps_taken() const { return t_; }

 private:
  std::vector<Parameter<Scalar>*> params_;
  std::vector<Mat<Scalar>> first_, second_;
  double beta2_, eps_;
  long t_ = 0;
};

}  // namespace woodid::nn
