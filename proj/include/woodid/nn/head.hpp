#pragma once

#include <cmath>
#include <string>

#include "woodid/nn/layers.hpp"

namespace woodid::nn {

/// Concatenated global average and global max pooling: (N, C, H, W) ->
/// (N, 2C) with the averages first.
template <typename Scalar>
class ConcatPool {
 public:
  Mat<Scalar> infer(const Tensor<Scalar>& x) const { return run(x, nullptr); }

  Mat<Scalar> forward(const Tensor<Scalar>& x) {
    n_ = x.batch(), c_ = x.channels(), h_ = x.height(), w_ = x.width();
    return run(x, &argmax_);
  }

  Tensor<Scalar> backward(const Mat<Scalar>& dy) const {
    Tensor<Scalar> dx(n_, c_, h_, w_);
    const Scalar inv_area = Scalar(1) / static_cast<Scalar>(dx.spatial());
    for (int n = 0; n < n_; ++n) {
      auto s = dx.sample(n);
      for (int c = 0; c < c_; ++c) {
        s.row(c).array() += dy(n, c) * inv_area;
        s(c, argmax_(n, c)) += dy(n, c_ + c);
      }
    }
    return dx;
  }

 private:
  Mat<Scalar> run(const Tensor<Scalar>& x, Eigen::MatrixXi* argmax) const {
    const int n_batch = x.batch(), c = x.channels();
    Mat<Scalar> out(n_batch, 2 * c);
    if (argmax) argmax->resize(n_batch, c);
    for (int n = 0; n < n_batch; ++n) {
      const auto s = x.sample(n);
      out.row(n).head(c) = s.rowwise().mean().transpose();
      for (int ch = 0; ch < c; ++ch) {
        Eigen::Index idx = 0;
        out(n, c + ch) = s.row(ch).maxCoeff(&idx);
        if (argmax) (*argmax)(n, ch) = static_cast<int>(idx);
      }
    }
    return out;
  }

  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  Eigen::MatrixXi argmax_;
};

/// BatchNorm over the feature columns of an (N, F) matrix.
template <typename Scalar>
class BatchNorm1d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm1d() = default;
  explicit BatchNorm1d(int features) : f_(features) {
    gamma_.resize(1, f_);
    beta_.resize(1, f_);
    gamma_.value.setOnes();
    running_mean_ = Mat<Scalar>::Zero(1, f_);
    running_var_ = Mat<Scalar>::Ones(1, f_);
  }

  Mat<Scalar> infer(const Mat<Scalar>& x) const {
    const auto inv = (running_var_.array() + Scalar(kEps)).rsqrt();
    return (((x.rowwise() - running_mean_.row(0)).array().rowwise() * inv.row(0)).rowwise() *
                gamma_.value.array().row(0))
               .rowwise() +
           beta_.value.array().row(0);
  }

  Mat<Scalar> forward(const Mat<Scalar>& x) {
    const Scalar m = static_cast<Scalar>(x.rows());
    const Mat<Scalar> mean = x.colwise().mean();
    const Mat<Scalar> centered = x.rowwise() - mean.row(0);
    const Mat<Scalar> var = centered.array().square().colwise().sum() / m;
    const Scalar unbias = x.rows() > 1 ? m / (m - Scalar(1)) : Scalar(1);
    running_mean_ = Scalar(1 - kMomentum) * running_mean_ + Scalar(kMomentum) * mean;
    running_var_ = Scalar(1 - kMomentum) * running_var_ + Scalar(kMomentum) * unbias * var;
    inv_std_ = (var.array() + Scalar(kEps)).rsqrt().matrix();
    x_hat_ = (centered.array().rowwise() * inv_std_.array().row(0)).matrix();
    return ((x_hat_.array().rowwise() * gamma_.value.array().row(0)).rowwise() +
            beta_.value.array().row(0))
        .matrix();
  }

  Mat<Scalar> backward(const Mat<Scalar>& dy) {
    const Scalar m = static_cast<Scalar>(dy.rows());
    const Mat<Scalar> dbeta = dy.colwise().sum();
    const Mat<Scalar> dgamma = dy.cwiseProduct(x_hat_).colwise().sum();
    gamma_.grad += dgamma;
    beta_.grad += dbeta;
    const auto g = (gamma_.value.array() * inv_std_.array()).row(0);
    return (((dy.rowwise() - dbeta.row(0) / m).array() -
             x_hat_.array().rowwise() * (dgamma.array().row(0) / m))
                .rowwise() *
            g)
        .matrix();
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + "weight", gamma_.value, &gamma_);
    fn(prefix + "bias", beta_.value, &beta_);
    fn(prefix + "running_mean", running_mean_, static_cast<Parameter<Scalar>*>(nullptr));
    fn(prefix + "running_var", running_var_, static_cast<Parameter<Scalar>*>(nullptr));
  }

 private:
  int f_ = 0;
  Parameter<Scalar> gamma_, beta_;
  Mat<Scalar> running_mean_, running_var_;
  Mat<Scalar> inv_std_, x_hat_;
};

/// Inverted dropout; identity at inference.
template <typename Scalar>
class Dropout {
 public:
  explicit Dropout(double p = 0.0) : p_(p) {}
  double probability() const { return p_; }

  Mat<Scalar> forward(const Mat<Scalar>& x, Rng& rng) {
    mask_.resize(x.rows(), x.cols());
    const Scalar keep_scale = p_ < 1.0 ? static_cast<Scalar>(1.0 / (1.0 - p_)) : Scalar(0);
    for (Eigen::Index i = 0; i < mask_.size(); ++i)
      mask_.data()[i] = rng.uniform01() < p_ ? Scalar(0) : keep_scale;
    return x.cwiseProduct(mask_);
  }

  Mat<Scalar> backward(const Mat<Scalar>& dy) const { return dy.cwiseProduct(mask_); }

 private:
  double p_;
  Mat<Scalar> mask_;
};

/// y = x W^T + b with W of shape (out, in).
template <typename Scalar>
class Linear {
 public:
  Linear() = default;
  Linear(int in, int out) {
    weight_.resize(out, in);
    bias_.resize(1, out);
  }

  int in_features() const { return static_cast<int>(weight_.value.cols()); }
  int out_features() const { return static_cast<int>(weight_.value.rows()); }
  Parameter<Scalar>& weight() { return weight_; }
  Parameter<Scalar>& bias() { return bias_; }

  /// He-normal over fan-in; zero bias.
  void init_he(Rng& rng) {
    const double std = std::sqrt(2.0 / static_cast<double>(in_features()));
    for (Eigen::Index i = 0; i < weight_.value.size(); ++i)
      weight_.value.data()[i] = static_cast<Scalar>(std * rng.normal());
    bias_.value.setZero();
  }

  Mat<Scalar> infer(const Mat<Scalar>& x) const {
    Mat<Scalar> y = x * weight_.value.transpose();
    y.rowwise() += bias_.value.row(0);
    return y;
  }

  Mat<Scalar> forward(const Mat<Scalar>& x) {
    input_ = x;
    return infer(x);
  }

  Mat<Scalar> backward(const Mat<Scalar>& dy) {
    weight_.grad.noalias() += dy.transpose() * input_;
    bias_.grad += dy.colwise().sum();
    return dy * weight_.value;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + "weight", weight_.value, &weight_);
    fn(prefix + "bias", bias_.value, &bias_);
  }

 private:
  Parameter<Scalar> weight_, bias_;
  Mat<Scalar> input_;
};

/// Pooling -> [BN, Dropout, Linear, ReLU] -> [BN, Dropout, Linear]. Emits
/// logits; softmax is applied by the caller so the loss can use the
/// numerically stable log-sum-exp form.
template <typename Scalar>
class ClassifierHead {
 public:
  ClassifierHead(int in_channels, int hidden, int n_classes, double dropout1, double dropout2)
      : bn1_(2 * in_channels),
        drop1_(dropout1),
        fc1_(2 * in_channels, hidden),
        bn2_(hidden),
        drop2_(dropout2),
        fc2_(hidden, n_classes) {}

  int pooled_features() const { return fc1_.in_features(); }
  int n_classes() const { return fc2_.out_features(); }
  Linear<Scalar>& final_layer() { return fc2_; }

  void init_he(Rng& rng) {
    fc1_.init_he(rng);
    fc2_.init_he(rng);
  }

  Mat<Scalar> pool(const Tensor<Scalar>& features) const { return pool_.infer(features); }

  Mat<Scalar> infer(const Tensor<Scalar>& features) const {
    Mat<Scalar> h = fc1_.infer(bn1_.infer(pool_.infer(features))).cwiseMax(Scalar(0));
    return fc2_.infer(bn2_.infer(h));
  }

  Mat<Scalar> forward(const Tensor<Scalar>& features, Rng& rng) {
    hidden_ = fc1_.forward(drop1_.forward(bn1_.forward(pool_.forward(features)), rng))
                  .cwiseMax(Scalar(0));
    return fc2_.forward(drop2_.forward(bn2_.forward(hidden_), rng));
  }

  Tensor<Scalar> backward(const Mat<Scalar>& dlogits) {
    Mat<Scalar> d = bn2_.backward(drop2_.backward(fc2_.backward(dlogits)));
    d = (hidden_.array() > Scalar(0)).select(d, Scalar(0));
    return pool_.backward(bn1_.backward(drop1_.backward(fc1_.backward(d))));
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    bn1_.visit(prefix + "bn1.", fn);
    fc1_.visit(prefix + "fc1.", fn);
    bn2_.visit(prefix + "bn2.", fn);
    fc2_.visit(prefix + "fc2.", fn);
  }

 private:
  ConcatPool<Scalar> pool_;
  BatchNorm1d<Scalar> bn1_;
  Dropout<Scalar> drop1_;
  Linear<Scalar> fc1_;
  BatchNorm1d<Scalar> bn2_;
  Dropout<Scalar> drop2_;
  Linear<Scalar> fc2_;
  Mat<Scalar> hidden_;
};

/// Row-wise softmax.
template <typename Scalar>
Mat<Scalar> softmax(const Mat<Scalar>& logits) {
  Mat<Scalar> p = (logits.colwise() - logits.rowwise().maxCoeff()).array().exp().matrix();
  p.array().colwise() /= p.rowwise().sum().array();
  return p;
}

/// Mean cross-entropy of row-wise softmax(logits) against integer labels;
/// writes d(loss)/d(logits) into `grad` when non-null.
template <typename Scalar>
Scalar cross_entropy(const Mat<Scalar>& logits, const std::vector<int>& labels,
                     Mat<Scalar>* grad = nullptr) {
  const Eigen::Index n = logits.rows();
  const Vec<Scalar> row_max = logits.rowwise().maxCoeff();
  const Mat<Scalar> shifted = logits.colwise() - row_max;
  const Vec<Scalar> lse = shifted.array().exp().rowwise().sum().log();
  Scalar loss = 0;
  for (Eigen::Index i = 0; i < n; ++i) loss += lse[i] - shifted(i, labels[static_cast<std::size_t>(i)]);
  loss /= static_cast<Scalar>(n);
  if (grad) {
    *grad = softmax<Scalar>(logits);
    for (Eigen::Index i = 0; i < n; ++i) (*grad)(i, labels[static_cast<std::size_t>(i)]) -= Scalar(1);
    *grad /= static_cast<Scalar>(n);
  }
  return loss;
}

}  // namespace woodid::nn
