#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <limits>
#include <string>
#include <vector>

#include "woodid/nn/tensor.hpp"
#include "woodid/rng.hpp"

namespace woodid::nn {

// Visitor protocol shared by every layer: fn(name, tensor, param) where
// `param` is null for non-trainable buffers such as running statistics.

// ---------------------------------------------------------------------------
// Convolution (no bias; every ResNet convolution is followed by BatchNorm)

template <typename Scalar>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(int in_channels, int out_channels, int kernel, int stride, int padding)
      : in_(in_channels), out_(out_channels), k_(kernel), stride_(stride), pad_(padding) {
    weight_.resize(out_, static_cast<Eigen::Index>(in_) * k_ * k_);
  }

  int in_channels() const { return in_; }
  int out_channels() const { return out_; }
  int output_height(int h) const { return (h + 2 * pad_ - k_) / stride_ + 1; }
  int output_width(int w) const { return (w + 2 * pad_ - k_) / stride_ + 1; }

  Parameter<Scalar>& weight() { return weight_; }
  const Parameter<Scalar>& weight() const { return weight_; }

  /// He-normal over fan-out, the usual initialisation for ReLU conv stacks.
  void init_he(Rng& rng) {
    const double std = std::sqrt(2.0 / (static_cast<double>(out_) * k_ * k_));
    for (Eigen::Index i = 0; i < weight_.value.size(); ++i)
      weight_.value.data()[i] = static_cast<Scalar>(std * rng.normal());
  }

  Tensor<Scalar> infer(const Tensor<Scalar>& x) const {
    const int ho = output_height(x.height()), wo = output_width(x.width());
    Tensor<Scalar> y(x.batch(), out_, ho, wo);
    Mat<Scalar> col;
    for (int n = 0; n < x.batch(); ++n) {
      if (is_pointwise()) {
        y.sample(n).noalias() = weight_.value * x.sample(n);
      } else {
        im2col(x, n, ho, wo, col);
        y.sample(n).noalias() = weight_.value * col;
      }
    }
    return y;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    input_ = x;
    return infer(x);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    const Tensor<Scalar>& x = input_;
    Tensor<Scalar> dx(x.batch(), in_, x.height(), x.width());
    const int ho = dy.height(), wo = dy.width();
    Mat<Scalar> col, dcol;
    for (int n = 0; n < x.batch(); ++n) {
      if (is_pointwise()) {
        weight_.grad.noalias() += dy.sample(n) * x.sample(n).transpose();
        dx.sample(n).noalias() = weight_.value.transpose() * dy.sample(n);
      } else {
        im2col(x, n, ho, wo, col);
        weight_.grad.noalias() += dy.sample(n) * col.transpose();
        dcol.noalias() = weight_.value.transpose() * dy.sample(n);
        col2im(dcol, n, ho, wo, dx);
      }
    }
    return dx;
  }

  /// Input cached by the last forward(); valid until clear().
  const Tensor<Scalar>& input() const { return input_; }
  void clear() { input_ = Tensor<Scalar>(); }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + "weight", weight_.value, &weight_);
  }

 private:
  bool is_pointwise() const { return k_ == 1 && stride_ == 1 && pad_ == 0; }

  void im2col(const Tensor<Scalar>& x, int n, int ho, int wo, Mat<Scalar>& col) const {
    const int h = x.height(), w = x.width();
    col.resize(static_cast<Eigen::Index>(in_) * k_ * k_, static_cast<Eigen::Index>(ho) * wo);
    const Scalar* src = x.sample_data(n);
    for (int c = 0; c < in_; ++c) {
      const Scalar* plane = src + static_cast<Eigen::Index>(c) * h * w;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          Scalar* row = col.data() + ((static_cast<Eigen::Index>(c) * k_ + ky) * k_ + kx) * ho * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            Scalar* out = row + static_cast<Eigen::Index>(oy) * wo;
            if (iy < 0 || iy >= h) {
              std::fill(out, out + wo, Scalar(0));
              continue;
            }
            const Scalar* in_row = plane + static_cast<Eigen::Index>(iy) * w;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              out[ox] = (ix >= 0 && ix < w) ? in_row[ix] : Scalar(0);
            }
          }
        }
      }
    }
  }

  void col2im(const Mat<Scalar>& col, int n, int ho, int wo, Tensor<Scalar>& dx) const {
    const int h = dx.height(), w = dx.width();
    Scalar* dst = dx.sample_data(n);
    for (int c = 0; c < in_; ++c) {
      Scalar* plane = dst + static_cast<Eigen::Index>(c) * h * w;
      for (int ky = 0; ky < k_; ++ky) {
        for (int kx = 0; kx < k_; ++kx) {
          const Scalar* row =
              col.data() + ((static_cast<Eigen::Index>(c) * k_ + ky) * k_ + kx) * ho * wo;
          for (int oy = 0; oy < ho; ++oy) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) continue;
            Scalar* out_row = plane + static_cast<Eigen::Index>(iy) * w;
            const Scalar* in = row + static_cast<Eigen::Index>(oy) * wo;
            for (int ox = 0; ox < wo; ++ox) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix >= 0 && ix < w) out_row[ix] += in[ox];
            }
          }
        }
      }
    }
  }

  int in_ = 0, out_ = 0, k_ = 1, stride_ = 1, pad_ = 0;
  Parameter<Scalar> weight_;
  Tensor<Scalar> input_;
};

// ---------------------------------------------------------------------------
// BatchNorm over channels of an NCHW tensor

template <typename Scalar>
class BatchNorm2d {
 public:
  static constexpr double kEps = 1e-5;
  static constexpr double kMomentum = 0.1;

  BatchNorm2d() = default;
  explicit BatchNorm2d(int channels) : c_(channels) {
    gamma_.resize(c_, 1);
    beta_.resize(c_, 1);
    gamma_.value.setOnes();
    running_mean_ = Mat<Scalar>::Zero(c_, 1);
    running_var_ = Mat<Scalar>::Ones(c_, 1);
  }

  Parameter<Scalar>& gamma() { return gamma_; }
  Parameter<Scalar>& beta() { return beta_; }
  Mat<Scalar>& running_mean() { return running_mean_; }
  Mat<Scalar>& running_var() { return running_var_; }

  Tensor<Scalar> infer(const Tensor<Scalar>& x) const {
    Vec<Scalar> scale(c_), shift(c_);
    for (int c = 0; c < c_; ++c) {
      const Scalar inv = Scalar(1) / std::sqrt(running_var_(c, 0) + Scalar(kEps));
      scale[c] = gamma_.value(c, 0) * inv;
      shift[c] = beta_.value(c, 0) - running_mean_(c, 0) * scale[c];
    }
    Tensor<Scalar> y(x.batch(), x.channels(), x.height(), x.width());
    for (int n = 0; n < x.batch(); ++n)
      y.sample(n) = (x.sample(n).array().colwise() * scale.array()).colwise() + shift.array();
    return y;
  }

  /// `batch_stats` selects training-mode normalisation (and updates the
  /// running statistics); otherwise the running statistics are used and
  /// only gradients flow.
  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool batch_stats) {
    batch_stats_ = batch_stats;
    const double m = static_cast<double>(x.batch()) * static_cast<double>(x.spatial());
    Vec<Scalar> mean(c_), var(c_);
    if (batch_stats) {
      mean.setZero();
      var.setZero();
      for (int n = 0; n < x.batch(); ++n) mean += x.sample(n).rowwise().sum();
      mean /= static_cast<Scalar>(m);
      for (int n = 0; n < x.batch(); ++n)
        var += (x.sample(n).colwise() - mean).array().square().matrix().rowwise().sum();
      var /= static_cast<Scalar>(m);
      const Scalar unbias = m > 1 ? static_cast<Scalar>(m / (m - 1)) : Scalar(1);
      running_mean_ = (Scalar(1 - kMomentum) * running_mean_.col(0) + Scalar(kMomentum) * mean).eval();
      running_var_ = (Scalar(1 - kMomentum) * running_var_.col(0) + Scalar(kMomentum) * unbias * var).eval();
    } else {
      mean = running_mean_.col(0);
      var = running_var_.col(0);
    }
    inv_std_ = (var.array() + Scalar(kEps)).rsqrt().matrix();
    x_hat_ = Tensor<Scalar>(x.batch(), x.channels(), x.height(), x.width());
    Tensor<Scalar> y(x.batch(), x.channels(), x.height(), x.width());
    for (int n = 0; n < x.batch(); ++n) {
      x_hat_.sample(n) = ((x.sample(n).colwise() - mean).array().colwise() * inv_std_.array()).matrix();
      y.sample(n) = (x_hat_.sample(n).array().colwise() * gamma_.value.col(0).array()).colwise() +
                    beta_.value.col(0).array();
    }
    return y;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Vec<Scalar> dgamma = Vec<Scalar>::Zero(c_), dbeta = Vec<Scalar>::Zero(c_);
    for (int n = 0; n < dy.batch(); ++n) {
      dbeta += dy.sample(n).rowwise().sum();
      dgamma += dy.sample(n).cwiseProduct(x_hat_.sample(n)).rowwise().sum();
    }
    gamma_.grad.col(0) += dgamma;
    beta_.grad.col(0) += dbeta;
    Tensor<Scalar> dx(dy.batch(), dy.channels(), dy.height(), dy.width());
    const Vec<Scalar> g = gamma_.value.col(0).cwiseProduct(inv_std_);
    if (batch_stats_) {
      const Scalar m = static_cast<Scalar>(dy.batch() * dy.spatial());
      const Vec<Scalar> mean_dy = dbeta / m, mean_dyx = dgamma / m;
      for (int n = 0; n < dy.batch(); ++n) {
        auto xh = x_hat_.sample(n).array();
        dx.sample(n) = (((dy.sample(n).array().colwise() - mean_dy.array()) -
                         xh.colwise() * mean_dyx.array())
                            .colwise() *
                        g.array())
                           .matrix();
      }
    } else {
      for (int n = 0; n < dy.batch(); ++n)
        dx.sample(n) = (dy.sample(n).array().colwise() * g.array()).matrix();
    }
    x_hat_ = Tensor<Scalar>();
    return dx;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    fn(prefix + "weight", gamma_.value, &gamma_);
    fn(prefix + "bias", beta_.value, &beta_);
    fn(prefix + "running_mean", running_mean_, static_cast<Parameter<Scalar>*>(nullptr));
    fn(prefix + "running_var", running_var_, static_cast<Parameter<Scalar>*>(nullptr));
  }

 private:
  int c_ = 0;
  Parameter<Scalar> gamma_, beta_;
  Mat<Scalar> running_mean_, running_var_;
  bool batch_stats_ = true;
  Vec<Scalar> inv_std_;
  Tensor<Scalar> x_hat_;
};

// ---------------------------------------------------------------------------

template <typename Scalar>
Tensor<Scalar> relu(Tensor<Scalar> x) {
  x.data() = x.data().cwiseMax(Scalar(0));
  return x;
}

/// Gradient of ReLU given the layer's output (or any tensor positive exactly
/// where the output is).
template <typename Scalar>
Tensor<Scalar> relu_backward(Tensor<Scalar> dy, const Tensor<Scalar>& activated) {
  dy.data() = (activated.data().array() > Scalar(0)).select(dy.data(), Scalar(0));
  return dy;
}

template <typename Scalar>
class MaxPool2d {
 public:
  MaxPool2d(int kernel = 3, int stride = 2, int padding = 1)
      : k_(kernel), stride_(stride), pad_(padding) {}

  int output_height(int h) const { return (h + 2 * pad_ - k_) / stride_ + 1; }
  int output_width(int w) const { return (w + 2 * pad_ - k_) / stride_ + 1; }

  Tensor<Scalar> infer(const Tensor<Scalar>& x) const { return run(x, nullptr); }

  Tensor<Scalar> forward(const Tensor<Scalar>& x) {
    in_n_ = x.batch(), in_c_ = x.channels(), in_h_ = x.height(), in_w_ = x.width();
    return run(x, &argmax_);
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> dx(in_n_, in_c_, in_h_, in_w_);
    const Eigen::Index plane_in = static_cast<Eigen::Index>(in_h_) * in_w_;
    const Eigen::Index plane_out = dy.spatial();
    for (Eigen::Index p = 0; p < static_cast<Eigen::Index>(in_n_) * in_c_; ++p)
      for (Eigen::Index o = 0; o < plane_out; ++o)
        dx.data()[p * plane_in + argmax_[p * plane_out + o]] += dy.data()[p * plane_out + o];
    argmax_.clear();
    return dx;
  }

 private:
  Tensor<Scalar> run(const Tensor<Scalar>& x, std::vector<std::int32_t>* argmax) const {
    const int h = x.height(), w = x.width();
    const int ho = output_height(h), wo = output_width(w);
    Tensor<Scalar> y(x.batch(), x.channels(), ho, wo);
    if (argmax) argmax->assign(static_cast<std::size_t>(y.size()), 0);
    for (Eigen::Index p = 0; p < static_cast<Eigen::Index>(x.batch()) * x.channels(); ++p) {
      const Scalar* in = x.data().data() + p * h * w;
      Scalar* out = y.data().data() + p * ho * wo;
      for (int oy = 0; oy < ho; ++oy) {
        for (int ox = 0; ox < wo; ++ox) {
          Scalar best = -std::numeric_limits<Scalar>::infinity();
          std::int32_t best_idx = 0;
          for (int ky = 0; ky < k_; ++ky) {
            const int iy = oy * stride_ - pad_ + ky;
            if (iy < 0 || iy >= h) continue;
            for (int kx = 0; kx < k_; ++kx) {
              const int ix = ox * stride_ - pad_ + kx;
              if (ix < 0 || ix >= w) continue;
              const Scalar v = in[iy * w + ix];
              if (v > best) {
                best = v;
                best_idx = iy * w + ix;
              }
            }
          }
          out[oy * wo + ox] = best;
          if (argmax) (*argmax)[static_cast<std::size_t>(p * ho * wo + oy * wo + ox)] = best_idx;
        }
      }
    }
    return y;
  }

  int k_, stride_, pad_;
  int in_n_ = 0, in_c_ = 0, in_h_ = 0, in_w_ = 0;
  std::vector<std::int32_t> argmax_;
};

}  // namespace woodid::nn
