#pragma once

#include <cassert>
#include <string>

#include <Eigen/Dense>

namespace woodid::nn {

template <typename Scalar>
using Mat = Eigen::Matrix<Scalar, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename Scalar>
using Vec = Eigen::Matrix<Scalar, Eigen::Dynamic, 1>;

/// Dense NCHW activation tensor. Each sample is viewable as a row-major
/// (channels x height*width) matrix, which is the layout the convolution
/// GEMMs consume directly.
template <typename Scalar>
class Tensor {
 public:
  using SampleMap = Eigen::Map<Mat<Scalar>>;
  using ConstSampleMap = Eigen::Map<const Mat<Scalar>>;

  Tensor() = default;
  Tensor(int n, int c, int h, int w)
      : n_(n), c_(c), h_(h), w_(w), data_(Vec<Scalar>::Zero(static_cast<Eigen::Index>(n) * c * h * w)) {}

  int batch() const { return n_; }
  int channels() const { return c_; }
  int height() const { return h_; }
  int width() const { return w_; }
  Eigen::Index spatial() const { return static_cast<Eigen::Index>(h_) * w_; }
  Eigen::Index sample_size() const { return c_ * spatial(); }
  Eigen::Index size() const { return data_.size(); }

  bool same_shape(const Tensor& o) const {
    return n_ == o.n_ && c_ == o.c_ && h_ == o.h_ && w_ == o.w_;
  }

  Vec<Scalar>& data() { return data_; }
  const Vec<Scalar>& data() const { return data_; }

  Scalar* sample_data(int i) { return data_.data() + i * sample_size(); }
  const Scalar* sample_data(int i) const { return data_.data() + i * sample_size(); }

  SampleMap sample(int i) { return SampleMap(sample_data(i), c_, spatial()); }
  ConstSampleMap sample(int i) const { return ConstSampleMap(sample_data(i), c_, spatial()); }

  Scalar& at(int n, int c, int y, int x) {
    return data_[((static_cast<Eigen::Index>(n) * c_ + c) * h_ + y) * w_ + x];
  }
  Scalar at(int n, int c, int y, int x) const {
    return data_[((static_cast<Eigen::Index>(n) * c_ + c) * h_ + y) * w_ + x];
  }

  std::string shape_string() const {
    return "(" + std::to_string(n_) + "," + std::to_string(c_) + "," + std::to_string(h_) + "," +
           std::to_string(w_) + ")";
  }

 private:
  int n_ = 0, c_ = 0, h_ = 0, w_ = 0;
  Vec<Scalar> data_;
};

/// A trainable tensor and its accumulated gradient.
template <typename Scalar>
struct Parameter {
  Mat<Scalar> value;
  Mat<Scalar> grad;

  void resize(Eigen::Index rows, Eigen::Index cols) {
    value = Mat<Scalar>::Zero(rows, cols);
    grad = Mat<Scalar>::Zero(rows, cols);
  }
  void zero_grad() { grad.setZero(); }
};

}  // namespace woodid::nn
