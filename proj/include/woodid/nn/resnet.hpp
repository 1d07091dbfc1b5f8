#pragma once

#include <array>
#include <optional>
#include <string>
#include <vector>

#include "woodid/nn/layers.hpp"

namespace woodid::nn {

/// Two 3x3 convolutions with an identity (or 1x1 projection) shortcut.
template <typename Scalar>
class BasicBlock {
 public:
  BasicBlock(int in_channels, int out_channels, int stride)
      : conv1_(in_channels, out_channels, 3, stride, 1),
        bn1_(out_channels),
        conv2_(out_channels, out_channels, 3, 1, 1),
        bn2_(out_channels) {
    if (stride != 1 || in_channels != out_channels) {
      down_conv_.emplace(in_channels, out_channels, 1, stride, 0);
      down_bn_.emplace(out_channels);
    }
  }

  void init_he(Rng& rng) {
    conv1_.init_he(rng);
    conv2_.init_he(rng);
    if (down_conv_) down_conv_->init_he(rng);
  }

  Tensor<Scalar> infer(const Tensor<Scalar>& x) const {
    Tensor<Scalar> out = bn2_.infer(conv2_.infer(relu(bn1_.infer(conv1_.infer(x)))));
    if (down_conv_)
      out.data() += down_bn_->infer(down_conv_->infer(x)).data();
    else
      out.data() += x.data();
    return relu(std::move(out));
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool batch_stats) {
    Tensor<Scalar> out =
        bn2_.forward(conv2_.forward(relu(bn1_.forward(conv1_.forward(x), batch_stats))), batch_stats);
    if (down_conv_)
      out.data() += down_bn_->forward(down_conv_->forward(x), batch_stats).data();
    else
      out.data() += x.data();
    output_ = relu(std::move(out));
    return output_;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> d = relu_backward(dy, output_);
    output_ = Tensor<Scalar>();
    Tensor<Scalar> dx;
    if (down_conv_) {
      dx = down_conv_->backward(down_bn_->backward(d));
      down_conv_->clear();
    } else {
      dx = d;
    }
    // conv2's cached input is the inner ReLU output, so it carries the mask.
    Tensor<Scalar> dh = relu_backward(conv2_.backward(bn2_.backward(d)), conv2_.input());
    conv2_.clear();
    dx.data() += conv1_.backward(bn1_.backward(dh)).data();
    conv1_.clear();
    return dx;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    conv1_.visit(prefix + "conv1.", fn);
    bn1_.visit(prefix + "bn1.", fn);
    conv2_.visit(prefix + "conv2.", fn);
    bn2_.visit(prefix + "bn2.", fn);
    if (down_conv_) {
      down_conv_->visit(prefix + "downsample.0.", fn);
      down_bn_->visit(prefix + "downsample.1.", fn);
    }
  }

 private:
  Conv2d<Scalar> conv1_;
  BatchNorm2d<Scalar> bn1_;
  Conv2d<Scalar> conv2_;
  BatchNorm2d<Scalar> bn2_;
  std::optional<Conv2d<Scalar>> down_conv_;
  std::optional<BatchNorm2d<Scalar>> down_bn_;
  Tensor<Scalar> output_;
};

/// ResNet34 feature extractor: every layer up to and including the last
/// residual stage (no classifier). Tensor names follow the torchvision
/// state-dict layout so converted ImageNet weights load directly.
template <typename Scalar>
class ResNet34Backbone {
 public:
  static constexpr std::array<int, 4> kBlocks{3, 4, 6, 3};
  static constexpr std::array<int, 4> kWidths{64, 128, 256, 512};
  static constexpr int kOutputChannels = 512;

  ResNet34Backbone() : stem_conv_(3, 64, 7, 2, 3), stem_bn_(64), pool_(3, 2, 1) {
    int in = 64;
    for (int stage = 0; stage < 4; ++stage) {
      for (int b = 0; b < kBlocks[stage]; ++b) {
        const int stride = (b == 0 && stage > 0) ? 2 : 1;
        blocks_.emplace_back(in, kWidths[stage], stride);
        in = kWidths[stage];
      }
    }
  }

  int output_channels() const { return kOutputChannels; }

  void init_he(Rng& rng) {
    stem_conv_.init_he(rng);
    for (auto& b : blocks_) b.init_he(rng);
  }

  Tensor<Scalar> infer(const Tensor<Scalar>& x) const {
    Tensor<Scalar> h = pool_.infer(relu(stem_bn_.infer(stem_conv_.infer(x))));
    for (const auto& b : blocks_) h = b.infer(h);
    return h;
  }

  Tensor<Scalar> forward(const Tensor<Scalar>& x, bool batch_stats) {
    stem_out_ = relu(stem_bn_.forward(stem_conv_.forward(x), batch_stats));
    Tensor<Scalar> h = pool_.forward(stem_out_);
    for (auto& b : blocks_) h = b.forward(h, batch_stats);
    return h;
  }

  Tensor<Scalar> backward(const Tensor<Scalar>& dy) {
    Tensor<Scalar> d = dy;
    for (auto it = blocks_.rbegin(); it != blocks_.rend(); ++it) d = it->backward(d);
    d = relu_backward(pool_.backward(d), stem_out_);
    stem_out_ = Tensor<Scalar>();
    Tensor<Scalar> dx = stem_conv_.backward(stem_bn_.backward(d));
    stem_conv_.clear();
    return dx;
  }

  template <typename Fn>
  void visit(const std::string& prefix, Fn&& fn) {
    stem_conv_.visit(prefix + "conv1.", fn);
    stem_bn_.visit(prefix + "bn1.", fn);
    std::size_t i = 0;
    for (int stage = 0; stage < 4; ++stage)
      for (int b = 0; b < kBlocks[stage]; ++b)
        blocks_[i++].visit(prefix + "layer" + std::to_string(stage + 1) + "." + std::to_string(b) + ".", fn);
  }

 private:
  Conv2d<Scalar> stem_conv_;
  BatchNorm2d<Scalar> stem_bn_;
  MaxPool2d<Scalar> pool_;
  std::vector<BasicBlock<Scalar>> blocks_;
  Tensor<Scalar> stem_out_;
};

}  // namespace woodid::nn
