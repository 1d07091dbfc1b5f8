#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <memory>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "woodid/archive.hpp"
#include "woodid/error.hpp"
#include "woodid/image.hpp"
#include "woodid/nn/head.hpp"
#include "woodid/nn/resnet.hpp"
#include "woodid/patches.hpp"

namespace woodid {

inline constexpr std::string_view kBackboneId = "resnet34-imagenet";

/// Per-channel input standardisation on the 0..1 scale. Defaults are the
/// ImageNet statistics the pretrained backbone expects.
struct Normalization {
  std::array<double, 3> mean{0.485, 0.456, 0.406};
  std::array<double, 3> std{0.229, 0.224, 0.225};
};

struct ModelConfig {
  std::string backbone{kBackboneId};
  int hidden = 512;
  int n_classes = 15;
  double dropout1 = 0.25;
  double dropout2 = 0.5;
  std::uint64_t head_seed = 0;
  /// Tensor archive holding the backbone state (torchvision names).
  std::string backbone_weights;
  Normalization normalization;

  /// Throws BadConfig.
  void validate() const;
  nlohmann::json to_json() const;
  static ModelConfig from_json(const nlohmann::json& doc);
};

template <typename Scalar>
using NamedTensors = std::vector<std::pair<std::string, nn::Mat<Scalar>>>;

/// Immutable copy of model state. Snapshots taken while the backbone is
/// frozen can share one backbone copy.
template <typename Scalar>
struct ModelWeights {
  std::shared_ptr<const NamedTensors<Scalar>> backbone;
  std::shared_ptr<const NamedTensors<Scalar>> head;
};

/// ResNet34 feature extractor plus the pooled two-block classification
/// head. Inference through `infer_*` is const and safe for concurrent callers.
template <typename Scalar>
class Classifier {
 public:
  using Tensor = nn::Tensor<Scalar>;
  using Mat = nn::Mat<Scalar>;
  using Vec = nn::Vec<Scalar>;

  /// Architecture with a He-initialised head (seeded by config.head_seed);
  /// backbone state is left at construction defaults until loaded.
  explicit Classifier(ModelConfig config)
      : config_(std::move(config)),
        head_(backbone_.output_channels(), config_.hidden, config_.n_classes, config_.dropout1,
              config_.dropout2) {
    config_.validate();
    Rng rng(config_.head_seed);
    head_.init_he(rng);
  }

  const ModelConfig& config() const { return config_; }
  nn::ResNet34Backbone<Scalar>& backbone() { return backbone_; }
  const nn::ResNet34Backbone<Scalar>& backbone() const { return backbone_; }
  nn::ClassifierHead<Scalar>& head() { return head_; }
  const nn::ClassifierHead<Scalar>& head() const { return head_; }
  int n_classes() const { return head_.n_classes(); }
  int pooled_features() const { return head_.pooled_features(); }

  /// Normalised NCHW batch from resized patches of identical dims.
  Tensor to_input(std::span<const Image> patches) const {
    if (patches.empty()) throw Error(ErrorKind::EmptyInput, "no patches");
    const int h = patches[0].height(), w = patches[0].width();
    Tensor x(static_cast<int>(patches.size()), 3, h, w);
    for (std::size_t i = 0; i < patches.size(); ++i) {
      if (patches[i].height() != h || patches[i].width() != w)
        throw Error(ErrorKind::BadDims, "patch batch with mixed dims");
      auto s = x.sample(static_cast<int>(i));
      for (int c = 0; c < 3; ++c) {
        const double scale = 1.0 / (255.0 * config_.normalization.std[c]);
        const double shift = -config_.normalization.mean[c] / config_.normalization.std[c];
        Eigen::Map<const Eigen::RowVectorXf> plane(patches[i].channels[c].data(), h * w);
        s.row(c) = (plane.template cast<double>().array() * scale + shift).template cast<Scalar>().matrix();
      }
    }
    return x;
  }

  Tensor infer_features(const Tensor& x) const { return backbone_.infer(x); }
  Mat infer_logits(const Tensor& x) const { return head_.infer(backbone_.infer(x)); }
  Mat infer_proba(const Tensor& x) const { return nn::softmax<Scalar>(infer_logits(x)); }

  std::vector<nn::Parameter<Scalar>*> head_parameters() {
    std::vector<nn::Parameter<Scalar>*> out;
    head_.visit("", [&](const std::string&, Mat&, nn::Parameter<Scalar>* p) {
      if (p) out.push_back(p);
    });
    return out;
  }

  std::vector<nn::Parameter<Scalar>*> backbone_parameters() {
    std::vector<nn::Parameter<Scalar>*> out;
    backbone_.visit("", [&](const std::string&, Mat&, nn::Parameter<Scalar>* p) {
      if (p) out.push_back(p);
    });
    return out;
  }

  /// Visit every tensor (parameters and buffers) as ("backbone."|"head.") + name.
  template <typename Fn>
  void visit(Fn&& fn) {
    backbone_.visit("backbone.", fn);
    head_.visit("head.", fn);
  }

  ModelWeights<Scalar> capture(const ModelWeights<Scalar>* share_backbone_from = nullptr) {
    ModelWeights<Scalar> w;
    if (share_backbone_from && share_backbone_from->backbone) {
      w.backbone = share_backbone_from->backbone;
    } else {
      auto b = std::make_shared<NamedTensors<Scalar>>();
      backbone_.visit("", [&](const std::string& n, Mat& t, nn::Parameter<Scalar>*) { b->emplace_back(n, t); });
      w.backbone = std::move(b);
    }
    auto h = std::make_shared<NamedTensors<Scalar>>();
    head_.visit("", [&](const std::string& n, Mat& t, nn::Parameter<Scalar>*) { h->emplace_back(n, t); });
    w.head = std::move(h);
    return w;
  }

  void restore(const ModelWeights<Scalar>& w) {
    std::size_t i = 0;
    backbone_.visit("", [&](const std::string&, Mat& t, nn::Parameter<Scalar>*) { t = (*w.backbone)[i++].second; });
    i = 0;
    head_.visit("", [&](const std::string&, Mat& t, nn::Parameter<Scalar>*) { t = (*w.head)[i++].second; });
  }

  /// Backbone state from an archive using torchvision tensor names (an
  /// optional "backbone." prefix is accepted). Throws ShapeMismatch.
  void load_backbone(const TensorArchive& archive) {
    backbone_.visit("", [&](const std::string& name, Mat& t, nn::Parameter<Scalar>*) {
      const std::string key = archive.has_tensor(name) ? name : "backbone." + name;
      t = archive.template get<Scalar>(key, t.rows(), t.cols());
    });
  }

  /// Throws ShapeMismatch when a tensor is missing or mis-shaped.
  void load_state(const TensorArchive& archive) {
    visit([&](const std::string& name, Mat& t, nn::Parameter<Scalar>*) {
      t = archive.template get<Scalar>(name, t.rows(), t.cols());
    });
  }

  void store_state(TensorArchive& archive) {
    visit([&](const std::string& name, Mat& t, nn::Parameter<Scalar>*) { archive.put(name, t); });
  }

 private:
  ModelConfig config_;
  nn::ResNet34Backbone<Scalar> backbone_;
  nn::ClassifierHead<Scalar> head_;
};

/// Builds the classifier and loads the backbone from
/// `config.backbone_weights`. Throws MissingWeights when that file is not
/// available and ShapeMismatch when its tensors do not fit ResNet34.
template <typename Scalar>
std::unique_ptr<Classifier<Scalar>> build_model(const ModelConfig& config) {
  if (config.backbone_weights.empty() || !std::filesystem::exists(config.backbone_weights))
    throw Error(ErrorKind::MissingWeights,
                "backbone weights not found: '" + config.backbone_weights + "'");
  auto model = std::make_unique<Classifier<Scalar>>(config);
  TensorArchive archive;
  try {
    archive = TensorArchive::load(config.backbone_weights);
  } catch (const Error& e) {
    throw Error(ErrorKind::MissingWeights, e.what());
  }
  model->load_backbone(archive);
  return model;
}

/// He-initialised ResNet34 backbone written as a weights archive. This is a
/// non-pretrained stand-in for offline environments; it has the same tensor
/// names and shapes as converted ImageNet weights.
void write_random_backbone(const std::filesystem::path& path, std::uint64_t seed);

/// Class-probability vector for one image. Center: a single middle band.
/// Tiled: mean of the per-band softmax vectors, renormalised.
/// Deterministic; throws ImageTooSmall.
template <typename Scalar>
nn::Vec<Scalar> predict(const Classifier<Scalar>& model, const Image& image, const PatchSpec& spec,
                        SamplingMode eval_mode) {
  if (eval_mode == SamplingMode::RandomOffset)
    throw Error(ErrorKind::BadConfig, "predict requires center or tiled mode");
  const std::vector<Image> patches = evaluation_patches(image, spec, eval_mode);
  const nn::Mat<Scalar> proba = model.infer_proba(model.to_input(patches));
  nn::Vec<Scalar> mean = proba.colwise().mean().transpose();
  return mean / mean.sum();
}

}  // namespace woodid
