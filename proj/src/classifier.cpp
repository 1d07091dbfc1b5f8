#include "woodid/classifier.hpp"

namespace woodid {

using nlohmann::json;

void ModelConfig::validate() const {
  if (backbone != kBackboneId)
    throw Error(ErrorKind::BadConfig, "unsupported backbone '" + backbone + "'");
  if (hidden < 1 || n_classes < 2)
    throw Error(ErrorKind::BadConfig, "hidden >= 1 and n_classes >= 2 required");
  if (dropout1 < 0.0 || dropout1 >= 1.0 || dropout2 < 0.0 || dropout2 >= 1.0)
    throw Error(ErrorKind::BadConfig, "dropout probabilities must lie in [0, 1)");
  for (double s : normalization.std)
    if (!(s > 0.0)) throw Error(ErrorKind::BadConfig, "normalization std must be positive");
}

json ModelConfig::to_json() const {
  return {{"backbone", backbone},
          {"head",
           {{"pooling", "concat(avg,max)"},
            {"hidden", hidden},
            {"dropout1", dropout1},
            {"dropout2", dropout2},
            {"init", "he_normal"},
            {"seed", head_seed}}},
          {"n_classes", n_classes},
          {"backbone_weights", backbone_weights},
          {"normalization", {{"mean", normalization.mean}, {"std", normalization.std}}}};
}

ModelConfig ModelConfig::from_json(const json& doc) {
  ModelConfig c;
  try {
    c.backbone = doc.value("backbone", c.backbone);
    c.n_classes = doc.value("n_classes", c.n_classes);
    c.backbone_weights = doc.value("backbone_weights", c.backbone_weights);
    if (doc.contains("head")) {
      const auto& h = doc["head"];
      c.hidden = h.value("hidden", c.hidden);
      c.dropout1 = h.value("dropout1", c.dropout1);
      c.dropout2 = h.value("dropout2", c.dropout2);
      c.head_seed = h.value("seed", c.head_seed);
    }
    if (doc.contains("normalization")) {
      c.normalization.mean = doc["normalization"].at("mean").get<std::array<double, 3>>();
      c.normalization.std = doc["normalization"].at("std").get<std::array<double, 3>>();
    }
  } catch (const json::exception& e) {
    throw Error(ErrorKind::BadConfig, std::string("model config: ") + e.what());
  }
  c.validate();
  return c;
}

void write_random_backbone(const std::filesystem::path& path, std::uint64_t seed) {
  nn::ResNet34Backbone<float> backbone;
  Rng rng(seed);
  backbone.init_he(rng);
  TensorArchive archive;
  archive.meta = {{"kind", "backbone_weights"},
                  {"backbone", kBackboneId},
                  {"pretrained", false},
                  {"init", "he_normal_fan_out"},
                  {"seed", seed}};
  backbone.visit("", [&](const std::string& name, nn::Mat<float>& t, nn::Parameter<float>*) {
    archive.put(name, t);
  });
  archive.save(path);
}

}  // namespace woodid
