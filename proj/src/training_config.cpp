#include "woodid/training_config.hpp"

#include <fstream>

#include "woodid/digest.hpp"

namespace woodid {

using nlohmann::json;

void TrainingConfig::validate() const {
  model.validate();
  schedule.validate();
  try {
    patch_spec.validate();
  } catch (const Error& e) {
    throw Error(ErrorKind::BadConfig, e.what());
  }
  if (eval_mode == SamplingMode::RandomOffset)
    throw Error(ErrorKind::BadConfig, "eval_mode must be center or tiled");
  if (stages.empty()) throw Error(ErrorKind::BadConfig, "no stages configured");
  for (const auto& s : stages)
    if (s != "stage1" && s != "stage2") throw Error(ErrorKind::BadConfig, "unknown stage '" + s + "'");
  if (augmentation.hflip_prob < 0 || augmentation.hflip_prob > 1 || augmentation.vflip_prob < 0 ||
      augmentation.vflip_prob > 1 || augmentation.rotation_min_deg > augmentation.rotation_max_deg ||
      augmentation.cutout.holes < 0 || augmentation.cutout.hole_size < 0)
    throw Error(ErrorKind::BadConfig, "augmentation policy out of range");
}

json TrainingConfig::to_json() const {
  return {{"model", model.to_json()},
          {"schedule", schedule.to_json()},
          {"patches", patch_spec.to_json()},
          {"augmentation", augmentation.to_json()},
          {"eval_mode", to_string(eval_mode)},
          {"seed", seed},
          {"stages", stages},
          {"image_root", image_root}};
}

TrainingConfig TrainingConfig::from_json(const json& doc) {
  TrainingConfig c;
  try {
    if (doc.contains("model")) c.model = ModelConfig::from_json(doc["model"]);
    if (doc.contains("schedule")) c.schedule = TrainingSchedule::from_json(doc["schedule"]);
    if (doc.contains("patches")) c.patch_spec = PatchSpec::from_json(doc["patches"]);
    if (doc.contains("augmentation")) c.augmentation = AugmentationPolicy::from_json(doc["augmentation"]);
    if (doc.contains("eval_mode")) c.eval_mode = parse_sampling_mode(doc["eval_mode"].get<std::string>());
    c.seed = doc.value("seed", c.seed);
    c.stages = doc.value("stages", c.stages);
    c.image_root = doc.value("image_root", c.image_root);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::BadConfig, std::string("training config: ") + e.what());
  } catch (const Error& e) {
    if (e.kind() == ErrorKind::BadConfig) throw;
    throw Error(ErrorKind::BadConfig, e.what());
  }
  c.validate();
  return c;
}

TrainingConfig TrainingConfig::load(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw Error(ErrorKind::IoError, "cannot read " + path.string());
  json doc;
  try {
    doc = json::parse(in);
  } catch (const json::exception& e) {
    throw Error(ErrorKind::BadConfig, path.string() + ": " + e.what());
  }
  TrainingConfig c = from_json(doc);
  const auto base = path.parent_path();
  auto resolve = [&](std::string& p) {
    if (!p.empty() && std::filesystem::path(p).is_relative()) p = (base / p).lexically_normal().string();
  };
  resolve(c.model.backbone_weights);
  resolve(c.image_root);
  return c;
}

void TrainingConfig::save(const std::filesystem::path& path) const {
  const std::string text = to_json().dump(2) + "\n";
  write_file_atomic(path, std::vector<std::uint8_t>(text.begin(), text.end()));
}

}  // namespace woodid
