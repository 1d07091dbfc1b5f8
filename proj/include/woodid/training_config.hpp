#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <vector>

#include "json.hpp"
#include "woodid/classifier.hpp"
#include "woodid/patches.hpp"
#include "woodid/schedule.hpp"

namespace woodid {

/// Everything `train` needs besides the registry and manifest.
struct TrainingConfig {
  ModelConfig model;
  TrainingSchedule schedule;
  PatchSpec patch_spec;
  AugmentationPolicy augmentation;
  SamplingMode eval_mode = SamplingMode::Center;
  /// Data order and dropout.
  std::uint64_t seed = 0;
  /// Subset of {"stage1", "stage2"}, run in this order.
  std::vector<std::string> stages{"stage1", "stage2"};
  /// Base directory for relative image references; empty means the
  /// registry directory.
  std::string image_root;

  /// Throws BadConfig.
  void validate() const;
  nlohmann::json to_json() const;
  static TrainingConfig from_json(const nlohmann::json& doc);
  /// Relative backbone_weights and image_root resolve against the file's directory.
  static TrainingConfig load(const std::filesystem::path& path);
  void save(const std::filesystem::path& path) const;
};

}  // namespace woodid
