#pragma once

#include <cstdint>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include "woodid/classifier.hpp"
#include "woodid/registry.hpp"

namespace woodid {

inline constexpr int kBundleFormatVersion = 1;

struct Archetype {
  std::string media_type;  // "image/png", "image/jpeg", ...
  std::vector<std::uint8_t> bytes;
};

/// Everything field inference needs, loaded from one file.
struct DeploymentBundle {
  int format_version = kBundleFormatVersion;
  ModelConfig config;
  ClassCatalog catalog;
  std::string manifest_digest;
  PatchSpec patch_spec;
  SamplingMode eval_mode = SamplingMode::Center;
  /// Embedded archetype images keyed by class label; classes whose
  /// archetype file was unavailable at export keep only the reference.
  std::map<std::string, Archetype> archetypes;
  /// SHA-256 of the bundle file.
  std::string digest;
  std::unique_ptr<Classifier<float>> model;

  /// "<format version>-<first 12 digest hex digits>".
  std::string version() const;
  nn::Vec<float> predict(const Image& image) const;
};

struct BundleOptions {
  PatchSpec patch_spec;
  SamplingMode eval_mode = SamplingMode::Center;
  /// Resolves relative archetype references; empty skips embedding.
  std::filesystem::path archetype_root;
};

/// Throws ClassListMismatch when the catalog size differs from the head.
void save_bundle(Classifier<float>& model, const ClassCatalog& catalog, const std::string& manifest_digest,
                 const std::filesystem::path& path, const BundleOptions& options = {});

/// Throws CorruptBundle on damage and VersionMismatch on an unknown format
/// version or a catalog whose size differs from the head output size.
DeploymentBundle load_bundle(const std::filesystem::path& path);
DeploymentBundle parse_bundle(std::span<const std::uint8_t> bytes);

/// Runs a neutral grey image through the model; throws CorruptBundle when
/// the output is not a finite probability vector.
void self_check(const DeploymentBundle& bundle);

}  // namespace woodid
