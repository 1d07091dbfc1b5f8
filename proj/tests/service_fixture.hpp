#pragma once

#include <memory>
#include <string>
#include <vector>

#include "fixtures.hpp"
#include "support.hpp"
#include "woodid/bundle.hpp"
#include "woodid/image.hpp"
#include "woodid/service.hpp"

namespace woodid::testing {

inline PatchSpec quarter_spec() {
  PatchSpec s;
  s.source_width = 512;
  s.source_height = 192;
  s.target_width = 256;
  s.target_height = 96;
  return s;
}

/// 15-genus catalog; the first three classes carry archetype files.
inline ClassCatalog genus_catalog() {
  std::vector<TaxonClass> classes;
  for (const auto& g : genera()) {
    const bool with_archetype = classes.size() < 3;
    classes.push_back({g, {g.substr(0, 1) + ". sp-" + g}, with_archetype ? "arch/" + g + ".png" : ""});
  }
  return ClassCatalog(std::move(classes));
}

/// Writes a 15-class bundle with a random backbone under `dir`.
inline std::filesystem::path write_test_bundle(const TempDir& dir) {
  std::filesystem::create_directories(dir / "arch");
  const ClassCatalog catalog = genus_catalog();
  for (std::size_t i = 0; i < 3; ++i)
    write_png(dir / catalog.at(i).archetype_image, noise_image(48, 18, 100 + i));
  auto model = build_model<float>(test_model_config(15, 8));
  BundleOptions opt;
  opt.patch_spec = quarter_spec();
  opt.archetype_root = dir.path();
  const auto path = dir / "service.bundle";
  save_bundle(*model, catalog, "sha256:0000", path, opt);
  return path;
}

inline std::vector<std::uint8_t> png_bytes(int w, int h, std::uint64_t seed) {
  return encode_png(noise_image(w, h, seed));
}

/// Deterministic clock: 2026-07-01T00:00:00.000Z plus one second per call.
inline Clock counting_clock() {
  auto n = std::make_shared<int>(0);
  return [n] {
    char buf[32];
    const int s = (*n)++;
    std::snprintf(buf, sizeof buf, "2026-07-01T%02d:%02d:%02d.000Z", s / 3600 % 24, s / 60 % 60, s % 60);
    return std::string(buf);
  };
}

}  // namespace woodid::testing
