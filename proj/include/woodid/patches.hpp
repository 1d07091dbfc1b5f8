#pragma once

#include <cstdint>
#include <string_view>
#include <vector>

#include "json.hpp"
#include "woodid/image.hpp"
#include "woodid/rng.hpp"

namespace woodid {

enum class SamplingMode { RandomOffset, Center, Tiled };

std::string_view to_string(SamplingMode mode);
SamplingMode parse_sampling_mode(std::string_view text);

/// Full-width band geometry. Source and target must share one aspect ratio.
struct PatchSpec {
  int source_width = 2048;
  int source_height = 768;
  int target_width = 512;
  int target_height = 192;
  SamplingMode sampling_mode = SamplingMode::RandomOffset;

  /// Throws BadDims when the geometry is degenerate or the aspect ratios differ.
  void validate() const;

  nlohmann::json to_json() const;
  static PatchSpec from_json(const nlohmann::json& doc);
};

struct CutoutSpec {
  int holes = 1;
  int hole_size = 48;  // square side, target-scale pixels
};

struct AugmentationPolicy {
  double hflip_prob = 0.5;
  double vflip_prob = 0.5;
  double rotation_min_deg = -5.0;
  double rotation_max_deg = 5.0;
  CutoutSpec cutout;
  std::uint64_t seed = 0;

  static AugmentationPolicy identity() {
    AugmentationPolicy p;
    p.hflip_prob = p.vflip_prob = 0.0;
    p.rotation_min_deg = p.rotation_max_deg = 0.0;
    p.cutout.holes = 0;
    return p;
  }

  nlohmann::json to_json() const;
  static AugmentationPolicy from_json(const nlohmann::json& doc);
};

/// Bands of `spec.source_width x spec.source_height` from `image`.
/// RandomOffset draws one band at a uniform vertical (and, for wider
/// images, horizontal) offset; Center takes the middle band; Tiled returns
/// floor(H / source_height) non-overlapping bands from the top, discarding
/// the remainder. Center and Tiled are horizontally centred.
/// Throws ImageTooSmall.
std::vector<Image> extract_patches(const Image& image, const PatchSpec& spec, Rng& rng);

/// Single-band convenience for RandomOffset / Center; Tiled yields the first band.
Image extract_patch(const Image& image, const PatchSpec& spec, Rng& rng);

/// Bilinear (triangle-filter) resampling with half-pixel centres, widened
/// when shrinking so the result is antialiased. Throws BadDims when the
/// aspect ratio would change or a dimension is non-positive.
Image resize_patch(const Image& patch, int target_width, int target_height);

Image flip_horizontal(const Image& patch);
Image flip_vertical(const Image& patch);
/// Bicubic rotation about the centre; out-of-frame samples are
/// mirror-reflected back into the patch so dims are preserved without
/// empty corners. Output stays within 0..255.
Image rotate(const Image& patch, double degrees);
/// Holes are placed fully inside the patch and filled with the patch's
/// per-channel mean.
Image cutout(const Image& patch, const CutoutSpec& spec, Rng& rng);

/// hflip, vflip, rotation, cutout in that order. Every draw is consumed
/// regardless of outcome so replay under a fixed seed is exact.
Image augment(const Image& patch, const AugmentationPolicy& policy, Rng& rng);

/// Random band -> resize -> augment.
Image training_patch(const Image& image, const PatchSpec& spec,
                     const AugmentationPolicy& policy, Rng& rng);

/// Deterministic evaluation bands (Center or Tiled), resized, no augmentation.
std::vector<Image> evaluation_patches(const Image& image, const PatchSpec& spec,
                                      SamplingMode mode);

}  // namespace woodid
