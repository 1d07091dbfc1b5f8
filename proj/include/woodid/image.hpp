#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <vector>

#include <Eigen/Dense>

namespace woodid {

using Plane = Eigen::Array<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

/// Three-channel planar image with intensities on the 0..255 scale.
/// Rows index height, columns index width.
struct Image {
  std::array<Plane, 3> channels;

  Image() = default;
  Image(int width, int height) {
    for (auto& c : channels) c = Plane::Zero(height, width);
  }

  static Image filled(int width, int height, std::array<float, 3> value) {
    Image img(width, height);
    for (int c = 0; c < 3; ++c) img.channels[c].setConstant(value[c]);
    return img;
  }

  int width() const { return static_cast<int>(channels[0].cols()); }
  int height() const { return static_cast<int>(channels[0].rows()); }

  /// Copy of the rectangle with top-left (x, y).
  Image crop(int x, int y, int w, int h) const {
    Image out;
    for (int c = 0; c < 3; ++c) out.channels[c] = channels[c].block(y, x, h, w);
    return out;
  }

  bool operator==(const Image& other) const {
    if (width() != other.width() || height() != other.height()) return false;
    for (int c = 0; c < 3; ++c)
      if ((channels[c] != other.channels[c]).any()) return false;
    return true;
  }
};

/// Sniffs PNG, JPEG, or binary PPM/PGM. Grayscale is replicated to three
/// channels; alpha is dropped. Throws Error(UndecodableImage).
Image decode_image(std::span<const std::uint8_t> bytes);
Image read_image(const std::filesystem::path& path);

/// Header-only dimension probe; throws Error(UndecodableImage).
std::array<int, 2> probe_image_dims(std::span<const std::uint8_t> bytes);

/// 8-bit RGB PNG; values are rounded and clamped to 0..255.
std::vector<std::uint8_t> encode_png(const Image& image);
void write_png(const std::filesystem::path& path, const Image& image);

}  // namespace woodid
