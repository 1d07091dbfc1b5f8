#include "woodid/patches.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <numbers>
#include <string>
#include <vector>

#include "woodid/error.hpp"

namespace woodid {

using nlohmann::json;

std::string_view to_string(SamplingMode mode) {
  switch (mode) {
    case SamplingMode::RandomOffset: return "random_offset";
    case SamplingMode::Center: return "center";
    case SamplingMode::Tiled: return "tiled";
  }
  return "center";
}

SamplingMode parse_sampling_mode(std::string_view text) {
  for (auto m : {SamplingMode::RandomOffset, SamplingMode::Center, SamplingMode::Tiled})
    if (to_string(m) == text) return m;
  throw Error(ErrorKind::BadConfig, "unknown sampling mode '" + std::string(text) + "'");
}

void PatchSpec::validate() const {
  if (source_width <= 0 || source_height <= 0 || target_width <= 0 || target_height <= 0)
    throw Error(ErrorKind::BadDims, "patch dims must be positive");
  if (static_cast<long long>(source_width) * target_height !=
      static_cast<long long>(source_height) * target_width)
    throw Error(ErrorKind::BadDims, "source and target aspect ratios differ");
}

json PatchSpec::to_json() const {
  return {{"source_dims", {source_width, source_height}},
          {"target_dims", {target_width, target_height}},
          {"sampling_mode", to_string(sampling_mode)}};
}

PatchSpec PatchSpec::from_json(const json& doc) {
  PatchSpec s;
  if (doc.contains("source_dims")) {
    s.source_width = doc["source_dims"].at(0).get<int>();
    s.source_height = doc["source_dims"].at(1).get<int>();
  }
  if (doc.contains("target_dims")) {
    s.target_width = doc["target_dims"].at(0).get<int>();
    s.target_height = doc["target_dims"].at(1).get<int>();
  }
  if (doc.contains("sampling_mode"))
    s.sampling_mode = parse_sampling_mode(doc["sampling_mode"].get<std::string>());
  s.validate();
  return s;
}

json AugmentationPolicy::to_json() const {
  return {{"hflip_prob", hflip_prob},
          {"vflip_prob", vflip_prob},
          {"rotation_range_deg", {rotation_min_deg, rotation_max_deg}},
          {"cutout", {{"holes", cutout.holes}, {"hole_size", cutout.hole_size}, {"fill", "mean"}}},
          {"seed", seed}};
}

AugmentationPolicy AugmentationPolicy::from_json(const json& doc) {
  AugmentationPolicy p;
  p.hflip_prob = doc.value("hflip_prob", p.hflip_prob);
  p.vflip_prob = doc.value("vflip_prob", p.vflip_prob);
  if (doc.contains("rotation_range_deg")) {
    p.rotation_min_deg = doc["rotation_range_deg"].at(0).get<double>();
    p.rotation_max_deg = doc["rotation_range_deg"].at(1).get<double>();
  }
  if (doc.contains("cutout")) {
    p.cutout.holes = doc["cutout"].value("holes", p.cutout.holes);
    p.cutout.hole_size = doc["cutout"].value("hole_size", p.cutout.hole_size);
  }
  p.seed = doc.value("seed", p.seed);
  auto prob_ok = [](double v) { return v >= 0.0 && v <= 1.0; };
  if (!prob_ok(p.hflip_prob) || !prob_ok(p.vflip_prob) ||
      p.rotation_min_deg > p.rotation_max_deg || p.cutout.holes < 0 || p.cutout.hole_size < 0)
    throw Error(ErrorKind::BadConfig, "invalid augmentation policy");
  return p;
}

namespace {

void require_fits(const Image& image, const PatchSpec& spec) {
  if (image.width() < spec.source_width || image.height() < spec.source_height)
    throw Error(ErrorKind::ImageTooSmall,
                std::to_string(image.width()) + "x" + std::to_string(image.height()) +
                    " image cannot hold a " + std::to_string(spec.source_width) + "x" +
                    std::to_string(spec.source_height) + " patch");
}

// Mirror a continuous coordinate into [0, n - 1] (edge sample not repeated).
double reflect(double t, int n) {
  if (n == 1) return 0.0;
  const double period = 2.0 * (n - 1);
  t = std::fmod(std::abs(t), period);
  return t > n - 1 ? period - t : t;
}

// Keys cubic convolution kernel, a = -0.5.
double cubic_weight(double t) {
  t = std::abs(t);
  if (t < 1.0) return (1.5 * t - 2.5) * t * t + 1.0;
  if (t < 2.0) return ((-0.5 * t + 2.5) * t - 4.0) * t + 2.0;
  return 0.0;
}

int mirror_index(int i, int n) {
  if (n == 1) return 0;
  const int period = 2 * (n - 1);
  i = std::abs(i) % period;
  return i > n - 1 ? period - i : i;
}

// Bicubic keeps texture detail that bilinear interpolation would smooth
// away, so rotated training patches stay close to unrotated ones in
// sharpness. Neighbours beyond the edge are mirrored like the coordinates.
float bicubic(const Plane& p, double x, double y) {
  const int w = static_cast<int>(p.cols()), h = static_cast<int>(p.rows());
  const int x0 = static_cast<int>(std::floor(x)), y0 = static_cast<int>(std::floor(y));
  std::array<double, 4> wx, wy;
  std::array<int, 4> ix, iy;
  for (int k = 0; k < 4; ++k) {
    wx[k] = cubic_weight(x - (x0 - 1 + k));
    wy[k] = cubic_weight(y - (y0 - 1 + k));
    ix[k] = mirror_index(x0 - 1 + k, w);
    iy[k] = mirror_index(y0 - 1 + k, h);
  }
  double acc = 0.0;
  for (int j = 0; j < 4; ++j) {
    double row = 0.0;
    for (int i = 0; i < 4; ++i) row += wx[i] * p(iy[j], ix[i]);
    acc += wy[j] * row;
  }
  return static_cast<float>(std::clamp(acc, 0.0, 255.0));
}

struct Taps {
  int first = 0;
  std::vector<double> weights;
};

// Triangle-filter taps for resampling n -> m samples along one axis. When
// shrinking, the filter widens with the scale factor so every source pixel
// contributes (antialiased bilinear, as PIL does); when enlarging it is
// ordinary two-tap bilinear interpolation.
std::vector<Taps> filter_taps(int n, int m) {
  const double scale = static_cast<double>(n) / m;
  const double support = std::max(scale, 1.0);
  std::vector<Taps> out(static_cast<std::size_t>(m));
  for (int i = 0; i < m; ++i) {
    const double centre = (i + 0.5) * scale;
    const int lo = std::max(0, static_cast<int>(std::floor(centre - support)));
    const int hi = std::min(n, static_cast<int>(std::ceil(centre + support)));
    Taps& t = out[static_cast<std::size_t>(i)];
    t.first = lo;
    double total = 0.0;
    for (int j = lo; j < hi; ++j) {
      const double wgt = std::max(0.0, 1.0 - std::abs((j + 0.5 - centre) / support));
      t.weights.push_back(wgt);
      total += wgt;
    }
    for (auto& wgt : t.weights) wgt /= total;
  }
  return out;
}

}  // namespace

std::vector<Image> extract_patches(const Image& image, const PatchSpec& spec, Rng& rng) {
  spec.validate();
  require_fits(image, spec);
  const int slack_x = image.width() - spec.source_width;
  const int slack_y = image.height() - spec.source_height;
  std::vector<Image> out;
  switch (spec.sampling_mode) {
    case SamplingMode::RandomOffset: {
      const int y = static_cast<int>(rng.uniform_int(0, slack_y));
      const int x = static_cast<int>(rng.uniform_int(0, slack_x));
      out.push_back(image.crop(x, y, spec.source_width, spec.source_height));
      break;
    }
    case SamplingMode::Center:
      out.push_back(image.crop(slack_x / 2, slack_y / 2, spec.source_width, spec.source_height));
      break;
    case SamplingMode::Tiled: {
      const int bands = image.height() / spec.source_height;
      for (int b = 0; b < bands; ++b)
        out.push_back(image.crop(slack_x / 2, b * spec.source_height, spec.source_width,
                                 spec.source_height));
      break;
    }
  }
  return out;
}

Image extract_patch(const Image& image, const PatchSpec& spec, Rng& rng) {
  return extract_patches(image, spec, rng).front();
}

Image resize_patch(const Image& patch, int target_width, int target_height) {
  const int w = patch.width(), h = patch.height();
  if (w <= 0 || h <= 0 || target_width <= 0 || target_height <= 0)
    throw Error(ErrorKind::BadDims, "non-positive dimension");
  if (static_cast<long long>(w) * target_height != static_cast<long long>(h) * target_width)
    throw Error(ErrorKind::BadDims, std::to_string(w) + "x" + std::to_string(h) +
                                        " cannot resize to " + std::to_string(target_width) +
                                        "x" + std::to_string(target_height));
  if (w == target_width && h == target_height) return patch;

  const auto cols = filter_taps(w, target_width);
  const auto rows = filter_taps(h, target_height);
  Image out(target_width, target_height);
  std::vector<double> tmp(static_cast<std::size_t>(h) * target_width);
  for (int c = 0; c < 3; ++c) {
    const Plane& in = patch.channels[c];
    for (int y = 0; y < h; ++y) {
      const float* src = &in(y, 0);
      double* row = &tmp[static_cast<std::size_t>(y) * target_width];
      for (int x = 0; x < target_width; ++x) {
        const Taps& t = cols[static_cast<std::size_t>(x)];
        double acc = 0.0;
        for (std::size_t k = 0; k < t.weights.size(); ++k) acc += t.weights[k] * src[t.first + static_cast<int>(k)];
        row[x] = acc;
      }
    }
    Plane& dst = out.channels[c];
    std::vector<double> acc(static_cast<std::size_t>(target_width));
    for (int y = 0; y < target_height; ++y) {
      const Taps& t = rows[static_cast<std::size_t>(y)];
      std::fill(acc.begin(), acc.end(), 0.0);
      for (std::size_t k = 0; k < t.weights.size(); ++k) {
        const double* row = &tmp[static_cast<std::size_t>(t.first + static_cast<int>(k)) * target_width];
        for (int x = 0; x < target_width; ++x) acc[x] += t.weights[k] * row[x];
      }
      for (int x = 0; x < target_width; ++x) dst(y, x) = static_cast<float>(acc[x]);
    }
  }
  return out;
}

Image flip_horizontal(const Image& patch) {
  Image out;
  for (int c = 0; c < 3; ++c) out.channels[c] = patch.channels[c].rowwise().reverse();
  return out;
}

Image flip_vertical(const Image& patch) {
  Image out;
  for (int c = 0; c < 3; ++c) out.channels[c] = patch.channels[c].colwise().reverse();
  return out;
}

Image rotate(const Image& patch, double degrees) {
  if (degrees == 0.0) return patch;
  const int w = patch.width(), h = patch.height();
  const double theta = degrees * std::numbers::pi / 180.0;
  const double cs = std::cos(theta), sn = std::sin(theta);
  const double cx = (w - 1) / 2.0, cy = (h - 1) / 2.0;
  Image out(w, h);
  for (int y = 0; y < h; ++y) {
    for (int x = 0; x < w; ++x) {
      const double dx = x - cx, dy = y - cy;
      const double xs = reflect(cs * dx + sn * dy + cx, w);
      const double ys = reflect(-sn * dx + cs * dy + cy, h);
      for (int c = 0; c < 3; ++c) out.channels[c](y, x) = bicubic(patch.channels[c], xs, ys);
    }
  }
  return out;
}

Image cutout(const Image& patch, const CutoutSpec& spec, Rng& rng) {
  if (spec.holes <= 0 || spec.hole_size <= 0) return patch;
  Image out = patch;
  const int w = patch.width(), h = patch.height();
  const int hw = std::min(spec.hole_size, w), hh = std::min(spec.hole_size, h);
  std::array<float, 3> mean{};
  for (int c = 0; c < 3; ++c)
    mean[c] = static_cast<float>(patch.channels[c].cast<double>().mean());
  for (int k = 0; k < spec.holes; ++k) {
    const int x = static_cast<int>(rng.uniform_int(0, w - hw));
    const int y = static_cast<int>(rng.uniform_int(0, h - hh));
    for (int c = 0; c < 3; ++c) out.channels[c].block(y, x, hh, hw).setConstant(mean[c]);
  }
  return out;
}

Image augment(const Image& patch, const AugmentationPolicy& policy, Rng& rng) {
  const bool hflip = rng.bernoulli(policy.hflip_prob);
  const bool vflip = rng.bernoulli(policy.vflip_prob);
  const double angle = rng.uniform(policy.rotation_min_deg, policy.rotation_max_deg);
  Image out = hflip ? flip_horizontal(patch) : patch;
  if (vflip) out = flip_vertical(out);
  out = rotate(out, angle);
  return cutout(out, policy.cutout, rng);
}

Image training_patch(const Image& image, const PatchSpec& spec,
                     const AugmentationPolicy& policy, Rng& rng) {
  PatchSpec random = spec;
  random.sampling_mode = SamplingMode::RandomOffset;
  Image band = extract_patch(image, random, rng);
  return augment(resize_patch(band, spec.target_width, spec.target_height), policy, rng);
}

std::vector<Image> evaluation_patches(const Image& image, const PatchSpec& spec,
                                      SamplingMode mode) {
  PatchSpec s = spec;
  s.sampling_mode = mode;
  Rng unused(0);
  auto bands = extract_patches(image, s, unused);
  for (auto& b : bands) b = resize_patch(b, spec.target_width, spec.target_height);
  return bands;
}

}  // namespace woodid
