#include "woodid/synth.hpp"

#include <cmath>
#include <fstream>
#include <numbers>

#include "json.hpp"
#include "woodid/error.hpp"
#include "woodid/registry.hpp"
#include "woodid/rng.hpp"

namespace woodid {

namespace {

constexpr double kTau = 2.0 * std::numbers::pi;

struct Tint {
  double r, g, b;
};

Tint class_tint(int k) {
  static constexpr Tint kBase[] = {{1.00, 0.78, 0.55}, {0.90, 0.62, 0.42}, {1.00, 0.90, 0.70},
                                   {0.75, 0.50, 0.35}, {0.95, 0.70, 0.60}};
  const Tint t = kBase[k % 5];
  const double shift = 0.12 * (k / 5);
  return {std::clamp(t.r - shift, 0.2, 1.0), std::clamp(t.g + shift / 2, 0.2, 1.0),
          std::clamp(t.b + shift, 0.2, 1.0)};
}

}  // namespace

Image synth_texture(int class_index, int width, int height, std::uint64_t seed) {
  Rng rng(seed);
  const int family = class_index % 5;
  const double freq_jitter = rng.uniform(0.9, 1.1);
  const double phase = rng.uniform(0.0, kTau);
  const double brightness = rng.uniform(0.9, 1.1);
  const Tint tint = class_tint(class_index);

  Plane gray(height, width);
  switch (family) {
    case 0: {  // growth-ring bands with rows of large pores at each ring
      const double period = 180.0 * freq_jitter;
      for (int y = 0; y < height; ++y) {
        const double ring = 0.5 + 0.5 * std::cos(kTau * y / period + phase);
        for (int x = 0; x < width; ++x) {
          const double ray = std::abs(std::sin(kTau * x / 70.0 + phase)) > 0.97 ? -0.25 : 0.0;
          gray(y, x) = static_cast<float>(0.55 + 0.35 * ring * ring + ray);
        }
      }
      const int rows = static_cast<int>(height / period) + 2;
      for (int r = 0; r < rows; ++r) {
        const double cy = r * period + period * (phase / kTau);
        for (int x = 12; x < width; x += 28 + static_cast<int>(rng.uniform_index(12))) {
          const int py = static_cast<int>(cy + rng.uniform(-6, 6));
          for (int dy = -7; dy <= 7; ++dy)
            for (int dx = -7; dx <= 7; ++dx)
              if (dx * dx + dy * dy <= 49 && py + dy >= 0 && py + dy < height && x + dx < width)
                gray(py + dy, x + dx) = 0.15f;
        }
      }
      break;
    }
    case 1: {  // scattered solitary pores on a bright ground
      gray.setConstant(0.8f);
      const int pores = width * height / 900;
      for (int i = 0; i < pores; ++i) {
        const int cx = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(width)));
        const int cy = static_cast<int>(rng.uniform_index(static_cast<std::uint64_t>(height)));
        const int rad = 3 + static_cast<int>(rng.uniform_index(3));
        for (int dy = -rad; dy <= rad; ++dy)
          for (int dx = -rad; dx <= rad; ++dx)
            if (dx * dx + dy * dy <= rad * rad && cy + dy >= 0 && cy + dy < height && cx + dx >= 0 &&
                cx + dx < width)
              gray(cy + dy, cx + dx) = 0.2f;
      }
      break;
    }
    case 2: {  // dense fine vertical rays
      const double period = 16.0 * freq_jitter;
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x)
          gray(y, x) = static_cast<float>(0.6 + 0.3 * std::sin(kTau * x / period + phase));
      break;
    }
    case 3: {  // wavy low-frequency bands
      const double period = 260.0 * freq_jitter;
      for (int y = 0; y < height; ++y)
        for (int x = 0; x < width; ++x) {
          const double wave = 60.0 * std::sin(kTau * x / 900.0 + phase);
          gray(y, x) = static_cast<float>(0.5 + 0.4 * std::sin(kTau * (y + wave) / period));
        }
      break;
    }
    default: {  // thin tangential parenchyma lines crossing rays: a fine grid
      const double period = 24.0 * freq_jitter;
      for (int y = 0; y < height; ++y) {
        const bool line = std::fmod(y + phase * period, period) < 4.0;
        for (int x = 0; x < width; ++x) {
          const bool ray = std::fmod(x + phase * 40.0, 40.0) < 3.0;
          gray(y, x) = (line || ray) ? 0.3f : 0.75f;
        }
      }
      break;
    }
  }

  Image img(width, height);
  const double tints[3] = {tint.r, tint.g, tint.b};
  for (int c = 0; c < 3; ++c) {
    Plane& p = img.channels[c];
    for (int y = 0; y < height; ++y)
      for (int x = 0; x < width; ++x) {
        const double v = 255.0 * brightness * tints[c] * gray(y, x) + 8.0 * rng.normal();
        p(y, x) = static_cast<float>(std::round(std::clamp(v, 0.0, 255.0)));
      }
  }
  return img;
}

SynthCorpus write_synth_corpus(const std::filesystem::path& dir, const SynthCorpusOptions& o) {
  if (o.n_classes < 2 || o.images_per_class < 1 || o.images_per_specimen < 1)
    throw Error(ErrorKind::BadConfig, "synthetic corpus needs >= 2 classes and >= 1 image");
  std::filesystem::create_directories(dir / "images");
  std::filesystem::create_directories(dir / "archetypes");
  SynthCorpus corpus;
  corpus.catalog = dir / "catalog.json";
  corpus.records = dir / "records.jsonl";

  std::vector<TaxonClass> classes;
  std::ofstream records(corpus.records);
  if (!records) throw Error(ErrorKind::IoError, "cannot write " + corpus.records.string());
  for (int k = 0; k < o.n_classes; ++k) {
    const std::string label = "Synthetica" + std::string(1, static_cast<char>('A' + k % 26)) +
                              (k >= 26 ? std::to_string(k / 26) : "");
    const std::string species = label.substr(0, 1) + ". texture" + std::to_string(k);
    const std::string archetype = "archetypes/" + label + ".png";
    write_png(dir / archetype, synth_texture(k, o.width, o.height, derive_seed(o.seed, label, 999999)));
    classes.push_back({label, {species}, archetype});
    corpus.class_labels.push_back(label);

    const int specimens = (o.images_per_class + o.images_per_specimen - 1) / o.images_per_specimen;
    int made = 0;
    for (int s = 0; s < specimens; ++s) {
      nlohmann::json rec = {{"specimen_id", label + "-S" + std::to_string(s)},
                            {"species", species},
                            {"source", "synthetic"},
                            {"images", nlohmann::json::array()}};
      for (int i = 0; i < o.images_per_specimen && made < o.images_per_class; ++i, ++made) {
        const std::string image_id = label + "-I" + std::to_string(made);
        const std::string file = "images/" + image_id + ".png";
        write_png(dir / file, synth_texture(k, o.width, o.height, derive_seed(o.seed, image_id)));
        rec["images"].push_back({{"image_id", image_id}, {"file_ref", file}, {"ray_orientation", "vertical"}});
      }
      records << rec.dump() << "\n";
    }
  }
  ClassCatalog(std::move(classes)).save(corpus.catalog);
  return corpus;
}

}  // namespace woodid
