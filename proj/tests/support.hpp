#pragma once

#include <atomic>
#include <filesystem>
#include <random>
#include <string>

#include "woodid/classifier.hpp"
#include "woodid/image.hpp"
#include "woodid/rng.hpp"

namespace woodid::testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<int> counter{0};
    path_ = fs::temp_directory_path() /
            ("woodid-" + tag + "-" + std::to_string(::getpid()) + "-" + std::to_string(counter++));
    fs::remove_all(path_);
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& name) const { return path_ / name; }

 private:
  fs::path path_;
};

inline Image noise_image(int width, int height, std::uint64_t seed) {
  Image img(width, height);
  Rng rng(seed);
  for (auto& c : img.channels)
    for (Eigen::Index i = 0; i < c.size(); ++i) c.data()[i] = static_cast<float>(rng.uniform_index(256));
  return img;
}

/// Random ResNet34 backbone archive, written once per test process.
inline const fs::path& random_backbone() {
  static TempDir dir("backbone");
  static const fs::path path = [] {
    const fs::path p = dir / "resnet34-random.warc";
    write_random_backbone(p, 1234);
    return p;
  }();
  return path;
}

inline ModelConfig test_model_config(int n_classes, std::uint64_t head_seed = 5) {
  ModelConfig c;
  c.n_classes = n_classes;
  c.head_seed = head_seed;
  c.backbone_weights = random_backbone().string();
  return c;
}

}  // namespace woodid::testing
