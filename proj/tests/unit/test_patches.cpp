#include "doctest.h"

#include "../support.hpp"
#include "woodid/patches.hpp"

using namespace woodid;

namespace {

PatchSpec small_spec(SamplingMode mode = SamplingMode::Center) {
  PatchSpec s;
  s.source_width = 64;
  s.source_height = 24;
  s.target_width = 32;
  s.target_height = 12;
  s.sampling_mode = mode;
  return s;
}

ErrorKind kind_of(auto&& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.kind();
  }
  FAIL("no error");
  return ErrorKind::IoError;
}

}  // namespace

TEST_CASE("patch geometry is validated") {
  PatchSpec s;
  CHECK_NOTHROW(s.validate());
  s.target_height = 200;
  CHECK(kind_of([&] { s.validate(); }) == ErrorKind::BadDims);
  const Image img = testing::noise_image(100, 40, 1);
  Rng rng(0);
  CHECK(kind_of([&] { extract_patch(img, PatchSpec{}, rng); }) == ErrorKind::ImageTooSmall);
  CHECK(kind_of([&] { resize_patch(img, 50, 50); }) == ErrorKind::BadDims);
}

TEST_CASE("center and tiled bands") {
  const Image img = testing::noise_image(70, 80, 2);
  Rng rng(0);
  const Image center = extract_patch(img, small_spec(), rng);
  CHECK(center == img.crop(3, 28, 64, 24));
  const auto tiles = extract_patches(img, small_spec(SamplingMode::Tiled), rng);
  REQUIRE(tiles.size() == 3);  // floor(80 / 24)
  for (int b = 0; b < 3; ++b) CHECK(tiles[b] == img.crop(3, 24 * b, 64, 24));
}

TEST_CASE("random bands stay inside the image and replay under a seed") {
  const Image img = testing::noise_image(64, 100, 3);
  const PatchSpec spec = small_spec(SamplingMode::RandomOffset);
  Rng a(9), b(9);
  for (int i = 0; i < 20; ++i) {
    const Image pa = extract_patch(img, spec, a);
    CHECK(pa == extract_patch(img, spec, b));
    CHECK(pa.width() == 64);
    CHECK(pa.height() == 24);
  }
}

TEST_CASE("resize is the identity at matching dims and preserves constants") {
  const Image img = testing::noise_image(64, 24, 4);
  CHECK(resize_patch(img, 64, 24) == img);
  const Image flat = Image::filled(64, 24, {10.f, 20.f, 30.f});
  const Image small = resize_patch(flat, 32, 12);
  for (int c = 0; c < 3; ++c) CHECK(small.channels[c].isApproxToConstant(10.f * (c + 1), 1e-5f));
}

TEST_CASE("flips are involutions and rotation by zero is exact") {
  const Image img = testing::noise_image(32, 12, 5);
  CHECK(flip_horizontal(flip_horizontal(img)) == img);
  CHECK(flip_vertical(flip_vertical(img)) == img);
  CHECK(flip_horizontal(img).channels[0](0, 0) == img.channels[0](0, 31));
  CHECK(rotate(img, 0.0) == img);
  const Image r = rotate(img, 4.0);
  CHECK(r.width() == 32);
  CHECK(r.height() == 12);
  CHECK(r.channels[1].minCoeff() >= 0.f);
  CHECK(r.channels[1].maxCoeff() <= 255.f);
}

TEST_CASE("cutout fills one in-bounds square with the channel mean") {
  const Image img = testing::noise_image(32, 12, 6);
  Rng rng(1);
  const Image out = cutout(img, {1, 6}, rng);
  int changed_min_x = 99, changed_max_x = -1, changed_min_y = 99, changed_max_y = -1;
  for (int y = 0; y < 12; ++y)
    for (int x = 0; x < 32; ++x)
      if (out.channels[0](y, x) != img.channels[0](y, x)) {
        changed_min_x = std::min(changed_min_x, x);
        changed_max_x = std::max(changed_max_x, x);
        changed_min_y = std::min(changed_min_y, y);
        changed_max_y = std::max(changed_max_y, y);
      }
  CHECK(changed_max_x - changed_min_x <= 5);
  CHECK(changed_max_y - changed_min_y <= 5);
  CHECK(changed_min_x >= 0);
  CHECK(changed_max_y < 12);
  const float mean = img.channels[0].mean();
  if (changed_max_x >= 0) CHECK(out.channels[0](changed_min_y, changed_min_x) == doctest::Approx(mean));
}

TEST_CASE("augmentation replays exactly and identity policy changes nothing") {
  const Image img = testing::noise_image(32, 12, 7);
  AugmentationPolicy p;
  p.cutout.hole_size = 4;
  Rng a(3), b(3);
  CHECK(augment(img, p, a) == augment(img, p, b));
  Rng c(3);
  CHECK(augment(img, AugmentationPolicy::identity(), c) == img);
}

TEST_CASE("evaluation patches are deterministic and resized") {
  const Image img = testing::noise_image(80, 60, 8);
  const auto center = evaluation_patches(img, small_spec(), SamplingMode::Center);
  REQUIRE(center.size() == 1);
  CHECK(center[0].width() == 32);
  CHECK(center[0].height() == 12);
  CHECK(evaluation_patches(img, small_spec(), SamplingMode::Tiled).size() == 2);
  CHECK(evaluation_patches(img, small_spec(), SamplingMode::Center)[0] == center[0]);
}

TEST_CASE("sampling mode names round-trip") {
  for (auto m : {SamplingMode::RandomOffset, SamplingMode::Center, SamplingMode::Tiled})
    CHECK(parse_sampling_mode(to_string(m)) == m);
  const PatchSpec s = small_spec(SamplingMode::Tiled);
  const PatchSpec back = PatchSpec::from_json(s.to_json());
  CHECK(back.source_width == 64);
  CHECK(back.sampling_mode == SamplingMode::Tiled);
}
