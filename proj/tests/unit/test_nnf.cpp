#include <doctest.h>

#include <cmath>
#include <random>

#include "fixtures.hpp"
#include "solodiff/error.hpp"
#include "solodiff/nnf.hpp"

using namespace solodiff;

namespace {

void check_same_field(const NNField& a, const NNField& b) {
  REQUIRE(a.frames == b.frames);
  REQUIRE(a.height == b.height);
  REQUIRE(a.width == b.width);
  for (std::size_t i = 0; i < a.voxel_count(); ++i) {
    CHECK(a.offsets[i] == b.offsets[i]);
    CHECK(a.distances[i] == doctest::Approx(b.distances[i]).epsilon(1e-12));
  }
}

NNField constant_field(int f, int h, int w, std::array<int, 3> o) {
  NNField n;
  n.frames = f;
  n.height = h;
  n.width = w;
  n.offsets.assign(n.voxel_count(), o);
  n.distances.assign(n.voxel_count(), 0.0);
  return n;
}

}  // namespace

TEST_CASE("exact search agrees with exhaustive search") {
  std::mt19937_64 gen(17);
  SUBCASE("continuous values") {
    const VideoClip g = testing::quantized_noise_video(4, 7, 6, 3, 256, gen);
    const VideoClip r = testing::quantized_noise_video(5, 6, 8, 3, 256, gen);
    check_same_field(compute_nnf(g, r), testing::brute_force_nnf(g, r));
  }
  SUBCASE("binary values with many ties and duplicate patches") {
    for (int rep = 0; rep < 5; ++rep) {
      const VideoClip g = testing::quantized_noise_video(4, 6, 6, 1, 2, gen);
      const VideoClip r = testing::quantized_noise_video(4, 6, 7, 1, 2, gen);
      check_same_field(compute_nnf(g, r), testing::brute_force_nnf(g, r));
    }
  }
  SUBCASE("constant reference") {
    const VideoClip g = testing::quantized_noise_video(3, 5, 5, 3, 4, gen);
    const VideoClip r = testing::quantized_noise_video(4, 5, 5, 3, 1, gen);
    const NNField f = compute_nnf(g, r);
    // every patch of r is identical: the first centre (1, 1, 1) wins
    for (std::size_t i = 0; i < f.voxel_count(); ++i) {
      const int t = int(i) / 9, y = int(i) / 3 % 3, x = int(i) % 3;
      CHECK(f.offsets[i] == std::array<int, 3>{-t, -y, -x});
    }
  }
}

TEST_CASE("a video matched against itself has zero distance") {
  const VideoClip v = testing::moving_square(6, 16, 5, 2, 4);
  const NNField f = compute_nnf(v, v);
  CHECK(f.frames == 4);
  CHECK(f.height == 14);
  CHECK(nnfdist(f) == 0.0);
}

TEST_CASE("input validation") {
  const VideoClip two = testing::moving_square(2, 8, 3, 1, 2);
  const VideoClip four = testing::moving_square(4, 8, 3, 1, 2);
  CHECK_THROWS_AS(compute_nnf(two, four), ParameterError);
  CHECK_THROWS_AS(compute_nnf(four, two), ParameterError);
  std::mt19937_64 gen(1);
  CHECK_THROWS_AS(compute_nnf(four, testing::quantized_noise_video(3, 8, 8, 1, 2, gen)),
                  ParameterError);
}

TEST_CASE("serialization layout and round trip") {
  NNField f = constant_field(1, 1, 2, {0, 0, 0});
  f.offsets[0] = {1, -2, 3};
  f.offsets[1] = {-32768, 32767, 0};
  const auto bytes = nnf_serialize(f);
  REQUIRE(bytes.size() == 12);
  CHECK(bytes[0] == 1);
  CHECK(bytes[1] == 0);
  CHECK(bytes[2] == 0xFE);
  CHECK(bytes[3] == 0xFF);
  CHECK(bytes[6] == 0x00);
  CHECK(bytes[7] == 0x80);
  const NNField back = nnf_deserialize(bytes, 1, 1, 2);
  CHECK(back.offsets == f.offsets);
  CHECK_THROWS_AS(nnf_deserialize(bytes, 1, 2, 2), FormatError);
  f.offsets[0][2] = 40000;
  CHECK_THROWS_AS(nnf_serialize(f), FormatError);
}

TEST_CASE("diversity score") {
  const NNField zero = constant_field(20, 30, 30, {0, 0, 0});
  const NNField shifted = constant_field(20, 30, 30, {2, -7, 5});
  CHECK(nnfdiv(zero) >= 0.0);
  CHECK(nnfdiv(zero) < 0.01);
  CHECK(std::abs(nnfdiv(shifted) - nnfdiv(zero)) < 0.01);

  NNField random = zero;
  std::mt19937_64 gen(3);
  std::uniform_int_distribution<int> d(-20, 20);
  for (auto& o : random.offsets) o = {d(gen), d(gen), d(gen)};
  CHECK(nnfdiv(random) > 0.3);
  CHECK(nnfdiv(random) <= 1.0);

  NNField bad = zero;
  bad.distances.pop_back();
  CHECK_THROWS_AS(nnfdist(bad), ParameterError);
}

TEST_CASE("offset colour wheel") {
  using C = std::array<float, 3>;
  auto near = [](C a, C b) {
    for (int i = 0; i < 3; ++i)
      if (std::abs(a[i] - b[i]) > 1e-5f) return false;
    return true;
  };
  CHECK(near(offset_color(0, 0, 4), C{1, 1, 1}));
  CHECK(near(offset_color(0, 4, 4), C{1, -1, -1}));
  CHECK(near(offset_color(4, 0, 4), C{0, 1, -1}));
  CHECK(near(offset_color(0, -4, 4), C{-1, 1, 1}));
  // half magnitude: half saturation
  CHECK(near(offset_color(0, 2, 4), C{1, 0, 0}));
  CHECK(near(offset_color(3, 3, 0), C{1, 1, 1}));

  NNField f = constant_field(2, 2, 3, {0, 0, 0});
  f.offsets[1] = {-2, 0, 5};
  const NNFColormap cm = nnf_colormap(f);
  REQUIRE(cm.spatial.size() == 2);
  CHECK(cm.spatial[0].shape() == Shape{3, 2, 3});
  CHECK(cm.temporal[0].at(0, 0, 1) == -1.0f);
  CHECK(cm.temporal[0].at(0, 0, 0) == 0.0f);
  CHECK(cm.spatial[0].at(0, 0, 1) == doctest::Approx(1.0));
  CHECK(cm.spatial[0].at(1, 0, 1) == doctest::Approx(-1.0));
}
