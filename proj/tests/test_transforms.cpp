// The two reversible packings: polyphase sub-sampling and the one-level Haar
// transform. Checks exact hand values, channel placement, invertibility, the
// orthonormality (energy) property, and origin/shape guard rails.

#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "sdnet/image.hpp"
#include "sdnet/rng.hpp"
#include "sdnet/transforms.hpp"
#include "support.hpp"

using namespace sdnet;

namespace {

GrayImage random_image(int h, int w, Rng& rng, bool integers) {
  GrayImage img(h, w);
  for (auto& v : img.pix)
    v = integers ? static_cast<double>(rng.below(256)) : rng.uniform01() * 255.0;
  return img;
}

}  // namespace

TEST_CASE("polyphase channels hold the four 2x2 lattice offsets") {
  Rng rng(21);
  const GrayImage img = random_image(6, 8, rng, false);
  const auto packed = polyphase_pack<double>(img);
  REQUIRE(packed.origin == PackOrigin::PixelPolyphase);
  REQUIRE(packed.tensor.shape() == Shape4{1, 4, 3, 4});
  for (int k = 0; k < 4; ++k)
    for (int i = 0; i < 3; ++i)
      for (int j = 0; j < 4; ++j)
        CHECK(packed.tensor.at(0, k, i, j) ==
              img.at(2 * i + k / 2, 2 * j + k % 2));
}

TEST_CASE("polyphase pack on a known 4x4 image") {
  GrayImage img(4, 4);
  for (int i = 0; i < 16; ++i) img.pix[i] = i;
  const auto packed = polyphase_pack<double>(img);
  // Channel 0: even rows, even cols.
  CHECK(packed.tensor.at(0, 0, 0, 0) == 0);
  CHECK(packed.tensor.at(0, 0, 0, 1) == 2);
  CHECK(packed.tensor.at(0, 0, 1, 0) == 8);
  // Channel 1: even rows, odd cols.
  CHECK(packed.tensor.at(0, 1, 0, 0) == 1);
  // Channel 2: odd rows, even cols.
  CHECK(packed.tensor.at(0, 2, 0, 0) == 4);
  // Channel 3: odd rows, odd cols.
  CHECK(packed.tensor.at(0, 3, 1, 1) == 15);
}

TEST_CASE("polyphase round trip is bit exact") {
  Rng rng(22);
  const GrayImage img = random_image(10, 6, rng, false);
  const GrayImage back = polyphase_unpack(polyphase_pack<double>(img));
  REQUIRE(back.height == 10);
  REQUIRE(back.width == 6);
  for (std::size_t i = 0; i < img.pix.size(); ++i)
    CHECK(back.pix[i] == img.pix[i]);
}

TEST_CASE("haar sub-bands of a known 2x2 block") {
  GrayImage img(2, 2);
  img.at(0, 0) = 1;
  img.at(0, 1) = 2;
  img.at(1, 0) = 3;
  img.at(1, 1) = 4;
  const auto packed = dwt_pack<double>(img);
  REQUIRE(packed.origin == PackOrigin::WaveletSubband);
  CHECK(packed.tensor.at(0, 0, 0, 0) == 5.0);   // (1+2+3+4)/2
  CHECK(packed.tensor.at(0, 1, 0, 0) == -2.0);  // (1+2-3-4)/2
  CHECK(packed.tensor.at(0, 2, 0, 0) == -1.0);  // (1-2+3-4)/2
  CHECK(packed.tensor.at(0, 3, 0, 0) == 0.0);   // (1-2-3+4)/2
}

TEST_CASE("haar sub-bands of a constant image concentrate in LL") {
  GrayImage img(4, 6, 7.0);
  const auto packed = dwt_pack<double>(img);
  for (int i = 0; i < 2; ++i)
    for (int j = 0; j < 3; ++j) {
      CHECK(packed.tensor.at(0, 0, i, j) == 14.0);  // 4*7/2
      CHECK(packed.tensor.at(0, 1, i, j) == 0.0);
      CHECK(packed.tensor.at(0, 2, i, j) == 0.0);
      CHECK(packed.tensor.at(0, 3, i, j) == 0.0);
    }
}

TEST_CASE("haar transform preserves energy") {
  Rng rng(23);
  const GrayImage img = random_image(8, 12, rng, false);
  const auto packed = dwt_pack<double>(img);
  double pixel_energy = 0, band_energy = 0;
  for (double v : img.pix) pixel_energy += v * v;
  for (std::size_t i = 0; i < packed.tensor.size(); ++i)
    band_energy += packed.tensor.data()[i] * packed.tensor.data()[i];
  CHECK_THAT(band_energy, Catch::Matchers::WithinRel(pixel_energy, 1e-12));
}

TEST_CASE("haar round trip is exact on integer images") {
  Rng rng(24);
  const GrayImage img = random_image(14, 8, rng, true);
  // Integer pixels keep every sub-band a multiple of 1/2, which both float
  // and double represent exactly, so the inverse is bit exact.
  const GrayImage back64 = dwt_unpack(dwt_pack<double>(img));
  for (std::size_t i = 0; i < img.pix.size(); ++i)
    CHECK(back64.pix[i] == img.pix[i]);
  const GrayImage back32 = dwt_unpack(dwt_pack<float>(img));
  for (std::size_t i = 0; i < img.pix.size(); ++i)
    CHECK(back32.pix[i] == img.pix[i]);
}

TEST_CASE("haar round trip on real-valued images is exact to rounding") {
  Rng rng(25);
  const GrayImage img = random_image(6, 10, rng, false);
  const GrayImage back = dwt_unpack(dwt_pack<double>(img));
  for (std::size_t i = 0; i < img.pix.size(); ++i)
    CHECK_THAT(back.pix[i], Catch::Matchers::WithinAbs(img.pix[i], 1e-12));
}

TEST_CASE("polyphase round trip survives the float tensor type") {
  Rng rng(26);
  const GrayImage img = random_image(8, 8, rng, true);
  const GrayImage back = polyphase_unpack(polyphase_pack<float>(img));
  for (std::size_t i = 0; i < img.pix.size(); ++i)
    CHECK(back.pix[i] == img.pix[i]);
}

TEST_CASE("unpack refuses a tensor from the other domain") {
  GrayImage img(4, 4, 1.0);
  const auto poly = polyphase_pack<double>(img);
  const auto wave = dwt_pack<double>(img);
  CHECK_THROWS_WITH(dwt_unpack(poly),
                    Catch::Matchers::ContainsSubstring("polyphase_unpack"));
  CHECK_THROWS_WITH(polyphase_unpack(wave),
                    Catch::Matchers::ContainsSubstring("dwt_unpack"));
}

TEST_CASE("packing rejects odd or degenerate dimensions") {
  CHECK_THROWS_AS(polyphase_pack<double>(GrayImage(5, 4)),
                  std::invalid_argument);
  CHECK_THROWS_AS(polyphase_pack<double>(GrayImage(4, 7)),
                  std::invalid_argument);
  CHECK_THROWS_AS(dwt_pack<double>(GrayImage(3, 3)), std::invalid_argument);
  CHECK_THROWS_AS(dwt_pack<double>(GrayImage(0, 0)), std::invalid_argument);
}

TEST_CASE("unpack rejects tensors that are not 1x4xHxW") {
  PackedQuad<double> bad{Tensor<double>({2, 4, 2, 2}),
                         PackOrigin::PixelPolyphase};
  CHECK_THROWS_AS(polyphase_unpack(bad), std::invalid_argument);
  PackedQuad<double> bad2{Tensor<double>({1, 3, 2, 2}),
                          PackOrigin::WaveletSubband};
  CHECK_THROWS_AS(dwt_unpack(bad2), std::invalid_argument);
}
