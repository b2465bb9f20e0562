#pragma once

// The two reversible image -> 4-channel tensor packings feeding the branches:
// polyphase 2x2 downsampling for the pixel branch and 1-level orthonormal Haar
// DWT sub-bands (LL, LH, HL, HH) for the wavelet branch. Each packed tensor
// carries its origin so the wrong inverse is a hard error instead of silent
// garbage.

#include <string>

#include "sdnet/image.hpp"
#include "sdnet/tensor.hpp"

namespace sdnet {

enum class PackOrigin { PixelPolyphase, WaveletSubband };

template <typename T>
struct PackedQuad {
  Tensor<T> tensor;  // 1 x 4 x m/2 x n/2
  PackOrigin origin = PackOrigin::PixelPolyphase;
};

namespace detail {
inline void require_even(const GrayImage& img, const char* who) {
  require(img.height >= 2 && img.width >= 2 && img.height % 2 == 0 &&
              img.width % 2 == 0,
          std::string(who) + ": image dims must be even and >= 2, got " +
              std::to_string(img.height) + "x" + std::to_string(img.width));
}
}  // namespace detail

// Channel k holds the sub-image starting at row offset k/2, column offset k%2
// of the 2x2 pixel lattice.
template <typename T>
PackedQuad<T> polyphase_pack(const GrayImage& image) {
  detail::require_even(image, "polyphase_pack");
  const int hh = image.height / 2, hw = image.width / 2;
  PackedQuad<T> out{Tensor<T>({1, 4, hh, hw}), PackOrigin::PixelPolyphase};
  for (int k = 0; k < 4; ++k) {
    const int ro = k / 2, co = k % 2;
    T* plane = out.tensor.plane(0, k);
    for (int i = 0; i < hh; ++i)
      for (int j = 0; j < hw; ++j)
        plane[i * hw + j] = static_cast<T>(image.at(2 * i + ro, 2 * j + co));
  }
  return out;
}

template <typename T>
GrayImage polyphase_unpack(const PackedQuad<T>& packed) {
  require(packed.origin == PackOrigin::PixelPolyphase,
          "polyphase_unpack: packed tensor originates from the wavelet "
          "transform; use dwt_unpack");
  const Shape4 s = packed.tensor.shape();
  require(s.n == 1 && s.c == 4, "polyphase_unpack: expected 1x4xHxW, got " + s.str());
  GrayImage img(2 * s.h, 2 * s.w);
  for (int k = 0; k < 4; ++k) {
    const int ro = k / 2, co = k % 2;
    const T* plane = packed.tensor.plane(0, k);
    for (int i = 0; i < s.h; ++i)
      for (int j = 0; j < s.w; ++j)
        img.at(2 * i + ro, 2 * j + co) = static_cast<double>(plane[i * s.w + j]);
  }
  return img;
}

// Separable Haar pair (1,1)/sqrt(2), (1,-1)/sqrt(2), rows then columns, stride
// 2. With even dims the filters never cross a 2x2 block, so per block
// [[a,b],[c,d]]: LL=(a+b+c+d)/2, LH=(a+b-c-d)/2, HL=(a-b+c-d)/2, HH=(a-b-c+d)/2
// (LH = lowpass along rows, highpass across columns).
template <typename T>
PackedQuad<T> dwt_pack(const GrayImage& image) {
  detail::require_even(image, "dwt_pack");
  const int hh = image.height / 2, hw = image.width / 2;
  PackedQuad<T> out{Tensor<T>({1, 4, hh, hw}), PackOrigin::WaveletSubband};
  T* ll = out.tensor.plane(0, 0);
  T* lh = out.tensor.plane(0, 1);
  T* hl = out.tensor.plane(0, 2);
  T* hhp = out.tensor.plane(0, 3);
  for (int i = 0; i < hh; ++i) {
    for (int j = 0; j < hw; ++j) {
      const double a = image.at(2 * i, 2 * j);
      const double b = image.at(2 * i, 2 * j + 1);
      const double c = image.at(2 * i + 1, 2 * j);
      const double d = image.at(2 * i + 1, 2 * j + 1);
      ll[i * hw + j] = static_cast<T>((a + b + c + d) * 0.5);
      lh[i * hw + j] = static_cast<T>((a + b - c - d) * 0.5);
      hl[i * hw + j] = static_cast<T>((a - b + c - d) * 0.5);
      hhp[i * hw + j] = static_cast<T>((a - b - c + d) * 0.5);
    }
  }
  return out;
}

template <typename T>
GrayImage dwt_unpack(const PackedQuad<T>& packed) {
  require(packed.origin == PackOrigin::WaveletSubband,
          "dwt_unpack: packed tensor originates from polyphase sampling; use "
          "polyphase_unpack");
  const Shape4 s = packed.tensor.shape();
  require(s.n == 1 && s.c == 4, "dwt_unpack: expected 1x4xHxW, got " + s.str());
  GrayImage img(2 * s.h, 2 * s.w);
  const T* ll = packed.tensor.plane(0, 0);
  const T* lh = packed.tensor.plane(0, 1);
  const T* hl = packed.tensor.plane(0, 2);
  const T* hh = packed.tensor.plane(0, 3);
  for (int i = 0; i < s.h; ++i) {
    for (int j = 0; j < s.w; ++j) {
      const double sll = ll[i * s.w + j], slh = lh[i * s.w + j];
      const double shl = hl[i * s.w + j], shh = hh[i * s.w + j];
      img.at(2 * i, 2 * j) = (sll + slh + shl + shh) * 0.5;
      img.at(2 * i, 2 * j + 1) = (sll + slh - shl - shh) * 0.5;
      img.at(2 * i + 1, 2 * j) = (sll - slh + shl - shh) * 0.5;
      img.at(2 * i + 1, 2 * j + 1) = (sll - slh - shl + shh) * 0.5;
    }
  }
  return img;
}

}  // namespace sdnet
