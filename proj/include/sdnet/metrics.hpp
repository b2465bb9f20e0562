#pragma once

// The three fidelity metrics used by the evaluation protocol. Identical inputs
// report the 99.0 dB cap so corpus averages stay finite. psnr_b computes the
// blocking-effect factor on its SECOND argument (the test image); argument
// order is part of the contract.

#include <array>
#include <cmath>
#include <string>
#include <vector>

#include "sdnet/image.hpp"
#include "sdnet/tensor.hpp"

namespace sdnet {

inline constexpr double kPsnrCap = 99.0;

struct MetricsReport {
  double psnr = 0.0;
  double ssim = 0.0;
  double psnr_b = 0.0;
  double elapsed = 0.0;  // seconds spent producing the test image
};

namespace detail {
inline void require_same_dims(const GrayImage& x, const GrayImage& y, const char* who) {
  require(x.height == y.height && x.width == y.width,
          std::string(who) + ": dimension mismatch " + std::to_string(x.height) +
              "x" + std::to_string(x.width) + " vs " + std::to_string(y.height) +
              "x" + std::to_string(y.width));
}

inline double mse(const GrayImage& x, const GrayImage& y) {
  double acc = 0;
  for (std::size_t i = 0; i < x.pix.size(); ++i) {
    const double d = x.pix[i] - y.pix[i];
    acc += d * d;
  }
  return acc / static_cast<double>(x.pix.size());
}
}  // namespace detail

inline double psnr(const GrayImage& x, const GrayImage& y) {
  detail::require_same_dims(x, y, "psnr");
  require(!x.empty(), "psnr: empty image");
  const double m = detail::mse(x, y);
  if (m <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / m));
}

// Mean local SSIM, 11x11 Gaussian window sigma 1.5, K1=0.01, K2=0.03, L=255,
// aggregated over the valid (unpadded) window positions.
inline double ssim(const GrayImage& x, const GrayImage& y) {
  detail::require_same_dims(x, y, "ssim");
  constexpr int kWin = 11;
  require(x.height >= kWin && x.width >= kWin,
          "ssim: image must be at least 11x11, got " + std::to_string(x.height) +
              "x" + std::to_string(x.width));

  static const std::array<double, kWin> kernel = [] {
    std::array<double, kWin> k{};
    const double sigma = 1.5;
    double sum = 0;
    for (int i = 0; i < kWin; ++i) {
      const double d = i - (kWin - 1) / 2.0;
      k[i] = std::exp(-d * d / (2.0 * sigma * sigma));
      sum += k[i];
    }
    for (auto& v : k) v /= sum;
    return k;
  }();

  const int m = x.height, n = x.width;
  const int vm = m - kWin + 1, vn = n - kWin + 1;

  // Separable windowed moments of the five products.
  auto blur = [&](const std::vector<double>& src) {
    std::vector<double> h(static_cast<std::size_t>(m) * vn);
    for (int i = 0; i < m; ++i)
      for (int j = 0; j < vn; ++j) {
        double acc = 0;
        const double* row = src.data() + static_cast<std::size_t>(i) * n + j;
        for (int t = 0; t < kWin; ++t) acc += kernel[t] * row[t];
        h[static_cast<std::size_t>(i) * vn + j] = acc;
      }
    std::vector<double> out(static_cast<std::size_t>(vm) * vn);
    for (int i = 0; i < vm; ++i)
      for (int j = 0; j < vn; ++j) {
        double acc = 0;
        for (int t = 0; t < kWin; ++t)
          acc += kernel[t] * h[static_cast<std::size_t>(i + t) * vn + j];
        out[static_cast<std::size_t>(i) * vn + j] = acc;
      }
    return out;
  };

  const std::size_t total = x.pix.size();
  std::vector<double> xx(total), yy(total), xy(total);
  for (std::size_t i = 0; i < total; ++i) {
    xx[i] = x.pix[i] * x.pix[i];
    yy[i] = y.pix[i] * y.pix[i];
    xy[i] = x.pix[i] * y.pix[i];
  }
  const auto mu_x = blur(x.pix), mu_y = blur(y.pix);
  const auto m_xx = blur(xx), m_yy = blur(yy), m_xy = blur(xy);

  const double c1 = (0.01 * 255.0) * (0.01 * 255.0);
  const double c2 = (0.03 * 255.0) * (0.03 * 255.0);
  double acc = 0;
  for (std::size_t i = 0; i < mu_x.size(); ++i) {
    const double mx = mu_x[i], my = mu_y[i];
    const double vx = m_xx[i] - mx * mx;
    const double vy = m_yy[i] - my * my;
    const double cxy = m_xy[i] - mx * my;
    acc += ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) /
           ((mx * mx + my * my + c1) * (vx + vy + c2));
  }
  return acc / static_cast<double>(mu_x.size());
}

// PSNR-B: PSNR against MSE plus the blocking-effect factor of the test image.
// D_B is the mean squared difference over adjacent pixel pairs of y straddling
// B-aligned block boundaries (both orientations), D_C the same over all other
// adjacent pairs; BEF = eta*(D_B - D_C) with eta = log2(B)/log2(min(m,n)) when
// D_B > D_C, else 0.
inline double psnr_b(const GrayImage& x, const GrayImage& y, int block = 8) {
  detail::require_same_dims(x, y, "psnr_b");
  require(block >= 2, "psnr_b: block size must be >= 2");
  require(x.height >= block + 1 && x.width >= block + 1,
          "psnr_b: image dims must be at least " + std::to_string(block + 1));

  const int m = y.height, n = y.width;
  double sum_b = 0, sum_c = 0;
  std::size_t cnt_b = 0, cnt_c = 0;

  for (int i = 0; i < m; ++i)
    for (int j = 0; j + 1 < n; ++j) {
      const double d = y.at(i, j) - y.at(i, j + 1);
      if ((j + 1) % block == 0) { sum_b += d * d; ++cnt_b; }
      else { sum_c += d * d; ++cnt_c; }
    }
  for (int i = 0; i + 1 < m; ++i)
    for (int j = 0; j < n; ++j) {
      const double d = y.at(i, j) - y.at(i + 1, j);
      if ((i + 1) % block == 0) { sum_b += d * d; ++cnt_b; }
      else { sum_c += d * d; ++cnt_c; }
    }

  const double d_b = cnt_b ? sum_b / static_cast<double>(cnt_b) : 0.0;
  const double d_c = cnt_c ? sum_c / static_cast<double>(cnt_c) : 0.0;
  const double eta =
      d_b > d_c ? std::log2(static_cast<double>(block)) /
                      std::log2(static_cast<double>(std::min(m, n)))
                : 0.0;
  const double bef = eta * (d_b - d_c);

  const double denom = detail::mse(x, y) + bef;
  if (denom <= 0.0) return kPsnrCap;
  return std::min(kPsnrCap, 10.0 * std::log10(255.0 * 255.0 / denom));
}

}  // namespace sdnet
