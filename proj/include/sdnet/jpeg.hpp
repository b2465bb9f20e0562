#pragma once

// JPEG degradation in the quantization domain: 8x8 block DCT, quality-scaled
// luminance table, quantize/dequantize round trip, inverse DCT. Entropy coding
// is lossless and therefore omitted; the pixel damage is identical to a real
// encode/decode cycle up to the codec's fixed-point DCT rounding.

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <string>
#include <vector>

#include "sdnet/image.hpp"
#include "sdnet/tensor.hpp"

namespace sdnet {

// ITU-T T.81 Annex K.1 luminance quantization table.
inline constexpr std::array<int, 64> kBaseLumaTable = {
    16, 11, 10, 16, 24,  40,  51,  61,
    12, 12, 14, 19, 26,  58,  60,  55,
    14, 13, 16, 24, 40,  57,  69,  56,
    14, 17, 22, 29, 51,  87,  80,  62,
    18, 22, 37, 56, 68,  109, 103, 77,
    24, 35, 55, 64, 81,  104, 113, 92,
    49, 64, 78, 87, 103, 121, 120, 101,
    72, 92, 95, 98, 112, 100, 103, 99,
};

struct QuantSpec {
  int qf = 50;
  std::array<int, 64> table{};
};

// Standard IJG scaling: scale = 5000/qf below 50, else 200 - 2*qf; each entry
// is floor((base*scale + 50)/100) clamped to [1, 255].
inline QuantSpec build_quant_table(int qf) {
  require(qf >= 1 && qf <= 100,
          "quality factor must be in [1,100], got " + std::to_string(qf));
  QuantSpec spec;
  spec.qf = qf;
  const int scale = qf < 50 ? 5000 / qf : 200 - 2 * qf;
  for (int i = 0; i < 64; ++i) {
    int v = (kBaseLumaTable[i] * scale + 50) / 100;
    spec.table[i] = std::clamp(v, 1, 255);
  }
  return spec;
}

namespace detail {

// Orthonormal DCT-II basis, C[k][x] = a_k cos((2x+1) k pi / 16).
inline const std::array<std::array<double, 8>, 8>& dct_basis() {
  static const auto basis = [] {
    std::array<std::array<double, 8>, 8> c{};
    const double pi = 3.14159265358979323846;
    for (int k = 0; k < 8; ++k) {
      const double a = k == 0 ? std::sqrt(1.0 / 8.0) : std::sqrt(2.0 / 8.0);
      for (int x = 0; x < 8; ++x)
        c[k][x] = a * std::cos((2 * x + 1) * k * pi / 16.0);
    }
    return c;
  }();
  return basis;
}

inline double round_half_away(double v) {
  return v >= 0.0 ? std::floor(v + 0.5) : std::ceil(v - 0.5);
}

}  // namespace detail

using Block8 = std::array<double, 64>;

inline Block8 block_dct8(const Block8& block) {
  const auto& c = detail::dct_basis();
  Block8 tmp{}, out{};
  // rows
  for (int i = 0; i < 8; ++i)
    for (int k = 0; k < 8; ++k) {
      double acc = 0;
      for (int x = 0; x < 8; ++x) acc += c[k][x] * block[i * 8 + x];
      tmp[i * 8 + k] = acc;
    }
  // columns
  for (int j = 0; j < 8; ++j)
    for (int k = 0; k < 8; ++k) {
      double acc = 0;
      for (int x = 0; x < 8; ++x) acc += c[k][x] * tmp[x * 8 + j];
      out[k * 8 + j] = acc;
    }
  return out;
}

inline Block8 block_idct8(const Block8& coeffs) {
  const auto& c = detail::dct_basis();
  Block8 tmp{}, out{};
  for (int j = 0; j < 8; ++j)
    for (int x = 0; x < 8; ++x) {
      double acc = 0;
      for (int k = 0; k < 8; ++k) acc += c[k][x] * coeffs[k * 8 + j];
      tmp[x * 8 + j] = acc;
    }
  for (int i = 0; i < 8; ++i)
    for (int x = 0; x < 8; ++x) {
      double acc = 0;
      for (int k = 0; k < 8; ++k) acc += c[k][x] * tmp[i * 8 + k];
      out[i * 8 + x] = acc;
    }
  return out;
}

// Per 8x8 block: shift by -128, DCT, quantize (round half away from zero),
// dequantize, inverse DCT, shift back, round and clamp to [0,255]. Dimensions
// not divisible by 8 are reflect-padded and cropped after decode.
inline GrayImage degrade(const GrayImage& image, const QuantSpec& spec) {
  require(!image.empty(), "degrade: empty image");
  const int m = image.height, n = image.width;
  const int mp = (m + 7) / 8 * 8, np = (n + 7) / 8 * 8;

  auto reflect = [](int i, int size) {
    return i < size ? i : 2 * size - 2 - i;  // pad never exceeds 7 < size
  };

  GrayImage out(m, n);
  Block8 block;
  for (int bi = 0; bi < mp; bi += 8) {
    for (int bj = 0; bj < np; bj += 8) {
      for (int i = 0; i < 8; ++i)
        for (int j = 0; j < 8; ++j)
          block[i * 8 + j] =
              image.at(reflect(bi + i, m), reflect(bj + j, n)) - 128.0;
      Block8 coeff = block_dct8(block);
      for (int k = 0; k < 64; ++k) {
        const double q = static_cast<double>(spec.table[k]);
        coeff[k] = detail::round_half_away(coeff[k] / q) * q;
      }
      Block8 rec = block_idct8(coeff);
      for (int i = 0; i < 8 && bi + i < m; ++i)
        for (int j = 0; j < 8 && bj + j < n; ++j)
          out.at(bi + i, bj + j) =
              clamp255(detail::round_half_away(rec[i * 8 + j] + 128.0));
    }
  }
  return out;
}

// --- pair corpus -------------------------------------------------------------

struct PairEntry {
  std::string clean_path;
  std::string degraded_path;
  int qf = 0;
};

inline void write_manifest(const std::vector<PairEntry>& entries,
                           const std::string& path) {
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp);
    if (!f) throw std::runtime_error("cannot create " + tmp);
    for (const auto& e : entries)
      f << e.clean_path << '\t' << e.degraded_path << '\t' << e.qf << '\n';
  }
  std::filesystem::rename(tmp, path);
}

inline std::vector<PairEntry> read_manifest(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw std::runtime_error("cannot open manifest " + path);
  std::vector<PairEntry> entries;
  std::string line;
  while (std::getline(f, line)) {
    if (line.empty()) continue;
    const auto t1 = line.find('\t');
    const auto t2 = line.find('\t', t1 + 1);
    require(t1 != std::string::npos && t2 != std::string::npos,
            "malformed manifest line: " + line);
    PairEntry e;
    e.clean_path = line.substr(0, t1);
    e.degraded_path = line.substr(t1 + 1, t2 - t1 - 1);
    e.qf = std::stoi(line.substr(t2 + 1));
    entries.push_back(std::move(e));
  }
  return entries;
}

// Degrades every decodable image in clean_dir and writes a manifest. With a
// list of quality factors the assignment is round-robin over the sorted file
// order (the blind-training layout). Unreadable files are skipped with a
// warning on stderr.
inline std::vector<PairEntry> make_pair_corpus(const std::string& clean_dir,
                                               const std::vector<int>& qfs,
                                               const std::string& out_dir) {
  require(!qfs.empty(), "make_pair_corpus: need at least one quality factor");
  std::vector<QuantSpec> specs;
  for (int qf : qfs) specs.push_back(build_quant_table(qf));

  std::vector<std::filesystem::path> files;
  for (const auto& entry : std::filesystem::directory_iterator(clean_dir))
    if (entry.is_regular_file() && has_image_extension(entry.path()))
      files.push_back(entry.path());
  std::sort(files.begin(), files.end());

  std::filesystem::create_directories(out_dir);
  std::vector<PairEntry> entries;
  std::size_t idx = 0;
  for (const auto& f : files) {
    GrayImage img;
    try {
      img = read_image(f.string());
    } catch (const std::exception& ex) {
      std::cerr << "warning: skipping " << f << ": " << ex.what() << "\n";
      continue;
    }
    const QuantSpec& spec = specs[idx % specs.size()];
    GrayImage deg = degrade(img, spec);
    const std::string out_path =
        (std::filesystem::path(out_dir) /
         (f.stem().string() + "_q" + std::to_string(spec.qf) + ".png"))
            .string();
    write_png(deg, out_path);
    entries.push_back({f.string(), out_path, spec.qf});
    ++idx;
  }
  require(!entries.empty(), "make_pair_corpus: no decodable images in " + clean_dir);
  write_manifest(entries, (std::filesystem::path(out_dir) / "manifest.tsv").string());
  return entries;
}

}  // namespace sdnet
