#pragma once

// Single-channel raster images and 8-bit grayscale PNG/PGM I/O. Pixel values
// are doubles nominally in [0,255]; intermediate estimates may leave that
// range and are clamped only where the pipeline says so. Color PNGs are
// reduced to BT.601 luminance on read. Writes go through a temp file and
// rename, so readers never observe partial output.

#include <png.h>

#include <cctype>
#include <cmath>
#include <cstdio>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

#include "sdnet/tensor.hpp"

namespace sdnet {

struct GrayImage {
  int height = 0;
  int width = 0;
  std::vector<double> pix;  // row-major

  GrayImage() = default;
  GrayImage(int h, int w, double fill = 0.0)
      : height(h), width(w), pix(static_cast<std::size_t>(h) * w, fill) {}

  double& at(int i, int j) { return pix[static_cast<std::size_t>(i) * width + j]; }
  double at(int i, int j) const { return pix[static_cast<std::size_t>(i) * width + j]; }
  std::size_t size() const { return pix.size(); }
  bool empty() const { return pix.empty(); }
};

inline double clamp255(double v) { return v < 0.0 ? 0.0 : (v > 255.0 ? 255.0 : v); }

inline GrayImage clamp_image(const GrayImage& img) {
  GrayImage out(img.height, img.width);
  for (std::size_t i = 0; i < img.pix.size(); ++i) out.pix[i] = clamp255(img.pix[i]);
  return out;
}

namespace detail {

inline unsigned char to_byte(double v) {
  double r = std::floor(clamp255(v) + 0.5);
  return static_cast<unsigned char>(r > 255.0 ? 255.0 : r);
}

struct FileCloser {
  void operator()(std::FILE* f) const { if (f) std::fclose(f); }
};

}  // namespace detail

inline GrayImage read_png(const std::string& path) {
  std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(path.c_str(), "rb"));
  if (!fp) throw std::runtime_error("cannot open " + path);

  png_byte header[8];
  if (std::fread(header, 1, 8, fp.get()) != 8 || png_sig_cmp(header, 0, 8))
    throw std::runtime_error(path + " is not a PNG file");

  png_structp png = png_create_read_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
  if (!png) throw std::runtime_error("png_create_read_struct failed");
  png_infop info = png_create_info_struct(png);
  if (!info) {
    png_destroy_read_struct(&png, nullptr, nullptr);
    throw std::runtime_error("png_create_info_struct failed");
  }
  std::vector<png_bytep> rows;
  std::vector<png_byte> buf;
  if (setjmp(png_jmpbuf(png))) {
    png_destroy_read_struct(&png, &info, nullptr);
    throw std::runtime_error("libpng failed while reading " + path);
  }
  png_init_io(png, fp.get());
  png_set_sig_bytes(png, 8);
  png_read_info(png, info);

  png_uint_32 w = 0, h = 0;
  int bit_depth = 0, color_type = 0;
  png_get_IHDR(png, info, &w, &h, &bit_depth, &color_type, nullptr, nullptr, nullptr);

  if (color_type == PNG_COLOR_TYPE_PALETTE) png_set_palette_to_rgb(png);
  if (bit_depth == 16) png_set_strip_16(png);
  if (color_type == PNG_COLOR_TYPE_GRAY && bit_depth < 8) png_set_expand_gray_1_2_4_to_8(png);
  png_set_strip_alpha(png);
  png_read_update_info(png, info);

  const int channels = png_get_channels(png, info);
  const std::size_t rowbytes = png_get_rowbytes(png, info);
  buf.resize(rowbytes * h);
  rows.resize(h);
  for (png_uint_32 i = 0; i < h; ++i) rows[i] = buf.data() + i * rowbytes;
  png_read_image(png, rows.data());
  png_read_end(png, nullptr);
  png_destroy_read_struct(&png, &info, nullptr);

  GrayImage img(static_cast<int>(h), static_cast<int>(w));
  for (png_uint_32 i = 0; i < h; ++i) {
    const png_byte* row = buf.data() + i * rowbytes;
    for (png_uint_32 j = 0; j < w; ++j) {
      if (channels >= 3) {
        const png_byte* px = row + j * channels;
        img.at(i, j) = std::floor(0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2] + 0.5);
      } else {
        img.at(i, j) = row[j * channels];
      }
    }
  }
  return img;
}

inline void write_png(const GrayImage& img, const std::string& path) {
  require(!img.empty(), "write_png: empty image for " + path);
  const std::string tmp = path + ".tmp";
  {
    std::unique_ptr<std::FILE, detail::FileCloser> fp(std::fopen(tmp.c_str(), "wb"));
    if (!fp) throw std::runtime_error("cannot create " + tmp);
    png_structp png = png_create_write_struct(PNG_LIBPNG_VER_STRING, nullptr, nullptr, nullptr);
    if (!png) throw std::runtime_error("png_create_write_struct failed");
    png_infop info = png_create_info_struct(png);
    if (!info) {
      png_destroy_write_struct(&png, nullptr);
      throw std::runtime_error("png_create_info_struct failed");
    }
    std::vector<unsigned char> buf;
    std::vector<png_bytep> rows;
    if (setjmp(png_jmpbuf(png))) {
      png_destroy_write_struct(&png, &info);
      throw std::runtime_error("libpng failed while writing " + tmp);
    }
    png_init_io(png, fp.get());
    png_set_IHDR(png, info, img.width, img.height, 8, PNG_COLOR_TYPE_GRAY,
                 PNG_INTERLACE_NONE, PNG_COMPRESSION_TYPE_DEFAULT, PNG_FILTER_TYPE_DEFAULT);
    png_write_info(png, info);
    buf.resize(static_cast<std::size_t>(img.height) * img.width);
    rows.resize(img.height);
    for (int i = 0; i < img.height; ++i) {
      rows[i] = buf.data() + static_cast<std::size_t>(i) * img.width;
      for (int j = 0; j < img.width; ++j) rows[i][j] = detail::to_byte(img.at(i, j));
    }
    png_write_image(png, rows.data());
    png_write_end(png, nullptr);
    png_destroy_write_struct(&png, &info);
  }
  std::filesystem::rename(tmp, path);
}

inline GrayImage read_pgm(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw std::runtime_error("cannot open " + path);
  std::string magic;
  f >> magic;
  if (magic != "P5" && magic != "P2")
    throw std::runtime_error(path + " is not a P2/P5 PGM file");
  auto next_int = [&]() {
    // skip whitespace and '#' comment lines
    for (;;) {
      int ch = f.peek();
      if (ch == '#') {
        std::string line;
        std::getline(f, line);
      } else if (std::isspace(ch)) {
        f.get();
      } else {
        break;
      }
    }
    long v = -1;
    f >> v;
    return v;
  };
  const long w = next_int(), h = next_int(), maxval = next_int();
  if (w <= 0 || h <= 0 || maxval <= 0 || maxval > 255)
    throw std::runtime_error(path + ": unsupported PGM header");
  GrayImage img(static_cast<int>(h), static_cast<int>(w));
  if (magic == "P5") {
    f.get();  // single whitespace after maxval
    std::vector<unsigned char> buf(img.size());
    f.read(reinterpret_cast<char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error(path + ": truncated PGM payload");
    for (std::size_t i = 0; i < buf.size(); ++i) img.pix[i] = buf[i];
  } else {
    for (std::size_t i = 0; i < img.size(); ++i) {
      long v = next_int();
      if (v < 0) throw std::runtime_error(path + ": truncated PGM payload");
      img.pix[i] = static_cast<double>(v);
    }
  }
  return img;
}

inline void write_pgm(const GrayImage& img, const std::string& path) {
  require(!img.empty(), "write_pgm: empty image for " + path);
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary);
    if (!f) throw std::runtime_error("cannot create " + tmp);
    f << "P5\n" << img.width << " " << img.height << "\n255\n";
    std::vector<unsigned char> buf(img.size());
    for (std::size_t i = 0; i < img.size(); ++i) buf[i] = detail::to_byte(img.pix[i]);
    f.write(reinterpret_cast<const char*>(buf.data()), static_cast<std::streamsize>(buf.size()));
    if (!f) throw std::runtime_error("write failed for " + tmp);
  }
  std::filesystem::rename(tmp, path);
}

inline bool has_image_extension(const std::filesystem::path& p) {
  auto ext = p.extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(ch));
  return ext == ".png" || ext == ".pgm";
}

inline GrayImage read_image(const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(ch));
  if (ext == ".png") return read_png(path);
  if (ext == ".pgm") return read_pgm(path);
  throw std::runtime_error("unsupported image format: " + path);
}

inline void write_image(const GrayImage& img, const std::string& path) {
  auto ext = std::filesystem::path(path).extension().string();
  for (auto& ch : ext) ch = static_cast<char>(std::tolower(ch));
  if (ext == ".png") return write_png(img, path);
  if (ext == ".pgm") return write_pgm(img, path);
  throw std::runtime_error("unsupported image format: " + path);
}

}  // namespace sdnet
