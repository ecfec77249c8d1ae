#pragma once

#include <cstdint>
#include <string>
#include <vector>

namespace cdnet {

// Row-major 8-bit raster; channels interleaved (ch=3 for RGB, 1 for gray).
struct ImageU8 {
  int64_t h = 0, w = 0, ch = 1;
  std::vector<uint8_t> data;
  int64_t size() const { return h * w * ch; }
  uint8_t& at(int64_t y, int64_t x, int64_t c = 0) {
    return data[static_cast<size_t>((y * w + x) * ch + c)];
  }
  uint8_t at(int64_t y, int64_t x, int64_t c = 0) const {
    return data[static_cast<size_t>((y * w + x) * ch + c)];
  }
  static ImageU8 make(int64_t h, int64_t w, int64_t ch, uint8_t fill = 0);
};

// Binary PPM (P6, maxval 255), RGB only.
void write_ppm(const std::string& path, const ImageU8& img);
ImageU8 read_ppm(const std::string& path);

// Binary PGM (P5, maxval 255), single channel.
void write_pgm(const std::string& path, const ImageU8& img);
ImageU8 read_pgm(const std::string& path);

// Headerless little-endian float32 sidecar (dimensions come from the paired
// PGM file).
void write_f32_raw(const std::string& path, const std::vector<float>& values);
std::vector<float> read_f32_raw(const std::string& path, size_t expected);

}  // namespace cdnet
