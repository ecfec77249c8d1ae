#include "cdnet/image_io.hpp"

#include <bit>
#include <cctype>
#include <fstream>

#include "cdnet/tensor.hpp"  // DataError

namespace cdnet {

ImageU8 ImageU8::make(int64_t h, int64_t w, int64_t ch, uint8_t fill) {
  ImageU8 img;
  img.h = h;
  img.w = w;
  img.ch = ch;
  img.data.assign(static_cast<size_t>(h * w * ch), fill);
  return img;
}

namespace {

void write_netpbm(const std::string& path, const ImageU8& img, const char* magic,
                  int64_t channels) {
  if (img.ch != channels)
    throw DataError(path + ": expected " + std::to_string(channels) +
                    "-channel raster");
  if (img.h <= 0 || img.w <= 0 || img.size() != static_cast<int64_t>(img.data.size()))
    throw DataError(path + ": malformed raster dimensions");
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f << magic << "\n" << img.w << " " << img.h << "\n255\n";
  f.write(reinterpret_cast<const char*>(img.data.data()),
          static_cast<std::streamsize>(img.data.size()));
  if (!f) throw DataError("short write to '" + path + "'");
}

// Reads the next whitespace/comment-delimited header token, consuming the
// single whitespace byte that terminates it.
std::string next_token(std::istream& in, const std::string& path) {
  std::string tok;
  int c;
  while ((c = in.get()) != EOF) {
    if (c == '#') {  // comment runs to end of line
      while (c != EOF && c != '\n') c = in.get();
      if (!tok.empty()) break;
      continue;
    }
    if (std::isspace(c)) {
      if (!tok.empty()) break;  // leading whitespace is skipped
      continue;
    }
    tok.push_back(static_cast<char>(c));
  }
  if (tok.empty()) throw DataError(path + ": truncated header");
  return tok;
}

int64_t parse_dim(const std::string& tok, const std::string& path) {
  try {
    size_t pos = 0;
    const long long v = std::stoll(tok, &pos);
    if (pos != tok.size() || v <= 0) throw std::invalid_argument("range");
    return v;
  } catch (const std::exception&) {
    throw DataError(path + ": bad header field '" + tok + "'");
  }
}

ImageU8 read_netpbm(const std::string& path, const char* magic,
                    int64_t channels) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  if (next_token(f, path) != magic)
    throw DataError(path + ": not a " + std::string(magic) + " file");
  ImageU8 img;
  img.w = parse_dim(next_token(f, path), path);
  img.h = parse_dim(next_token(f, path), path);
  img.ch = channels;
  const int64_t maxval = parse_dim(next_token(f, path), path);
  if (maxval != 255) throw DataError(path + ": only maxval 255 is supported");
  img.data.resize(static_cast<size_t>(img.size()));
  f.read(reinterpret_cast<char*>(img.data.data()),
         static_cast<std::streamsize>(img.data.size()));
  if (f.gcount() != static_cast<std::streamsize>(img.data.size()))
    throw DataError(path + ": truncated pixel data");
  return img;
}

}  // namespace

void write_ppm(const std::string& path, const ImageU8& img) {
  write_netpbm(path, img, "P6", 3);
}

ImageU8 read_ppm(const std::string& path) { return read_netpbm(path, "P6", 3); }

void write_pgm(const std::string& path, const ImageU8& img) {
  write_netpbm(path, img, "P5", 1);
}

ImageU8 read_pgm(const std::string& path) { return read_netpbm(path, "P5", 1); }

static_assert(std::endian::native == std::endian::little,
              "raw float sidecars assume a little-endian host");

void write_f32_raw(const std::string& path, const std::vector<float>& values) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "' for writing");
  f.write(reinterpret_cast<const char*>(values.data()),
          static_cast<std::streamsize>(values.size() * sizeof(float)));
  if (!f) throw DataError("short write to '" + path + "'");
}

std::vector<float> read_f32_raw(const std::string& path, size_t expected) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw DataError("cannot open '" + path + "'");
  std::vector<float> v(expected);
  f.read(reinterpret_cast<char*>(v.data()),
         static_cast<std::streamsize>(expected * sizeof(float)));
  if (f.gcount() != static_cast<std::streamsize>(expected * sizeof(float)))
    throw DataError(path + ": expected " + std::to_string(expected) +
                    " float32 values");
  return v;
}

}  // namespace cdnet
