#include "cdnet/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <fstream>

namespace cdnet {

namespace fs = std::filesystem;

void SamplePair::validate() const {
  if (t1.ch != 3 || t2.ch != 3 || mask.ch != 1)
    throw DataError("sample '" + id + "': t1/t2 must be RGB and mask single-channel");
  if (t1.h != t2.h || t1.w != t2.w || t1.h != mask.h || t1.w != mask.w)
    throw DataError("sample '" + id + "': raster extents disagree");
  for (uint8_t v : mask.data)
    if (v > 1) throw DataError("sample '" + id + "': mask values must be 0/1");
}

namespace {

ImageU8 crop(const ImageU8& img, int64_t y0, int64_t x0, int64_t size) {
  ImageU8 out = ImageU8::make(size, size, img.ch);
  for (int64_t y = 0; y < size; ++y)
    std::copy(img.data.begin() + ((y0 + y) * img.w + x0) * img.ch,
              img.data.begin() + ((y0 + y) * img.w + x0 + size) * img.ch,
              out.data.begin() + y * size * img.ch);
  return out;
}

void paste(ImageU8& dst, const ImageU8& src, int64_t y0, int64_t x0) {
  for (int64_t y = 0; y < src.h; ++y)
    std::copy(src.data.begin() + y * src.w * src.ch,
              src.data.begin() + (y + 1) * src.w * src.ch,
              dst.data.begin() + ((y0 + y) * dst.w + x0) * dst.ch);
}

}  // namespace

std::vector<SamplePair> tile(const SamplePair& pair, int64_t size) {
  if (size < 1) throw ShapeError("tile size must be >= 1");
  pair.validate();
  std::vector<SamplePair> out;
  const int64_t rows = pair.t1.h / size, cols = pair.t1.w / size;
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) {
      SamplePair t;
      t.id = pair.id + "_r" + std::to_string(r) + "_c" + std::to_string(c);
      t.t1 = crop(pair.t1, r * size, c * size, size);
      t.t2 = crop(pair.t2, r * size, c * size, size);
      t.mask = crop(pair.mask, r * size, c * size, size);
      out.push_back(std::move(t));
    }
  return out;
}

SamplePair stitch(const std::vector<SamplePair>& tiles, int64_t rows,
                  int64_t cols) {
  if (rows < 1 || cols < 1 ||
      static_cast<int64_t>(tiles.size()) != rows * cols)
    throw ShapeError("stitch expects rows*cols tiles");
  const int64_t size = tiles[0].t1.h;
  for (const auto& t : tiles)
    if (t.t1.h != size || t.t1.w != size)
      throw ShapeError("stitch requires square tiles of equal size");
  SamplePair out;
  // Common prefix up to the tiling suffix "_r<i>_c<j>".
  const std::string& first = tiles[0].id;
  const size_t cut = first.rfind("_r");
  out.id = cut == std::string::npos ? first : first.substr(0, cut);
  out.t1 = ImageU8::make(rows * size, cols * size, 3);
  out.t2 = ImageU8::make(rows * size, cols * size, 3);
  out.mask = ImageU8::make(rows * size, cols * size, 1);
  for (int64_t r = 0; r < rows; ++r)
    for (int64_t c = 0; c < cols; ++c) {
      const SamplePair& t = tiles[static_cast<size_t>(r * cols + c)];
      paste(out.t1, t.t1, r * size, c * size);
      paste(out.t2, t.t2, r * size, c * size);
      paste(out.mask, t.mask, r * size, c * size);
    }
  return out;
}

ImageU8 apply_aug(const ImageU8& img, int k, bool flip_h, bool flip_v) {
  k = ((k % 4) + 4) % 4;
  ImageU8 cur = img;
  for (int i = 0; i < k; ++i) {  // one counterclockwise quarter turn
    ImageU8 nx = ImageU8::make(cur.w, cur.h, cur.ch);
    for (int64_t y = 0; y < cur.h; ++y)
      for (int64_t x = 0; x < cur.w; ++x)
        for (int64_t c = 0; c < cur.ch; ++c)
          nx.at(cur.w - 1 - x, y, c) = cur.at(y, x, c);
    cur = std::move(nx);
  }
  if (flip_h) {  // mirror left-right
    ImageU8 nx = ImageU8::make(cur.h, cur.w, cur.ch);
    for (int64_t y = 0; y < cur.h; ++y)
      for (int64_t x = 0; x < cur.w; ++x)
        for (int64_t c = 0; c < cur.ch; ++c)
          nx.at(y, cur.w - 1 - x, c) = cur.at(y, x, c);
    cur = std::move(nx);
  }
  if (flip_v) {  // mirror top-bottom
    ImageU8 nx = ImageU8::make(cur.h, cur.w, cur.ch);
    for (int64_t y = 0; y < cur.h; ++y)
      for (int64_t x = 0; x < cur.w; ++x)
        for (int64_t c = 0; c < cur.ch; ++c)
          nx.at(cur.h - 1 - y, x, c) = cur.at(y, x, c);
    cur = std::move(nx);
  }
  return cur;
}

SamplePair augment(const SamplePair& pair, Rng& rng) {
  const int k = static_cast<int>(rng.uniform_int(4));
  const bool fh = rng.uniform_int(2) == 1;
  const bool fv = rng.uniform_int(2) == 1;
  SamplePair out;
  out.id = pair.id;
  out.t1 = apply_aug(pair.t1, k, fh, fv);
  out.t2 = apply_aug(pair.t2, k, fh, fv);
  out.mask = apply_aug(pair.mask, k, fh, fv);
  return out;
}

namespace {

struct ShapeSpec {
  bool ellipse = false;
  int64_t cy = 0, cx = 0, ry = 1, rx = 1;  // half-extents
  uint8_t r = 0, g = 0, b = 0;
  bool contains(int64_t y, int64_t x) const {
    if (ellipse) {
      const double dy = static_cast<double>(y - cy) / static_cast<double>(ry);
      const double dx = static_cast<double>(x - cx) / static_cast<double>(rx);
      return dy * dy + dx * dx <= 1.0;
    }
    return std::llabs(y - cy) <= ry && std::llabs(x - cx) <= rx;
  }
};

ShapeSpec random_shape(Rng& rng, int64_t size) {
  ShapeSpec s;
  s.ellipse = rng.uniform_int(2) == 1;
  const int64_t min_r = std::max<int64_t>(3, size / 16);
  const int64_t max_r = std::max<int64_t>(min_r + 1, size / 5);
  s.ry = min_r + rng.uniform_int(max_r - min_r);
  s.rx = min_r + rng.uniform_int(max_r - min_r);
  s.cy = s.ry + rng.uniform_int(std::max<int64_t>(1, size - 2 * s.ry));
  s.cx = s.rx + rng.uniform_int(std::max<int64_t>(1, size - 2 * s.rx));
  // Bright, saturated colors so changes are separable from the dim texture.
  s.r = static_cast<uint8_t>(128 + rng.uniform_int(128));
  s.g = static_cast<uint8_t>(128 + rng.uniform_int(128));
  s.b = static_cast<uint8_t>(128 + rng.uniform_int(128));
  return s;
}

// Paints the shape; when mask != nullptr also sets changed pixels to 1.
void draw(ImageU8& img, const ShapeSpec& s, ImageU8* mask) {
  for (int64_t y = std::max<int64_t>(0, s.cy - s.ry);
       y <= std::min<int64_t>(img.h - 1, s.cy + s.ry); ++y)
    for (int64_t x = std::max<int64_t>(0, s.cx - s.rx);
         x <= std::min<int64_t>(img.w - 1, s.cx + s.rx); ++x)
      if (s.contains(y, x)) {
        img.at(y, x, 0) = s.r;
        img.at(y, x, 1) = s.g;
        img.at(y, x, 2) = s.b;
        if (mask) mask->at(y, x) = 1;
      }
}

}  // namespace

std::vector<SamplePair> synth_dataset(int n, int64_t size, uint64_t seed) {
  if (n < 0) throw ShapeError("sample count must be nonnegative");
  Rng rng(seed);
  std::vector<SamplePair> out;
  out.reserve(static_cast<size_t>(n));
  for (int i = 0; i < n; ++i) {
    SamplePair p;
    p.id = "synth" + std::to_string(i);
    p.t1 = ImageU8::make(size, size, 3);
    p.mask = ImageU8::make(size, size, 1);
    // Dim shared texture: smooth gradient plus per-pixel noise.
    const double gy = rng.uniform(0.0, 60.0), gx = rng.uniform(0.0, 60.0);
    for (int64_t y = 0; y < size; ++y)
      for (int64_t x = 0; x < size; ++x) {
        const double base = 30.0 + gy * static_cast<double>(y) / static_cast<double>(size) +
                            gx * static_cast<double>(x) / static_cast<double>(size);
        for (int64_t c = 0; c < 3; ++c) {
          const double v = base + rng.uniform(-12.0, 12.0);
          p.t1.at(y, x, c) = static_cast<uint8_t>(std::clamp(v, 0.0, 110.0));
        }
      }
    // Static decoys appear identically in both epochs.
    const int64_t decoys = rng.uniform_int(3);
    for (int64_t d = 0; d < decoys; ++d) draw(p.t1, random_shape(rng, size), nullptr);
    p.t2 = p.t1;
    // Change shapes land in exactly one epoch; the mask records their union.
    const int64_t changes = 1 + rng.uniform_int(3);
    for (int64_t c = 0; c < changes; ++c) {
      const ShapeSpec s = random_shape(rng, size);
      ImageU8& target = rng.uniform_int(2) == 1 ? p.t1 : p.t2;
      draw(target, s, &p.mask);
    }
    out.push_back(std::move(p));
  }
  return out;
}

std::string save_dataset(const std::string& dir,
                         const std::vector<SamplePair>& samples) {
  fs::create_directories(dir);
  const std::string manifest_path = (fs::path(dir) / "manifest.txt").string();
  std::ofstream manifest(manifest_path);
  if (!manifest) throw DataError("cannot open '" + manifest_path + "' for writing");
  for (const auto& s : samples) {
    s.validate();
    const std::string t1 = s.id + "_t1.ppm";
    const std::string t2 = s.id + "_t2.ppm";
    const std::string mk = s.id + "_mask.pgm";
    write_ppm((fs::path(dir) / t1).string(), s.t1);
    write_ppm((fs::path(dir) / t2).string(), s.t2);
    ImageU8 scaled = s.mask;
    for (auto& v : scaled.data) v = v ? 255 : 0;
    write_pgm((fs::path(dir) / mk).string(), scaled);
    manifest << s.id << '\t' << t1 << '\t' << t2 << '\t' << mk << '\n';
  }
  if (!manifest) throw DataError("short write to '" + manifest_path + "'");
  return manifest_path;
}

std::vector<ManifestEntry> read_manifest(const std::string& manifest_path) {
  std::ifstream f(manifest_path);
  if (!f) throw DataError("cannot open manifest '" + manifest_path + "'");
  const fs::path base = fs::path(manifest_path).parent_path();
  std::vector<ManifestEntry> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    ManifestEntry e;
    std::string* fields[4] = {&e.id, &e.t1, &e.t2, &e.mask};
    size_t start = 0;
    for (int k = 0; k < 4; ++k) {
      const size_t tab = line.find('\t', start);
      if (k < 3 && tab == std::string::npos)
        throw DataError(manifest_path + ":" + std::to_string(lineno) +
                        ": expected 4 tab-separated fields");
      *fields[k] = line.substr(start, tab == std::string::npos
                                          ? std::string::npos
                                          : tab - start);
      start = tab + 1;
    }
    for (std::string* p : {&e.t1, &e.t2, &e.mask})
      *p = (base / *p).string();
    out.push_back(std::move(e));
  }
  return out;
}

SamplePair load_pair(const ManifestEntry& entry) {
  SamplePair p;
  p.id = entry.id;
  p.t1 = read_ppm(entry.t1);
  p.t2 = read_ppm(entry.t2);
  p.mask = read_pgm(entry.mask);
  for (auto& v : p.mask.data) v = v > 127 ? 1 : 0;
  p.validate();
  return p;
}

std::vector<SamplePair> load_dataset(const std::string& manifest_path) {
  std::vector<SamplePair> out;
  for (const auto& e : read_manifest(manifest_path)) out.push_back(load_pair(e));
  return out;
}

Tensor image_to_tensor(const ImageU8& img) {
  Tensor t({1, img.ch, img.h, img.w}, 0.0);
  for (int64_t c = 0; c < img.ch; ++c)
    for (int64_t y = 0; y < img.h; ++y)
      for (int64_t x = 0; x < img.w; ++x)
        t[(c * img.h + y) * img.w + x] =
            static_cast<double>(img.at(y, x, c)) / 255.0;
  return t;
}

Tensor mask_to_tensor(const ImageU8& mask) {
  if (mask.ch != 1) throw DataError("mask tensor conversion expects 1 channel");
  Tensor t({1, 1, mask.h, mask.w}, 0.0);
  for (int64_t i = 0; i < mask.size(); ++i)
    t[i] = mask.data[static_cast<size_t>(i)] ? 1.0 : 0.0;
  return t;
}

Tensor batch_images(const std::vector<const ImageU8*>& imgs) {
  if (imgs.empty()) throw ShapeError("cannot batch zero images");
  const int64_t N = static_cast<int64_t>(imgs.size());
  const ImageU8& first = *imgs[0];
  Tensor t({N, first.ch, first.h, first.w}, 0.0);
  const int64_t plane = first.ch * first.h * first.w;
  for (int64_t n = 0; n < N; ++n) {
    const ImageU8& img = *imgs[static_cast<size_t>(n)];
    if (img.h != first.h || img.w != first.w || img.ch != first.ch)
      throw ShapeError("batched images must share extents");
    Tensor one = image_to_tensor(img);
    std::copy(one.data().begin(), one.data().end(), t.data().begin() + n * plane);
  }
  return t;
}

ImageU8 tensor_to_mask(const Tensor& t, double threshold) {
  if (t.rank() != 4 || t.dim(0) != 1 || t.dim(1) != 1)
    throw ShapeError("tensor_to_mask expects [1,1,H,W]");
  ImageU8 img = ImageU8::make(t.dim(2), t.dim(3), 1);
  for (int64_t i = 0; i < t.numel(); ++i)
    img.data[static_cast<size_t>(i)] = t[i] >= threshold ? 1 : 0;
  return img;
}

}  // namespace cdnet
