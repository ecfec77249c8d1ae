#include "cdnet/swin.hpp"

#include <cmath>

namespace cdnet {

double init_normal02(Rng& rng) { return rng.normal(0.0, 0.02); }

std::function<double(Rng&)> init_he(int64_t fan_in) {
  const double s = std::sqrt(2.0 / static_cast<double>(fan_in));
  return [s](Rng& rng) { return rng.normal(0.0, s); };
}

Tensor LinearLayer::operator()(const Tensor& x) const {
  Tensor y = matmul(x, w);
  if (b.defined()) y = add(y, b);
  return y;
}

LinearLayer make_linear(ParamRegistry& reg, Rng& rng, const std::string& prefix,
                        int64_t in, int64_t out, bool bias) {
  LinearLayer l;
  l.w = reg.create(prefix + ".w", {in, out}, init_normal02, rng);
  if (bias) l.b = reg.create_const(prefix + ".b", {out}, 0.0);
  return l;
}

LayerNormLayer make_layer_norm(ParamRegistry& reg, const std::string& prefix,
                               int64_t dim) {
  LayerNormLayer l;
  l.g = reg.create_const(prefix + ".g", {dim}, 1.0);
  l.b = reg.create_const(prefix + ".b", {dim}, 0.0);
  return l;
}

MlpLayer make_mlp(ParamRegistry& reg, Rng& rng, const std::string& prefix,
                  int64_t dim, int mlp_ratio) {
  MlpLayer m;
  m.fc1 = make_linear(reg, rng, prefix + ".fc1", dim, dim * mlp_ratio);
  m.fc2 = make_linear(reg, rng, prefix + ".fc2", dim * mlp_ratio, dim);
  return m;
}

void SwinStageConfig::validate() const {
  if (dim <= 0 || heads <= 0 || window <= 0 || depth <= 0 || mlp_ratio <= 0)
    throw ShapeError("stage config fields must be positive");
  if (dim % heads != 0)
    throw ShapeError("stage dim " + std::to_string(dim) +
                     " not divisible by heads " + std::to_string(heads));
  if (depth % 2 != 0)
    throw ShapeError("stage depth must be even (regular/shifted alternation)");
}

WindowLayout make_window_layout(int64_t h, int64_t w, int window, bool shifted) {
  if (h <= 0 || w <= 0 || window <= 0)
    throw ShapeError("window layout requires positive extents");
  WindowLayout lo;
  lo.h = h;
  lo.w = w;
  lo.window = std::min<int64_t>({static_cast<int64_t>(window), h, w});
  if (h % lo.window != 0 || w % lo.window != 0)
    throw ShapeError("grid " + std::to_string(h) + "x" + std::to_string(w) +
                     " is not a multiple of window " + std::to_string(lo.window));
  lo.wins_y = h / lo.window;
  lo.wins_x = w / lo.window;
  const bool multi = lo.num_windows() > 1;
  lo.shift = (shifted && multi) ? lo.window / 2 : 0;
  if (lo.shift > 0) {
    // Region ids on the shifted canvas: along each axis the slices
    // [0, e-M), [e-M, e-s), [e-s, e) hold content that was contiguous in the
    // unshifted map; tokens may attend only within identical (row, col)
    // region pairs.
    const int64_t M = lo.window, s = lo.shift;
    auto region = [M, s](int64_t c, int64_t extent) {
      if (c < extent - M) return int64_t{0};
      if (c < extent - s) return int64_t{1};
      return int64_t{2};
    };
    const int64_t T = lo.tokens();
    const int64_t nw = lo.num_windows();
    Tensor mask({nw, T, T}, 0.0);
    for (int64_t wy = 0; wy < lo.wins_y; ++wy)
      for (int64_t wx = 0; wx < lo.wins_x; ++wx) {
        const int64_t widx = wy * lo.wins_x + wx;
        std::vector<int64_t> gid(static_cast<size_t>(T));
        for (int64_t i = 0; i < T; ++i) {
          const int64_t y = wy * M + i / M;
          const int64_t x = wx * M + i % M;
          gid[static_cast<size_t>(i)] = 3 * region(y, h) + region(x, w);
        }
        for (int64_t i = 0; i < T; ++i)
          for (int64_t j = 0; j < T; ++j)
            if (gid[static_cast<size_t>(i)] != gid[static_cast<size_t>(j)])
              mask[(widx * T + i) * T + j] = -1e9;
      }
    lo.mask = mask;
  }
  return lo;
}

Tensor window_partition(const Tensor& x, const WindowLayout& lo) {
  if (x.rank() != 4 || x.dim(1) != lo.h || x.dim(2) != lo.w)
    throw ShapeError("window_partition input does not match layout");
  const int64_t N = x.dim(0), C = x.dim(3), M = lo.window;
  Tensor t = x;
  if (lo.shift > 0)
    t = roll2d(t, static_cast<int>(-lo.shift), static_cast<int>(-lo.shift));
  t = reshape(t, {N, lo.wins_y, M, lo.wins_x, M, C});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  return reshape(t, {N * lo.num_windows(), M * M, C});
}

Tensor window_unpartition(const Tensor& x, const WindowLayout& lo, int64_t n) {
  const int64_t M = lo.window, C = x.dim(-1);
  if (x.rank() != 3 || x.dim(0) != n * lo.num_windows() || x.dim(1) != M * M)
    throw ShapeError("window_unpartition input does not match layout");
  Tensor t = reshape(x, {n, lo.wins_y, lo.wins_x, M, M, C});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  t = reshape(t, {n, lo.h, lo.w, C});
  if (lo.shift > 0)
    t = roll2d(t, static_cast<int>(lo.shift), static_cast<int>(lo.shift));
  return t;
}

std::vector<int64_t> relative_position_index(int64_t window) {
  const int64_t T = window * window;
  std::vector<int64_t> idx(static_cast<size_t>(T * T));
  const int64_t span = 2 * window - 1;
  for (int64_t i = 0; i < T; ++i) {
    const int64_t yi = i / window, xi = i % window;
    for (int64_t j = 0; j < T; ++j) {
      const int64_t yj = j / window, xj = j % window;
      const int64_t dy = yi - yj + window - 1;
      const int64_t dx = xi - xj + window - 1;
      idx[static_cast<size_t>(i * T + j)] = dy * span + dx;
    }
  }
  return idx;
}

Tensor WindowAttention::operator()(const Tensor& tokens, const Tensor& mask,
                                   int64_t n) const {
  if (tokens.rank() != 3) throw ShapeError("window attention expects [B,T,C]");
  const int64_t B = tokens.dim(0), T = tokens.dim(1), C = tokens.dim(2);
  if (C != dim) throw ShapeError("window attention channel mismatch");
  const int64_t H = heads, Ch = C / H;
  auto split_heads = [&](const Tensor& t) {
    return permute(reshape(t, {B, T, H, Ch}), {0, 2, 1, 3});  // [B,H,T,Ch]
  };
  Tensor qh = split_heads(q(tokens));
  Tensor kh = split_heads(k(tokens));
  Tensor vh = split_heads(v(tokens));
  qh = scale(qh, 1.0 / std::sqrt(static_cast<double>(Ch)));
  Tensor scores = matmul(qh, permute(kh, {0, 1, 3, 2}));  // [B,H,T,T]
  if (rel.defined()) {
    const int64_t m = static_cast<int64_t>(std::llround(std::sqrt(static_cast<double>(T))));
    if (m * m != T) throw ShapeError("token count is not a square window");
    Tensor bias = embedding_rows(rel, relative_position_index(m));  // [T*T, H]
    bias = permute(reshape(bias, {T, T, H}), {2, 0, 1});            // [H,T,T]
    scores = add(scores, bias);
  }
  if (mask.defined()) {
    const int64_t nw = mask.dim(0);
    if (B != n * nw || mask.dim(1) != T || mask.dim(2) != T)
      throw ShapeError("attention mask shape mismatch");
    scores = reshape(scores, {n, nw, H, T, T});
    scores = add(scores, reshape(mask, {nw, 1, T, T}));
    scores = reshape(scores, {B, H, T, T});
  }
  Tensor attn = softmax(scores, -1);
  Tensor out = matmul(attn, vh);                 // [B,H,T,Ch]
  out = reshape(permute(out, {0, 2, 1, 3}), {B, T, C});
  return proj(out);
}

WindowAttention make_window_attention(ParamRegistry& reg, Rng& rng,
                                      const std::string& prefix,
                                      const SwinStageConfig& cfg) {
  WindowAttention a;
  a.dim = cfg.dim;
  a.heads = cfg.heads;
  a.q = make_linear(reg, rng, prefix + ".q", cfg.dim, cfg.dim);
  a.k = make_linear(reg, rng, prefix + ".k", cfg.dim, cfg.dim);
  a.v = make_linear(reg, rng, prefix + ".v", cfg.dim, cfg.dim);
  a.proj = make_linear(reg, rng, prefix + ".proj", cfg.dim, cfg.dim);
  if (cfg.use_rel_bias) {
    const int64_t span = 2 * cfg.window - 1;
    a.rel = reg.create(prefix + ".rel", {span * span, cfg.heads}, init_normal02,
                       rng);
    a.rel_window = cfg.window;
  }
  return a;
}

Tensor SwinBlock::operator()(const Tensor& x) const {
  if (x.rank() != 4) throw ShapeError("swin block expects [N,h,w,C]");
  const int64_t N = x.dim(0);
  const WindowLayout lo = make_window_layout(x.dim(1), x.dim(2), window, shifted);
  Tensor t = window_partition(ln1(x), lo);
  t = attn(t, lo.mask, N);
  Tensor y = add(x, window_unpartition(t, lo, N));
  return add(y, mlp(ln2(y)));
}

SwinBlock make_swin_block(ParamRegistry& reg, Rng& rng, const std::string& prefix,
                          const SwinStageConfig& cfg, bool shifted) {
  SwinBlock b;
  b.ln1 = make_layer_norm(reg, prefix + ".ln1", cfg.dim);
  b.ln2 = make_layer_norm(reg, prefix + ".ln2", cfg.dim);
  b.attn = make_window_attention(reg, rng, prefix + ".attn", cfg);
  b.mlp = make_mlp(reg, rng, prefix + ".mlp", cfg.dim, cfg.mlp_ratio);
  b.window = cfg.window;
  b.shifted = shifted;
  return b;
}

Tensor SwinStage::operator()(const Tensor& x) const {
  Tensor t = x;
  for (const auto& b : blocks) t = b(t);
  return t;
}

SwinStage make_swin_stage(ParamRegistry& reg, Rng& rng, const std::string& prefix,
                          const SwinStageConfig& cfg) {
  cfg.validate();
  SwinStage s;
  s.blocks.reserve(static_cast<size_t>(cfg.depth));
  for (int i = 0; i < cfg.depth; ++i)
    s.blocks.push_back(
        make_swin_block(reg, rng, prefix + ".b" + std::to_string(i), cfg,
                        /*shifted=*/i % 2 == 1));
  return s;
}

Tensor patch_embed(const Tensor& image, const Tensor& w, const Tensor& b,
                   int patch) {
  if (image.rank() != 4) throw ShapeError("patch_embed expects [N,3,H,W]");
  if (image.dim(2) % patch != 0 || image.dim(3) % patch != 0)
    throw ShapeError("patch_embed extents must be divisible by the patch size");
  Tensor y = conv2d(image, w, b, patch, 0);  // [N,dim,H/p,W/p]
  const int64_t N = y.dim(0), C = y.dim(1), h = y.dim(2), ww = y.dim(3);
  return reshape(permute(y, {0, 2, 3, 1}), {N, h * ww, C});
}

Tensor PatchEmbedLayer::operator()(const Tensor& image) const {
  if (image.dim(2) % patch != 0 || image.dim(3) % patch != 0)
    throw ShapeError("patch_embed extents must be divisible by the patch size");
  Tensor y = conv2d(image, w, b, patch, 0);
  y = permute(y, {0, 2, 3, 1});  // [N,h,w,dim]
  return ln(y);
}

PatchEmbedLayer make_patch_embed(ParamRegistry& reg, Rng& rng,
                                 const std::string& prefix, int64_t in_ch,
                                 int64_t dim, int patch) {
  PatchEmbedLayer e;
  e.patch = patch;
  e.w = reg.create(prefix + ".w", {dim, in_ch, patch, patch},
                   init_he(in_ch * patch * patch), rng);
  e.b = reg.create_const(prefix + ".b", {dim}, 0.0);
  e.ln = make_layer_norm(reg, prefix + ".ln", dim);
  return e;
}

Tensor PatchMergeLayer::operator()(const Tensor& x) const {
  if (x.rank() != 4) throw ShapeError("patch_merge expects [N,h,w,C]");
  const int64_t N = x.dim(0), h = x.dim(1), w = x.dim(2), C = x.dim(3);
  if (h % 2 != 0 || w % 2 != 0)
    throw ShapeError("patch_merge requires even extents, got " +
                     shape_str(x.shape()));
  Tensor t = reshape(x, {N, h / 2, 2, w / 2, 2, C});
  t = permute(t, {0, 1, 3, 2, 4, 5});
  t = reshape(t, {N, h / 2, w / 2, 4 * C});
  return reduce(ln(t));
}

PatchMergeLayer make_patch_merge(ParamRegistry& reg, Rng& rng,
                                 const std::string& prefix, int64_t dim) {
  PatchMergeLayer m;
  m.ln = make_layer_norm(reg, prefix + ".ln", 4 * dim);
  m.reduce = make_linear(reg, rng, prefix + ".reduce", 4 * dim, 2 * dim,
                         /*bias=*/false);
  return m;
}

Tensor PatchUnmergeLayer::operator()(const Tensor& x) const {
  if (x.rank() != 4) throw ShapeError("patch_unmerge expects [N,h,w,C]");
  const int64_t N = x.dim(0), h = x.dim(1), w = x.dim(2), C = x.dim(3);
  Tensor t = expand(x);  // [N,h,w,4C]
  t = reshape(t, {N, h, w, 2, 2, C});
  t = permute(t, {0, 1, 3, 2, 4, 5});  // [N,h,2,w,2,C]
  return reshape(t, {N, 2 * h, 2 * w, C});
}

PatchUnmergeLayer make_patch_unmerge(ParamRegistry& reg, Rng& rng,
                                     const std::string& prefix, int64_t dim) {
  PatchUnmergeLayer u;
  u.expand = make_linear(reg, rng, prefix + ".expand", dim, 4 * dim);
  return u;
}

}  // namespace cdnet
