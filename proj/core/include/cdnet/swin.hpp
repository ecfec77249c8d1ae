#pragma once

#include <string>
#include <vector>

#include "cdnet/params.hpp"
#include "cdnet/tensor.hpp"

namespace cdnet {

// Affine map on the last axis: x[...,in] -> x @ w + b.
struct LinearLayer {
  Tensor w;  // [in, out]
  Tensor b;  // [out]; undefined when bias-free
  Tensor operator()(const Tensor& x) const;
};

LinearLayer make_linear(ParamRegistry& reg, Rng& rng, const std::string& prefix,
                        int64_t in, int64_t out, bool bias = true);

struct LayerNormLayer {
  Tensor g, b;  // [dim]
  Tensor operator()(const Tensor& x) const { return layer_norm(x, g, b); }
};

LayerNormLayer make_layer_norm(ParamRegistry& reg, const std::string& prefix,
                               int64_t dim);

// linear -> GELU -> linear with an expansion factor.
struct MlpLayer {
  LinearLayer fc1, fc2;
  Tensor operator()(const Tensor& x) const { return fc2(gelu(fc1(x))); }
};

MlpLayer make_mlp(ParamRegistry& reg, Rng& rng, const std::string& prefix,
                  int64_t dim, int mlp_ratio);

struct SwinStageConfig {
  int64_t dim = 0;
  int heads = 1;
  int window = 4;      // requested side length; shrinks to min(window, h, w)
  int depth = 2;       // number of blocks; even so regular/shifted alternate
  int mlp_ratio = 4;
  bool use_rel_bias = true;
  void validate() const;
};

// Geometry of one windowing pass over an (h, w) token grid: the effective
// window side, the cyclic shift, and (for shifted grids) the additive
// attention mask that separates wrapped regions.
struct WindowLayout {
  int64_t h = 0, w = 0;
  int64_t window = 0;  // effective side length
  int64_t shift = 0;   // 0 (regular) or window/2 (shifted multi-window grids)
  int64_t wins_y = 0, wins_x = 0;
  Tensor mask;         // [num_windows, T, T] of {0, -1e9}; undefined if unshifted
  int64_t tokens() const { return window * window; }
  int64_t num_windows() const { return wins_y * wins_x; }
};

// Shrinks the window to fit the grid and disables the shift when only one
// window remains. Throws if the grid is not an exact multiple of the
// effective window (no silent padding).
WindowLayout make_window_layout(int64_t h, int64_t w, int window, bool shifted);

// [N,h,w,C] -> [N*num_windows, T, C]; applies the cyclic shift first.
Tensor window_partition(const Tensor& x, const WindowLayout& lo);
// Exact inverse of window_partition.
Tensor window_unpartition(const Tensor& x, const WindowLayout& lo, int64_t n);

// Relative-position index for an M x M window: entry (i*T + j) selects the
// bias-table row for query i / key j.
std::vector<int64_t> relative_position_index(int64_t window);

// Multi-head self-attention within windows. tokens: [B, T, C] where
// B = n * num_windows; mask (optional) is the layout's [num_windows, T, T].
struct WindowAttention {
  int64_t dim = 0;
  int heads = 1;
  LinearLayer q, k, v, proj;
  Tensor rel;  // [(2M-1)^2, heads]; undefined when bias is disabled
  int64_t rel_window = 0;  // M used to size the table
  Tensor operator()(const Tensor& tokens, const Tensor& mask, int64_t n) const;
};

WindowAttention make_window_attention(ParamRegistry& reg, Rng& rng,
                                      const std::string& prefix,
                                      const SwinStageConfig& cfg);

// One transformer block: x += MHSA(LN(x)) over windows, then x += MLP(LN(x)).
// `shifted` selects the cyclically shifted windowing.
struct SwinBlock {
  LayerNormLayer ln1, ln2;
  WindowAttention attn;
  MlpLayer mlp;
  int window = 4;
  bool shifted = false;
  Tensor operator()(const Tensor& x) const;  // x: [N,h,w,C]
};

SwinBlock make_swin_block(ParamRegistry& reg, Rng& rng, const std::string& prefix,
                          const SwinStageConfig& cfg, bool shifted);

// `depth` blocks alternating regular/shifted windowing (pairs of Eq-style
// W then SW attention).
struct SwinStage {
  std::vector<SwinBlock> blocks;
  Tensor operator()(const Tensor& x) const;
};

SwinStage make_swin_stage(ParamRegistry& reg, Rng& rng, const std::string& prefix,
                          const SwinStageConfig& cfg);

// Non-overlapping patch projection: [N,3,H,W] -> [N, (H/p)*(W/p), dim].
// Equivalent to a stride-p conv followed by flattening.
Tensor patch_embed(const Tensor& image, const Tensor& w, const Tensor& b,
                   int patch);

// Conv patch projection to a token grid, plus post-embedding layer norm.
struct PatchEmbedLayer {
  Tensor w;  // [dim, in_ch, p, p]
  Tensor b;  // [dim]
  LayerNormLayer ln;
  int patch = 4;
  Tensor operator()(const Tensor& image) const;  // -> [N, H/p, W/p, dim]
};

PatchEmbedLayer make_patch_embed(ParamRegistry& reg, Rng& rng,
                                 const std::string& prefix, int64_t in_ch,
                                 int64_t dim, int patch);

// 2x2 neighborhood concat -> LN -> linear 4C -> 2C. [N,h,w,C] -> [N,h/2,w/2,2C].
struct PatchMergeLayer {
  LayerNormLayer ln;
  LinearLayer reduce;
  Tensor operator()(const Tensor& x) const;
};

PatchMergeLayer make_patch_merge(ParamRegistry& reg, Rng& rng,
                                 const std::string& prefix, int64_t dim);

// linear C -> 4C, then each token's 4C becomes a 2x2 spatial block of C.
// [N,h,w,C] -> [N,2h,2w,C].
struct PatchUnmergeLayer {
  LinearLayer expand;
  Tensor operator()(const Tensor& x) const;
};

PatchUnmergeLayer make_patch_unmerge(ParamRegistry& reg, Rng& rng,
                                     const std::string& prefix, int64_t dim);

// Shared weight-init transforms.
double init_normal02(Rng& rng);                 // N(0, 0.02)
std::function<double(Rng&)> init_he(int64_t fan_in);

}  // namespace cdnet
