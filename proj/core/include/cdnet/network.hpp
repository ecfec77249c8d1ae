#pragma once

#include <array>
#include <memory>
#include <string>
#include <vector>

#include "cdnet/swin.hpp"
#include "cdnet/tensor.hpp"

namespace cdnet {

// All architecture hyperparameters. The defaults describe the full-size
// network; toy() is the desk-scale preset used by tests and CLI defaults.
struct ModelConfig {
  int64_t base_dim = 96;                         // C; level widths C..16C pre-projection
  std::vector<int> stage_depths = {2, 2, 6, 2, 2};
  std::vector<int> stage_heads = {3, 6, 12, 24, 48};
  int window = 7;
  int decoder_depth = 4;                         // blocks per decoder stage (even)
  std::vector<int> pool_sizes = {3, 5, 7, 9};
  int64_t input_h = 448;
  int64_t input_w = 448;
  bool rel_bias = true;
  std::string head_kind = "deconv";

  static ModelConfig toy();
  void validate() const;  // throws ShapeError on any violated contract
};

// Five per-level feature maps at strides 4,8,16,32,64, uniform C channels,
// stored [N,C,h,w]. Index 0 is the finest level.
struct FeaturePyramid {
  std::array<Tensor, 5> levels;
  Tensor& operator[](size_t i) { return levels[i]; }
  const Tensor& operator[](size_t i) const { return levels[i]; }
};

// Per-level logits P^1..P^5 plus the fused logits, all [N,1,H,W].
struct SideOutputs {
  std::array<Tensor, 5> side;
  Tensor fused;
};

// Intermediate activations exposed for structural audits.
struct ForwardTrace {
  FeaturePyramid pyr1, pyr2;
  std::array<Tensor, 5> sum_feats;   // DFE summation branch, 5C channels
  std::array<Tensor, 5> diff_feats;  // DFE difference branch, 5C channels
  std::array<Tensor, 5> diff_base;   // difference base maps before contrast
  std::array<Tensor, 5> attended;    // PAM outputs, C channels
  std::array<Tensor, 5> decoded;     // decoder outputs, C channels
};

struct Conv2dLayer {
  Tensor w;  // [Co,Ci,k,k]
  Tensor b;  // [Co] or undefined
  int stride = 1, pad = 0;
  Tensor operator()(const Tensor& x) const { return conv2d(x, w, b, stride, pad); }
};

Conv2dLayer make_conv(ParamRegistry& reg, Rng& rng, const std::string& prefix,
                      int64_t ci, int64_t co, int k, int stride = 1, int pad = 0,
                      bool bias = true);

// 1x1 conv -> batch norm -> ReLU, the Conv/BN/ReLU unit used by the
// enhancement and attention blocks.
struct ConvBnReluLayer {
  Conv2dLayer conv;
  Tensor bn_g, bn_b;
  Tensor bn_rm, bn_rv;  // running stats (registry buffers)
  Tensor operator()(const Tensor& x, Mode mode) const;
};

ConvBnReluLayer make_conv_bn_relu(ParamRegistry& reg, Rng& rng,
                                  const std::string& prefix, int64_t ci,
                                  int64_t co);

struct DeconvLayer {
  Tensor w;  // [Ci,Co,2s,2s]
  Tensor b;  // [Co]
  int stride = 1;
  Tensor operator()(const Tensor& x) const { return conv2d_transpose(x, w, b, stride); }
};

DeconvLayer make_deconv(ParamRegistry& reg, Rng& rng, const std::string& prefix,
                        int64_t ci, int64_t co, int stride);

// The complete change-detection network: Siamese encoder, per-level feature
// enhancement, per-level attention, progressive decoder, side-output heads.
class ChangeNet {
 public:
  ChangeNet(ModelConfig cfg, uint64_t seed);

  const ModelConfig& config() const { return cfg_; }
  ParamRegistry& params() { return reg_; }
  const ParamRegistry& params() const { return reg_; }

  // One encoder stream: [N,3,H,W] -> five projected levels. Both temporal
  // streams call exactly this function with the same layer objects, which is
  // the weight-sharing contract.
  FeaturePyramid encode(const Tensor& image, Mode mode);

  std::pair<FeaturePyramid, FeaturePyramid> siamese_encode(const Tensor& t1,
                                                           const Tensor& t2,
                                                           Mode mode);

  // Per-level enhancement: base = ReLU(BN(Conv1x1(e1 op e2))) plus 4 contrast
  // maps (base minus local mean) concatenated to 5C channels.
  std::pair<Tensor, Tensor> enhance_level(const Tensor& e1, const Tensor& e2,
                                          size_t level, Mode mode,
                                          Tensor* diff_base = nullptr);

  // Joint spatial/channel gating with residual: C-channel output.
  Tensor attend_level(const Tensor& sum_feat, const Tensor& diff_feat,
                      size_t level, Mode mode);

  // Coarse-to-fine decoding: top level passes through; below it, each level
  // adds the upsampled decode of the level above.
  std::array<Tensor, 5> decode(const std::array<Tensor, 5>& attended);

  // Transposed-conv side heads plus 1x1 fusion over all five logit maps.
  SideOutputs predict_heads(const std::array<Tensor, 5>& decoded);

  SideOutputs forward(const Tensor& t1, const Tensor& t2, Mode mode,
                      ForwardTrace* trace = nullptr);

  // Spatial side length of pyramid level k (0-based) for this config's input.
  int64_t level_side(size_t level) const;

 private:
  ModelConfig cfg_;
  ParamRegistry reg_;

  PatchEmbedLayer embed_;
  std::vector<SwinStage> enc_stages_;     // 5
  std::vector<PatchMergeLayer> merges_;   // 4
  std::vector<Conv2dLayer> projections_;  // 5, native width -> C

  struct DfeBranch {
    ConvBnReluLayer base;
  };
  std::array<DfeBranch, 5> dfe_sum_, dfe_diff_;

  struct PamLevel {
    ConvBnReluLayer fuse;      // 10C -> C
    Conv2dLayer spatial_gate;  // 1 -> 1
    Conv2dLayer channel_gate;  // C -> C on pooled [N,C,1,1]
    Conv2dLayer out;           // C -> C
  };
  std::array<PamLevel, 5> pam_;

  std::vector<SwinStage> dec_stages_;       // 4: producing levels 4..1
  std::vector<PatchUnmergeLayer> dec_ups_;  // 4

  std::array<DeconvLayer, 5> heads_;
  Conv2dLayer fusion_;
};

// token-grid [N,h,w,C] <-> feature-map [N,C,h,w]
Tensor tokens_to_map(const Tensor& x);
Tensor map_to_tokens(const Tensor& x);

}  // namespace cdnet
