#include "cdnet/network.hpp"

#include <cmath>

namespace cdnet {

ModelConfig ModelConfig::toy() {
  ModelConfig c;
  c.base_dim = 16;
  c.stage_depths = {2, 2, 2, 2, 2};
  c.stage_heads = {2, 2, 2, 2, 2};
  c.window = 4;
  c.decoder_depth = 2;
  c.input_h = 64;
  c.input_w = 64;
  return c;
}

void ModelConfig::validate() const {
  if (base_dim <= 0) throw ShapeError("base_dim must be positive");
  if (stage_depths.size() != 5 || stage_heads.size() != 5)
    throw ShapeError("stage_depths and stage_heads must list 5 stages");
  if (window <= 0) throw ShapeError("window must be positive");
  if (decoder_depth <= 0 || decoder_depth % 2 != 0)
    throw ShapeError("decoder_depth must be a positive even count");
  if (pool_sizes.empty()) throw ShapeError("pool_sizes must be nonempty");
  for (int m : pool_sizes)
    if (m < 1 || m % 2 == 0) throw ShapeError("pool sizes must be odd and >= 1");
  if (head_kind != "deconv")
    throw ShapeError("unsupported head_kind '" + head_kind + "'");
  if (input_h % 64 != 0 || input_w % 64 != 0)
    throw ShapeError("input extents must be divisible by 64 (five halvings from "
                     "stride-4 patches), got " + std::to_string(input_h) + "x" +
                     std::to_string(input_w));
  for (size_t k = 0; k < 5; ++k) {
    const int64_t dim = base_dim << k;
    if (dim % stage_heads[k] != 0)
      throw ShapeError("stage " + std::to_string(k) + " width " +
                       std::to_string(dim) + " not divisible by heads");
    if (stage_depths[k] <= 0 || stage_depths[k] % 2 != 0)
      throw ShapeError("stage depths must be positive and even");
    // Grids larger than one window must tile exactly; smaller grids shrink
    // the window instead.
    for (int64_t g : {input_h / (4LL << k), input_w / (4LL << k)}) {
      if (g > window && g % window != 0)
        throw ShapeError("level " + std::to_string(k + 1) + " grid " +
                         std::to_string(g) + " is not a multiple of window " +
                         std::to_string(window));
    }
  }
}

Conv2dLayer make_conv(ParamRegistry& reg, Rng& rng, const std::string& prefix,
                      int64_t ci, int64_t co, int k, int stride, int pad,
                      bool bias) {
  Conv2dLayer l;
  l.w = reg.create(prefix + ".w", {co, ci, k, k}, init_he(ci * k * k), rng);
  if (bias) l.b = reg.create_const(prefix + ".b", {co}, 0.0);
  l.stride = stride;
  l.pad = pad;
  return l;
}

Tensor ConvBnReluLayer::operator()(const Tensor& x, Mode mode) const {
  Tensor rm = bn_rm, rv = bn_rv;  // handles share storage with the registry
  return relu(batch_norm(conv(x), bn_g, bn_b, rm, rv, mode));
}

ConvBnReluLayer make_conv_bn_relu(ParamRegistry& reg, Rng& rng,
                                  const std::string& prefix, int64_t ci,
                                  int64_t co) {
  ConvBnReluLayer l;
  l.conv = make_conv(reg, rng, prefix + ".conv", ci, co, 1);
  l.bn_g = reg.create_const(prefix + ".bn.g", {co}, 1.0);
  l.bn_b = reg.create_const(prefix + ".bn.b", {co}, 0.0);
  l.bn_rm = reg.buffer(prefix + ".bn.rm", {co}, 0.0);
  l.bn_rv = reg.buffer(prefix + ".bn.rv", {co}, 1.0);
  return l;
}

DeconvLayer make_deconv(ParamRegistry& reg, Rng& rng, const std::string& prefix,
                        int64_t ci, int64_t co, int stride) {
  DeconvLayer l;
  const int k = 2 * stride;
  l.w = reg.create(prefix + ".w", {ci, co, k, k}, init_he(ci * k * k), rng);
  l.b = reg.create_const(prefix + ".b", {co}, 0.0);
  l.stride = stride;
  return l;
}

Tensor tokens_to_map(const Tensor& x) { return permute(x, {0, 3, 1, 2}); }
Tensor map_to_tokens(const Tensor& x) { return permute(x, {0, 2, 3, 1}); }

ChangeNet::ChangeNet(ModelConfig cfg, uint64_t seed) : cfg_(std::move(cfg)) {
  cfg_.validate();
  Rng rng(seed);
  const int64_t C = cfg_.base_dim;

  embed_ = make_patch_embed(reg_, rng, "enc.embed", 3, C, 4);
  for (size_t k = 0; k < 5; ++k) {
    SwinStageConfig sc;
    sc.dim = C << k;
    sc.heads = cfg_.stage_heads[k];
    sc.window = cfg_.window;
    sc.depth = cfg_.stage_depths[k];
    sc.use_rel_bias = cfg_.rel_bias;
    enc_stages_.push_back(
        make_swin_stage(reg_, rng, "enc.s" + std::to_string(k), sc));
    if (k < 4)
      merges_.push_back(
          make_patch_merge(reg_, rng, "enc.m" + std::to_string(k), C << k));
  }
  for (size_t k = 0; k < 5; ++k)
    projections_.push_back(
        make_conv(reg_, rng, "proj.l" + std::to_string(k), C << k, C, 1));

  const int64_t nPool = static_cast<int64_t>(cfg_.pool_sizes.size());
  const int64_t enhanced = C * (1 + nPool);
  for (size_t k = 0; k < 5; ++k) {
    const std::string lv = "l" + std::to_string(k);
    dfe_sum_[k].base = make_conv_bn_relu(reg_, rng, "dfe." + lv + ".sum", C, C);
    dfe_diff_[k].base = make_conv_bn_relu(reg_, rng, "dfe." + lv + ".diff", C, C);
    pam_[k].fuse =
        make_conv_bn_relu(reg_, rng, "pam." + lv + ".fuse", 2 * enhanced, C);
    pam_[k].spatial_gate = make_conv(reg_, rng, "pam." + lv + ".sa", 1, 1, 1);
    pam_[k].channel_gate = make_conv(reg_, rng, "pam." + lv + ".ca", C, C, 1);
    pam_[k].out = make_conv(reg_, rng, "pam." + lv + ".out", C, C, 1);
  }

  for (size_t k = 0; k < 4; ++k) {
    SwinStageConfig sc;
    sc.dim = C;
    sc.heads = cfg_.stage_heads[0];
    sc.window = cfg_.window;
    sc.depth = cfg_.decoder_depth;
    sc.use_rel_bias = cfg_.rel_bias;
    dec_stages_.push_back(
        make_swin_stage(reg_, rng, "dec.s" + std::to_string(k), sc));
    dec_ups_.push_back(
        make_patch_unmerge(reg_, rng, "dec.um" + std::to_string(k), C));
  }

  for (size_t k = 0; k < 5; ++k)
    heads_[k] = make_deconv(reg_, rng, "head.l" + std::to_string(k), C, 1,
                            4 << k);
  fusion_ = make_conv(reg_, rng, "head.fuse", 5, 1, 1);
}

int64_t ChangeNet::level_side(size_t level) const {
  return cfg_.input_h / (4LL << level);
}

FeaturePyramid ChangeNet::encode(const Tensor& image, Mode mode) {
  (void)mode;  // the encoder has no mode-dependent layers
  if (image.rank() != 4 || image.dim(1) != 3 || image.dim(2) != cfg_.input_h ||
      image.dim(3) != cfg_.input_w)
    throw ShapeError("encoder input must be [N,3," + std::to_string(cfg_.input_h) +
                     "," + std::to_string(cfg_.input_w) + "], got " +
                     shape_str(image.shape()));
  FeaturePyramid pyr;
  Tensor x = embed_(image);  // [N,h,w,C]
  for (size_t k = 0; k < 5; ++k) {
    x = enc_stages_[k](x);
    pyr[k] = projections_[k](tokens_to_map(x));
    if (k < 4) x = merges_[k](x);
  }
  return pyr;
}

std::pair<FeaturePyramid, FeaturePyramid> ChangeNet::siamese_encode(
    const Tensor& t1, const Tensor& t2, Mode mode) {
  return {encode(t1, mode), encode(t2, mode)};
}

std::pair<Tensor, Tensor> ChangeNet::enhance_level(const Tensor& e1,
                                                   const Tensor& e2,
                                                   size_t level, Mode mode,
                                                   Tensor* diff_base) {
  if (e1.shape() != e2.shape())
    throw ShapeError("enhancement inputs must be level-aligned: " +
                     shape_str(e1.shape()) + " vs " + shape_str(e2.shape()));
  auto branch = [&](const ConvBnReluLayer& base_layer, const Tensor& combined,
                    Tensor* keep_base) {
    Tensor base = base_layer(combined, mode);
    if (keep_base) *keep_base = base;
    std::vector<Tensor> parts{base};
    for (int m : cfg_.pool_sizes) parts.push_back(avg_pool_contrast(base, m));
    return concat_channel(parts);
  };
  Tensor s = branch(dfe_sum_[level].base, add(e1, e2), nullptr);
  Tensor d = branch(dfe_diff_[level].base, sub(e1, e2), diff_base);
  return {s, d};
}

Tensor ChangeNet::attend_level(const Tensor& sum_feat, const Tensor& diff_feat,
                               size_t level, Mode mode) {
  const PamLevel& p = pam_[level];
  Tensor f = p.fuse(concat_channel({sum_feat, diff_feat}), mode);  // [N,C,h,w]
  Tensor sa = mul(f, sigmoid(p.spatial_gate(sum_channel(f))));
  Tensor ca = mul(f, sigmoid(p.channel_gate(global_avg_pool(f))));
  return p.out(add(add(sa, ca), f));
}

std::array<Tensor, 5> ChangeNet::decode(const std::array<Tensor, 5>& attended) {
  std::array<Tensor, 5> out;
  out[4] = attended[4];
  for (int k = 3; k >= 0; --k) {
    Tensor up = dec_ups_[static_cast<size_t>(k)](
        dec_stages_[static_cast<size_t>(k)](map_to_tokens(out[static_cast<size_t>(k) + 1])));
    Tensor lifted = tokens_to_map(up);
    if (lifted.shape() != attended[static_cast<size_t>(k)].shape())
      throw ShapeError("decoder telescope mismatch at level " + std::to_string(k + 1) +
                       ": " + shape_str(lifted.shape()) + " vs " +
                       shape_str(attended[static_cast<size_t>(k)].shape()));
    out[static_cast<size_t>(k)] = add(lifted, attended[static_cast<size_t>(k)]);
  }
  return out;
}

SideOutputs ChangeNet::predict_heads(const std::array<Tensor, 5>& decoded) {
  SideOutputs so;
  std::vector<Tensor> logits;
  for (size_t k = 0; k < 5; ++k) {
    so.side[k] = heads_[k](decoded[k]);
    logits.push_back(so.side[k]);
  }
  so.fused = fusion_(concat_channel(logits));
  return so;
}

SideOutputs ChangeNet::forward(const Tensor& t1, const Tensor& t2, Mode mode,
                               ForwardTrace* trace) {
  auto [p1, p2] = siamese_encode(t1, t2, mode);
  std::array<Tensor, 5> attended;
  for (size_t k = 0; k < 5; ++k) {
    Tensor diff_base;
    auto [s, d] = enhance_level(p1[k], p2[k], k, mode,
                                trace ? &diff_base : nullptr);
    attended[k] = attend_level(s, d, k, mode);
    if (trace) {
      trace->sum_feats[k] = s;
      trace->diff_feats[k] = d;
      trace->diff_base[k] = diff_base;
      trace->attended[k] = attended[k];
    }
  }
  std::array<Tensor, 5> decoded = decode(attended);
  if (trace) {
    trace->pyr1 = p1;
    trace->pyr2 = p2;
    trace->decoded = decoded;
  }
  return predict_heads(decoded);
}

}  // namespace cdnet
