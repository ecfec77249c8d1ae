#include "cdnet/gradcheck_suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>

#include "cdnet/gradcheck.hpp"
#include "cdnet/losses.hpp"
#include "cdnet/network.hpp"
#include "cdnet/swin.hpp"

namespace cdnet {
namespace {

int64_t numel_of(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) n *= d;
  return n;
}

Tensor rand_t(Rng& rng, Shape s, double lo, double hi, bool rg = true) {
  std::vector<double> v(static_cast<size_t>(numel_of(s)));
  for (auto& x : v) x = rng.uniform(lo, hi);
  return Tensor(std::move(s), std::move(v), rg);
}

// Relative-error floor for composite-block checks (see check_swin_pair).
constexpr double kCompositeFloor = 0.05;

// Uniform values in [lo,hi] that stay `margin` away from every kink point,
// so the finite-difference step never straddles a non-smooth point.
Tensor rand_smooth(Rng& rng, Shape s, double lo, double hi,
                   const std::vector<double>& kinks, double margin,
                   bool rg = true) {
  std::vector<double> v(static_cast<size_t>(numel_of(s)));
  for (auto& x : v) {
    for (;;) {
      const double c = rng.uniform(lo, hi);
      bool ok = true;
      for (double k : kinks)
        if (std::fabs(c - k) < margin) ok = false;
      if (ok) {
        x = c;
        break;
      }
    }
  }
  return Tensor(std::move(s), std::move(v), rg);
}

Tensor rand_mask(Rng& rng, Shape s) {
  std::vector<double> v(static_cast<size_t>(numel_of(s)));
  for (auto& x : v) x = rng.uniform() < 0.5 ? 0.0 : 1.0;
  return Tensor(std::move(s), std::move(v), false);
}

// Uniform values whose sample standard deviation over each group of `group`
// consecutive elements is at least `floor`. Normalizing layers divide by the
// group deviation; flooring it keeps the finite-difference truncation error
// (which grows like 1/sigma^4) far below tolerance. The adjoint formulas
// being verified are the same for every input.
Tensor rand_spread(Rng& rng, Shape s, double lo, double hi, int64_t group,
                   double floor) {
  const int64_t n = numel_of(s);
  std::vector<double> v(static_cast<size_t>(n));
  for (int64_t g0 = 0; g0 < n; g0 += group) {
    for (;;) {
      double sum = 0.0, sq = 0.0;
      for (int64_t i = g0; i < g0 + group; ++i) {
        v[static_cast<size_t>(i)] = rng.uniform(lo, hi);
        sum += v[static_cast<size_t>(i)];
      }
      const double mean = sum / static_cast<double>(group);
      for (int64_t i = g0; i < g0 + group; ++i)
        sq += (v[static_cast<size_t>(i)] - mean) * (v[static_cast<size_t>(i)] - mean);
      if (std::sqrt(sq / static_cast<double>(group)) >= floor) break;
    }
  }
  return Tensor(std::move(s), std::move(v), true);
}

// Overwrites one BN layer's scale/offset so every pre-ReLU value lands well
// above zero: normalized activations are bounded by sqrt(count), so
// offset >> scale * sqrt(count) keeps an h-step from crossing the kink.
void bias_relu_on(ParamRegistry& reg, const std::string& prefix, Rng& rng) {
  for (auto& g : reg.at(prefix + ".bn.g").value.data())
    g = rng.uniform(0.1, 0.2);
  for (auto& b : reg.at(prefix + ".bn.b").value.data())
    b = rng.uniform(1.5, 2.5);
}

// Scalarizes an op output against a fixed random cotangent so the checked
// adjoint sees non-uniform upstream gradients.
Tensor against(const Tensor& y, const Tensor& cot) {
  return sum_all(mul(y, cot));
}

using Inputs = std::vector<std::pair<std::string, Tensor>>;
using InstanceFn = std::function<GradCheckReport(Rng&, int)>;

SuiteResult run_component(const std::string& name, int instances, double tol,
                          Rng& rng, const InstanceFn& one) {
  SuiteResult r;
  r.component = name;
  r.instances = instances;
  r.tol = tol;
  for (int i = 0; i < instances; ++i) {
    const GradCheckReport rep = one(rng, i);
    if (rep.max_rel_err >= r.max_rel_err) {
      r.max_rel_err = rep.max_rel_err;
      r.worst_input = rep.worst_input;
      r.abs_at_worst = rep.max_abs_err;
    }
    r.checked += rep.checked;
  }
  r.pass = r.checked > 0 && r.max_rel_err <= tol;
  return r;
}

const std::vector<std::pair<Shape, Shape>>& broadcast_shapes() {
  static const std::vector<std::pair<Shape, Shape>> s = {
      {{2, 3, 4}, {2, 3, 4}}, {{2, 3, 4}, {3, 4}}, {{2, 3, 4}, {1, 4}},
      {{2, 3, 4}, {3, 1}},    {{3, 5}, {1}},
  };
  return s;
}

GradCheckReport check_binary(Rng& rng, int i, double h,
                             const std::function<Tensor(const Tensor&,
                                                        const Tensor&)>& op,
                             double blo, double bhi) {
  const auto& [sa, sb] = broadcast_shapes()[static_cast<size_t>(i) %
                                            broadcast_shapes().size()];
  Tensor a = rand_t(rng, sa, -1.0, 1.0);
  Tensor b = rand_t(rng, sb, blo, bhi);
  Tensor cot = rand_t(rng, sa, -1.0, 1.0, false);
  return gradcheck([&] { return against(op(a, b), cot); },
                   {{"a", a}, {"b", b}}, h);
}

GradCheckReport check_unary(Rng& rng, double h, Tensor x,
                            const std::function<Tensor(const Tensor&)>& op) {
  Tensor cot = rand_t(rng, x.shape(), -1.0, 1.0, false);
  return gradcheck([&] { return against(op(x), cot); }, {{"x", x}}, h);
}

Inputs registry_inputs(ParamRegistry& reg, const std::string& prefix) {
  Inputs in;
  for (Param* p : reg.params())
    if (p->name.rfind(prefix, 0) == 0) in.emplace_back(p->name, p->value);
  return in;
}

ModelConfig tiny_model_config() {
  ModelConfig mc;
  mc.base_dim = 8;
  mc.stage_depths = {2, 2, 2, 2, 2};
  mc.stage_heads = {2, 2, 2, 2, 2};
  mc.window = 4;
  mc.decoder_depth = 2;
  mc.input_h = 64;
  mc.input_w = 64;
  return mc;
}

GradCheckReport check_swin_pair(Rng& rng, int i, double h) {
  ParamRegistry reg;
  SwinStageConfig sc;
  sc.dim = 6;
  sc.heads = (i % 2 == 0) ? 2 : 3;
  sc.window = 3;
  sc.depth = 2;
  sc.mlp_ratio = 2;
  sc.use_rel_bias = true;
  SwinStage stage = make_swin_stage(reg, rng, "blk", sc);
  Tensor x = rand_t(rng, {1, 6, 6, sc.dim}, -1.0, 1.0);
  Tensor cot = rand_t(rng, x.shape(), -1.0, 1.0, false);
  Inputs in = registry_inputs(reg, "blk");
  in.emplace_back("x", x);
  // Composite floor: elements whose true gradient is far below the tensor's
  // scale cannot be resolved relatively by central differences at this h;
  // they are held to floor*tol absolutely instead (a wrong adjoint still
  // trips it, since its error scales with the gradient magnitude).
  return gradcheck([&] { return against(stage(x), cot); }, in, h,
                   kCompositeFloor);
}

GradCheckReport check_pam(Rng& rng, int i, double h) {
  ChangeNet net(tiny_model_config(), 11 + static_cast<uint64_t>(i));
  // The fused Conv/BN/ReLU normalizes to roughly N(0,1) before the ReLU, so
  // default parameters leave many activations within an h-step of the kink;
  // keep every unit on instead (the adjoint wiring is what's under test).
  bias_relu_on(net.params(), "pam.l2.fuse", rng);
  const size_t level = 2;
  const int64_t c5 = 5 * net.config().base_dim;
  Tensor sum_feat = rand_t(rng, {1, c5, 4, 4}, -1.0, 1.0);
  Tensor diff_feat = rand_t(rng, {1, c5, 4, 4}, -1.0, 1.0);
  Tensor cot = rand_t(rng, {1, net.config().base_dim, 4, 4}, -1.0, 1.0, false);
  Inputs in = registry_inputs(net.params(), "pam.l2.");
  in.emplace_back("sum_feat", sum_feat);
  in.emplace_back("diff_feat", diff_feat);
  return gradcheck(
      [&] {
        return against(
            net.attend_level(sum_feat, diff_feat, level, Mode::kTrain), cot);
      },
      in, h, kCompositeFloor);
}

GradCheckReport check_e2e(Rng& rng, double h) {
  ChangeNet net(tiny_model_config(), 13);
  LossConfig lc;
  lc.ssim_patch = 7;
  Tensor t1 = rand_t(rng, {2, 3, 64, 64}, 0.0, 1.0);
  Tensor t2 = rand_t(rng, {2, 3, 64, 64}, 0.0, 1.0);
  Tensor gt = rand_mask(rng, {2, 1, 64, 64});
  // One representative parameter per module kind, probed sparsely.
  const std::vector<std::string> picked = {
      "enc.embed.w",     "enc.s0.b0.attn.q.w", "enc.m0.reduce.w",
      "proj.l3.w",       "dfe.l1.diff.conv.w", "pam.l4.fuse.conv.w",
      "dec.s0.b0.mlp.fc1.w", "head.l0.w",      "head.fuse.w",
  };
  Inputs in;
  for (const auto& name : picked)
    in.emplace_back(name, net.params().at(name).value);
  auto loss = [&] {
    const SideOutputs out = net.forward(t1, t2, Mode::kTrain);
    return hybrid_loss(out, gt, lc);
  };
  return gradcheck(loss, in, h, /*rel_floor=*/1e-3, /*sample=*/2);
}

}  // namespace

std::vector<SuiteResult> run_gradcheck_suite(const SuiteOptions& opt) {
  Rng rng(opt.seed);
  const double h = opt.h;
  std::vector<SuiteResult> out;
  auto comp = [&](const std::string& name, const InstanceFn& one,
                  double tol_override = 0.0) {
    out.push_back(run_component(name, opt.instances,
                                tol_override > 0 ? tol_override : opt.tol, rng,
                                one));
  };

  comp("add", [&](Rng& r, int i) {
    return check_binary(r, i, h, [](auto& a, auto& b) { return add(a, b); },
                        -1.0, 1.0);
  });
  comp("sub", [&](Rng& r, int i) {
    return check_binary(r, i, h, [](auto& a, auto& b) { return sub(a, b); },
                        -1.0, 1.0);
  });
  comp("mul", [&](Rng& r, int i) {
    return check_binary(r, i, h, [](auto& a, auto& b) { return mul(a, b); },
                        -1.0, 1.0);
  });
  comp("div", [&](Rng& r, int i) {
    return check_binary(r, i, h, [](auto& a, auto& b) { return div(a, b); },
                        0.5, 1.5);
  });
  comp("relu", [&](Rng& r, int) {
    return check_unary(r, h, rand_smooth(r, {2, 3, 4}, -1.0, 1.0, {0.0}, 0.05),
                       [](auto& x) { return relu(x); });
  });
  comp("sigmoid", [&](Rng& r, int) {
    return check_unary(r, h, rand_t(r, {2, 3, 4}, -3.0, 3.0),
                       [](auto& x) { return sigmoid(x); });
  });
  comp("gelu", [&](Rng& r, int) {
    // gelu'(-0.7518) = 0: near-zero denominators turn FD round-off into
    // large relative errors, so sample away from that point.
    return check_unary(
        r, h, rand_smooth(r, {2, 3, 4}, -2.0, 2.0, {-0.7518}, 0.15),
        [](auto& x) { return gelu(x); });
  });
  comp("log", [&](Rng& r, int) {
    return check_unary(r, h, rand_t(r, {2, 3, 4}, 0.2, 3.0),
                       [](auto& x) { return log(x); });
  });
  comp("clamp", [&](Rng& r, int) {
    return check_unary(
        r, h, rand_smooth(r, {2, 3, 4}, -1.5, 1.5, {-0.5, 0.7}, 0.05),
        [](auto& x) { return clamp(x, -0.5, 0.7); });
  });
  comp("scale", [&](Rng& r, int) {
    return check_unary(r, h, rand_t(r, {2, 3, 4}, -1.0, 1.0),
                       [](auto& x) { return scale(x, 1.7); });
  });
  comp("add_scalar", [&](Rng& r, int) {
    return check_unary(r, h, rand_t(r, {2, 3, 4}, -1.0, 1.0),
                       [](auto& x) { return add_scalar(x, 0.3); });
  });

  comp("matmul", [&](Rng& r, int i) {
    static const std::vector<std::pair<Shape, Shape>> shapes = {
        {{3, 4}, {4, 2}},       {{2, 3, 4}, {4, 2}}, {{2, 3, 4}, {2, 4, 2}},
        {{2, 2, 3, 4}, {4, 3}}, {{1, 5, 2}, {2, 5}},
    };
    const auto& [sa, sb] = shapes[static_cast<size_t>(i) % shapes.size()];
    Tensor a = rand_t(r, sa, -1.0, 1.0);
    Tensor b = rand_t(r, sb, -1.0, 1.0);
    Shape so = sa;
    so.back() = sb.back();
    Tensor cot = rand_t(r, so, -1.0, 1.0, false);
    return gradcheck([&] { return against(matmul(a, b), cot); },
                     {{"a", a}, {"b", b}}, h);
  });
  comp("softmax", [&](Rng& r, int) {
    Tensor x = rand_t(r, {2, 3, 5}, -2.0, 2.0);
    Tensor cot = rand_t(r, x.shape(), -1.0, 1.0, false);
    return gradcheck([&] { return against(softmax(x, -1), cot); }, {{"x", x}},
                     h);
  });
  comp("layer_norm", [&](Rng& r, int) {
    Tensor x = rand_spread(r, {2, 4, 6}, -2.0, 2.0, 6, 0.9);
    Tensor g = rand_t(r, {6}, 0.5, 1.5);
    Tensor b = rand_t(r, {6}, -0.5, 0.5);
    Tensor cot = rand_t(r, x.shape(), -1.0, 1.0, false);
    return gradcheck([&] { return against(layer_norm(x, g, b), cot); },
                     {{"x", x}, {"g", g}, {"b", b}}, h);
  });
  comp("batch_norm_train", [&](Rng& r, int) {
    Tensor x = rand_spread(r, {2, 3, 4, 4}, -2.0, 2.0, 16, 1.0);
    Tensor g = rand_t(r, {3}, 0.5, 1.5);
    Tensor b = rand_t(r, {3}, -0.5, 0.5);
    Tensor rm = Tensor::zeros({3});
    Tensor rv = Tensor::full({3}, 1.0);
    Tensor cot = rand_t(r, x.shape(), -1.0, 1.0, false);
    return gradcheck(
        [&] {
          return against(batch_norm(x, g, b, rm, rv, Mode::kTrain), cot);
        },
        {{"x", x}, {"g", g}, {"b", b}}, h);
  });
  comp("batch_norm_eval", [&](Rng& r, int) {
    Tensor x = rand_t(r, {2, 3, 4, 4}, -1.0, 1.0);
    Tensor g = rand_t(r, {3}, 0.5, 1.5);
    Tensor b = rand_t(r, {3}, -0.5, 0.5);
    Tensor rm = rand_t(r, {3}, -0.3, 0.3, false);
    Tensor rv = rand_t(r, {3}, 0.5, 1.5, false);
    Tensor cot = rand_t(r, x.shape(), -1.0, 1.0, false);
    return gradcheck(
        [&] {
          return against(batch_norm(x, g, b, rm, rv, Mode::kEval), cot);
        },
        {{"x", x}, {"g", g}, {"b", b}}, h);
  });

  comp("conv2d", [&](Rng& r, int i) {
    struct V { int k, s, p; };
    static const std::vector<V> vars = {
        {3, 1, 1}, {3, 2, 1}, {1, 1, 0}, {4, 4, 0}, {5, 1, 2}};
    const V v = vars[static_cast<size_t>(i) % vars.size()];
    Tensor x = rand_t(r, {2, 2, 8, 8}, -1.0, 1.0);
    Tensor w = rand_t(r, {3, 2, v.k, v.k}, -0.5, 0.5);
    Tensor b = rand_t(r, {3}, -0.5, 0.5);
    const Tensor y0 = conv2d(x, w, b, v.s, v.p);  // no graph: shape probe only
    Tensor cot = rand_t(r, y0.shape(), -1.0, 1.0, false);
    return gradcheck([&] { return against(conv2d(x, w, b, v.s, v.p), cot); },
                     {{"x", x}, {"w", w}, {"b", b}}, h);
  });
  comp("conv2d_transpose", [&](Rng& r, int i) {
    struct V { int s, k; };
    static const std::vector<V> vars = {{1, 3}, {2, 4}, {2, 2}, {4, 8}, {3, 5}};
    const V v = vars[static_cast<size_t>(i) % vars.size()];
    Tensor x = rand_t(r, {2, 2, 4, 4}, -1.0, 1.0);
    Tensor w = rand_t(r, {2, 3, v.k, v.k}, -0.5, 0.5);
    Tensor b = rand_t(r, {3}, -0.5, 0.5);
    Tensor cot = rand_t(r, {2, 3, 4 * v.s, 4 * v.s}, -1.0, 1.0, false);
    return gradcheck(
        [&] { return against(conv2d_transpose(x, w, b, v.s), cot); },
        {{"x", x}, {"w", w}, {"b", b}}, h);
  });
  comp("avg_pool_contrast", [&](Rng& r, int i) {
    static const int ms[] = {3, 5, 7, 9};
    const int m = ms[static_cast<size_t>(i) % 4];
    Tensor x = rand_t(r, {2, 2, 8, 8}, -1.0, 1.0);
    Tensor cot = rand_t(r, x.shape(), -1.0, 1.0, false);
    return gradcheck([&] { return against(avg_pool_contrast(x, m), cot); },
                     {{"x", x}}, h);
  });

  comp("sum_channel", [&](Rng& r, int) {
    Tensor x = rand_t(r, {2, 3, 5, 5}, -1.0, 1.0);
    Tensor cot = rand_t(r, {2, 1, 5, 5}, -1.0, 1.0, false);
    return gradcheck([&] { return against(sum_channel(x), cot); }, {{"x", x}},
                     h);
  });
  comp("global_avg_pool", [&](Rng& r, int) {
    Tensor x = rand_t(r, {2, 3, 5, 5}, -1.0, 1.0);
    Tensor cot = rand_t(r, {2, 3, 1, 1}, -1.0, 1.0, false);
    return gradcheck([&] { return against(global_avg_pool(x), cot); },
                     {{"x", x}}, h);
  });
  comp("mean_all", [&](Rng& r, int) {
    Tensor x = rand_t(r, {2, 3, 4}, -1.0, 1.0);
    return gradcheck([&] { return mean_all(mul(x, x)); }, {{"x", x}}, h);
  });
  comp("sum_all", [&](Rng& r, int) {
    Tensor x = rand_t(r, {2, 3, 4}, -1.0, 1.0);
    return gradcheck([&] { return sum_all(mul(x, x)); }, {{"x", x}}, h);
  });

  comp("reshape", [&](Rng& r, int) {
    Tensor x = rand_t(r, {2, 3, 4}, -1.0, 1.0);
    Tensor cot = rand_t(r, {4, 6}, -1.0, 1.0, false);
    return gradcheck([&] { return against(reshape(x, {4, 6}), cot); },
                     {{"x", x}}, h);
  });
  comp("permute", [&](Rng& r, int) {
    Tensor x = rand_t(r, {2, 3, 4, 5}, -1.0, 1.0);
    Tensor cot = rand_t(r, {2, 4, 5, 3}, -1.0, 1.0, false);
    return gradcheck([&] { return against(permute(x, {0, 2, 3, 1}), cot); },
                     {{"x", x}}, h);
  });
  comp("concat_channel", [&](Rng& r, int) {
    Tensor a = rand_t(r, {2, 2, 4, 4}, -1.0, 1.0);
    Tensor b = rand_t(r, {2, 3, 4, 4}, -1.0, 1.0);
    Tensor cot = rand_t(r, {2, 5, 4, 4}, -1.0, 1.0, false);
    return gradcheck([&] { return against(concat_channel({a, b}), cot); },
                     {{"a", a}, {"b", b}}, h);
  });
  comp("roll2d", [&](Rng& r, int i) {
    Tensor x = rand_t(r, {2, 4, 5, 3}, -1.0, 1.0);
    Tensor cot = rand_t(r, x.shape(), -1.0, 1.0, false);
    const int dy = i - 2, dx = 2 - i;
    return gradcheck([&] { return against(roll2d(x, dy, dx), cot); },
                     {{"x", x}}, h);
  });
  comp("embedding_rows", [&](Rng& r, int) {
    Tensor table = rand_t(r, {7, 4}, -1.0, 1.0);
    const std::vector<int64_t> idx = {0, 3, 3, 6, 1, 3};
    Tensor cot = rand_t(r, {6, 4}, -1.0, 1.0, false);
    return gradcheck([&] { return against(embedding_rows(table, idx), cot); },
                     {{"table", table}}, h);
  });

  comp("swin_block_pair",
       [&](Rng& r, int i) { return check_swin_pair(r, i, h); });
  comp("pam", [&](Rng& r, int i) { return check_pam(r, i, h); });

  comp("loss_wbce", [&](Rng& r, int) {
    Tensor logits = rand_t(r, {2, 1, 12, 12}, -2.0, 2.0);
    Tensor gt = rand_mask(r, {2, 1, 12, 12});
    Tensor w = compute_weights(gt, 2.0);
    return gradcheck([&] { return wbce(logits, gt, w); },
                     {{"logits", logits}}, h);
  });
  comp("loss_ssim", [&](Rng& r, int) {
    Tensor prob = rand_t(r, {2, 1, 12, 12}, 0.05, 0.95);
    Tensor gt = rand_mask(r, {2, 1, 12, 12});
    return gradcheck([&] { return ssim_loss(prob, gt, 7); }, {{"prob", prob}},
                     h);
  });
  comp("loss_siou", [&](Rng& r, int) {
    Tensor prob = rand_t(r, {2, 1, 12, 12}, 0.05, 0.95);
    Tensor gt = rand_mask(r, {2, 1, 12, 12});
    return gradcheck([&] { return siou_loss(prob, gt); }, {{"prob", prob}}, h);
  });

  if (opt.end_to_end) {
    out.push_back(run_component(
        "end_to_end", 1, opt.e2e_tol, rng,
        [&](Rng& r, int) { return check_e2e(r, opt.e2e_h); }));
  }
  return out;
}

bool suite_passes(const std::vector<SuiteResult>& results) {
  return std::all_of(results.begin(), results.end(),
                     [](const SuiteResult& r) { return r.pass; });
}

std::string format_suite_result(const SuiteResult& r) {
  char buf[224];
  std::snprintf(
      buf, sizeof buf,
      "%s %-18s max_rel_err %.3e abs %.3e (n=%d, %lld elems, tol %g, worst %s)",
      r.pass ? "PASS" : "FAIL", r.component.c_str(), r.max_rel_err,
      r.abs_at_worst, r.instances, static_cast<long long>(r.checked), r.tol,
      r.worst_input.empty() ? "-" : r.worst_input.c_str());
  return buf;
}

}  // namespace cdnet
