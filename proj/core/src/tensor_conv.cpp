#include "cdnet/tensor.hpp"

namespace cdnet {

namespace {

bool want_tape(bool rg) { return Graph::active() && rg; }

}  // namespace

Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b, int stride,
              int pad) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d expects x [N,Ci,H,W] and w [Co,Ci,kh,kw]");
  const int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = w.dim(0), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(1) != Ci)
    throw ShapeError("conv2d channel mismatch: x " + shape_str(x.shape()) +
                     ", w " + shape_str(w.shape()));
  const bool has_b = b.defined();
  if (has_b && (b.rank() != 1 || b.dim(0) != Co))
    throw ShapeError("conv2d bias must be [Co]");
  if (stride < 1 || pad < 0) throw ShapeError("conv2d bad stride/pad");
  const int64_t Ho = (H + 2 * pad - kh) / stride + 1;
  const int64_t Wo = (W + 2 * pad - kw) / stride + 1;
  if (Ho < 1 || Wo < 1)
    throw ShapeError("conv2d output would be empty for input " + shape_str(x.shape()));
  const bool rg = x.requires_grad() || w.requires_grad() ||
                  (has_b && b.requires_grad());
  Tensor out({N, Co, Ho, Wo}, 0.0, rg);
  const auto& xv = x.data();
  const auto& wv = w.data();
  auto& ov = out.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t co = 0; co < Co; ++co) {
      const double bias = has_b ? b[co] : 0.0;
      for (int64_t oy = 0; oy < Ho; ++oy)
        for (int64_t ox = 0; ox < Wo; ++ox) {
          double s = bias;
          for (int64_t ci = 0; ci < Ci; ++ci) {
            const double* xp = xv.data() + ((n * Ci + ci) * H) * W;
            const double* wp = wv.data() + ((co * Ci + ci) * kh) * kw;
            for (int64_t dy = 0; dy < kh; ++dy) {
              const int64_t iy = oy * stride - pad + dy;
              if (iy < 0 || iy >= H) continue;
              for (int64_t dx = 0; dx < kw; ++dx) {
                const int64_t ix = ox * stride - pad + dx;
                if (ix < 0 || ix >= W) continue;
                s += xp[iy * W + ix] * wp[dy * kw + dx];
              }
            }
          }
          ov[((n * Co + co) * Ho + oy) * Wo + ox] = s;
        }
    }
  if (want_tape(rg)) {
    Graph::active()->record("conv2d", out, [x, w, b, out, stride, pad, N, Ci, H, W, Co,
                                       kh, kw, Ho, Wo, has_b]() {
      const auto& og = out.grad_ref();
      const auto& xv2 = x.data();
      const auto& wv2 = w.data();
      double* xg = x.requires_grad() ? const_cast<Tensor&>(x).grad().data() : nullptr;
      double* wg = w.requires_grad() ? const_cast<Tensor&>(w).grad().data() : nullptr;
      double* bg = (has_b && b.requires_grad())
                       ? const_cast<Tensor&>(b).grad().data()
                       : nullptr;
      for (int64_t n = 0; n < N; ++n)
        for (int64_t co = 0; co < Co; ++co)
          for (int64_t oy = 0; oy < Ho; ++oy)
            for (int64_t ox = 0; ox < Wo; ++ox) {
              const double g = og[((n * Co + co) * Ho + oy) * Wo + ox];
              if (g == 0.0) continue;
              if (bg) bg[co] += g;
              for (int64_t ci = 0; ci < Ci; ++ci) {
                const double* xp = xv2.data() + ((n * Ci + ci) * H) * W;
                const double* wp = wv2.data() + ((co * Ci + ci) * kh) * kw;
                double* xgp = xg ? xg + ((n * Ci + ci) * H) * W : nullptr;
                double* wgp = wg ? wg + ((co * Ci + ci) * kh) * kw : nullptr;
                for (int64_t dy = 0; dy < kh; ++dy) {
                  const int64_t iy = oy * stride - pad + dy;
                  if (iy < 0 || iy >= H) continue;
                  for (int64_t dx = 0; dx < kw; ++dx) {
                    const int64_t ix = ox * stride - pad + dx;
                    if (ix < 0 || ix >= W) continue;
                    if (wgp) wgp[dy * kw + dx] += g * xp[iy * W + ix];
                    if (xgp) xgp[iy * W + ix] += g * wp[dy * kw + dx];
                  }
                }
              }
            }
    });
  }
  return out;
}

// Transposed convolution used by the prediction heads: kernel k = 2*stride,
// implicit pad (k - stride) / 2, so a [N,Ci,H,W] input maps to
// [N,Co,H*stride,W*stride]. Output pixel (oy,ox) collects x[iy,ix]*w[...]
// over all (iy,ix,dy,dx) with oy = iy*stride - pad + dy.
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& b,
                        int stride) {
  if (x.rank() != 4 || w.rank() != 4)
    throw ShapeError("conv2d_transpose expects x [N,Ci,H,W] and w [Ci,Co,kh,kw]");
  const int64_t N = x.dim(0), Ci = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t Co = w.dim(1), kh = w.dim(2), kw = w.dim(3);
  if (w.dim(0) != Ci)
    throw ShapeError("conv2d_transpose channel mismatch: x " + shape_str(x.shape()) +
                     ", w " + shape_str(w.shape()));
  if (kh != kw) throw ShapeError("conv2d_transpose kernel must be square");
  if (stride < 1 || (kh - stride) % 2 != 0 || kh < stride)
    throw ShapeError("conv2d_transpose requires kernel >= stride with even overlap");
  const int64_t pad = (kh - stride) / 2;
  const bool has_b = b.defined();
  if (has_b && (b.rank() != 1 || b.dim(0) != Co))
    throw ShapeError("conv2d_transpose bias must be [Co]");
  const int64_t Ho = H * stride, Wo = W * stride;
  const bool rg = x.requires_grad() || w.requires_grad() ||
                  (has_b && b.requires_grad());
  Tensor out({N, Co, Ho, Wo}, 0.0, rg);
  const auto& xv = x.data();
  const auto& wv = w.data();
  auto& ov = out.data();
  if (has_b) {
    for (int64_t n = 0; n < N; ++n)
      for (int64_t co = 0; co < Co; ++co) {
        double* dst = ov.data() + ((n * Co + co) * Ho) * Wo;
        const double bias = b[co];
        for (int64_t i = 0; i < Ho * Wo; ++i) dst[i] = bias;
      }
  }
  for (int64_t n = 0; n < N; ++n)
    for (int64_t ci = 0; ci < Ci; ++ci) {
      const double* xp = xv.data() + ((n * Ci + ci) * H) * W;
      for (int64_t iy = 0; iy < H; ++iy)
        for (int64_t ix = 0; ix < W; ++ix) {
          const double v = xp[iy * W + ix];
          if (v == 0.0) continue;
          for (int64_t co = 0; co < Co; ++co) {
            const double* wp = wv.data() + ((ci * Co + co) * kh) * kw;
            double* op = ov.data() + ((n * Co + co) * Ho) * Wo;
            for (int64_t dy = 0; dy < kh; ++dy) {
              const int64_t oy = iy * stride - pad + dy;
              if (oy < 0 || oy >= Ho) continue;
              for (int64_t dx = 0; dx < kw; ++dx) {
                const int64_t ox = ix * stride - pad + dx;
                if (ox < 0 || ox >= Wo) continue;
                op[oy * Wo + ox] += v * wp[dy * kw + dx];
              }
            }
          }
        }
    }
  if (want_tape(rg)) {
    Graph::active()->record("conv2d_transpose", out, [x, w, b, out, stride, pad, N, Ci,
                                                 H, W, Co, kh, kw, Ho, Wo,
                                                 has_b]() {
      const auto& og = out.grad_ref();
      const auto& xv2 = x.data();
      const auto& wv2 = w.data();
      double* xg = x.requires_grad() ? const_cast<Tensor&>(x).grad().data() : nullptr;
      double* wg = w.requires_grad() ? const_cast<Tensor&>(w).grad().data() : nullptr;
      if (has_b && b.requires_grad()) {
        auto& bgv = const_cast<Tensor&>(b).grad();
        for (int64_t n = 0; n < N; ++n)
          for (int64_t co = 0; co < Co; ++co) {
            const double* g = og.data() + ((n * Co + co) * Ho) * Wo;
            double s = 0.0;
            for (int64_t i = 0; i < Ho * Wo; ++i) s += g[i];
            bgv[co] += s;
          }
      }
      for (int64_t n = 0; n < N; ++n)
        for (int64_t ci = 0; ci < Ci; ++ci) {
          const double* xp = xv2.data() + ((n * Ci + ci) * H) * W;
          double* xgp = xg ? xg + ((n * Ci + ci) * H) * W : nullptr;
          for (int64_t iy = 0; iy < H; ++iy)
            for (int64_t ix = 0; ix < W; ++ix) {
              const double v = xp[iy * W + ix];
              double acc = 0.0;
              for (int64_t co = 0; co < Co; ++co) {
                const double* wp = wv2.data() + ((ci * Co + co) * kh) * kw;
                double* wgp = wg ? wg + ((ci * Co + co) * kh) * kw : nullptr;
                const double* g = og.data() + ((n * Co + co) * Ho) * Wo;
                for (int64_t dy = 0; dy < kh; ++dy) {
                  const int64_t oy = iy * stride - pad + dy;
                  if (oy < 0 || oy >= Ho) continue;
                  for (int64_t dx = 0; dx < kw; ++dx) {
                    const int64_t ox = ix * stride - pad + dx;
                    if (ox < 0 || ox >= Wo) continue;
                    const double ge = g[oy * Wo + ox];
                    acc += ge * wp[dy * kw + dx];
                    if (wgp) wgp[dy * kw + dx] += ge * v;
                  }
                }
              }
              if (xgp) xgp[iy * W + ix] += acc;
            }
        }
    });
  }
  return out;
}

// x - mean-pool_m(x), stride 1, same size. The pooling window is m x m
// centered on each pixel (m odd); borders divide by the in-bounds tap count,
// so a constant field yields exactly zero.
Tensor avg_pool_contrast(const Tensor& x, int m) {
  if (x.rank() != 4) throw ShapeError("avg_pool_contrast expects [N,C,H,W]");
  if (m < 1 || m % 2 == 0) throw ShapeError("avg_pool_contrast window must be odd");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t r = m / 2;
  Tensor out(x.shape(), 0.0, x.requires_grad());
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    const double* src = xv.data() + nc * H * W;
    double* dst = ov.data() + nc * H * W;
    for (int64_t y = 0; y < H; ++y) {
      const int64_t y0 = std::max<int64_t>(0, y - r);
      const int64_t y1 = std::min<int64_t>(H - 1, y + r);
      for (int64_t xx = 0; xx < W; ++xx) {
        const int64_t x0 = std::max<int64_t>(0, xx - r);
        const int64_t x1 = std::min<int64_t>(W - 1, xx + r);
        double s = 0.0;
        for (int64_t yy = y0; yy <= y1; ++yy)
          for (int64_t xc = x0; xc <= x1; ++xc) s += src[yy * W + xc];
        const double cnt = static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
        dst[y * W + xx] = src[y * W + xx] - s / cnt;
      }
    }
  }
  if (want_tape(x.requires_grad())) {
    Graph::active()->record("avg_pool_contrast", out, [x, out, m, N, C, H, W, r]() {
      const auto& og = out.grad_ref();
      auto& xg = const_cast<Tensor&>(x).grad();
      for (int64_t nc = 0; nc < N * C; ++nc) {
        const double* g = og.data() + nc * H * W;
        double* dst = xg.data() + nc * H * W;
        for (int64_t y = 0; y < H; ++y) {
          const int64_t y0 = std::max<int64_t>(0, y - r);
          const int64_t y1 = std::min<int64_t>(H - 1, y + r);
          for (int64_t xx = 0; xx < W; ++xx) {
            const int64_t x0 = std::max<int64_t>(0, xx - r);
            const int64_t x1 = std::min<int64_t>(W - 1, xx + r);
            const double ge = g[y * W + xx];
            if (ge == 0.0) continue;
            dst[y * W + xx] += ge;
            const double share =
                ge / static_cast<double>((y1 - y0 + 1) * (x1 - x0 + 1));
            for (int64_t yy = y0; yy <= y1; ++yy)
              for (int64_t xc = x0; xc <= x1; ++xc) dst[yy * W + xc] -= share;
          }
        }
      }
    });
  }
  return out;
}

}  // namespace cdnet
