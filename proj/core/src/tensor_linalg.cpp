#include <cmath>

#include "cdnet/tensor.hpp"

namespace cdnet {

namespace {

bool taping(const Tensor& a) { return Graph::active() && a.requires_grad(); }
bool taping(const Tensor& a, const Tensor& b) {
  return Graph::active() && (a.requires_grad() || b.requires_grad());
}

}  // namespace

// a: [..., m, k]. b is either [k, n] (one matrix shared by all batch slices)
// or has a's leading dims with trailing [k, n].
Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2) throw ShapeError("matmul needs rank >= 2");
  const int64_t m = a.dim(-2), k = a.dim(-1);
  const int64_t bk = b.dim(-2), n = b.dim(-1);
  if (k != bk)
    throw ShapeError("matmul inner dims differ: " + shape_str(a.shape()) + " x " +
                     shape_str(b.shape()));
  int64_t batch = a.numel() / (m * k);
  const bool shared_b = (b.rank() == 2);
  if (!shared_b) {
    if (b.numel() / (bk * n) != batch || b.rank() != a.rank())
      throw ShapeError("matmul batch dims differ: " + shape_str(a.shape()) + " x " +
                       shape_str(b.shape()));
    for (int i = 0; i < a.rank() - 2; ++i)
      if (a.dim(i) != b.dim(i)) throw ShapeError("matmul batch dims differ");
  }
  Shape oshape(a.shape());
  oshape[oshape.size() - 1] = n;
  Tensor out(oshape, 0.0, a.requires_grad() || b.requires_grad());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  for (int64_t t = 0; t < batch; ++t) {
    const double* A = av.data() + t * m * k;
    const double* B = bv.data() + (shared_b ? 0 : t * k * n);
    double* O = ov.data() + t * m * n;
    for (int64_t i = 0; i < m; ++i)
      for (int64_t p = 0; p < k; ++p) {
        const double aip = A[i * k + p];
        if (aip == 0.0) continue;
        const double* Brow = B + p * n;
        double* Orow = O + i * n;
        for (int64_t j = 0; j < n; ++j) Orow[j] += aip * Brow[j];
      }
  }
  if (taping(a, b)) {
    Graph::active()->record("matmul", out, [a, b, out, m, k, n, batch, shared_b]() {
      const auto& og = out.grad_ref();
      const auto& av2 = a.data();
      const auto& bv2 = b.data();
      if (a.requires_grad()) {
        auto& ag = const_cast<Tensor&>(a).grad();
        // dA = dO * B^T
        for (int64_t t = 0; t < batch; ++t) {
          const double* G = og.data() + t * m * n;
          const double* B = bv2.data() + (shared_b ? 0 : t * k * n);
          double* dA = ag.data() + t * m * k;
          for (int64_t i = 0; i < m; ++i)
            for (int64_t p = 0; p < k; ++p) {
              double s = 0.0;
              const double* Grow = G + i * n;
              const double* Brow = B + p * n;
              for (int64_t j = 0; j < n; ++j) s += Grow[j] * Brow[j];
              dA[i * k + p] += s;
            }
        }
      }
      if (b.requires_grad()) {
        auto& bg = const_cast<Tensor&>(b).grad();
        // dB = A^T * dO (accumulated over the batch when B is shared)
        for (int64_t t = 0; t < batch; ++t) {
          const double* A = av2.data() + t * m * k;
          const double* G = og.data() + t * m * n;
          double* dB = bg.data() + (shared_b ? 0 : t * k * n);
          for (int64_t i = 0; i < m; ++i)
            for (int64_t p = 0; p < k; ++p) {
              const double aip = A[i * k + p];
              if (aip == 0.0) continue;
              const double* Grow = G + i * n;
              double* dBrow = dB + p * n;
              for (int64_t j = 0; j < n; ++j) dBrow[j] += aip * Grow[j];
            }
        }
      }
    });
  }
  return out;
}

Tensor softmax(const Tensor& x, int axis) {
  const int r = x.rank();
  if (axis < 0) axis += r;
  if (axis != r - 1)
    throw ShapeError("softmax is implemented along the last axis only");
  const int64_t d = x.dim(-1);
  const int64_t rows = x.numel() / d;
  Tensor out(x.shape(), 0.0, x.requires_grad());
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int64_t t = 0; t < rows; ++t) {
    const double* src = xv.data() + t * d;
    double* dst = ov.data() + t * d;
    double mx = src[0];
    for (int64_t j = 1; j < d; ++j) mx = std::max(mx, src[j]);
    double z = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      dst[j] = std::exp(src[j] - mx);
      z += dst[j];
    }
    const double inv = 1.0 / z;
    for (int64_t j = 0; j < d; ++j) dst[j] *= inv;
  }
  if (taping(x)) {
    Graph::active()->record("softmax", out, [x, out, d, rows]() {
      const auto& og = out.grad_ref();
      const auto& ov2 = out.data();
      auto& xg = const_cast<Tensor&>(x).grad();
      // dx_j = s_j * (g_j - sum_i g_i s_i)
      for (int64_t t = 0; t < rows; ++t) {
        const double* s = ov2.data() + t * d;
        const double* g = og.data() + t * d;
        double dot = 0.0;
        for (int64_t j = 0; j < d; ++j) dot += g[j] * s[j];
        double* dst = xg.data() + t * d;
        for (int64_t j = 0; j < d; ++j) dst[j] += s[j] * (g[j] - dot);
      }
    });
  }
  return out;
}

// Normalizes along the last axis; gamma/beta are [d].
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps) {
  const int64_t d = x.dim(-1);
  if (gamma.rank() != 1 || gamma.dim(0) != d || beta.rank() != 1 || beta.dim(0) != d)
    throw ShapeError("layer_norm affine params must be [last_dim]");
  const int64_t rows = x.numel() / d;
  Tensor out(x.shape(), 0.0,
             x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  // Cache per-row mean and inverse stddev for the backward pass.
  auto mean = std::make_shared<std::vector<double>>(rows);
  auto istd = std::make_shared<std::vector<double>>(rows);
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  auto& ov = out.data();
  for (int64_t t = 0; t < rows; ++t) {
    const double* src = xv.data() + t * d;
    double mu = 0.0;
    for (int64_t j = 0; j < d; ++j) mu += src[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (int64_t j = 0; j < d; ++j) {
      const double c = src[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    (*mean)[t] = mu;
    (*istd)[t] = is;
    double* dst = ov.data() + t * d;
    for (int64_t j = 0; j < d; ++j) dst[j] = (src[j] - mu) * is * gv[j] + bv[j];
  }
  if (Graph::active() && out.requires_grad()) {
    Graph::active()->record("layer_norm", out, [x, gamma, beta, out, d, rows, mean,
                                           istd]() {
      const auto& og = out.grad_ref();
      const auto& xv2 = x.data();
      const auto& gv2 = gamma.data();
      for (int64_t t = 0; t < rows; ++t) {
        const double mu = (*mean)[t];
        const double is = (*istd)[t];
        const double* src = xv2.data() + t * d;
        const double* g = og.data() + t * d;
        if (gamma.requires_grad()) {
          auto& gg = const_cast<Tensor&>(gamma).grad();
          for (int64_t j = 0; j < d; ++j) gg[j] += g[j] * (src[j] - mu) * is;
        }
        if (beta.requires_grad()) {
          auto& bg = const_cast<Tensor&>(beta).grad();
          for (int64_t j = 0; j < d; ++j) bg[j] += g[j];
        }
        if (x.requires_grad()) {
          // Let h_j = g_j * gamma_j (upstream into the normalized value).
          // dx_j = is * (h_j - mean(h) - xhat_j * mean(h * xhat)).
          double mh = 0.0, mhx = 0.0;
          for (int64_t j = 0; j < d; ++j) {
            const double h = g[j] * gv2[j];
            const double xhat = (src[j] - mu) * is;
            mh += h;
            mhx += h * xhat;
          }
          mh /= static_cast<double>(d);
          mhx /= static_cast<double>(d);
          auto& xg = const_cast<Tensor&>(x).grad();
          double* dst = xg.data() + t * d;
          for (int64_t j = 0; j < d; ++j) {
            const double h = g[j] * gv2[j];
            const double xhat = (src[j] - mu) * is;
            dst[j] += is * (h - mh - xhat * mhx);
          }
        }
      }
    });
  }
  return out;
}

Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, Mode mode,
                  double momentum, double eps) {
  if (x.rank() != 4) throw ShapeError("batch_norm expects [N,C,H,W]");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  if (gamma.dim(0) != C || beta.dim(0) != C || running_mean.dim(0) != C ||
      running_var.dim(0) != C)
    throw ShapeError("batch_norm param length must equal channel count");
  const int64_t hw = H * W;
  const int64_t cnt = N * hw;
  Tensor out(x.shape(), 0.0,
             x.requires_grad() || gamma.requires_grad() || beta.requires_grad());
  const auto& xv = x.data();
  const auto& gv = gamma.data();
  const auto& bv = beta.data();
  auto& ov = out.data();
  auto mean = std::make_shared<std::vector<double>>(C);
  auto istd = std::make_shared<std::vector<double>>(C);
  if (mode == Mode::kTrain) {
    if (cnt < 2)
      throw NumericError("batch_norm in train mode needs more than one value per channel");
    for (int64_t c = 0; c < C; ++c) {
      double mu = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* src = xv.data() + (n * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) mu += src[i];
      }
      mu /= static_cast<double>(cnt);
      double var = 0.0;
      for (int64_t n = 0; n < N; ++n) {
        const double* src = xv.data() + (n * C + c) * hw;
        for (int64_t i = 0; i < hw; ++i) {
          const double d = src[i] - mu;
          var += d * d;
        }
      }
      var /= static_cast<double>(cnt);  // biased, as used for normalization
      (*mean)[c] = mu;
      (*istd)[c] = 1.0 / std::sqrt(var + eps);
      // Running stats track the unbiased variance and live in f32 so that
      // checkpoints restore them exactly.
      const double uvar = var * static_cast<double>(cnt) / static_cast<double>(cnt - 1);
      running_mean[c] = snap32((1.0 - momentum) * running_mean[c] + momentum * mu);
      running_var[c] = snap32((1.0 - momentum) * running_var[c] + momentum * uvar);
    }
  } else {
    for (int64_t c = 0; c < C; ++c) {
      (*mean)[c] = running_mean[c];
      (*istd)[c] = 1.0 / std::sqrt(running_var[c] + eps);
    }
  }
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double mu = (*mean)[c];
      const double is = (*istd)[c];
      const double gc = gv[c], bc = bv[c];
      const double* src = xv.data() + (n * C + c) * hw;
      double* dst = ov.data() + (n * C + c) * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] = (src[i] - mu) * is * gc + bc;
    }
  if (Graph::active() && out.requires_grad()) {
    const bool train = (mode == Mode::kTrain);
    Graph::active()->record("batch_norm", out, [x, gamma, beta, out, N, C, hw, cnt,
                                           mean, istd, train]() {
      const auto& og = out.grad_ref();
      const auto& xv2 = x.data();
      const auto& gv2 = gamma.data();
      for (int64_t c = 0; c < C; ++c) {
        const double mu = (*mean)[c];
        const double is = (*istd)[c];
        double sg = 0.0, sgx = 0.0;
        for (int64_t n = 0; n < N; ++n) {
          const double* g = og.data() + (n * C + c) * hw;
          const double* src = xv2.data() + (n * C + c) * hw;
          for (int64_t i = 0; i < hw; ++i) {
            sg += g[i];
            sgx += g[i] * (src[i] - mu) * is;
          }
        }
        if (gamma.requires_grad()) const_cast<Tensor&>(gamma).grad()[c] += sgx;
        if (beta.requires_grad()) const_cast<Tensor&>(beta).grad()[c] += sg;
        if (x.requires_grad()) {
          auto& xg = const_cast<Tensor&>(x).grad();
          const double gc = gv2[c];
          if (train) {
            const double mg = sg / static_cast<double>(cnt);
            const double mgx = sgx / static_cast<double>(cnt);
            for (int64_t n = 0; n < N; ++n) {
              const double* g = og.data() + (n * C + c) * hw;
              const double* src = xv2.data() + (n * C + c) * hw;
              double* dst = xg.data() + (n * C + c) * hw;
              for (int64_t i = 0; i < hw; ++i) {
                const double xhat = (src[i] - mu) * is;
                dst[i] += gc * is * (g[i] - mg - xhat * mgx);
              }
            }
          } else {
            // Eval mode treats mean/var as constants.
            for (int64_t n = 0; n < N; ++n) {
              const double* g = og.data() + (n * C + c) * hw;
              double* dst = xg.data() + (n * C + c) * hw;
              for (int64_t i = 0; i < hw; ++i) dst[i] += gc * is * g[i];
            }
          }
        }
      }
    });
  }
  return out;
}

}  // namespace cdnet
