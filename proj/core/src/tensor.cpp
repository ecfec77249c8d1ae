#include "cdnet/tensor.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <sstream>

namespace cdnet {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (size_t i = 0; i < s.size(); ++i) {
    if (i) os << ',';
    os << s[i];
  }
  os << ']';
  return os.str();
}

namespace {

int64_t shape_numel(const Shape& s) {
  int64_t n = 1;
  for (int64_t d : s) {
    if (d <= 0) throw ShapeError("non-positive dimension in shape " + shape_str(s));
    n *= d;
  }
  return n;
}

thread_local Graph* g_active = nullptr;

bool taping(const Tensor& a) { return g_active && a.requires_grad(); }
bool taping(const Tensor& a, const Tensor& b) {
  return g_active && (a.requires_grad() || b.requires_grad());
}

}  // namespace

Tensor::Tensor(Shape shape, double fill, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  impl_->shape = std::move(shape);
  impl_->data.assign(static_cast<size_t>(shape_numel(impl_->shape)), fill);
  impl_->requires_grad = requires_grad;
}

Tensor::Tensor(Shape shape, std::vector<double> values, bool requires_grad)
    : impl_(std::make_shared<TensorImpl>()) {
  impl_->shape = std::move(shape);
  if (static_cast<int64_t>(values.size()) != shape_numel(impl_->shape))
    throw ShapeError("value count " + std::to_string(values.size()) +
                     " does not fill shape " + shape_str(impl_->shape));
  impl_->data = std::move(values);
  impl_->requires_grad = requires_grad;
}

int64_t Tensor::dim(int i) const {
  const int r = rank();
  if (i < 0) i += r;
  if (i < 0 || i >= r)
    throw ShapeError("axis " + std::to_string(i) + " out of range for rank " +
                     std::to_string(r));
  return impl_->shape[static_cast<size_t>(i)];
}

double Tensor::at(std::initializer_list<int64_t> idx) const {
  if (static_cast<int>(idx.size()) != rank())
    throw ShapeError("index rank mismatch");
  int64_t off = 0;
  int i = 0;
  for (int64_t v : idx) {
    const int64_t d = impl_->shape[static_cast<size_t>(i)];
    if (v < 0 || v >= d) throw ShapeError("index out of bounds");
    off = off * d + v;
    ++i;
  }
  return impl_->data[static_cast<size_t>(off)];
}

double Tensor::item() const {
  if (numel() != 1)
    throw ShapeError("item() on tensor of " + std::to_string(numel()) + " values");
  return impl_->data[0];
}

Tensor& Tensor::set_requires_grad(bool v) {
  impl_->requires_grad = v;
  return *this;
}

std::vector<double>& Tensor::grad() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad;
}

const std::vector<double>& Tensor::grad_ref() const {
  if (impl_->grad.empty())
    throw NumericError("gradient requested before backward reached this tensor");
  return impl_->grad;
}

Tensor Tensor::grad_tensor() const {
  return Tensor(impl_->shape, grad_ref());
}

void Tensor::zero_grad() {
  if (impl_) impl_->grad.clear();
}

bool Tensor::all_finite() const {
  for (double v : impl_->data)
    if (!std::isfinite(v)) return false;
  return true;
}

void Tensor::check_finite(const char* where) const {
  if (!all_finite())
    throw NumericError(std::string("non-finite value in ") + where);
}

void snap32_inplace(Tensor& t) {
  for (double& v : t.data()) v = snap32(v);
}

// ---------------------------------------------------------------------------
// Graph

Graph::Scope::Scope(Graph& g) {
  if (g_active) throw std::logic_error("nested Graph::Scope is not supported");
  g_active = &g;
}

Graph::Scope::~Scope() { g_active = nullptr; }

Graph* Graph::active() { return g_active; }

void Graph::record(const char* op, Tensor out, std::function<void()> adjoint) {
  nodes_.push_back({op, std::move(out), std::move(adjoint)});
}

void Graph::backward(const Tensor& loss) {
  if (loss.numel() != 1)
    throw ShapeError("backward requires a scalar loss, got " +
                     shape_str(loss.shape()));
  auto impl = loss.impl();
  if (impl->grad.empty()) impl->grad.assign(1, 0.0);
  impl->grad[0] += 1.0;
  for (auto it = nodes_.rbegin(); it != nodes_.rend(); ++it)
    if (it->out.has_grad()) it->adjoint();
}

void backward(Graph& g, const Tensor& loss) { g.backward(loss); }

// ---------------------------------------------------------------------------
// Broadcasting helpers: b is right-aligned against a; each aligned axis of b
// must equal a's extent or 1. We precompute, for every flat index of a, the
// matching flat index of b.

namespace {

void check_broadcast(const Shape& a, const Shape& b) {
  if (b.size() > a.size())
    throw ShapeError("broadcast rank " + shape_str(b) + " exceeds " + shape_str(a));
  const size_t off = a.size() - b.size();
  for (size_t i = 0; i < b.size(); ++i) {
    if (b[i] != 1 && b[i] != a[off + i])
      throw ShapeError("cannot broadcast " + shape_str(b) + " onto " + shape_str(a));
  }
}

// Maps a flat index in `a` to the corresponding flat index in `b`.
struct BcastIndex {
  std::vector<int64_t> adims;   // a's dims
  std::vector<int64_t> bstride; // stride of b along each a-axis (0 where broadcast)
  int64_t operator()(int64_t flat) const {
    int64_t bi = 0;
    for (size_t k = adims.size(); k-- > 0;) {
      const int64_t d = adims[k];
      const int64_t coord = flat % d;
      flat /= d;
      bi += coord * bstride[k];
    }
    return bi;
  }
};

BcastIndex make_bcast(const Shape& a, const Shape& b) {
  check_broadcast(a, b);
  BcastIndex m;
  m.adims = a;
  m.bstride.assign(a.size(), 0);
  const size_t off = a.size() - b.size();
  int64_t stride = 1;
  for (size_t i = b.size(); i-- > 0;) {
    if (b[i] != 1) m.bstride[off + i] = stride;
    stride *= b[i];
  }
  return m;
}

bool same_shape(const Shape& a, const Shape& b) { return a == b; }

using BinFwd = double (*)(double, double);

// Generic broadcasting binary op with closed-form partials.
// dfa/dfb take (a_val, b_val, out_val) and return the local partial.
template <typename Fwd, typename Dfa, typename Dfb>
Tensor binary_op(const char* name, const Tensor& a, const Tensor& b, Fwd fwd,
                 Dfa dfa, Dfb dfb) {
  Tensor out(a.shape(), 0.0, a.requires_grad() || b.requires_grad());
  const auto& av = a.data();
  const auto& bv = b.data();
  auto& ov = out.data();
  const int64_t n = a.numel();

  if (same_shape(a.shape(), b.shape())) {
    for (int64_t i = 0; i < n; ++i) ov[i] = fwd(av[i], bv[i]);
    if (taping(a, b)) {
      Graph::active()->record(name, out, [a, b, out, fwd, dfa, dfb]() {
        const auto& og = out.grad_ref();
        const auto& av2 = a.data();
        const auto& bv2 = b.data();
        const auto& ov2 = out.data();
        const int64_t n2 = a.numel();
        if (a.requires_grad()) {
          auto& ag = const_cast<Tensor&>(a).grad();
          for (int64_t i = 0; i < n2; ++i)
            ag[i] += og[i] * dfa(av2[i], bv2[i], ov2[i]);
        }
        if (b.requires_grad()) {
          auto& bg = const_cast<Tensor&>(b).grad();
          for (int64_t i = 0; i < n2; ++i)
            bg[i] += og[i] * dfb(av2[i], bv2[i], ov2[i]);
        }
      });
    }
    return out;
  }

  const BcastIndex map = make_bcast(a.shape(), b.shape());
  for (int64_t i = 0; i < n; ++i) ov[i] = fwd(av[i], bv[map(i)]);
  if (taping(a, b)) {
    Graph::active()->record(name, out, [a, b, out, map, dfa, dfb]() {
      const auto& og = out.grad_ref();
      const auto& av2 = a.data();
      const auto& bv2 = b.data();
      const auto& ov2 = out.data();
      const int64_t n2 = a.numel();
      if (a.requires_grad()) {
        auto& ag = const_cast<Tensor&>(a).grad();
        for (int64_t i = 0; i < n2; ++i)
          ag[i] += og[i] * dfa(av2[i], bv2[map(i)], ov2[i]);
      }
      if (b.requires_grad()) {
        auto& bg = const_cast<Tensor&>(b).grad();
        for (int64_t i = 0; i < n2; ++i)
          bg[map(i)] += og[i] * dfb(av2[i], bv2[map(i)], ov2[i]);
      }
    });
  }
  return out;
}

// Unary op with partial expressed in terms of (x, out).
template <typename Fwd, typename Dfx>
Tensor unary_op(const char* name, const Tensor& x, Fwd fwd, Dfx dfx) {
  Tensor out(x.shape(), 0.0, x.requires_grad());
  const auto& xv = x.data();
  auto& ov = out.data();
  const int64_t n = x.numel();
  for (int64_t i = 0; i < n; ++i) ov[i] = fwd(xv[i]);
  if (taping(x)) {
    Graph::active()->record(name, out, [x, out, dfx]() {
      const auto& og = out.grad_ref();
      const auto& xv2 = x.data();
      const auto& ov2 = out.data();
      auto& xg = const_cast<Tensor&>(x).grad();
      const int64_t n2 = x.numel();
      for (int64_t i = 0; i < n2; ++i) xg[i] += og[i] * dfx(xv2[i], ov2[i]);
    });
  }
  return out;
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(
      "add", a, b, [](double x, double y) { return x + y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(
      "sub", a, b, [](double x, double y) { return x - y; },
      [](double, double, double) { return 1.0; },
      [](double, double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(
      "mul", a, b, [](double x, double y) { return x * y; },
      [](double, double y, double) { return y; },
      [](double x, double, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(
      "div", a, b, [](double x, double y) { return x / y; },
      [](double, double y, double) { return 1.0 / y; },
      [](double, double y, double o) { return -o / y; });
}

Tensor relu(const Tensor& x) {
  return unary_op(
      "relu", x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

Tensor sigmoid(const Tensor& x) {
  return unary_op(
      "sigmoid", x,
      [](double v) {
        // Branch keeps exp() argument negative to avoid overflow.
        return v >= 0.0 ? 1.0 / (1.0 + std::exp(-v))
                        : std::exp(v) / (1.0 + std::exp(v));
      },
      [](double, double o) { return o * (1.0 - o); });
}

Tensor gelu(const Tensor& x) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  constexpr double inv_sqrt2pi = 0.39894228040143267794;
  return unary_op(
      "gelu", x,
      [](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
      [](double v, double) {
        const double cdf = 0.5 * (1.0 + std::erf(v * inv_sqrt2));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        return cdf + v * pdf;
      });
}

Tensor log(const Tensor& x) {
  return unary_op(
      "log", x, [](double v) { return std::log(v); },
      [](double v, double) { return 1.0 / v; });
}

Tensor clamp(const Tensor& x, double lo, double hi) {
  if (lo > hi) throw ShapeError("clamp bounds out of order");
  return unary_op(
      "clamp", x,
      [lo, hi](double v) { return v < lo ? lo : (v > hi ? hi : v); },
      [lo, hi](double v, double) { return (v >= lo && v <= hi) ? 1.0 : 0.0; });
}

Tensor scale(const Tensor& x, double c) {
  return unary_op(
      "scale", x, [c](double v) { return c * v; },
      [c](double, double) { return c; });
}

Tensor add_scalar(const Tensor& x, double c) {
  return unary_op(
      "add_scalar", x, [c](double v) { return v + c; },
      [](double, double) { return 1.0; });
}

// ---------------------------------------------------------------------------
// Reductions

Tensor sum_channel(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("sum_channel expects [N,C,H,W]");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  Tensor out({N, 1, H, W}, 0.0, x.requires_grad());
  const auto& xv = x.data();
  auto& ov = out.data();
  const int64_t hw = H * W;
  for (int64_t n = 0; n < N; ++n)
    for (int64_t c = 0; c < C; ++c) {
      const double* src = xv.data() + (n * C + c) * hw;
      double* dst = ov.data() + n * hw;
      for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
    }
  if (taping(x)) {
    Graph::active()->record("sum_channel", out, [x, out, N, C, hw]() {
      const auto& og = out.grad_ref();
      auto& xg = const_cast<Tensor&>(x).grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t c = 0; c < C; ++c) {
          double* dst = xg.data() + (n * C + c) * hw;
          const double* src = og.data() + n * hw;
          for (int64_t i = 0; i < hw; ++i) dst[i] += src[i];
        }
    });
  }
  return out;
}

Tensor global_avg_pool(const Tensor& x) {
  if (x.rank() != 4) throw ShapeError("global_avg_pool expects [N,C,H,W]");
  const int64_t N = x.dim(0), C = x.dim(1), H = x.dim(2), W = x.dim(3);
  const int64_t hw = H * W;
  Tensor out({N, C, 1, 1}, 0.0, x.requires_grad());
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int64_t nc = 0; nc < N * C; ++nc) {
    double s = 0.0;
    const double* src = xv.data() + nc * hw;
    for (int64_t i = 0; i < hw; ++i) s += src[i];
    ov[nc] = s / static_cast<double>(hw);
  }
  if (taping(x)) {
    Graph::active()->record("global_avg_pool", out, [x, out, N, C, hw]() {
      const auto& og = out.grad_ref();
      auto& xg = const_cast<Tensor&>(x).grad();
      const double inv = 1.0 / static_cast<double>(hw);
      for (int64_t nc = 0; nc < N * C; ++nc) {
        double* dst = xg.data() + nc * hw;
        const double g = og[nc] * inv;
        for (int64_t i = 0; i < hw; ++i) dst[i] += g;
      }
    });
  }
  return out;
}

Tensor mean_all(const Tensor& x) {
  const int64_t n = x.numel();
  Tensor out({1}, 0.0, x.requires_grad());
  double s = 0.0;
  for (double v : x.data()) s += v;
  out[0] = s / static_cast<double>(n);
  if (taping(x)) {
    Graph::active()->record("mean_all", out, [x, out, n]() {
      const double g = out.grad_ref()[0] / static_cast<double>(n);
      auto& xg = const_cast<Tensor&>(x).grad();
      for (auto& v : xg) v += g;
    });
  }
  return out;
}

Tensor sum_all(const Tensor& x) {
  Tensor out({1}, 0.0, x.requires_grad());
  double s = 0.0;
  for (double v : x.data()) s += v;
  out[0] = s;
  if (taping(x)) {
    Graph::active()->record("sum_all", out, [x, out]() {
      const double g = out.grad_ref()[0];
      auto& xg = const_cast<Tensor&>(x).grad();
      for (auto& v : xg) v += g;
    });
  }
  return out;
}

// ---------------------------------------------------------------------------
// Index remappings

Tensor reshape(const Tensor& x, Shape shape) {
  int64_t n = 1;
  for (int64_t d : shape) n *= d;
  if (n != x.numel())
    throw ShapeError("reshape " + shape_str(x.shape()) + " -> " + shape_str(shape) +
                     " changes element count");
  Tensor out(std::move(shape), x.data(), x.requires_grad());
  if (taping(x)) {
    Graph::active()->record("reshape", out, [x, out]() {
      const auto& og = out.grad_ref();
      auto& xg = const_cast<Tensor&>(x).grad();
      for (size_t i = 0; i < og.size(); ++i) xg[i] += og[i];
    });
  }
  return out;
}

Tensor permute(const Tensor& x, const std::vector<int>& perm) {
  const int r = x.rank();
  if (static_cast<int>(perm.size()) != r)
    throw ShapeError("permute rank mismatch");
  std::vector<bool> seen(static_cast<size_t>(r), false);
  Shape oshape(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    const int p = perm[static_cast<size_t>(i)];
    if (p < 0 || p >= r || seen[static_cast<size_t>(p)])
      throw ShapeError("invalid permutation");
    seen[static_cast<size_t>(p)] = true;
    oshape[static_cast<size_t>(i)] = x.shape()[static_cast<size_t>(p)];
  }
  // Flat map: out[i] = x[src[i]].
  std::vector<int64_t> xstride(static_cast<size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    xstride[static_cast<size_t>(i)] =
        xstride[static_cast<size_t>(i + 1)] * x.shape()[static_cast<size_t>(i + 1)];
  Tensor out(oshape, 0.0, x.requires_grad());
  const int64_t n = x.numel();
  // Owns its state: the adjoint closure outlives this scope.
  auto src_of = [oshape, xstride, perm, r](int64_t flat) {
    int64_t src = 0;
    for (int k = r - 1; k >= 0; --k) {
      const int64_t d = oshape[static_cast<size_t>(k)];
      const int64_t coord = flat % d;
      flat /= d;
      src += coord * xstride[static_cast<size_t>(perm[static_cast<size_t>(k)])];
    }
    return src;
  };
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int64_t i = 0; i < n; ++i) ov[i] = xv[src_of(i)];
  if (taping(x)) {
    Graph::active()->record("permute", out, [x, out, src_of, n]() {
      const auto& og = out.grad_ref();
      auto& xg = const_cast<Tensor&>(x).grad();
      for (int64_t i = 0; i < n; ++i) xg[src_of(i)] += og[i];
    });
  }
  return out;
}

Tensor concat_channel(const std::vector<Tensor>& xs) {
  if (xs.empty()) throw ShapeError("concat_channel of zero tensors");
  const int64_t N = xs[0].dim(0), H = xs[0].dim(2), W = xs[0].dim(3);
  int64_t Ct = 0;
  bool rg = false;
  for (const auto& t : xs) {
    if (t.rank() != 4 || t.dim(0) != N || t.dim(2) != H || t.dim(3) != W)
      throw ShapeError("concat_channel operand shape mismatch");
    Ct += t.dim(1);
    rg = rg || t.requires_grad();
  }
  Tensor out({N, Ct, H, W}, 0.0, rg);
  auto& ov = out.data();
  const int64_t hw = H * W;
  int64_t coff = 0;
  for (const auto& t : xs) {
    const int64_t C = t.dim(1);
    const auto& tv = t.data();
    for (int64_t n = 0; n < N; ++n)
      std::copy(tv.begin() + n * C * hw, tv.begin() + (n + 1) * C * hw,
                ov.begin() + (n * Ct + coff) * hw);
    coff += C;
  }
  if (g_active && rg) {
    Graph::active()->record("concat_channel", out, [xs, out, N, Ct, hw]() {
      const auto& og = out.grad_ref();
      int64_t coff2 = 0;
      for (const auto& t : xs) {
        const int64_t C = t.dim(1);
        if (t.requires_grad()) {
          auto& tg = const_cast<Tensor&>(t).grad();
          for (int64_t n = 0; n < N; ++n) {
            const double* src = og.data() + (n * Ct + coff2) * hw;
            double* dst = tg.data() + n * C * hw;
            for (int64_t i = 0; i < C * hw; ++i) dst[i] += src[i];
          }
        }
        coff2 += C;
      }
    });
  }
  return out;
}

Tensor roll2d(const Tensor& x, int dy, int dx) {
  if (x.rank() != 4) throw ShapeError("roll2d expects [N,h,w,C]");
  const int64_t N = x.dim(0), H = x.dim(1), W = x.dim(2), C = x.dim(3);
  auto modw = [](int64_t v, int64_t m) { return ((v % m) + m) % m; };
  Tensor out(x.shape(), 0.0, x.requires_grad());
  const auto& xv = x.data();
  auto& ov = out.data();
  for (int64_t n = 0; n < N; ++n)
    for (int64_t i = 0; i < H; ++i) {
      const int64_t oi = modw(i + dy, H);
      for (int64_t j = 0; j < W; ++j) {
        const int64_t oj = modw(j + dx, W);
        const double* src = xv.data() + ((n * H + i) * W + j) * C;
        double* dst = ov.data() + ((n * H + oi) * W + oj) * C;
        std::copy(src, src + C, dst);
      }
    }
  if (taping(x)) {
    Graph::active()->record("roll2d", out, [x, out, dy, dx, N, H, W, C, modw]() {
      const auto& og = out.grad_ref();
      auto& xg = const_cast<Tensor&>(x).grad();
      for (int64_t n = 0; n < N; ++n)
        for (int64_t i = 0; i < H; ++i) {
          const int64_t oi = modw(i + dy, H);
          for (int64_t j = 0; j < W; ++j) {
            const int64_t oj = modw(j + dx, W);
            const double* src = og.data() + ((n * H + oi) * W + oj) * C;
            double* dst = xg.data() + ((n * H + i) * W + j) * C;
            for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
          }
        }
    });
  }
  return out;
}

Tensor embedding_rows(const Tensor& table, const std::vector<int64_t>& idx) {
  if (table.rank() != 2) throw ShapeError("embedding_rows expects a 2-d table");
  const int64_t R = table.dim(0), C = table.dim(1);
  for (int64_t i : idx)
    if (i < 0 || i >= R) throw ShapeError("embedding index out of range");
  const int64_t n = static_cast<int64_t>(idx.size());
  Tensor out({n, C}, 0.0, table.requires_grad());
  const auto& tv = table.data();
  auto& ov = out.data();
  for (int64_t i = 0; i < n; ++i)
    std::copy(tv.begin() + idx[static_cast<size_t>(i)] * C,
              tv.begin() + (idx[static_cast<size_t>(i)] + 1) * C,
              ov.begin() + i * C);
  if (taping(table)) {
    Graph::active()->record("embedding_rows", out, [table, out, idx, n, C]() {
      const auto& og = out.grad_ref();
      auto& tg = const_cast<Tensor&>(table).grad();
      for (int64_t i = 0; i < n; ++i) {
        const double* src = og.data() + i * C;
        double* dst = tg.data() + idx[static_cast<size_t>(i)] * C;
        for (int64_t c = 0; c < C; ++c) dst[c] += src[c];
      }
    });
  }
  return out;
}

}  // namespace cdnet
