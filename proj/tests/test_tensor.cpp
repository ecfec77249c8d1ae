#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <cmath>
#include <limits>
#include <vector>

#include "cdnet/gradcheck.hpp"
#include "cdnet/rng.hpp"
#include "cdnet/tensor.hpp"
#include "doctest.h"

using namespace cdnet;

namespace {

Tensor rand_t(Rng& rng, Shape shape, double lo = -1.0, double hi = 1.0) {
  Tensor t(std::move(shape), 0.0);
  for (auto& v : t.data()) v = rng.uniform(lo, hi);
  return t;
}

bool same_bits(const Tensor& a, const Tensor& b) {
  if (a.shape() != b.shape()) return false;
  for (int64_t i = 0; i < a.numel(); ++i)
    if (a[i] != b[i]) return false;
  return true;
}

}  // namespace

TEST_CASE("elementwise ops follow their componentwise definitions") {
  Tensor a({2}, {1.0, 2.0}), b({2}, {3.0, 4.0});
  Tensor s = add(a, b);
  CHECK(s[0] == 4.0);
  CHECK(s[1] == 6.0);
  Tensor d = sub(b, a);
  CHECK(d[0] == 2.0);
  CHECK(d[1] == 2.0);
  Tensor m = mul(a, b);
  CHECK(m[0] == 3.0);
  CHECK(m[1] == 8.0);
  Tensor q = div(b, a);
  CHECK(q[0] == 3.0);
  CHECK(q[1] == 2.0);

  Tensor r = relu(Tensor({3}, {-1.0, 0.0, 2.0}));
  CHECK(r[0] == 0.0);
  CHECK(r[1] == 0.0);
  CHECK(r[2] == 2.0);

  CHECK(sigmoid(Tensor::scalar(0.0)).item() == doctest::Approx(0.5).epsilon(1e-15));
  CHECK(clamp(Tensor({3}, {-2.0, 0.3, 9.0}), -1.0, 1.0)[0] == -1.0);
  CHECK(clamp(Tensor({3}, {-2.0, 0.3, 9.0}), -1.0, 1.0)[2] == 1.0);
  CHECK(scale(Tensor::scalar(3.0), -2.0).item() == -6.0);
  CHECK(add_scalar(Tensor::scalar(3.0), 0.25).item() == 3.25);
  CHECK(cdnet::log(Tensor::scalar(1.0)).item() == 0.0);
}

TEST_CASE("binary ops broadcast trailing singleton axes of the second operand") {
  Rng rng(3);
  Tensor x = rand_t(rng, {2, 3, 2, 2});
  Tensor bias = rand_t(rng, {3, 1, 1});
  Tensor y = add(x, bias);
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t c = 0; c < 3; ++c)
      for (int64_t i = 0; i < 4; ++i)
        CHECK(y[(n * 3 + c) * 4 + i] == x[(n * 3 + c) * 4 + i] + bias[c]);

  // Mismatch reports both shapes.
  try {
    add(x, rand_t(rng, {4}));
    FAIL("expected ShapeError");
  } catch (const ShapeError& e) {
    std::string msg = e.what();
    CHECK(msg.find("[2,3,2,2]") != std::string::npos);
    CHECK(msg.find("[4]") != std::string::npos);
  }
}

TEST_CASE("matmul matches hand-expanded products") {
  Tensor eye({2, 2}, {1.0, 0.0, 0.0, 1.0});
  Tensor m({2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(same_bits(matmul(eye, m), m));

  Tensor v({2, 1}, {5.0, 6.0});
  Tensor p = matmul(m, v);
  CHECK(p[0] == 17.0);
  CHECK(p[1] == 39.0);

  Tensor z = matmul(Tensor::zeros({2, 3}), Tensor({3, 4}, 7.0));
  for (int64_t i = 0; i < z.numel(); ++i) CHECK(z[i] == 0.0);

  // Batched: shared right operand across leading dims.
  Rng rng(5);
  Tensor a = rand_t(rng, {2, 3, 4});
  Tensor b = rand_t(rng, {4, 2});
  Tensor c = matmul(a, b);
  REQUIRE(c.shape() == Shape{2, 3, 2});
  for (int64_t n = 0; n < 2; ++n)
    for (int64_t i = 0; i < 3; ++i)
      for (int64_t j = 0; j < 2; ++j) {
        double acc = 0.0;
        for (int64_t k = 0; k < 4; ++k)
          acc += a[(n * 3 + i) * 4 + k] * b[k * 2 + j];
        CHECK(c[(n * 3 + i) * 2 + j] == doctest::Approx(acc).epsilon(1e-14));
      }
}

TEST_CASE("softmax slices are probability distributions") {
  Tensor u = softmax(Tensor({3}, 5.0), -1);
  for (int64_t i = 0; i < 3; ++i)
    CHECK(u[i] == doctest::Approx(1.0 / 3.0).epsilon(1e-15));
  CHECK(softmax(Tensor::scalar(42.0), -1).item() == 1.0);

  Tensor x({3}, {1.0, 2.0, 3.0});
  Tensor s = softmax(x, 0);
  double denom = std::exp(1.0 - 3.0) + std::exp(2.0 - 3.0) + 1.0;
  for (int64_t i = 0; i < 3; ++i)
    CHECK(s[i] == doctest::Approx(std::exp(x[i] - 3.0) / denom).epsilon(1e-14));

  Rng rng(7);
  for (int it = 0; it < 20; ++it) {
    Tensor r = rand_t(rng, {4, 6}, -30.0, 30.0);
    Tensor sm = softmax(r, 1);
    for (int64_t row = 0; row < 4; ++row) {
      double total = 0.0;
      for (int64_t j = 0; j < 6; ++j) {
        CHECK(sm[row * 6 + j] >= 0.0);
        total += sm[row * 6 + j];
      }
      CHECK(std::abs(total - 1.0) <= 1e-12);
    }
  }
}

TEST_CASE("layer_norm standardizes each row before the affine map") {
  Tensor g1({4}, 1.0), b0({4}, 0.0);
  Tensor c = layer_norm(Tensor({1, 4}, 3.0), g1, b0);
  for (int64_t i = 0; i < 4; ++i) CHECK(std::abs(c[i]) < 1e-12);

  Tensor g2({2}, 1.0), bz({2}, 0.0);
  Tensor pm = layer_norm(Tensor({1, 2}, {1.0, -1.0}), g2, bz);
  const double want = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(pm[0] == doctest::Approx(want).epsilon(1e-12));
  CHECK(pm[1] == doctest::Approx(-want).epsilon(1e-12));

  Tensor gz({4}, 0.0), b5({4}, 5.0);
  Tensor flat = layer_norm(Tensor({2, 4}, {1, 2, 3, 4, 9, 8, 7, 6}), gz, b5);
  for (int64_t i = 0; i < flat.numel(); ++i) CHECK(flat[i] == 5.0);
}

TEST_CASE("batch_norm uses batch statistics in train mode and buffers in eval") {
  Tensor g({1}, 1.0), b({1}, 0.0);
  Tensor rm({1}, 0.0), rv({1}, 1.0);

  Tensor cst = batch_norm(Tensor({2, 1, 1, 1}, 3.0), g, b, rm, rv, Mode::kTrain);
  CHECK(std::abs(cst[0]) < 1e-12);
  CHECK(std::abs(cst[1]) < 1e-12);

  Tensor pm({2, 1, 1, 1}, {-1.0, 1.0});
  Tensor rm2({1}, 0.0), rv2({1}, 1.0);
  Tensor y = batch_norm(pm, g, b, rm2, rv2, Mode::kTrain);
  const double want = 1.0 / std::sqrt(1.0 + 1e-5);
  CHECK(y[0] == doctest::Approx(-want).epsilon(1e-12));
  CHECK(y[1] == doctest::Approx(want).epsilon(1e-12));

  // Eval path is the affine formula on the stored statistics.
  Tensor rm3({1}, 2.0), rv3({1}, 4.0);
  Tensor g3({1}, 3.0), b3({1}, 0.5);
  Tensor e = batch_norm(Tensor({1, 1, 1, 1}, 6.0), g3, b3, rm3, rv3, Mode::kEval);
  CHECK(e[0] == doctest::Approx((6.0 - 2.0) / std::sqrt(4.0 + 1e-5) * 3.0 + 0.5)
                    .epsilon(1e-12));
  CHECK(rm3[0] == 2.0);  // eval never touches the buffers
  CHECK(rv3[0] == 4.0);

  // A single value per channel has no batch variance to normalize by.
  Tensor rm4({1}, 0.0), rv4({1}, 1.0);
  CHECK_THROWS_AS(
      batch_norm(Tensor({1, 1, 1, 1}, 1.0), g, b, rm4, rv4, Mode::kTrain),
      NumericError);
}

TEST_CASE("conv2d implements cross-correlation with stride and padding") {
  // 1x1 unit kernel is the identity.
  Rng rng(11);
  Tensor x = rand_t(rng, {1, 1, 3, 3});
  Tensor unit({1, 1, 1, 1}, 1.0);
  Tensor none;
  CHECK(same_bits(conv2d(x, unit, none), x));

  // An all-ones 3x3 kernel on a unit impulse spreads a plateau of ones.
  Tensor imp = Tensor::zeros({1, 1, 5, 5});
  imp[2 * 5 + 2] = 1.0;
  Tensor ones3({1, 1, 3, 3}, 1.0);
  Tensor plat = conv2d(imp, ones3, none, 1, 1);
  for (int64_t y = 0; y < 5; ++y)
    for (int64_t xx = 0; xx < 5; ++xx) {
      const bool inside = std::abs(y - 2) <= 1 && std::abs(xx - 2) <= 1;
      CHECK(plat[y * 5 + xx] == (inside ? 1.0 : 0.0));
    }

  // Zero weights with a bias produce a constant map.
  Tensor wz = Tensor::zeros({2, 1, 3, 3});
  Tensor bias({2}, {0.25, -4.0});
  Tensor cst = conv2d(x, wz, bias, 1, 1);
  for (int64_t c = 0; c < 2; ++c)
    for (int64_t i = 0; i < 9; ++i) CHECK(cst[c * 9 + i] == bias[c]);

  // Stride rounds the output extent down; an empty output is rejected.
  CHECK(conv2d(rand_t(rng, {1, 1, 6, 6}), ones3, none, 2, 0).shape() ==
        Shape{1, 1, 2, 2});
  CHECK_THROWS_AS(conv2d(rand_t(rng, {1, 1, 2, 2}), ones3, none, 1, 0),
                  ShapeError);
}

TEST_CASE("conv2d_transpose is the matrix transpose of conv2d") {
  Tensor none;
  // stride 1, 1x1 unit kernel is the identity.
  Rng rng(13);
  Tensor x = rand_t(rng, {1, 1, 4, 4});
  Tensor unit({1, 1, 1, 1}, 1.0);
  CHECK(same_bits(conv2d_transpose(x, unit, none, 1), x));

  // stride 2 doubles the spatial extent.
  Tensor w2 = rand_t(rng, {1, 1, 4, 4});
  Tensor up = conv2d_transpose(rand_t(rng, {1, 1, 4, 4}), w2, none, 2);
  CHECK(up.shape() == Shape{1, 1, 8, 8});

  // Dense-matrix oracle: materialize both linear maps column by column and
  // check they are transposes of each other. Kernel 4, stride 2, so the
  // forward conv uses pad (4-2)/2 = 1 and maps 10x10 -> 5x5.
  Tensor w = rand_t(rng, {1, 1, 4, 4});
  const int64_t in_n = 100, out_n = 25;
  std::vector<double> A(out_n * in_n, 0.0);  // conv2d as [out_n x in_n]
  for (int64_t j = 0; j < in_n; ++j) {
    Tensor e = Tensor::zeros({1, 1, 10, 10});
    e[j] = 1.0;
    Tensor col = conv2d(e, w, none, 2, 1);
    for (int64_t i = 0; i < out_n; ++i) A[i * in_n + j] = col[i];
  }
  std::vector<double> B(in_n * out_n, 0.0);  // transpose op as [in_n x out_n]
  Tensor wt = reshape(permute(reshape(w, {1, 1, 4, 4}), {1, 0, 2, 3}),
                      {1, 1, 4, 4});  // [Ci,Co,kh,kw] layout, same numbers here
  for (int64_t j = 0; j < out_n; ++j) {
    Tensor e = Tensor::zeros({1, 1, 5, 5});
    e[j] = 1.0;
    Tensor col = conv2d_transpose(e, wt, none, 2);
    for (int64_t i = 0; i < in_n; ++i) B[i * out_n + j] = col[i];
  }
  for (int64_t i = 0; i < out_n; ++i)
    for (int64_t j = 0; j < in_n; ++j)
      CHECK(std::abs(A[i * in_n + j] - B[j * out_n + i]) <= 1e-12);
}

TEST_CASE("avg_pool_contrast vanishes on constant fields and keeps borders exact") {
  // Sum-of-ones divided by the window count is exact in floating point, so a
  // unit field must contrast to exactly zero at every window size.
  Tensor ones({1, 2, 4, 4}, 1.0);
  for (int m : {3, 5, 7, 9}) {
    Tensor out = avg_pool_contrast(ones, m);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(out[i] == 0.0);
  }
  // Arbitrary constants cancel up to one rounding step of the window mean.
  Tensor c({1, 2, 4, 4}, 0.7);
  for (int m : {3, 5, 7, 9}) {
    Tensor out = avg_pool_contrast(c, m);
    for (int64_t i = 0; i < out.numel(); ++i) CHECK(std::abs(out[i]) <= 1e-15);
  }

  Tensor imp = Tensor::zeros({1, 1, 5, 5});
  imp[2 * 5 + 2] = 1.0;
  Tensor ct = avg_pool_contrast(imp, 3);
  CHECK(ct[2 * 5 + 2] == doctest::Approx(1.0 - 1.0 / 9.0).epsilon(1e-15));

  Tensor one({1, 1, 1, 1}, 3.3);
  CHECK(avg_pool_contrast(one, 9)[0] == 0.0);

  CHECK_THROWS_AS(avg_pool_contrast(c, 4), ShapeError);
  CHECK_THROWS_AS(avg_pool_contrast(c, 0), ShapeError);
}

TEST_CASE("reductions collapse the documented axes") {
  Tensor c({2, 3, 2, 2}, 1.5);
  Tensor gap = global_avg_pool(c);
  REQUIRE(gap.shape() == Shape{2, 3, 1, 1});
  for (int64_t i = 0; i < gap.numel(); ++i) CHECK(gap[i] == 1.5);

  // One-hot channels sum to an all-ones map.
  Tensor oh = Tensor::zeros({1, 3, 2, 2});
  oh[0 * 4 + 0] = 1.0;
  oh[1 * 4 + 1] = 1.0;
  oh[2 * 4 + 2] = 1.0;
  oh[0 * 4 + 3] = 1.0;
  Tensor sc = sum_channel(oh);
  REQUIRE(sc.shape() == Shape{1, 1, 2, 2});
  for (int64_t i = 0; i < 4; ++i) CHECK(sc[i] == 1.0);

  Tensor q({1, 1, 2, 2}, {1.0, 2.0, 3.0, 4.0});
  CHECK(global_avg_pool(q)[0] == 2.5);
  CHECK(mean_all(q).item() == 2.5);
  CHECK(sum_all(q).item() == 10.0);
}

TEST_CASE("index remappings are element bijections with exact inverses") {
  Rng rng(17);
  Tensor x = rand_t(rng, {2, 3, 4, 5});

  CHECK(same_bits(reshape(reshape(x, {6, 20}), x.shape()), x));

  Tensor p = permute(x, {2, 0, 3, 1});
  REQUIRE(p.shape() == Shape{4, 2, 5, 3});
  CHECK(same_bits(permute(p, {1, 3, 0, 2}), x));

  Tensor grid = rand_t(rng, {1, 6, 7, 2});
  CHECK(same_bits(roll2d(grid, 0, 0), grid));
  CHECK(same_bits(roll2d(grid, 6, 7), grid));
  CHECK(same_bits(roll2d(roll2d(grid, 2, 3), -2, -3), grid));

  Tensor a = rand_t(rng, {1, 2, 3, 3}), b = rand_t(rng, {1, 3, 3, 3});
  Tensor cat = concat_channel({a, b});
  REQUIRE(cat.shape() == Shape{1, 5, 3, 3});
  for (int64_t i = 0; i < a.numel(); ++i) CHECK(cat[i] == a[i]);
  for (int64_t i = 0; i < b.numel(); ++i) CHECK(cat[a.numel() + i] == b[i]);

  Tensor table = rand_t(rng, {5, 3});
  Tensor rows = embedding_rows(table, {4, 0, 4});
  REQUIRE(rows.shape() == Shape{3, 3});
  for (int64_t j = 0; j < 3; ++j) {
    CHECK(rows[0 * 3 + j] == table[4 * 3 + j]);
    CHECK(rows[1 * 3 + j] == table[0 * 3 + j]);
    CHECK(rows[2 * 3 + j] == table[4 * 3 + j]);
  }
}

TEST_CASE("backward accumulates exact adjoints through shared subexpressions") {
  Tensor x({3}, {1.0, -2.0, 3.0}, /*requires_grad=*/true);
  {
    Graph g;
    Graph::Scope scope(g);
    g.backward(sum_all(x));
  }
  for (int64_t i = 0; i < 3; ++i) CHECK(x.grad_ref()[i] == 1.0);

  Tensor y({1}, {3.0}, true);
  {
    Graph g;
    Graph::Scope scope(g);
    g.backward(sum_all(mul(y, y)));
  }
  CHECK(y.grad_ref()[0] == 6.0);

  // x used twice: the node is visited once and the adjoint is exactly 2.
  Tensor z({4}, {0.5, -1.0, 2.0, 7.0}, true);
  {
    Graph g;
    Graph::Scope scope(g);
    g.backward(sum_all(add(z, z)));
  }
  for (int64_t i = 0; i < 4; ++i) CHECK(z.grad_ref()[i] == 2.0);

  // A second backward without zero_grad doubles the accumulator.
  {
    Graph g;
    Graph::Scope scope(g);
    g.backward(sum_all(add(z, z)));
  }
  for (int64_t i = 0; i < 4; ++i) CHECK(z.grad_ref()[i] == 4.0);

  // relu picks subgradient 0 at the kink.
  Tensor k({1}, {0.0}, true);
  {
    Graph g;
    Graph::Scope scope(g);
    g.backward(sum_all(relu(k)));
  }
  CHECK(k.grad_ref()[0] == 0.0);
}

TEST_CASE("finite-difference checker vouches for composite chains") {
  Rng rng(23);
  // Affine maps agree with central differences to roundoff.
  Tensor lin = rand_t(rng, {3, 4});
  lin.set_requires_grad(true);
  Tensor dir = rand_t(rng, {3, 4});
  auto affine = [&] { return sum_all(mul(lin, dir)); };
  GradCheckReport r = gradcheck(affine, {{"x", lin}});
  CHECK(r.ok(1e-9));

  // sigmoid(matmul(..)) passes at the production tolerance.
  Tensor a = rand_t(rng, {3, 4});
  Tensor b = rand_t(rng, {4, 2});
  a.set_requires_grad(true);
  b.set_requires_grad(true);
  auto chain = [&] { return sum_all(sigmoid(matmul(a, b))); };
  GradCheckReport r2 = gradcheck(chain, {{"a", a}, {"b", b}});
  CHECK(r2.ok(1e-4));
  CHECK(r2.checked == 20);

  // Breach reporting is a value, not an exception.
  CHECK_FALSE(r2.ok(1e-15));
  CHECK(r2.max_rel_err > 1e-15);
  CHECK_NOTHROW((void)r2.ok(1e-15));
}

TEST_CASE("finiteness guards trap NaN and Inf as numeric errors") {
  Tensor bad({2}, {1.0, std::numeric_limits<double>::quiet_NaN()});
  CHECK_FALSE(bad.all_finite());
  CHECK_THROWS_AS(bad.check_finite("test"), NumericError);

  Tensor inf_r = div(Tensor({1}, {1.0}), Tensor({1}, {0.0}));
  CHECK_FALSE(inf_r.all_finite());
  Tensor nan_r = cdnet::log(Tensor({1}, {-1.0}));
  CHECK_FALSE(nan_r.all_finite());
  CHECK_THROWS_AS(nan_r.check_finite("log"), NumericError);
}
