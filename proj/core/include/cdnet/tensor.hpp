#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <stdexcept>
#include <string>
#include <vector>

namespace cdnet {

using Shape = std::vector<int64_t>;

std::string shape_str(const Shape& s);

// Thrown on any shape/configuration violation (maps to CLI usage/data errors).
class ShapeError : public std::invalid_argument {
 public:
  using std::invalid_argument::invalid_argument;
};

// Thrown on malformed external data (files, checkpoints, manifests).
class DataError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

// Thrown when a computation produces NaN/Inf or a numeric guard trips.
class NumericError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct TensorImpl {
  Shape shape;
  std::vector<double> data;
  std::vector<double> grad;  // empty until an adjoint is accumulated
  bool requires_grad = false;
};

// Dense row-major n-d array of doubles. Copying a Tensor copies a handle;
// the buffer is shared. Values are immutable by convention once an op has
// consumed the tensor (gradient accumulators are the only mutated state).
class Tensor {
 public:
  Tensor() = default;
  Tensor(Shape shape, double fill, bool requires_grad = false);
  Tensor(Shape shape, std::vector<double> values, bool requires_grad = false);

  static Tensor zeros(Shape shape) { return Tensor(std::move(shape), 0.0); }
  static Tensor full(Shape shape, double v) { return Tensor(std::move(shape), v); }
  static Tensor scalar(double v) { return Tensor({1}, {v}); }

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  int rank() const { return static_cast<int>(impl_->shape.size()); }
  int64_t dim(int i) const;  // negative indices count from the back
  int64_t numel() const { return static_cast<int64_t>(impl_->data.size()); }

  std::vector<double>& data() { return impl_->data; }
  const std::vector<double>& data() const { return impl_->data; }
  double& operator[](int64_t i) { return impl_->data[static_cast<size_t>(i)]; }
  double operator[](int64_t i) const { return impl_->data[static_cast<size_t>(i)]; }
  double at(std::initializer_list<int64_t> idx) const;
  double item() const;  // requires numel()==1

  bool requires_grad() const { return impl_->requires_grad; }
  Tensor& set_requires_grad(bool v);

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  std::vector<double>& grad();  // allocates zeros on first touch
  const std::vector<double>& grad_ref() const;  // throws if absent
  Tensor grad_tensor() const;
  void zero_grad();

  bool all_finite() const;
  void check_finite(const char* where) const;  // NumericError on NaN/Inf

  std::shared_ptr<TensorImpl> impl() const { return impl_; }

 private:
  std::shared_ptr<TensorImpl> impl_;
};

// Reverse-mode tape. Primitives executed while a Graph is active (and
// touching at least one requires_grad tensor) append one node each, in
// execution order; backward() replays the nodes once, in reverse.
class Graph {
 public:
  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  // RAII activation; nested scopes are rejected.
  class Scope {
   public:
    explicit Scope(Graph& g);
    ~Scope();
    Scope(const Scope&) = delete;
    Scope& operator=(const Scope&) = delete;
  };

  static Graph* active();

  // Seeds d(loss)/d(loss)=1 and runs every node's adjoint exactly once, in
  // reverse execution order; nodes whose output never received a gradient
  // (dead branches) are skipped. Gradients accumulate: calling backward
  // twice without zero_grad doubles them.
  void backward(const Tensor& loss);

  size_t node_count() const { return nodes_.size(); }
  const char* node_op(size_t i) const { return nodes_[i].op; }
  void clear() { nodes_.clear(); }

  void record(const char* op, Tensor out, std::function<void()> adjoint);

 private:
  struct Node {
    const char* op;
    Tensor out;
    std::function<void()> adjoint;
  };
  std::vector<Node> nodes_;
};

void backward(Graph& g, const Tensor& loss);

// ---- elementwise primitives -------------------------------------------
// Binary ops broadcast b onto a's shape: b is right-aligned and every axis
// must match a's extent or be 1. The output always has a's shape.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor relu(const Tensor& x);     // subgradient at 0 is 0
Tensor sigmoid(const Tensor& x);
Tensor gelu(const Tensor& x);     // exact erf form
Tensor log(const Tensor& x);
Tensor clamp(const Tensor& x, double lo, double hi);
Tensor scale(const Tensor& x, double c);
Tensor add_scalar(const Tensor& x, double c);

// ---- linear algebra / normalization -----------------------------------
// a: [..., m, k]; b: [k, n] (shared across the batch) or a-matching
// leading dims with [..., k, n].
Tensor matmul(const Tensor& a, const Tensor& b);
Tensor softmax(const Tensor& x, int axis);
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

enum class Mode { kTrain, kEval };

// x: [N,C,H,W]; gamma/beta: [C]. Train mode normalizes with batch statistics
// and folds them into running_mean/var with momentum 0.1 (snapped to f32 so
// checkpoints round-trip exactly); eval mode reads the running buffers.
Tensor batch_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  Tensor& running_mean, Tensor& running_var, Mode mode,
                  double momentum = 0.1, double eps = 1e-5);

// ---- convolution family -------------------------------------------------
// Cross-correlation. x: [N,Ci,H,W], w: [Co,Ci,kh,kw], b: [Co] or undefined.
Tensor conv2d(const Tensor& x, const Tensor& w, const Tensor& b,
              int stride = 1, int pad = 0);

// Adjoint of conv2d as a linear map. w: [Ci,Co,kh,kw]; output spatial extent
// is exactly input*stride (implicit padding (k-stride)/2, which must be a
// nonnegative integer).
Tensor conv2d_transpose(const Tensor& x, const Tensor& w, const Tensor& b,
                        int stride);

// x - Pool_m(x) with stride-1 same-size mean pooling that divides by the
// number of in-bounds taps, so constant fields give exactly zero contrast.
Tensor avg_pool_contrast(const Tensor& x, int m);

// ---- reductions ----------------------------------------------------------
Tensor sum_channel(const Tensor& x);      // [N,C,H,W] -> [N,1,H,W]
Tensor global_avg_pool(const Tensor& x);  // [N,C,H,W] -> [N,C,1,1]
Tensor mean_all(const Tensor& x);         // -> [1]
Tensor sum_all(const Tensor& x);          // -> [1]

// ---- index remappings ----------------------------------------------------
Tensor reshape(const Tensor& x, Shape shape);
Tensor permute(const Tensor& x, const std::vector<int>& perm);
Tensor concat_channel(const std::vector<Tensor>& xs);  // axis 1, rank 4
// Cyclic shift of axes (1,2) of a [N,h,w,C] tensor: entry (i,j) moves to
// ((i+dy) mod h, (j+dx) mod w).
Tensor roll2d(const Tensor& x, int dy, int dx);
// rows[i] = table[idx[i], :]; adjoint scatter-adds.
Tensor embedding_rows(const Tensor& table, const std::vector<int64_t>& idx);

inline double snap32(double v) { return static_cast<double>(static_cast<float>(v)); }
void snap32_inplace(Tensor& t);

}  // namespace cdnet
