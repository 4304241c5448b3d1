#pragma once

// Reverse-mode autodiff over dense float64 tensors. Graphs are built
// define-by-run and discarded after backward(); parameter tensors are leaf
// nodes that persist across steps and accumulate gradients until zero_grad().

#include <cstdint>
#include <functional>
#include <memory>
#include <random>
#include <stdexcept>
#include <string>
#include <vector>

namespace laddernat {

using Shape = std::vector<int>;

inline int shape_numel(const Shape& s) {
  int n = 1;
  for (int d : s) n *= d;
  return n;
}

struct Node {
  Shape shape;
  std::vector<double> val;
  std::vector<double> grad;  // sized lazily during backward
  bool requires_grad = false;
  std::uint64_t id = 0;
  std::vector<std::shared_ptr<Node>> parents;
  std::function<void(Node&)> backprop;  // adds into parents' grad buffers
};

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(std::shared_ptr<Node> n) : n_(std::move(n)) {}

  static Tensor zeros(Shape s, bool requires_grad = false);
  static Tensor full(Shape s, double v, bool requires_grad = false);
  static Tensor from_data(Shape s, std::vector<double> data, bool requires_grad = false);
  static Tensor scalar(double v);
  static Tensor uniform(Shape s, double lo, double hi, std::mt19937_64& rng, bool requires_grad = true);
  static Tensor normal(Shape s, double mean, double stddev, std::mt19937_64& rng, bool requires_grad = true);

  bool defined() const { return n_ != nullptr; }
  const Shape& shape() const { return n_->shape; }
  int numel() const { return static_cast<int>(n_->val.size()); }
  int dim(int i) const { return n_->shape[static_cast<size_t>(i)]; }
  int ndim() const { return static_cast<int>(n_->shape.size()); }
  int rows() const { return n_->shape[0]; }
  int cols() const { return n_->shape.size() > 1 ? n_->shape[1] : 1; }

  double* data() { return n_->val.data(); }
  const double* data() const { return n_->val.data(); }
  double item() const;
  double at(int i) const { return n_->val[static_cast<size_t>(i)]; }
  double at(int r, int c) const { return n_->val[static_cast<size_t>(r) * cols() + c]; }

  bool requires_grad() const { return n_->requires_grad; }
  bool has_grad() const { return n_ && !n_->grad.empty(); }
  std::vector<double>& grad() { return n_->grad; }
  const std::vector<double>& grad() const { return n_->grad; }
  void zero_grad() { n_->grad.clear(); }

  std::shared_ptr<Node> node() const { return n_; }

 private:
  std::shared_ptr<Node> n_;
};

// ---- graph ----------------------------------------------------------------

// Backpropagates d(loss)/d(node) into every node reachable from `loss`.
// `loss` must be scalar-shaped. Gradients of leaf tensors accumulate
// additively across calls until zero_grad().
void backward(const Tensor& loss);

// ---- elementwise / arithmetic ---------------------------------------------
// Binary ops require identical shapes, or the right operand may be a scalar
// or a vector matching the trailing dimension (expanded over the leading
// rows). Any other mismatch throws std::invalid_argument.

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor neg(const Tensor& a);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);

Tensor relu(const Tensor& a);
Tensor softplus(const Tensor& a);
Tensor exp_t(const Tensor& a);
Tensor log_t(const Tensor& a);
Tensor sqrt_t(const Tensor& a);
Tensor square(const Tensor& a);

// ---- linear algebra ---------------------------------------------------------

Tensor matmul(const Tensor& a, const Tensor& b);  // [M,K]x[K,N] -> [M,N]
Tensor transpose(const Tensor& a);                // 2-D only

// ---- shape ------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape s);
Tensor concat(const std::vector<Tensor>& parts, int dim);        // dim 0 or 1 of 2-D
Tensor slice(const Tensor& a, int dim, int start, int len);      // 2-D
Tensor slice_rows(const Tensor& a, int start, int len);

// ---- reductions -------------------------------------------------------------

Tensor sum_all(const Tensor& a);    // -> scalar [1]
Tensor mean_all(const Tensor& a);   // -> scalar [1]
Tensor mean_rows(const Tensor& a);  // [R,C] -> [C], mean over rows

// ---- nnet primitives --------------------------------------------------------

// Row-wise softmax of a 2-D tensor (1-D treated as a single row).
Tensor softmax_rows(const Tensor& a);
// Same, but entries with mask true are disallowed (zero weight). A fully
// masked row throws std::invalid_argument.
Tensor masked_softmax_rows(const Tensor& a, const std::vector<std::uint8_t>& disallow);
Tensor log_softmax_rows(const Tensor& a);

// out[i] = a[i, idx[i]]; used to gather per-position target log-probs.
Tensor pick_rows(const Tensor& a, const std::vector<int>& idx);

// Per-row layer norm with learned gain/bias of size [C].
Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps = 1e-5);

// rows of `table` indexed by ids -> [len, D]; out-of-range id throws.
Tensor embedding(const Tensor& table, const std::vector<int>& ids);

// Inverted dropout; rate==0 is the identity. Mask is drawn from `rng` at
// graph-build time, so a seeded run is reproducible.
Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng);

// ---- fused kernels -----------------------------------------------------------

// Builds a node with explicit parents and a hand-written backward pass; used
// by fused kernels (attention) to keep the graph small. The backprop callback
// must add into parents' grad buffers (after ensure_grad).
Tensor custom_op(Shape out_shape, std::vector<double> out_val, std::vector<Tensor> parents,
                 std::function<void(Node&)> backprop);

void ensure_grad(Node& n);

// ---- verification harness ----------------------------------------------------

struct GradCheckReport {
  double max_rel_err = 0.0;
  int checked = 0;
  std::string worst;  // "param[i]: analytic=..., fd=..."
};

// Compares analytic gradients of f() against central finite differences over
// up to max_coords_per_param sampled coordinates of each parameter.
// f must rebuild its graph from the current parameter values on every call.
GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           double eps, int max_coords_per_param, std::mt19937_64& rng);

bool all_finite(const Tensor& t);

}  // namespace laddernat
