#include "laddernat/tensor.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <unordered_set>

namespace laddernat {

namespace {

std::atomic<std::uint64_t> g_next_id{1};

std::shared_ptr<Node> make_node(Shape s) {
  auto n = std::make_shared<Node>();
  n->shape = std::move(s);
  n->val.assign(static_cast<size_t>(shape_numel(n->shape)), 0.0);
  n->id = g_next_id.fetch_add(1, std::memory_order_relaxed);
  return n;
}

void check_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape())
    throw std::invalid_argument(std::string(op) + ": shape mismatch");
}

// Broadcast classification for binary elementwise ops:
//   0 = same shape, 1 = b is a vector matching a's trailing dim, 2 = b scalar.
int broadcast_kind(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() == b.shape()) return 0;
  if (b.numel() == 1) return 2;
  if (a.ndim() == 2 && b.numel() == a.cols()) return 1;
  throw std::invalid_argument(std::string(op) + ": shape mismatch (only trailing-dim or scalar expansion allowed)");
}

double stable_sigmoid(double x) {
  if (x >= 0) {
    double e = std::exp(-x);
    return 1.0 / (1.0 + e);
  }
  double e = std::exp(x);
  return e / (1.0 + e);
}

double stable_softplus(double x) {
  if (x > 0) return x + std::log1p(std::exp(-x));
  return std::log1p(std::exp(x));
}

}  // namespace

void ensure_grad(Node& n) {
  if (n.grad.size() != n.val.size()) n.grad.assign(n.val.size(), 0.0);
}

Tensor custom_op(Shape out_shape, std::vector<double> out_val, std::vector<Tensor> parents,
                 std::function<void(Node&)> backprop) {
  if (static_cast<int>(out_val.size()) != shape_numel(out_shape))
    throw std::invalid_argument("custom_op: value size does not match shape");
  auto n = make_node(std::move(out_shape));
  n->val = std::move(out_val);
  n->parents.reserve(parents.size());
  for (const auto& p : parents) n->parents.push_back(p.node());
  n->backprop = std::move(backprop);
  return Tensor(n);
}

// ---- constructors -----------------------------------------------------------

Tensor Tensor::zeros(Shape s, bool requires_grad) {
  auto n = make_node(std::move(s));
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::full(Shape s, double v, bool requires_grad) {
  auto n = make_node(std::move(s));
  std::fill(n->val.begin(), n->val.end(), v);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::from_data(Shape s, std::vector<double> data, bool requires_grad) {
  if (static_cast<int>(data.size()) != shape_numel(s))
    throw std::invalid_argument("from_data: data size does not match shape");
  auto n = make_node(std::move(s));
  n->val = std::move(data);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::scalar(double v) { return full({1}, v, false); }

Tensor Tensor::uniform(Shape s, double lo, double hi, std::mt19937_64& rng, bool requires_grad) {
  auto n = make_node(std::move(s));
  std::uniform_real_distribution<double> d(lo, hi);
  for (auto& x : n->val) x = d(rng);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

Tensor Tensor::normal(Shape s, double mean, double stddev, std::mt19937_64& rng, bool requires_grad) {
  auto n = make_node(std::move(s));
  std::normal_distribution<double> d(mean, stddev);
  for (auto& x : n->val) x = d(rng);
  n->requires_grad = requires_grad;
  return Tensor(n);
}

double Tensor::item() const {
  if (numel() != 1) throw std::invalid_argument("item: tensor is not scalar");
  return n_->val[0];
}

bool all_finite(const Tensor& t) {
  for (int i = 0; i < t.numel(); ++i)
    if (!std::isfinite(t.data()[i])) return false;
  return true;
}

// ---- backward ----------------------------------------------------------------

void backward(const Tensor& loss) {
  if (loss.numel() != 1) throw std::invalid_argument("backward: loss must be scalar");
  // Iterative post-order DFS; parent visit order is structural, so two
  // identically built graphs replay gradient accumulation in the same order.
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  struct Frame {
    Node* n;
    size_t next_parent;
  };
  std::vector<Frame> stack;
  Node* root = loss.node().get();
  stack.push_back({root, 0});
  seen.insert(root);
  while (!stack.empty()) {
    Frame& f = stack.back();
    if (f.next_parent < f.n->parents.size()) {
      Node* p = f.n->parents[f.next_parent++].get();
      if (seen.insert(p).second) stack.push_back({p, 0});
    } else {
      order.push_back(f.n);
      stack.pop_back();
    }
  }
  for (Node* n : order) ensure_grad(*n);
  root->grad[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backprop) n->backprop(*n);
  }
}

// ---- op helpers ----------------------------------------------------------------

namespace {

// Templated so the forward map and derivative inline into tight loops; the
// only indirect call is the per-node backprop dispatch.
template <class Fwd, class Dfn /* (x, y) -> dy/dx */>
Tensor unary_op(const Tensor& a, Fwd fwd, Dfn dfn) {
  auto n = make_node(a.shape());
  const double* av = a.data();
  for (size_t i = 0; i < n->val.size(); ++i) n->val[i] = fwd(av[i]);
  auto pa = a.node();
  n->parents = {pa};
  n->backprop = [pa, dfn](Node& self) {
    ensure_grad(*pa);
    const double* x = pa->val.data();
    const double* y = self.val.data();
    const double* g = self.grad.data();
    double* out = pa->grad.data();
    for (size_t i = 0; i < self.val.size(); ++i) out[i] += g[i] * dfn(x[i], y[i]);
  };
  return Tensor(n);
}

}  // namespace

// ---- arithmetic -----------------------------------------------------------------

namespace {

// Binary elementwise op with trailing-dim / scalar expansion of b. Fwd and
// the two partials are inlined per broadcast kind.
template <class Fwd, class DA /* (b) -> d/da */, class DB /* (a, b) -> d/db */>
Tensor binary_op(const Tensor& a, const Tensor& b, const char* name, Fwd fwd, DA da, DB db) {
  const int kind = broadcast_kind(a, b, name);
  auto n = make_node(a.shape());
  const int cols = a.ndim() == 2 ? a.cols() : a.numel();
  const double* av = a.data();
  const double* bv = b.data();
  const size_t total = n->val.size();
  if (kind == 0) {
    for (size_t i = 0; i < total; ++i) n->val[i] = fwd(av[i], bv[i]);
  } else if (kind == 2) {
    for (size_t i = 0; i < total; ++i) n->val[i] = fwd(av[i], bv[0]);
  } else {
    for (size_t i = 0; i < total; ++i) n->val[i] = fwd(av[i], bv[i % static_cast<size_t>(cols)]);
  }
  auto pa = a.node(), pb = b.node();
  n->parents = {pa, pb};
  n->backprop = [pa, pb, kind, cols, da, db](Node& self) {
    ensure_grad(*pa);
    ensure_grad(*pb);
    const double* av2 = pa->val.data();
    const double* bv2 = pb->val.data();
    const double* g = self.grad.data();
    double* ga = pa->grad.data();
    double* gb = pb->grad.data();
    const size_t total2 = self.val.size();
    if (kind == 0) {
      for (size_t i = 0; i < total2; ++i) {
        ga[i] += g[i] * da(bv2[i]);
        gb[i] += g[i] * db(av2[i], bv2[i]);
      }
    } else if (kind == 2) {
      for (size_t i = 0; i < total2; ++i) {
        ga[i] += g[i] * da(bv2[0]);
        gb[0] += g[i] * db(av2[i], bv2[0]);
      }
    } else {
      for (size_t i = 0; i < total2; ++i) {
        size_t bi = i % static_cast<size_t>(cols);
        ga[i] += g[i] * da(bv2[bi]);
        gb[bi] += g[i] * db(av2[i], bv2[bi]);
      }
    }
  };
  return Tensor(n);
}

}  // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "add", [](double x, double y) { return x + y; },
                   [](double) { return 1.0; }, [](double, double) { return 1.0; });
}

Tensor sub(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "sub", [](double x, double y) { return x - y; },
                   [](double) { return 1.0; }, [](double, double) { return -1.0; });
}

Tensor mul(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "mul", [](double x, double y) { return x * y; },
                   [](double y) { return y; }, [](double x, double) { return x; });
}

Tensor div(const Tensor& a, const Tensor& b) {
  return binary_op(a, b, "div", [](double x, double y) { return x / y; },
                   [](double y) { return 1.0 / y; },
                   [](double x, double y) { return -x / (y * y); });
}

Tensor neg(const Tensor& a) {
  return unary_op(a, [](double x) { return -x; }, [](double, double) { return -1.0; });
}

Tensor scale(const Tensor& a, double c) {
  return unary_op(a, [c](double x) { return c * x; }, [c](double, double) { return c; });
}

Tensor add_const(const Tensor& a, double c) {
  return unary_op(a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Tensor relu(const Tensor& a) {
  return unary_op(a, [](double x) { return x > 0 ? x : 0.0; },
                  [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Tensor softplus(const Tensor& a) {
  return unary_op(a, [](double x) { return stable_softplus(x); },
                  [](double x, double) { return stable_sigmoid(x); });
}

Tensor exp_t(const Tensor& a) {
  return unary_op(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Tensor log_t(const Tensor& a) {
  return unary_op(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Tensor sqrt_t(const Tensor& a) {
  return unary_op(a, [](double x) { return std::sqrt(x); },
                  [](double, double y) { return 0.5 / y; });
}

Tensor square(const Tensor& a) {
  return unary_op(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

// ---- linear algebra ---------------------------------------------------------------

namespace {

// C[m,p] += A[m,k] * B[k,p], row-major, contiguous inner loops. At the tiny
// shapes this engine runs (tens by tens), these plain loops beat packed GEMM.
void gemm_accum(const double* a, const double* b, double* c, int m, int k, int p) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<long>(i) * k;
    double* crow = c + static_cast<long>(i) * p;
    for (int kk = 0; kk < k; ++kk) {
      const double av = arow[kk];
      if (av == 0.0) continue;
      const double* brow = b + static_cast<long>(kk) * p;
      for (int j = 0; j < p; ++j) crow[j] += av * brow[j];
    }
  }
}

// C[m,k] += A[m,p] * B^T where B is [k,p]: rows of A dotted with rows of B.
void gemm_accum_bt(const double* a, const double* b, double* c, int m, int p, int k) {
  for (int i = 0; i < m; ++i) {
    const double* arow = a + static_cast<long>(i) * p;
    double* crow = c + static_cast<long>(i) * k;
    for (int kk = 0; kk < k; ++kk) {
      const double* brow = b + static_cast<long>(kk) * p;
      double dot = 0;
      for (int j = 0; j < p; ++j) dot += arow[j] * brow[j];
      crow[kk] += dot;
    }
  }
}

}  // namespace

Tensor matmul(const Tensor& a, const Tensor& b) {
  if (a.ndim() != 2 || b.ndim() != 2 || a.cols() != b.rows())
    throw std::invalid_argument("matmul: incompatible shapes");
  const int m = a.rows(), k = a.cols(), p = b.cols();
  auto n = make_node({m, p});
  gemm_accum(a.data(), b.data(), n->val.data(), m, k, p);
  auto pa = a.node(), pb = b.node();
  n->parents = {pa, pb};
  n->backprop = [pa, pb, m, k, p](Node& self) {
    ensure_grad(*pa);
    ensure_grad(*pb);
    // dA += dC * B^T; dB += A^T * dC (as B^T-style row dots and rank-1 rows)
    gemm_accum_bt(self.grad.data(), pb->val.data(), pa->grad.data(), m, p, k);
    const double* av = pa->val.data();
    const double* g = self.grad.data();
    double* gb = pb->grad.data();
    for (int i = 0; i < m; ++i) {
      const double* arow = av + static_cast<long>(i) * k;
      const double* grow = g + static_cast<long>(i) * p;
      for (int kk = 0; kk < k; ++kk) {
        const double aval = arow[kk];
        if (aval == 0.0) continue;
        double* brow = gb + static_cast<long>(kk) * p;
        for (int j = 0; j < p; ++j) brow[j] += aval * grow[j];
      }
    }
  };
  return Tensor(n);
}

Tensor transpose(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("transpose: 2-D only");
  const int r = a.rows(), c = a.cols();
  auto n = make_node({c, r});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n->val[static_cast<size_t>(j) * r + i] = a.at(i, j);
  auto pa = a.node();
  n->parents = {pa};
  n->backprop = [pa, r, c](Node& self) {
    ensure_grad(*pa);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j)
        pa->grad[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(j) * r + i];
  };
  return Tensor(n);
}

// ---- shape -----------------------------------------------------------------------

Tensor reshape(const Tensor& a, Shape s) {
  if (shape_numel(s) != a.numel()) throw std::invalid_argument("reshape: numel mismatch");
  auto n = make_node(std::move(s));
  n->val = a.node()->val;
  auto pa = a.node();
  n->parents = {pa};
  n->backprop = [pa](Node& self) {
    ensure_grad(*pa);
    for (size_t i = 0; i < self.val.size(); ++i) pa->grad[i] += self.grad[i];
  };
  return Tensor(n);
}

Tensor concat(const std::vector<Tensor>& parts, int dim) {
  if (parts.empty()) throw std::invalid_argument("concat: empty input");
  if (dim != 0 && dim != 1) throw std::invalid_argument("concat: dim must be 0 or 1");
  for (const auto& p : parts)
    if (p.ndim() != 2) throw std::invalid_argument("concat: 2-D only");
  int rows = parts[0].rows(), cols = parts[0].cols();
  int total = 0;
  for (const auto& p : parts) {
    if (dim == 0 && p.cols() != cols) throw std::invalid_argument("concat: column mismatch");
    if (dim == 1 && p.rows() != rows) throw std::invalid_argument("concat: row mismatch");
    total += dim == 0 ? p.rows() : p.cols();
  }
  Shape out = dim == 0 ? Shape{total, cols} : Shape{rows, total};
  auto n = make_node(out);
  int offset = 0;
  for (const auto& p : parts) {
    if (dim == 0) {
      std::copy(p.data(), p.data() + p.numel(),
                n->val.begin() + static_cast<long>(offset) * cols);
      offset += p.rows();
    } else {
      for (int r = 0; r < rows; ++r)
        std::copy(p.data() + static_cast<long>(r) * p.cols(),
                  p.data() + static_cast<long>(r + 1) * p.cols(),
                  n->val.begin() + static_cast<long>(r) * total + offset);
      offset += p.cols();
    }
  }
  std::vector<std::shared_ptr<Node>> ps;
  std::vector<int> widths;
  for (const auto& p : parts) {
    ps.push_back(p.node());
    widths.push_back(dim == 0 ? p.rows() : p.cols());
  }
  n->parents = ps;
  n->backprop = [ps, widths, dim, rows, cols, total](Node& self) {
    int off = 0;
    for (size_t k = 0; k < ps.size(); ++k) {
      auto& p = *ps[k];
      ensure_grad(p);
      if (dim == 0) {
        for (int i = 0; i < widths[k] * cols; ++i)
          p.grad[static_cast<size_t>(i)] += self.grad[static_cast<size_t>(off) * cols + i];
        off += widths[k];
      } else {
        for (int r = 0; r < rows; ++r)
          for (int c = 0; c < widths[k]; ++c)
            p.grad[static_cast<size_t>(r) * widths[k] + c] +=
                self.grad[static_cast<size_t>(r) * total + off + c];
        off += widths[k];
      }
    }
  };
  return Tensor(n);
}

Tensor slice(const Tensor& a, int dim, int start, int len) {
  if (a.ndim() != 2) throw std::invalid_argument("slice: 2-D only");
  if (dim != 0 && dim != 1) throw std::invalid_argument("slice: dim must be 0 or 1");
  const int r = a.rows(), c = a.cols();
  const int limit = dim == 0 ? r : c;
  if (start < 0 || len <= 0 || start + len > limit) throw std::invalid_argument("slice: out of range");
  Shape out = dim == 0 ? Shape{len, c} : Shape{r, len};
  auto n = make_node(out);
  if (dim == 0) {
    std::copy(a.data() + static_cast<long>(start) * c, a.data() + static_cast<long>(start + len) * c,
              n->val.begin());
  } else {
    for (int i = 0; i < r; ++i)
      std::copy(a.data() + static_cast<long>(i) * c + start,
                a.data() + static_cast<long>(i) * c + start + len,
                n->val.begin() + static_cast<long>(i) * len);
  }
  auto pa = a.node();
  n->parents = {pa};
  n->backprop = [pa, dim, start, len, r, c](Node& self) {
    ensure_grad(*pa);
    if (dim == 0) {
      for (int i = 0; i < len * c; ++i)
        pa->grad[static_cast<size_t>(start) * c + i] += self.grad[static_cast<size_t>(i)];
    } else {
      for (int i = 0; i < r; ++i)
        for (int j = 0; j < len; ++j)
          pa->grad[static_cast<size_t>(i) * c + start + j] += self.grad[static_cast<size_t>(i) * len + j];
    }
  };
  return Tensor(n);
}

Tensor slice_rows(const Tensor& a, int start, int len) { return slice(a, 0, start, len); }

// ---- reductions --------------------------------------------------------------------

Tensor sum_all(const Tensor& a) {
  auto n = make_node({1});
  double s = 0;
  for (int i = 0; i < a.numel(); ++i) s += a.data()[i];
  n->val[0] = s;
  auto pa = a.node();
  n->parents = {pa};
  n->backprop = [pa](Node& self) {
    ensure_grad(*pa);
    for (auto& g : pa->grad) g += self.grad[0];
  };
  return Tensor(n);
}

Tensor mean_all(const Tensor& a) {
  auto n = make_node({1});
  double s = 0;
  for (int i = 0; i < a.numel(); ++i) s += a.data()[i];
  const double inv = 1.0 / a.numel();
  n->val[0] = s * inv;
  auto pa = a.node();
  n->parents = {pa};
  n->backprop = [pa, inv](Node& self) {
    ensure_grad(*pa);
    for (auto& g : pa->grad) g += self.grad[0] * inv;
  };
  return Tensor(n);
}

Tensor mean_rows(const Tensor& a) {
  if (a.ndim() != 2) throw std::invalid_argument("mean_rows: 2-D only");
  const int r = a.rows(), c = a.cols();
  auto n = make_node({c});
  for (int i = 0; i < r; ++i)
    for (int j = 0; j < c; ++j) n->val[static_cast<size_t>(j)] += a.at(i, j);
  const double inv = 1.0 / r;
  for (auto& v : n->val) v *= inv;
  auto pa = a.node();
  n->parents = {pa};
  n->backprop = [pa, r, c, inv](Node& self) {
    ensure_grad(*pa);
    for (int i = 0; i < r; ++i)
      for (int j = 0; j < c; ++j) pa->grad[static_cast<size_t>(i) * c + j] += self.grad[static_cast<size_t>(j)] * inv;
  };
  return Tensor(n);
}

// ---- nnet primitives ------------------------------------------------------------------

namespace {

// Shared forward/backward body for (masked) softmax. The mask, when present,
// marks disallowed entries.
Tensor softmax_impl(const Tensor& a, const std::vector<std::uint8_t>* disallow) {
  const int r = a.ndim() == 2 ? a.rows() : 1;
  const int c = a.ndim() == 2 ? a.cols() : a.numel();
  if (disallow && static_cast<int>(disallow->size()) != r * c)
    throw std::invalid_argument("masked_softmax: mask shape mismatch");
  auto n = make_node(a.shape());
  for (int i = 0; i < r; ++i) {
    double mx = -std::numeric_limits<double>::infinity();
    bool any = false;
    for (int j = 0; j < c; ++j) {
      if (disallow && (*disallow)[static_cast<size_t>(i) * c + j]) continue;
      any = true;
      mx = std::max(mx, a.at(i * c + j));
    }
    if (!any) throw std::invalid_argument("masked_softmax: fully masked row");
    double z = 0;
    for (int j = 0; j < c; ++j) {
      size_t idx = static_cast<size_t>(i) * c + j;
      if (disallow && (*disallow)[idx]) {
        n->val[idx] = 0;
        continue;
      }
      n->val[idx] = std::exp(a.at(static_cast<int>(idx)) - mx);
      z += n->val[idx];
    }
    for (int j = 0; j < c; ++j) n->val[static_cast<size_t>(i) * c + j] /= z;
  }
  auto pa = a.node();
  n->parents = {pa};
  n->backprop = [pa, r, c](Node& self) {
    ensure_grad(*pa);
    for (int i = 0; i < r; ++i) {
      double dot = 0;
      for (int j = 0; j < c; ++j) {
        size_t idx = static_cast<size_t>(i) * c + j;
        dot += self.grad[idx] * self.val[idx];
      }
      for (int j = 0; j < c; ++j) {
        size_t idx = static_cast<size_t>(i) * c + j;
        pa->grad[idx] += self.val[idx] * (self.grad[idx] - dot);
      }
    }
  };
  return Tensor(n);
}

}  // namespace

Tensor softmax_rows(const Tensor& a) { return softmax_impl(a, nullptr); }

Tensor masked_softmax_rows(const Tensor& a, const std::vector<std::uint8_t>& disallow) {
  return softmax_impl(a, &disallow);
}

Tensor log_softmax_rows(const Tensor& a) {
  const int r = a.ndim() == 2 ? a.rows() : 1;
  const int c = a.ndim() == 2 ? a.cols() : a.numel();
  auto n = make_node(a.shape());
  for (int i = 0; i < r; ++i) {
    double mx = a.at(i * c);
    for (int j = 1; j < c; ++j) mx = std::max(mx, a.at(i * c + j));
    double z = 0;
    for (int j = 0; j < c; ++j) z += std::exp(a.at(i * c + j) - mx);
    double lz = mx + std::log(z);
    for (int j = 0; j < c; ++j) n->val[static_cast<size_t>(i) * c + j] = a.at(i * c + j) - lz;
  }
  auto pa = a.node();
  n->parents = {pa};
  n->backprop = [pa, r, c](Node& self) {
    ensure_grad(*pa);
    for (int i = 0; i < r; ++i) {
      double gsum = 0;
      for (int j = 0; j < c; ++j) gsum += self.grad[static_cast<size_t>(i) * c + j];
      for (int j = 0; j < c; ++j) {
        size_t idx = static_cast<size_t>(i) * c + j;
        pa->grad[idx] += self.grad[idx] - std::exp(self.val[idx]) * gsum;
      }
    }
  };
  return Tensor(n);
}

Tensor pick_rows(const Tensor& a, const std::vector<int>& idx) {
  if (a.ndim() != 2) throw std::invalid_argument("pick_rows: 2-D only");
  if (static_cast<int>(idx.size()) != a.rows()) throw std::invalid_argument("pick_rows: index count mismatch");
  const int c = a.cols();
  auto n = make_node({a.rows()});
  for (int i = 0; i < a.rows(); ++i) {
    if (idx[static_cast<size_t>(i)] < 0 || idx[static_cast<size_t>(i)] >= c)
      throw std::invalid_argument("pick_rows: index out of range");
    n->val[static_cast<size_t>(i)] = a.at(i, idx[static_cast<size_t>(i)]);
  }
  auto pa = a.node();
  n->parents = {pa};
  auto indices = idx;
  n->backprop = [pa, indices, c](Node& self) {
    ensure_grad(*pa);
    for (size_t i = 0; i < indices.size(); ++i)
      pa->grad[i * c + indices[i]] += self.grad[i];
  };
  return Tensor(n);
}

Tensor layer_norm_rows(const Tensor& a, const Tensor& gain, const Tensor& bias, double eps) {
  if (a.ndim() != 2) throw std::invalid_argument("layer_norm: 2-D only");
  const int r = a.rows(), c = a.cols();
  if (gain.numel() != c || bias.numel() != c) throw std::invalid_argument("layer_norm: gain/bias size mismatch");
  auto n = make_node(a.shape());
  std::vector<double> xhat(static_cast<size_t>(r) * c), inv_std(static_cast<size_t>(r));
  for (int i = 0; i < r; ++i) {
    double mu = 0;
    for (int j = 0; j < c; ++j) mu += a.at(i, j);
    mu /= c;
    double var = 0;
    for (int j = 0; j < c; ++j) {
      double d = a.at(i, j) - mu;
      var += d * d;
    }
    var /= c;
    double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<size_t>(i)] = is;
    for (int j = 0; j < c; ++j) {
      size_t idx = static_cast<size_t>(i) * c + j;
      xhat[idx] = (a.at(i, j) - mu) * is;
      n->val[idx] = gain.at(j) * xhat[idx] + bias.at(j);
    }
  }
  auto pa = a.node(), pg = gain.node(), pb = bias.node();
  n->parents = {pa, pg, pb};
  n->backprop = [pa, pg, pb, r, c, xhat, inv_std](Node& self) {
    ensure_grad(*pa);
    ensure_grad(*pg);
    ensure_grad(*pb);
    for (int i = 0; i < r; ++i) {
      double sum_dxhat = 0, sum_dxhat_xhat = 0;
      for (int j = 0; j < c; ++j) {
        size_t idx = static_cast<size_t>(i) * c + j;
        double dy = self.grad[idx];
        pg->grad[static_cast<size_t>(j)] += dy * xhat[idx];
        pb->grad[static_cast<size_t>(j)] += dy;
        double dxhat = dy * pg->val[static_cast<size_t>(j)];
        sum_dxhat += dxhat;
        sum_dxhat_xhat += dxhat * xhat[idx];
      }
      for (int j = 0; j < c; ++j) {
        size_t idx = static_cast<size_t>(i) * c + j;
        double dxhat = self.grad[idx] * pg->val[static_cast<size_t>(j)];
        pa->grad[idx] += inv_std[static_cast<size_t>(i)] *
                         (dxhat - sum_dxhat / c - xhat[idx] * sum_dxhat_xhat / c);
      }
    }
  };
  return Tensor(n);
}

Tensor embedding(const Tensor& table, const std::vector<int>& ids) {
  if (table.ndim() != 2) throw std::invalid_argument("embedding: table must be 2-D");
  const int v = table.rows(), d = table.cols();
  auto n = make_node({static_cast<int>(ids.size()), d});
  for (size_t i = 0; i < ids.size(); ++i) {
    if (ids[i] < 0 || ids[i] >= v) throw std::invalid_argument("embedding: id out of vocabulary");
    std::copy(table.data() + static_cast<long>(ids[i]) * d, table.data() + static_cast<long>(ids[i] + 1) * d,
              n->val.begin() + static_cast<long>(i) * d);
  }
  auto pt = table.node();
  n->parents = {pt};
  auto indices = ids;
  n->backprop = [pt, indices, d](Node& self) {
    ensure_grad(*pt);
    for (size_t i = 0; i < indices.size(); ++i)
      for (int j = 0; j < d; ++j)
        pt->grad[static_cast<size_t>(indices[i]) * d + j] += self.grad[i * d + j];
  };
  return Tensor(n);
}

Tensor dropout(const Tensor& a, double rate, std::mt19937_64& rng) {
  if (rate < 0 || rate >= 1) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0) return a;
  auto n = make_node(a.shape());
  std::vector<double> keep(static_cast<size_t>(a.numel()));
  std::uniform_real_distribution<double> d(0.0, 1.0);
  const double inv = 1.0 / (1.0 - rate);
  for (int i = 0; i < a.numel(); ++i) {
    keep[static_cast<size_t>(i)] = d(rng) >= rate ? inv : 0.0;
    n->val[static_cast<size_t>(i)] = a.data()[i] * keep[static_cast<size_t>(i)];
  }
  auto pa = a.node();
  n->parents = {pa};
  n->backprop = [pa, keep](Node& self) {
    ensure_grad(*pa);
    for (size_t i = 0; i < self.val.size(); ++i) pa->grad[i] += self.grad[i] * keep[i];
  };
  return Tensor(n);
}

// ---- grad check --------------------------------------------------------------------

GradCheckReport grad_check(const std::function<Tensor()>& f, const std::vector<Tensor>& params,
                           double eps, int max_coords_per_param, std::mt19937_64& rng) {
  if (eps <= 0) throw std::invalid_argument("grad_check: eps must be positive");
  for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
  Tensor loss = f();
  if (!all_finite(loss)) throw std::runtime_error("grad_check: non-finite loss");
  backward(loss);

  GradCheckReport report;
  for (size_t pi = 0; pi < params.size(); ++pi) {
    Tensor p = params[pi];
    std::vector<int> coords(static_cast<size_t>(p.numel()));
    for (int i = 0; i < p.numel(); ++i) coords[static_cast<size_t>(i)] = i;
    if (p.numel() > max_coords_per_param) {
      std::shuffle(coords.begin(), coords.end(), rng);
      coords.resize(static_cast<size_t>(max_coords_per_param));
    }
    for (int c : coords) {
      double analytic = p.has_grad() ? p.grad()[static_cast<size_t>(c)] : 0.0;
      double orig = p.data()[c];
      p.data()[c] = orig + eps;
      double fplus = f().item();
      p.data()[c] = orig - eps;
      double fminus = f().item();
      p.data()[c] = orig;
      if (!std::isfinite(fplus) || !std::isfinite(fminus))
        throw std::runtime_error("grad_check: non-finite value during finite differences");
      double fd = (fplus - fminus) / (2 * eps);
      double denom = std::max({std::abs(analytic), std::abs(fd), 1e-2});
      double rel = std::abs(analytic - fd) / denom;
      ++report.checked;
      if (rel > report.max_rel_err) {
        report.max_rel_err = rel;
        report.worst = "param " + std::to_string(pi) + "[" + std::to_string(c) +
                       "]: analytic=" + std::to_string(analytic) + " fd=" + std::to_string(fd);
      }
    }
  }
  return report;
}

}  // namespace laddernat
