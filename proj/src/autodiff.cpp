#include "dscl/autodiff.hpp"

#include <cmath>
#include <string>
#include <unordered_map>
#include <utility>

#include "dscl/common.hpp"
#include "dscl/kernels.hpp"

namespace dscl::ad {

Tensor& Node::grad_buffer() {
  if (grad.size() != value.size() || grad.shape() != value.shape()) grad = Tensor(value.shape());
  return grad;
}

Var Var::constant(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  return Var(std::move(n));
}

Var Var::leaf(Tensor value) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  n->requires_grad = true;
  return Var(std::move(n));
}

Tensor Var::grad() const {
  if (node_->grad.shape() == node_->value.shape()) return node_->grad;
  return Tensor(node_->value.shape());
}

double Var::item() const {
  if (node_->value.size() != 1)
    throw ContractError("item() on non-scalar of shape " + shape_string(shape()));
  return node_->value[0];
}

Var make_node(Tensor value, std::vector<Var> inputs, std::function<void(Node&)> backward_fn) {
  auto n = std::make_shared<Node>();
  n->value = std::move(value);
  bool any = false;
  for (const auto& in : inputs) any = any || in.requires_grad();
  if (any) {
    n->requires_grad = true;
    n->parents.reserve(inputs.size());
    for (auto& in : inputs) n->parents.push_back(in.ptr());
    n->backward_fn = std::move(backward_fn);
  }
  return Var(std::move(n));
}

namespace {

const kernels::KernelTable& K() { return kernels::active(); }

bool needs(const Node& self, std::size_t k) { return self.parents[k]->requires_grad; }

void require_matrix(const Var& x, const char* op) {
  if (x.value().rank() != 2)
    throw DimensionError(std::string(op) + ": expected a matrix, got " + shape_string(x.shape()));
}

bool is_scalar(const Tensor& t) { return t.size() == 1; }

// Shape of a broadcast elementwise result, or a DimensionError.
Shape broadcast_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() == b.shape()) return a.shape();
  if (is_scalar(a.value())) return b.shape();
  if (is_scalar(b.value())) return a.shape();
  throw DimensionError(std::string(op) + ": cannot broadcast " + shape_string(a.shape()) +
                       " with " + shape_string(b.shape()));
}

// Adds g (shaped like the result) into a parent grad, summing when the
// parent was broadcast from a scalar.
void accumulate_broadcast(Node& parent, const Tensor& g, double factor = 1.0) {
  Tensor& pg = parent.grad_buffer();
  if (pg.size() == g.size()) {
    if (factor == 1.0)
      K().accumulate(g.data().data(), pg.data().data(), g.size());
    else
      K().axpy(factor, g.data().data(), pg.data().data(), g.size());
    return;
  }
  double s = 0.0;
  for (double v : g.data()) s += v;
  pg[0] += factor * s;
}

template <class F>
Tensor map_binary(const Tensor& a, const Tensor& b, const Shape& shape, F f) {
  Tensor out(shape);
  const std::size_t n = out.size();
  const bool sa = a.size() != n, sb = b.size() != n;
  for (std::size_t i = 0; i < n; ++i) out[i] = f(sa ? a[0] : a[i], sb ? b[0] : b[i]);
  return out;
}

template <class F>
Tensor map_unary(const Tensor& x, F f) {
  Tensor out(x.shape());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return out;
}

// Unary op whose local derivative depends on (input, output).
template <class Fwd, class Deriv>
Var unary(const Var& x, Fwd fwd, Deriv deriv) {
  Tensor out = map_unary(x.value(), fwd);
  return make_node(std::move(out), {x}, [deriv](Node& self) {
    Node& p = *self.parents[0];
    Tensor& pg = p.grad_buffer();
    for (std::size_t i = 0; i < pg.size(); ++i)
      pg[i] += self.grad[i] * deriv(p.value[i], self.value[i]);
  });
}

}  // namespace

// ---- matrix products -----------------------------------------------------

Var matmul(const Var& a, const Var& b) {
  require_matrix(a, "matmul");
  require_matrix(b, "matmul");
  const std::size_t p = a.rows(), q = a.cols(), r = b.cols();
  if (b.rows() != q)
    throw DimensionError("matmul: inner dimensions differ, " + shape_string(a.shape()) + " * " +
                         shape_string(b.shape()));
  Tensor out({p, r});
  K().gemm_nn(a.value().data().data(), b.value().data().data(), out.data().data(), p, q, r);
  return make_node(std::move(out), {a, b}, [p, q, r](Node& self) {
    const double* g = self.grad.data().data();
    if (needs(self, 0))
      K().gemm_nt(g, self.parents[1]->value.data().data(),
                  self.parents[0]->grad_buffer().data().data(), p, r, q);
    if (needs(self, 1))
      K().gemm_tn(self.parents[0]->value.data().data(), g,
                  self.parents[1]->grad_buffer().data().data(), q, p, r);
  });
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  require_matrix(x, "linear");
  require_matrix(weight, "linear");
  const std::size_t b = x.rows(), in = x.cols(), out_dim = weight.rows();
  if (weight.cols() != in)
    throw DimensionError("linear: input " + shape_string(x.shape()) + " vs weight " +
                         shape_string(weight.shape()));
  const bool has_bias = static_cast<bool>(bias);
  if (has_bias && (bias.value().size() != out_dim))
    throw DimensionError("linear: bias " + shape_string(bias.shape()) + " vs weight " +
                         shape_string(weight.shape()));
  Tensor out({b, out_dim});
  if (has_bias)
    for (std::size_t i = 0; i < b; ++i)
      std::copy_n(bias.value().data().data(), out_dim, out.data().data() + i * out_dim);
  K().gemm_nt(x.value().data().data(), weight.value().data().data(), out.data().data(), b, in,
              out_dim);
  std::vector<Var> inputs{x, weight};
  if (has_bias) inputs.push_back(bias);
  return make_node(std::move(out), std::move(inputs), [b, in, out_dim, has_bias](Node& self) {
    const double* g = self.grad.data().data();
    if (needs(self, 0))
      K().gemm_nn(g, self.parents[1]->value.data().data(),
                  self.parents[0]->grad_buffer().data().data(), b, out_dim, in);
    if (needs(self, 1))
      K().gemm_tn(g, self.parents[0]->value.data().data(),
                  self.parents[1]->grad_buffer().data().data(), out_dim, b, in);
    if (has_bias && needs(self, 2)) {
      double* bg = self.parents[2]->grad_buffer().data().data();
      for (std::size_t i = 0; i < b; ++i) K().accumulate(g + i * out_dim, bg, out_dim);
    }
  });
}

// ---- elementwise -----------------------------------------------------------

Var add(const Var& a, const Var& b) {
  const Shape shape = broadcast_shape(a, b, "add");
  Tensor out = map_binary(a.value(), b.value(), shape, [](double x, double y) { return x + y; });
  return make_node(std::move(out), {a, b}, [](Node& self) {
    if (needs(self, 0)) accumulate_broadcast(*self.parents[0], self.grad);
    if (needs(self, 1)) accumulate_broadcast(*self.parents[1], self.grad);
  });
}

Var sub(const Var& a, const Var& b) {
  const Shape shape = broadcast_shape(a, b, "sub");
  Tensor out = map_binary(a.value(), b.value(), shape, [](double x, double y) { return x - y; });
  return make_node(std::move(out), {a, b}, [](Node& self) {
    if (needs(self, 0)) accumulate_broadcast(*self.parents[0], self.grad);
    if (needs(self, 1)) accumulate_broadcast(*self.parents[1], self.grad, -1.0);
  });
}

Var mul(const Var& a, const Var& b) {
  const Shape shape = broadcast_shape(a, b, "mul");
  Tensor out = map_binary(a.value(), b.value(), shape, [](double x, double y) { return x * y; });
  return make_node(std::move(out), {a, b}, [](Node& self) {
    const Tensor& av = self.parents[0]->value;
    const Tensor& bv = self.parents[1]->value;
    const std::size_t n = self.grad.size();
    if (needs(self, 0)) {
      Tensor local(self.grad.shape());
      for (std::size_t i = 0; i < n; ++i) local[i] = self.grad[i] * (bv.size() == n ? bv[i] : bv[0]);
      accumulate_broadcast(*self.parents[0], local);
    }
    if (needs(self, 1)) {
      Tensor local(self.grad.shape());
      for (std::size_t i = 0; i < n; ++i) local[i] = self.grad[i] * (av.size() == n ? av[i] : av[0]);
      accumulate_broadcast(*self.parents[1], local);
    }
  });
}

Var relu(const Var& x) {
  return unary(
      x, [](double v) { return v > 0.0 ? v : 0.0; },
      [](double in, double) { return in > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& x) {
  return unary(
      x, [](double v) { return std::tanh(v); }, [](double, double out) { return 1.0 - out * out; });
}

Var abs(const Var& x) {
  return unary(
      x, [](double v) { return std::fabs(v); },
      [](double in, double) { return in > 0.0 ? 1.0 : (in < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& x) {
  return unary(
      x, [](double v) { return v * v; }, [](double in, double) { return 2.0 * in; });
}

Var sqrt(const Var& x) {
  for (double v : x.value().data())
    if (v < 0.0) throw NumericError("sqrt of negative value " + std::to_string(v));
  return unary(
      x, [](double v) { return std::sqrt(v); },
      [](double, double out) { return out > 0.0 ? 0.5 / out : 0.0; });
}

Var scale(const Var& x, double c) {
  return unary(
      x, [c](double v) { return c * v; }, [c](double, double) { return c; });
}

Var add_scalar(const Var& x, double c) {
  return unary(
      x, [c](double v) { return v + c; }, [](double, double) { return 1.0; });
}

// ---- reductions --------------------------------------------------------------

Var sum(const Var& x) {
  double s = 0.0;
  for (double v : x.value().data()) s += v;
  return make_node(Tensor::scalar(s), {x}, [](Node& self) {
    Tensor& pg = self.parents[0]->grad_buffer();
    const double g = self.grad[0];
    for (double& v : pg.data()) v += g;
  });
}

Var mean(const Var& x) {
  const std::size_t n = x.value().size();
  if (n == 0) throw DimensionError("mean of empty tensor");
  return scale(sum(x), 1.0 / static_cast<double>(n));
}

Var sum(const Var& x, int axis) {
  require_matrix(x, "sum");
  if (axis != 0 && axis != 1)
    throw DimensionError("sum: invalid axis " + std::to_string(axis) + " for shape " +
                         shape_string(x.shape()));
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out(axis == 0 ? Shape{1, c} : Shape{r, 1});
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[axis == 0 ? j : i] += x.value()(i, j);
  return make_node(std::move(out), {x}, [axis, r, c](Node& self) {
    Tensor& pg = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) pg(i, j) += self.grad[axis == 0 ? j : i];
  });
}

Var mean(const Var& x, int axis) {
  Var s = sum(x, axis);
  const std::size_t n = axis == 0 ? x.rows() : x.cols();
  return scale(s, 1.0 / static_cast<double>(n));
}

Var l2_norm_rows(const Var& x) {
  require_matrix(x, "l2_norm_rows");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out({r, 1});
  for (std::size_t i = 0; i < r; ++i) {
    const auto row_i = x.value().row_span(i);
    out[i] = std::sqrt(K().dot(row_i.data(), row_i.data(), c) + 1e-12);
  }
  return make_node(std::move(out), {x}, [c](Node& self) {
    Node& p = *self.parents[0];
    Tensor& pg = p.grad_buffer();
    for (std::size_t i = 0; i < self.value.size(); ++i)
      K().axpy(self.grad[i] / self.value[i], p.value.row_span(i).data(), pg.row_span(i).data(), c);
  });
}

// ---- structural ------------------------------------------------------------

Var row(const Var& x, std::size_t i) {
  require_matrix(x, "row");
  if (i >= x.rows()) throw DimensionError("row index out of range");
  const std::size_t c = x.cols();
  Tensor out({1, c});
  std::copy_n(x.value().row_span(i).data(), c, out.data().data());
  return make_node(std::move(out), {x}, [i, c](Node& self) {
    K().accumulate(self.grad.data().data(), self.parents[0]->grad_buffer().row_span(i).data(), c);
  });
}

Var col(const Var& x, std::size_t j) {
  require_matrix(x, "col");
  if (j >= x.cols()) throw DimensionError("column index out of range");
  const std::size_t r = x.rows();
  Tensor out({r, 1});
  for (std::size_t i = 0; i < r; ++i) out[i] = x.value()(i, j);
  return make_node(std::move(out), {x}, [j, r](Node& self) {
    Tensor& pg = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < r; ++i) pg(i, j) += self.grad[i];
  });
}

Var pick(const Var& x, std::size_t i, std::size_t j) {
  require_matrix(x, "pick");
  if (i >= x.rows() || j >= x.cols()) throw DimensionError("pick index out of range");
  return make_node(Tensor::scalar(x.value()(i, j)), {x}, [i, j](Node& self) {
    self.parents[0]->grad_buffer()(i, j) += self.grad[0];
  });
}

Var transpose(const Var& x) {
  require_matrix(x, "transpose");
  return make_node(x.value().transposed(), {x}, [](Node& self) {
    Tensor& pg = self.parents[0]->grad_buffer();
    const std::size_t r = pg.rows(), c = pg.cols();
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) pg(i, j) += self.grad(j, i);
  });
}

Var mul_rowvec(const Var& x, const Var& r) {
  require_matrix(x, "mul_rowvec");
  const std::size_t rows = x.rows(), c = x.cols();
  if (r.value().size() != c)
    throw DimensionError("mul_rowvec: " + shape_string(x.shape()) + " vs row " +
                         shape_string(r.shape()));
  Tensor out({rows, c});
  for (std::size_t i = 0; i < rows; ++i)
    K().hadamard(x.value().row_span(i).data(), r.value().data().data(), out.row_span(i).data(), c);
  return make_node(std::move(out), {x, r}, [rows, c](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    const Tensor& rv = self.parents[1]->value;
    if (needs(self, 0)) {
      Tensor& pg = self.parents[0]->grad_buffer();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < c; ++j) pg(i, j) += self.grad(i, j) * rv[j];
    }
    if (needs(self, 1)) {
      Tensor& rg = self.parents[1]->grad_buffer();
      for (std::size_t i = 0; i < rows; ++i)
        for (std::size_t j = 0; j < c; ++j) rg[j] += self.grad(i, j) * xv(i, j);
    }
  });
}

Var repeat_rows(const Var& r, std::size_t n) {
  const std::size_t c = r.value().size();
  Tensor out({n, c});
  for (std::size_t i = 0; i < n; ++i) std::copy_n(r.value().data().data(), c, out.row_span(i).data());
  return make_node(std::move(out), {r}, [n, c](Node& self) {
    double* rg = self.parents[0]->grad_buffer().data().data();
    for (std::size_t i = 0; i < n; ++i) K().accumulate(self.grad.row_span(i).data(), rg, c);
  });
}

// ---- geometry --------------------------------------------------------------

Var normalize_rows(const Var& x, std::vector<std::size_t>* zero_rows) {
  require_matrix(x, "normalize_rows");
  const std::size_t r = x.rows(), c = x.cols();
  Tensor out({r, c});
  std::vector<double> norms(r, 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    const auto xi = x.value().row_span(i);
    const double nrm = std::sqrt(K().dot(xi.data(), xi.data(), c));
    norms[i] = nrm;
    if (nrm > 0.0) {
      K().axpy(1.0 / nrm, xi.data(), out.row_span(i).data(), c);
    } else if (zero_rows != nullptr) {
      zero_rows->push_back(i);
    }
  }
  return make_node(std::move(out), {x}, [norms = std::move(norms), c](Node& self) {
    Tensor& pg = self.parents[0]->grad_buffer();
    for (std::size_t i = 0; i < norms.size(); ++i) {
      if (norms[i] == 0.0) continue;
      const double* y = self.value.row_span(i).data();
      const double* g = self.grad.row_span(i).data();
      const double yg = K().dot(y, g, c);
      double* out = pg.row_span(i).data();
      const double inv = 1.0 / norms[i];
      for (std::size_t j = 0; j < c; ++j) out[j] += (g[j] - y[j] * yg) * inv;
    }
  });
}

Var pairwise_sq_dist(const Var& x) {
  require_matrix(x, "pairwise_sq_dist");
  const std::size_t b = x.rows(), c = x.cols();
  Tensor out({b, b});
  for (std::size_t i = 0; i < b; ++i)
    for (std::size_t j = i + 1; j < b; ++j) {
      const double d = K().sq_dist(x.value().row_span(i).data(), x.value().row_span(j).data(), c);
      out(i, j) = d;
      out(j, i) = d;
    }
  return make_node(std::move(out), {x}, [b, c](Node& self) {
    const Tensor& xv = self.parents[0]->value;
    Tensor& pg = self.parents[0]->grad_buffer();
    std::vector<double> diff(c);
    for (std::size_t i = 0; i < b; ++i)
      for (std::size_t j = i + 1; j < b; ++j) {
        const double w = 2.0 * (self.grad(i, j) + self.grad(j, i));
        if (w == 0.0) continue;
        const double* xi = xv.row_span(i).data();
        const double* xj = xv.row_span(j).data();
        for (std::size_t k = 0; k < c; ++k) diff[k] = xi[k] - xj[k];
        K().axpy(w, diff.data(), pg.row_span(i).data(), c);
        K().axpy(-w, diff.data(), pg.row_span(j).data(), c);
      }
  });
}

// ---- traversal -------------------------------------------------------------

namespace {

// Reverse-topological order of grad-requiring nodes reachable from root.
std::vector<Node*> topo_order(Node* root) {
  enum : unsigned char { kOpen = 1, kDone = 2 };
  std::unordered_map<Node*, unsigned char> state;
  std::vector<Node*> order;
  std::vector<std::pair<Node*, std::size_t>> stack{{root, 0}};
  state[root] = kOpen;
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (!p->requires_grad) continue;
      auto it = state.find(p);
      if (it == state.end()) {
        state[p] = kOpen;
        stack.emplace_back(p, 0);
      } else if (it->second == kOpen) {
        throw GraphError("cycle detected in autodiff graph");
      }
      continue;
    }
    state[node] = kDone;
    order.push_back(node);
    stack.pop_back();
  }
  return order;  // parents before children
}

}  // namespace

void backward(const Var& root) {
  if (!root) throw ContractError("backward on empty variable");
  Node* r = root.get();
  if (r->value.size() != 1)
    throw ContractError("backward requires a scalar root, got " + shape_string(r->value.shape()));
  if (r->backward_done)
    throw ContractError("backward called twice on the same root without zero_grad");
  r->backward_done = true;
  if (!r->requires_grad) return;
  const auto order = topo_order(r);
  r->grad_buffer()[0] += 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    Node* n = *it;
    if (n->backward_fn && n->grad.size() == n->value.size()) n->backward_fn(*n);
  }
}

void zero_grad(const Var& root) {
  if (!root) return;
  Node* r = root.get();
  r->backward_done = false;
  r->grad = Tensor();
  if (!r->requires_grad) return;
  for (Node* n : topo_order(r)) n->grad = Tensor();
}

}  // namespace dscl::ad
