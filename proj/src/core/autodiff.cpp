#include "neuroclips/core/autodiff.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <numbers>
#include <unordered_set>

#include "neuroclips/core/error.hpp"

namespace neuroclips::ad {

namespace {

using RowMat = Eigen::Matrix<double, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<RowMat>;
using CMapMat = Eigen::Map<const RowMat>;

Var make(Tensor value, std::initializer_list<Var> inputs, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const Var& v : inputs) node->requires_grad = node->requires_grad || v.requires_grad();
  if (node->requires_grad) {
    for (const Var& v : inputs) node->parents.push_back(v.node());
    node->backward = std::move(bw);
  }
  return Var::from_node(std::move(node));
}

Var make_n(Tensor value, const std::vector<Var>& inputs, std::function<void(Node&)> bw) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  for (const Var& v : inputs) node->requires_grad = node->requires_grad || v.requires_grad();
  if (node->requires_grad) {
    for (const Var& v : inputs) node->parents.push_back(v.node());
    node->backward = std::move(bw);
  }
  return Var::from_node(std::move(node));
}

/// Gradient buffer of parent i, or nullptr when it does not need one.
Tensor* pgrad(Node& self, std::size_t i) {
  auto& p = self.parents[i];
  return p->requires_grad ? &p->ensure_grad() : nullptr;
}

const Tensor& pval(const Node& self, std::size_t i) { return self.parents[i]->value; }

void require_same_shape(const Var& a, const Var& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw InvalidArgument(std::string(op) + ": shape mismatch " + shape_str(a.shape()) + " vs " +
                          shape_str(b.shape()));
  }
}

template <class F, class DF>
Var unary(const Var& a, F f, DF df) {
  Tensor out(a.shape());
  const Tensor& x = a.value();
  for (std::size_t i = 0; i < x.numel(); ++i) out[i] = f(x[i]);
  return make(std::move(out), {a}, [df](Node& self) {
    Tensor* ga = pgrad(self, 0);
    if (!ga) return;
    const Tensor& x = pval(self, 0);
    for (std::size_t i = 0; i < x.numel(); ++i) (*ga)[i] += self.grad[i] * df(x[i], self.value[i]);
  });
}

std::size_t last_dim(const Shape& s) { return s.empty() ? 1 : s.back(); }

}  // namespace

Tensor& Node::ensure_grad() {
  if (grad.numel() != value.numel()) grad = Tensor(value.shape(), 0.0);
  return grad;
}

Var Var::constant(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  return from_node(std::move(node));
}

Var Var::parameter(Tensor value) {
  auto node = std::make_shared<Node>();
  node->value = std::move(value);
  node->requires_grad = true;
  node->ensure_grad();
  return from_node(std::move(node));
}

Var Var::from_node(std::shared_ptr<Node> node) {
  Var v;
  v.node_ = std::move(node);
  return v;
}

const Tensor& Var::grad() const { return node_->ensure_grad(); }

void Var::zero_grad() {
  if (node_) node_->ensure_grad().fill(0.0);
}

double Var::item() const {
  if (value().numel() != 1) throw InvalidArgument("item() on non-scalar " + shape_str(shape()));
  return value()[0];
}

void backward(const Var& root) {
  if (root.value().numel() != 1) throw InvalidArgument("backward() root must be scalar");
  if (!root.requires_grad()) return;
  std::vector<Node*> order;
  std::unordered_set<Node*> seen;
  std::vector<std::pair<Node*, std::size_t>> stack{{root.node().get(), 0}};
  seen.insert(root.node().get());
  while (!stack.empty()) {
    auto& [node, next] = stack.back();
    if (next < node->parents.size()) {
      Node* p = node->parents[next++].get();
      if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
    } else {
      order.push_back(node);
      stack.pop_back();
    }
  }
  for (Node* n : order) {
    if (n->backward) n->ensure_grad().fill(0.0);
  }
  root.node()->ensure_grad()[0] = 1.0;
  for (auto it = order.rbegin(); it != order.rend(); ++it) {
    if ((*it)->backward) (*it)->backward(**it);
  }
}

Var add(const Var& a, const Var& b) {
  require_same_shape(a, b, "add");
  return make(a.value() + b.value(), {a, b}, [](Node& self) {
    for (std::size_t k = 0; k < 2; ++k)
      if (Tensor* g = pgrad(self, k)) *g += self.grad;
  });
}

Var sub(const Var& a, const Var& b) {
  require_same_shape(a, b, "sub");
  return make(a.value() - b.value(), {a, b}, [](Node& self) {
    if (Tensor* g = pgrad(self, 0)) *g += self.grad;
    if (Tensor* g = pgrad(self, 1)) *g -= self.grad;
  });
}

Var mul(const Var& a, const Var& b) {
  require_same_shape(a, b, "mul");
  Tensor out(a.shape());
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] = a.value()[i] * b.value()[i];
  return make(std::move(out), {a, b}, [](Node& self) {
    const Tensor& x = pval(self, 0);
    const Tensor& y = pval(self, 1);
    if (Tensor* g = pgrad(self, 0))
      for (std::size_t i = 0; i < x.numel(); ++i) (*g)[i] += self.grad[i] * y[i];
    if (Tensor* g = pgrad(self, 1))
      for (std::size_t i = 0; i < x.numel(); ++i) (*g)[i] += self.grad[i] * x[i];
  });
}

Var scale(const Var& a, double s) {
  return make(a.value() * s, {a}, [s](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i] * s;
  });
}

Var add_scalar(const Var& a, double s) {
  Tensor out = a.value();
  for (double& v : out.vec()) v += s;
  return make(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = pgrad(self, 0)) *g += self.grad;
  });
}

Var scale_by(const Var& a, const Var& s) {
  if (s.value().numel() != 1) throw InvalidArgument("scale_by: factor must have one element");
  const double f = s.value()[0];
  return make(a.value() * f, {a, s}, [](Node& self) {
    const Tensor& x = pval(self, 0);
    const double f = pval(self, 1)[0];
    if (Tensor* g = pgrad(self, 0))
      for (std::size_t i = 0; i < x.numel(); ++i) (*g)[i] += self.grad[i] * f;
    if (Tensor* g = pgrad(self, 1)) (*g)[0] += dot(self.grad.span(), x.span());
  });
}

Var add_rowvec(const Var& x, const Var& b) {
  const std::size_t m = b.value().numel();
  if (last_dim(x.shape()) != m) throw InvalidArgument("add_rowvec: trailing dim mismatch");
  Tensor out = x.value();
  for (std::size_t i = 0; i < out.numel(); ++i) out[i] += b.value()[i % m];
  return make(std::move(out), {x, b}, [m](Node& self) {
    if (Tensor* g = pgrad(self, 0)) *g += self.grad;
    if (Tensor* g = pgrad(self, 1))
      for (std::size_t i = 0; i < self.grad.numel(); ++i) (*g)[i % m] += self.grad[i];
  });
}

Var gelu(const Var& a) {
  constexpr double inv_sqrt2 = 0.70710678118654752440;
  const double inv_sqrt_2pi = 1.0 / std::sqrt(2.0 * std::numbers::pi);
  return unary(
      a, [](double x) { return 0.5 * x * (1.0 + std::erf(x * inv_sqrt2)); },
      [inv_sqrt_2pi](double x, double) {
        return 0.5 * (1.0 + std::erf(x * inv_sqrt2)) + x * inv_sqrt_2pi * std::exp(-0.5 * x * x);
      });
}

Var relu(const Var& a) {
  return unary(a, [](double x) { return x > 0.0 ? x : 0.0; }, [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

Var tanh(const Var& a) {
  return unary(a, [](double x) { return std::tanh(x); }, [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(const Var& a) {
  return unary(a, [](double x) { return 1.0 / (1.0 + std::exp(-x)); }, [](double, double y) { return y * (1.0 - y); });
}

Var exp(const Var& a) {
  return unary(a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(const Var& a) {
  return unary(a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var abs(const Var& a) {
  return unary(a, [](double x) { return std::abs(x); },
               [](double x, double) { return x > 0.0 ? 1.0 : (x < 0.0 ? -1.0 : 0.0); });
}

Var square(const Var& a) {
  return unary(a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(const Var& a) {
  double s = 0.0;
  for (double v : a.value().vec()) s += v;
  return make(Tensor::scalar(s), {a}, [](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (double& v : g->vec()) v += self.grad[0];
  });
}

Var mean(const Var& a) {
  const std::size_t n = a.value().numel();
  if (n == 0) throw InvalidArgument("mean of empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(n));
}

Var weighted_sum(const Var& a, const Tensor& w) {
  if (w.numel() != a.value().numel()) throw InvalidArgument("weighted_sum: weight size mismatch");
  return make(Tensor::scalar(dot(a.value().span(), w.span())), {a}, [w](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (std::size_t i = 0; i < w.numel(); ++i) (*g)[i] += self.grad[0] * w[i];
  });
}

Var reshape(const Var& a, Shape shape) {
  Tensor out = a.value().reshaped(std::move(shape));
  return make(std::move(out), {a}, [](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (std::size_t i = 0; i < g->numel(); ++i) (*g)[i] += self.grad[i];
  });
}

Var permute(const Var& a, const std::vector<std::size_t>& perm) {
  const Shape& in_shape = a.shape();
  const std::size_t rank = in_shape.size();
  if (perm.size() != rank) throw InvalidArgument("permute: rank mismatch");
  std::vector<std::size_t> in_strides(rank, 1);
  for (std::size_t i = rank; i-- > 1;) in_strides[i - 1] = in_strides[i] * in_shape[i];
  Shape out_shape(rank);
  std::vector<std::size_t> src_strides(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    if (perm[i] >= rank) throw InvalidArgument("permute: axis out of range");
    out_shape[i] = in_shape[perm[i]];
    src_strides[i] = in_strides[perm[i]];
  }
  // Source offset for every destination element.
  const std::size_t n = a.value().numel();
  std::vector<std::size_t> src(n);
  std::vector<std::size_t> idx(rank, 0);
  for (std::size_t k = 0; k < n; ++k) {
    std::size_t off = 0;
    for (std::size_t i = 0; i < rank; ++i) off += idx[i] * src_strides[i];
    src[k] = off;
    for (std::size_t i = rank; i-- > 0;) {
      if (++idx[i] < out_shape[i]) break;
      idx[i] = 0;
    }
  }
  Tensor out(out_shape);
  for (std::size_t k = 0; k < n; ++k) out[k] = a.value()[src[k]];
  return make(std::move(out), {a}, [src = std::move(src)](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (std::size_t k = 0; k < src.size(); ++k) (*g)[src[k]] += self.grad[k];
  });
}

Var transpose2d(const Var& a) {
  if (a.shape().size() != 2) throw InvalidArgument("transpose2d expects rank 2");
  return permute(a, {1, 0});
}

Var gather_rows(const Var& a, const std::vector<std::size_t>& rows) {
  if (a.shape().size() != 2) throw InvalidArgument("gather_rows expects rank 2");
  const std::size_t n = a.shape()[0];
  const std::size_t m = a.shape()[1];
  Tensor out(Shape{rows.size(), m});
  for (std::size_t r = 0; r < rows.size(); ++r) {
    if (rows[r] >= n) throw InvalidArgument("gather_rows: row out of range");
    std::copy_n(a.value().data() + rows[r] * m, m, out.data() + r * m);
  }
  return make(std::move(out), {a}, [rows, m](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (std::size_t r = 0; r < rows.size(); ++r)
        for (std::size_t j = 0; j < m; ++j) (*g)[rows[r] * m + j] += self.grad[r * m + j];
  });
}

Var concat0(const std::vector<Var>& parts) {
  if (parts.empty()) throw InvalidArgument("concat0 of nothing");
  Shape tail(parts[0].shape().begin() + 1, parts[0].shape().end());
  std::size_t rows = 0;
  std::vector<double> data;
  for (const Var& p : parts) {
    if (Shape(p.shape().begin() + 1, p.shape().end()) != tail) throw InvalidArgument("concat0 shape mismatch");
    rows += p.shape()[0];
    data.insert(data.end(), p.value().vec().begin(), p.value().vec().end());
  }
  Shape shape = tail;
  shape.insert(shape.begin(), rows);
  return make_n(Tensor(shape, std::move(data)), parts, [](Node& self) {
    std::size_t off = 0;
    for (std::size_t k = 0; k < self.parents.size(); ++k) {
      const std::size_t n = self.parents[k]->value.numel();
      if (Tensor* g = pgrad(self, k))
        for (std::size_t i = 0; i < n; ++i) (*g)[i] += self.grad[off + i];
      off += n;
    }
  });
}

Var bmm(const Var& a, const Var& b, bool trans_a, bool trans_b) {
  if (a.shape().size() != 3 || b.shape().size() != 3 || a.shape()[0] != b.shape()[0]) {
    throw InvalidArgument("bmm expects two rank-3 tensors with equal batch");
  }
  const std::size_t batch = a.shape()[0];
  const std::size_t ar = a.shape()[1], ac = a.shape()[2];
  const std::size_t br = b.shape()[1], bc = b.shape()[2];
  const std::size_t m = trans_a ? ac : ar;
  const std::size_t k = trans_a ? ar : ac;
  const std::size_t kb = trans_b ? bc : br;
  const std::size_t n = trans_b ? br : bc;
  if (k != kb) throw InvalidArgument("bmm inner dimension mismatch");
  Tensor out(Shape{batch, m, n});
  for (std::size_t i = 0; i < batch; ++i) {
    CMapMat A(a.value().data() + i * ar * ac, ar, ac);
    CMapMat B(b.value().data() + i * br * bc, br, bc);
    MapMat C(out.data() + i * m * n, m, n);
    if (!trans_a && !trans_b) C.noalias() = A * B;
    else if (trans_a && !trans_b) C.noalias() = A.transpose() * B;
    else if (!trans_a && trans_b) C.noalias() = A * B.transpose();
    else C.noalias() = A.transpose() * B.transpose();
  }
  return make(std::move(out), {a, b}, [=](Node& self) {
    Tensor* ga = pgrad(self, 0);
    Tensor* gb = pgrad(self, 1);
    for (std::size_t i = 0; i < batch; ++i) {
      CMapMat A(pval(self, 0).data() + i * ar * ac, ar, ac);
      CMapMat B(pval(self, 1).data() + i * br * bc, br, bc);
      CMapMat G(self.grad.data() + i * m * n, m, n);
      if (ga) {
        MapMat GA(ga->data() + i * ar * ac, ar, ac);
        // d op(A) = G · op(B)ᵀ
        if (!trans_a) {
          if (!trans_b) GA.noalias() += G * B.transpose();
          else GA.noalias() += G * B;
        } else {
          if (!trans_b) GA.noalias() += B * G.transpose();
          else GA.noalias() += B.transpose() * G.transpose();
        }
      }
      if (gb) {
        MapMat GB(gb->data() + i * br * bc, br, bc);
        // d op(B) = op(A)ᵀ · G
        if (!trans_b) {
          if (!trans_a) GB.noalias() += A.transpose() * G;
          else GB.noalias() += A * G;
        } else {
          if (!trans_a) GB.noalias() += G.transpose() * A;
          else GB.noalias() += G.transpose() * A.transpose();
        }
      }
    }
  });
}

Var matmul(const Var& a, const Var& b) {
  if (a.shape().size() != 2 || b.shape().size() != 2) throw InvalidArgument("matmul expects rank 2");
  Var out = bmm(reshape(a, {1, a.shape()[0], a.shape()[1]}), reshape(b, {1, b.shape()[0], b.shape()[1]}));
  return reshape(out, {a.shape()[0], b.shape()[1]});
}

Var linear(const Var& x, const Var& weight, const Var& bias) {
  if (x.shape().size() != 2 || weight.shape().size() != 2 || x.shape()[1] != weight.shape()[1]) {
    throw InvalidArgument("linear: input " + shape_str(x.shape()) + " incompatible with weight " +
                          shape_str(weight.shape()));
  }
  const std::size_t n = x.shape()[0], in = x.shape()[1], out_dim = weight.shape()[0];
  Tensor out(Shape{n, out_dim});
  {
    CMapMat X(x.value().data(), n, in);
    CMapMat W(weight.value().data(), out_dim, in);
    MapMat Y(out.data(), n, out_dim);
    Y.noalias() = X * W.transpose();
  }
  Var y = make(std::move(out), {x, weight}, [=](Node& self) {
    CMapMat X(pval(self, 0).data(), n, in);
    CMapMat W(pval(self, 1).data(), out_dim, in);
    CMapMat G(self.grad.data(), n, out_dim);
    if (Tensor* gx = pgrad(self, 0)) MapMat(gx->data(), n, in).noalias() += G * W;
    if (Tensor* gw = pgrad(self, 1)) MapMat(gw->data(), out_dim, in).noalias() += G.transpose() * X;
  });
  return bias.defined() ? add_rowvec(y, bias) : y;
}

Var softmax_last(const Var& a) {
  const std::size_t m = last_dim(a.shape());
  const std::size_t rows = a.value().numel() / m;
  Tensor out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * m;
    double* y = out.data() + r * m;
    const double mx = *std::max_element(x, x + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += (y[j] = std::exp(x[j] - mx));
    for (std::size_t j = 0; j < m; ++j) y[j] /= z;
  }
  return make(std::move(out), {a}, [m, rows](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * m;
      const double* gy = self.grad.data() + r * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += gy[j] * y[j];
      for (std::size_t j = 0; j < m; ++j) (*g)[r * m + j] += y[j] * (gy[j] - s);
    }
  });
}

Var log_softmax_last(const Var& a) {
  const std::size_t m = last_dim(a.shape());
  const std::size_t rows = a.value().numel() / m;
  Tensor out(a.shape());
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * m;
    double* y = out.data() + r * m;
    const double mx = *std::max_element(x, x + m);
    double z = 0.0;
    for (std::size_t j = 0; j < m; ++j) z += std::exp(x[j] - mx);
    const double lse = mx + std::log(z);
    for (std::size_t j = 0; j < m; ++j) y[j] = x[j] - lse;
  }
  return make(std::move(out), {a}, [m, rows](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      const double* y = self.value.data() + r * m;
      const double* gy = self.grad.data() + r * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += gy[j];
      for (std::size_t j = 0; j < m; ++j) (*g)[r * m + j] += gy[j] - std::exp(y[j]) * s;
    }
  });
}

Var normalize_last(const Var& a) {
  const std::size_t m = last_dim(a.shape());
  const std::size_t rows = a.value().numel() / m;
  Tensor out(a.shape());
  std::vector<double> norms(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* x = a.value().data() + r * m;
    norms[r] = norm2(std::span<const double>(x, m));
    if (norms[r] > 0.0)
      for (std::size_t j = 0; j < m; ++j) out[r * m + j] = x[j] / norms[r];
  }
  return make(std::move(out), {a}, [m, rows, norms = std::move(norms)](Node& self) {
    Tensor* g = pgrad(self, 0);
    if (!g) return;
    for (std::size_t r = 0; r < rows; ++r) {
      if (norms[r] == 0.0) continue;
      const double* y = self.value.data() + r * m;
      const double* gy = self.grad.data() + r * m;
      double s = 0.0;
      for (std::size_t j = 0; j < m; ++j) s += gy[j] * y[j];
      for (std::size_t j = 0; j < m; ++j) (*g)[r * m + j] += (gy[j] - y[j] * s) / norms[r];
    }
  });
}

Var conv2d(const Var& x, const Var& weight, const Var& bias) {
  const Shape& xs = x.shape();
  const Shape& ws = weight.shape();
  if (xs.size() != 4 || ws.size() != 4 || ws[1] != xs[1] || ws[2] != ws[3] || ws[2] % 2 == 0) {
    throw InvalidArgument("conv2d: input " + shape_str(xs) + " incompatible with kernel " + shape_str(ws));
  }
  const std::size_t N = xs[0], C = xs[1], H = xs[2], W = xs[3], O = ws[0], K = ws[2];
  const long pad = static_cast<long>(K / 2);
  const long Hl = static_cast<long>(H), Wl = static_cast<long>(W);
  Tensor out(Shape{N, O, H, W});
  const double* xv = x.value().data();
  const double* wv = weight.value().data();
  for (std::size_t n = 0; n < N; ++n)
    for (std::size_t o = 0; o < O; ++o) {
      double* y = out.data() + (n * O + o) * H * W;
      for (std::size_t c = 0; c < C; ++c) {
        const double* xin = xv + (n * C + c) * H * W;
        for (std::size_t u = 0; u < K; ++u)
          for (std::size_t v = 0; v < K; ++v) {
            const double w = wv[((o * C + c) * K + u) * K + v];
            const long du = static_cast<long>(u) - pad, dv = static_cast<long>(v) - pad;
            for (long i = std::max(0L, -du); i < std::min(Hl, Hl - du); ++i) {
              const double* xr = xin + (i + du) * W;
              double* yr = y + i * W;
              for (long j = std::max(0L, -dv); j < std::min(Wl, Wl - dv); ++j) yr[j] += w * xr[j + dv];
            }
          }
      }
    }
  Var y = make(std::move(out), {x, weight}, [=](Node& self) {
    Tensor* gx = pgrad(self, 0);
    Tensor* gw = pgrad(self, 1);
    const double* xv = pval(self, 0).data();
    const double* wv = pval(self, 1).data();
    for (std::size_t n = 0; n < N; ++n)
      for (std::size_t o = 0; o < O; ++o) {
        const double* g = self.grad.data() + (n * O + o) * H * W;
        for (std::size_t c = 0; c < C; ++c) {
          const double* xin = xv + (n * C + c) * H * W;
          for (std::size_t u = 0; u < K; ++u)
            for (std::size_t v = 0; v < K; ++v) {
              const std::size_t widx = ((o * C + c) * K + u) * K + v;
              const long du = static_cast<long>(u) - pad, dv = static_cast<long>(v) - pad;
              double acc = 0.0;
              for (long i = std::max(0L, -du); i < std::min(Hl, Hl - du); ++i) {
                const double* gr = g + i * W;
                const std::size_t xrow = (i + du) * W;
                for (long j = std::max(0L, -dv); j < std::min(Wl, Wl - dv); ++j) {
                  acc += gr[j] * xin[xrow + j + dv];
                  if (gx) (*gx)[(n * C + c) * H * W + xrow + j + dv] += gr[j] * wv[widx];
                }
              }
              if (gw) (*gw)[widx] += acc;
            }
        }
      }
  });
  if (!bias.defined()) return y;
  // Bias broadcast over [N, O, H, W]: move O last, add, move back.
  return permute(add_rowvec(permute(y, {0, 2, 3, 1}), bias), {0, 3, 1, 2});
}

Var upsample_nearest(const Var& x, std::size_t factor) {
  const Shape& s = x.shape();
  if (s.size() != 4 || factor == 0) throw InvalidArgument("upsample_nearest expects [N,C,H,W] and factor >= 1");
  if (factor == 1) return x;
  const std::size_t planes = s[0] * s[1], H = s[2], W = s[3];
  const std::size_t H2 = H * factor, W2 = W * factor;
  Tensor out(Shape{s[0], s[1], H2, W2});
  for (std::size_t p = 0; p < planes; ++p)
    for (std::size_t i = 0; i < H2; ++i)
      for (std::size_t j = 0; j < W2; ++j)
        out[(p * H2 + i) * W2 + j] = x.value()[(p * H + i / factor) * W + j / factor];
  return make(std::move(out), {x}, [=](Node& self) {
    if (Tensor* g = pgrad(self, 0))
      for (std::size_t p = 0; p < planes; ++p)
        for (std::size_t i = 0; i < H2; ++i)
          for (std::size_t j = 0; j < W2; ++j)
            (*g)[(p * H + i / factor) * W + j / factor] += self.grad[(p * H2 + i) * W2 + j];
  });
}

}  // namespace neuroclips::ad
