#pragma once

// Dense tensor engine with a dynamic reverse-mode tape. Tensors hold up to
// four axes; values are stored in the instantiation's scalar type (float for
// the product build) and every reduction accumulates in double. Matrix
// products go through Eigen.

#include <Eigen/Core>
#include <algorithm>
#include <array>
#include <cmath>
#include <cstdint>
#include <functional>
#include <memory>
#include <numeric>
#include <sstream>
#include <string>
#include <unordered_set>
#include <vector>

#include "cscon/common.hpp"

namespace cscon {

class Shape {
public:
  Shape() = default;
  Shape(std::initializer_list<std::int64_t> dims) {
    if (dims.size() > 4) throw InvalidArgument("Shape: more than 4 axes");
    for (auto d : dims) d_[nd_++] = d;
  }
  explicit Shape(const std::vector<std::int64_t>& dims) {
    if (dims.size() > 4) throw InvalidArgument("Shape: more than 4 axes");
    for (auto d : dims) d_[nd_++] = d;
  }

  int ndim() const { return nd_; }
  std::int64_t operator[](int i) const { return d_[i]; }
  std::int64_t back() const { return d_[nd_ - 1]; }

  std::int64_t numel() const {
    std::int64_t n = 1;
    for (int i = 0; i < nd_; ++i) n *= d_[i];
    return n;
  }

  bool operator==(const Shape& o) const {
    if (nd_ != o.nd_) return false;
    for (int i = 0; i < nd_; ++i)
      if (d_[i] != o.d_[i]) return false;
    return true;
  }
  bool operator!=(const Shape& o) const { return !(*this == o); }

  std::string str() const {
    std::ostringstream os;
    os << "[";
    for (int i = 0; i < nd_; ++i) os << (i ? ", " : "") << d_[i];
    os << "]";
    return os.str();
  }

private:
  int nd_ = 0;
  std::array<std::int64_t, 4> d_{1, 1, 1, 1};
};

namespace detail {
inline thread_local int no_grad_depth = 0;
}

// RAII guard: ops executed inside do not record tape nodes.
struct NoGradGuard {
  NoGradGuard() { ++detail::no_grad_depth; }
  ~NoGradGuard() { --detail::no_grad_depth; }
  NoGradGuard(const NoGradGuard&) = delete;
  NoGradGuard& operator=(const NoGradGuard&) = delete;
};

inline bool grad_enabled() { return detail::no_grad_depth == 0; }

template <class Real>
struct NodeT {
  Shape shape;
  std::vector<Real> value;
  std::vector<Real> grad;
  bool requires_grad = false;
  std::vector<std::shared_ptr<NodeT>> parents;
  std::function<void(NodeT&)> backward;

  void ensure_grad() {
    if (grad.size() != value.size()) grad.assign(value.size(), Real(0));
  }
};

template <class Real>
class TensorT {
public:
  using Node = NodeT<Real>;

  TensorT() = default;

  static TensorT zeros(Shape s, bool requires_grad = false) {
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = s;
    t.node_->value.assign(static_cast<std::size_t>(s.numel()), Real(0));
    t.node_->requires_grad = requires_grad;
    return t;
  }

  static TensorT constant(Shape s, Real v) {
    TensorT t = zeros(s);
    std::fill(t.values().begin(), t.values().end(), v);
    return t;
  }

  static TensorT from_vector(Shape s, std::vector<Real> data, bool requires_grad = false) {
    if (static_cast<std::int64_t>(data.size()) != s.numel())
      throw InvalidArgument("from_vector: data size " + std::to_string(data.size()) +
                            " does not match shape " + s.str());
    TensorT t;
    t.node_ = std::make_shared<Node>();
    t.node_->shape = s;
    t.node_->value = std::move(data);
    t.node_->requires_grad = requires_grad;
    return t;
  }

  bool defined() const { return node_ != nullptr; }
  const Shape& shape() const { return node_->shape; }
  std::int64_t numel() const { return node_->shape.numel(); }
  bool requires_grad() const { return node_->requires_grad; }

  std::vector<Real>& values() { return node_->value; }
  const std::vector<Real>& values() const { return node_->value; }
  std::vector<Real>& grad() { return node_->grad; }
  const std::vector<Real>& grad() const { return node_->grad; }

  Real item() const {
    if (numel() != 1) throw InvalidArgument("item(): tensor has shape " + shape().str());
    return node_->value[0];
  }

  void zero_grad() {
    node_->ensure_grad();
    std::fill(node_->grad.begin(), node_->grad.end(), Real(0));
  }

  // Reverse-mode sweep from a scalar root.
  void backward() const {
    if (numel() != 1)
      throw InvalidArgument("backward(): root must be scalar, got " + shape().str());
    std::vector<Node*> order;
    std::unordered_set<Node*> seen;
    std::vector<std::pair<Node*, std::size_t>> stack;
    stack.emplace_back(node_.get(), 0);
    seen.insert(node_.get());
    while (!stack.empty()) {
      auto& [n, next] = stack.back();
      if (next < n->parents.size()) {
        Node* p = n->parents[next++].get();
        if (p->requires_grad && seen.insert(p).second) stack.emplace_back(p, 0);
      } else {
        order.push_back(n);
        stack.pop_back();
      }
    }
    node_->ensure_grad();
    node_->grad[0] = Real(1);
    for (auto it = order.rbegin(); it != order.rend(); ++it) {
      if ((*it)->backward) (*it)->backward(**it);
    }
  }

  std::shared_ptr<Node> node_;
};

// ---------------------------------------------------------------------------
// Op machinery
// ---------------------------------------------------------------------------

namespace detail {

template <class Real>
TensorT<Real> make_result(Shape s, std::vector<TensorT<Real>> parents) {
  auto out = TensorT<Real>::zeros(s);
  bool needs = false;
  if (grad_enabled()) {
    for (const auto& p : parents) needs = needs || p.node_->requires_grad;
  }
  if (needs) {
    out.node_->requires_grad = true;
    out.node_->parents.reserve(parents.size());
    for (auto& p : parents) out.node_->parents.push_back(p.node_);
  }
  return out;
}

// Broadcast plan over right-aligned shapes padded to four axes. A source
// stride is zero along broadcast axes, so the same nested loops serve both
// the forward evaluation and the gradient reduction.
struct BroadcastPlan {
  std::array<std::int64_t, 4> od{1, 1, 1, 1};
  std::array<std::int64_t, 4> astr{0, 0, 0, 0};
  std::array<std::int64_t, 4> bstr{0, 0, 0, 0};
  Shape out_shape;
};

inline BroadcastPlan broadcast_plan(const Shape& a, const Shape& b, const char* op) {
  std::array<std::int64_t, 4> ad{1, 1, 1, 1}, bd{1, 1, 1, 1};
  for (int i = 0; i < a.ndim(); ++i) ad[4 - a.ndim() + i] = a[i];
  for (int i = 0; i < b.ndim(); ++i) bd[4 - b.ndim() + i] = b[i];
  BroadcastPlan p;
  for (int i = 0; i < 4; ++i) {
    if (ad[i] != bd[i] && ad[i] != 1 && bd[i] != 1)
      throw InvalidArgument(std::string(op) + ": incompatible shapes " + a.str() + " and " +
                            b.str());
    p.od[i] = std::max(ad[i], bd[i]);
  }
  std::int64_t as = 1, bs = 1;
  for (int i = 3; i >= 0; --i) {
    p.astr[i] = (ad[i] == 1) ? 0 : as;
    p.bstr[i] = (bd[i] == 1) ? 0 : bs;
    as *= ad[i];
    bs *= bd[i];
  }
  const int out_nd = std::max(std::max(a.ndim(), b.ndim()), 1);
  std::vector<std::int64_t> dims(p.od.end() - out_nd, p.od.end());
  p.out_shape = Shape(dims);
  return p;
}

template <class Fwd>
void broadcast_apply(const BroadcastPlan& p, Fwd&& f) {
  std::int64_t o = 0;
  for (std::int64_t i0 = 0; i0 < p.od[0]; ++i0)
    for (std::int64_t i1 = 0; i1 < p.od[1]; ++i1)
      for (std::int64_t i2 = 0; i2 < p.od[2]; ++i2) {
        std::int64_t ia = i0 * p.astr[0] + i1 * p.astr[1] + i2 * p.astr[2];
        std::int64_t ib = i0 * p.bstr[0] + i1 * p.bstr[1] + i2 * p.bstr[2];
        for (std::int64_t i3 = 0; i3 < p.od[3]; ++i3) {
          f(o++, ia + i3 * p.astr[3], ib + i3 * p.bstr[3]);
        }
      }
}

template <class Real>
using EMat = Eigen::Matrix<Real, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <class Real>
using MapM = Eigen::Map<EMat<Real>>;
template <class Real>
using CMapM = Eigen::Map<const EMat<Real>>;

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops with broadcasting
// ---------------------------------------------------------------------------

enum class BinOp { add, sub, mul };

template <class Real>
TensorT<Real> binary_op(const TensorT<Real>& a, const TensorT<Real>& b, BinOp op) {
  const char* name = op == BinOp::add ? "add" : (op == BinOp::sub ? "sub" : "mul");
  auto plan = detail::broadcast_plan(a.shape(), b.shape(), name);
  auto out = detail::make_result<Real>(plan.out_shape, {a, b});
  const Real* pa = a.values().data();
  const Real* pb = b.values().data();
  Real* po = out.values().data();
  switch (op) {
    case BinOp::add:
      detail::broadcast_apply(plan,
                                    [&](auto o, auto ia, auto ib) { po[o] = pa[ia] + pb[ib]; });
      break;
    case BinOp::sub:
      detail::broadcast_apply(plan,
                                    [&](auto o, auto ia, auto ib) { po[o] = pa[ia] - pb[ib]; });
      break;
    case BinOp::mul:
      detail::broadcast_apply(plan,
                                    [&](auto o, auto ia, auto ib) { po[o] = pa[ia] * pb[ib]; });
      break;
  }
  if (out.node_->requires_grad) {
    auto an = a.node_;
    auto bn = b.node_;
    out.node_->backward = [plan, an, bn, op](NodeT<Real>& self) {
      const Real* g = self.grad.data();
      const Real* pa2 = an->value.data();
      const Real* pb2 = bn->value.data();
      if (an->requires_grad) {
        an->ensure_grad();
        Real* ga = an->grad.data();
        detail::broadcast_apply(plan, [&](auto o, auto ia, auto ib) {
          switch (op) {
            case BinOp::add:
            case BinOp::sub:
              ga[ia] += g[o];
              break;
            case BinOp::mul:
              ga[ia] += g[o] * pb2[ib];
              break;
          }
        });
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        Real* gb = bn->grad.data();
        detail::broadcast_apply(plan, [&](auto o, auto ia, auto ib) {
          switch (op) {
            case BinOp::add:
              gb[ib] += g[o];
              break;
            case BinOp::sub:
              gb[ib] -= g[o];
              break;
            case BinOp::mul:
              gb[ib] += g[o] * pa2[ia];
              break;
          }
        });
      }
    };
  }
  return out;
}

template <class Real>
TensorT<Real> add(const TensorT<Real>& a, const TensorT<Real>& b) {
  return binary_op(a, b, BinOp::add);
}
template <class Real>
TensorT<Real> sub(const TensorT<Real>& a, const TensorT<Real>& b) {
  return binary_op(a, b, BinOp::sub);
}
template <class Real>
TensorT<Real> mul(const TensorT<Real>& a, const TensorT<Real>& b) {
  return binary_op(a, b, BinOp::mul);
}

template <class Real>
TensorT<Real> scale(const TensorT<Real>& a, double c) {
  auto out = detail::make_result<Real>(a.shape(), {a});
  const Real* pa = a.values().data();
  Real* po = out.values().data();
  const Real rc = static_cast<Real>(c);
  for (std::int64_t i = 0; i < a.numel(); ++i) po[i] = pa[i] * rc;
  if (out.node_->requires_grad) {
    auto an = a.node_;
    out.node_->backward = [an, rc](NodeT<Real>& self) {
      an->ensure_grad();
      Real* ga = an->grad.data();
      const Real* g = self.grad.data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) ga[i] += g[i] * rc;
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Matrix products (Eigen-backed)
// ---------------------------------------------------------------------------

template <class Real>
TensorT<Real> matmul(const TensorT<Real>& a, const TensorT<Real>& b) {
  if (a.shape().ndim() != 2 || b.shape().ndim() != 2 || a.shape()[1] != b.shape()[0])
    throw InvalidArgument("matmul: incompatible shapes " + a.shape().str() + " and " +
                          b.shape().str());
  const std::int64_t m = a.shape()[0], k = a.shape()[1], n = b.shape()[1];
  auto out = detail::make_result<Real>(Shape{m, n}, {a, b});
  detail::CMapM<Real> A(a.values().data(), m, k), B(b.values().data(), k, n);
  detail::MapM<Real> C(out.values().data(), m, n);
  C.noalias() = A * B;
  if (out.node_->requires_grad) {
    auto an = a.node_;
    auto bn = b.node_;
    out.node_->backward = [an, bn, m, k, n](NodeT<Real>& self) {
      detail::CMapM<Real> G(self.grad.data(), m, n);
      if (an->requires_grad) {
        an->ensure_grad();
        detail::MapM<Real> GA(an->grad.data(), m, k);
        detail::CMapM<Real> B2(bn->value.data(), k, n);
        GA.noalias() += G * B2.transpose();
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        detail::MapM<Real> GB(bn->grad.data(), k, n);
        detail::CMapM<Real> A2(an->value.data(), m, k);
        GB.noalias() += A2.transpose() * G;
      }
    };
  }
  return out;
}

// (batch, m, k) x (batch, k, n); trans_b multiplies by the transpose of b's
// trailing matrix, i.e. (batch, n, k) inputs.
template <class Real>
TensorT<Real> batched_matmul(const TensorT<Real>& a, const TensorT<Real>& b,
                             bool trans_b = false) {
  if (a.shape().ndim() != 3 || b.shape().ndim() != 3 || a.shape()[0] != b.shape()[0])
    throw InvalidArgument("batched_matmul: incompatible shapes " + a.shape().str() + " and " +
                          b.shape().str());
  const std::int64_t batch = a.shape()[0], m = a.shape()[1], k = a.shape()[2];
  const std::int64_t n = trans_b ? b.shape()[1] : b.shape()[2];
  const std::int64_t bk = trans_b ? b.shape()[2] : b.shape()[1];
  if (bk != k)
    throw InvalidArgument("batched_matmul: incompatible shapes " + a.shape().str() + " and " +
                          b.shape().str());
  auto out = detail::make_result<Real>(Shape{batch, m, n}, {a, b});
  const std::int64_t brows = b.shape()[1], bcols = b.shape()[2];
  for (std::int64_t i = 0; i < batch; ++i) {
    detail::CMapM<Real> A(a.values().data() + i * m * k, m, k);
    detail::CMapM<Real> B(b.values().data() + i * brows * bcols, brows, bcols);
    detail::MapM<Real> C(out.values().data() + i * m * n, m, n);
    if (trans_b)
      C.noalias() = A * B.transpose();
    else
      C.noalias() = A * B;
  }
  if (out.node_->requires_grad) {
    auto an = a.node_;
    auto bn = b.node_;
    out.node_->backward = [an, bn, batch, m, k, n, brows, bcols, trans_b](NodeT<Real>& self) {
      if (an->requires_grad) an->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      for (std::int64_t i = 0; i < batch; ++i) {
        detail::CMapM<Real> G(self.grad.data() + i * m * n, m, n);
        detail::CMapM<Real> A(an->value.data() + i * m * k, m, k);
        detail::CMapM<Real> B(bn->value.data() + i * brows * bcols, brows, bcols);
        if (an->requires_grad) {
          detail::MapM<Real> GA(an->grad.data() + i * m * k, m, k);
          if (trans_b)
            GA.noalias() += G * B;
          else
            GA.noalias() += G * B.transpose();
        }
        if (bn->requires_grad) {
          detail::MapM<Real> GB(bn->grad.data() + i * brows * bcols, brows, bcols);
          if (trans_b)
            GB.noalias() += G.transpose() * A;
          else
            GB.noalias() += A.transpose() * G;
        }
      }
    };
  }
  return out;
}

template <class Real>
TensorT<Real> transpose(const TensorT<Real>& a) {
  if (a.shape().ndim() != 2)
    throw InvalidArgument("transpose: expected 2 axes, got " + a.shape().str());
  const std::int64_t m = a.shape()[0], n = a.shape()[1];
  auto out = detail::make_result<Real>(Shape{n, m}, {a});
  detail::CMapM<Real> A(a.values().data(), m, n);
  detail::MapM<Real> O(out.values().data(), n, m);
  O = A.transpose();
  if (out.node_->requires_grad) {
    auto an = a.node_;
    out.node_->backward = [an, m, n](NodeT<Real>& self) {
      an->ensure_grad();
      detail::CMapM<Real> G(self.grad.data(), n, m);
      detail::MapM<Real> GA(an->grad.data(), m, n);
      GA.noalias() += G.transpose();
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Shape ops
// ---------------------------------------------------------------------------

template <class Real>
TensorT<Real> reshape(const TensorT<Real>& a, Shape s) {
  if (s.numel() != a.numel())
    throw InvalidArgument("reshape: cannot view " + a.shape().str() + " as " + s.str());
  auto out = detail::make_result<Real>(s, {a});
  out.values() = a.values();
  if (out.node_->requires_grad) {
    auto an = a.node_;
    out.node_->backward = [an](NodeT<Real>& self) {
      an->ensure_grad();
      for (std::size_t i = 0; i < self.grad.size(); ++i) an->grad[i] += self.grad[i];
    };
  }
  return out;
}

// (a, b, c, d) -> (a, c, b, d); used to shuffle attention heads.
template <class Real>
TensorT<Real> permute_0213(const TensorT<Real>& x) {
  if (x.shape().ndim() != 4)
    throw InvalidArgument("permute_0213: expected 4 axes, got " + x.shape().str());
  const std::int64_t A = x.shape()[0], B = x.shape()[1], C = x.shape()[2], D = x.shape()[3];
  auto out = detail::make_result<Real>(Shape{A, C, B, D}, {x});
  const Real* px = x.values().data();
  Real* po = out.values().data();
  for (std::int64_t a = 0; a < A; ++a)
    for (std::int64_t b = 0; b < B; ++b)
      for (std::int64_t c = 0; c < C; ++c) {
        const Real* src = px + ((a * B + b) * C + c) * D;
        Real* dst = po + ((a * C + c) * B + b) * D;
        std::copy(src, src + D, dst);
      }
  if (out.node_->requires_grad) {
    auto xn = x.node_;
    out.node_->backward = [xn, A, B, C, D](NodeT<Real>& self) {
      xn->ensure_grad();
      const Real* g = self.grad.data();
      Real* gx = xn->grad.data();
      for (std::int64_t a = 0; a < A; ++a)
        for (std::int64_t b = 0; b < B; ++b)
          for (std::int64_t c = 0; c < C; ++c) {
            const Real* src = g + ((a * C + c) * B + b) * D;
            Real* dst = gx + ((a * B + b) * C + c) * D;
            for (std::int64_t d = 0; d < D; ++d) dst[d] += src[d];
          }
    };
  }
  return out;
}

template <class Real>
TensorT<Real> concat_last(const TensorT<Real>& a, const TensorT<Real>& b) {
  if (a.shape().ndim() != b.shape().ndim())
    throw InvalidArgument("concat_last: rank mismatch " + a.shape().str() + " vs " +
                          b.shape().str());
  for (int i = 0; i + 1 < a.shape().ndim(); ++i)
    if (a.shape()[i] != b.shape()[i])
      throw InvalidArgument("concat_last: incompatible shapes " + a.shape().str() + " and " +
                            b.shape().str());
  const std::int64_t ca = a.shape().back(), cb = b.shape().back();
  const std::int64_t rows = a.numel() / ca;
  std::vector<std::int64_t> dims;
  for (int i = 0; i + 1 < a.shape().ndim(); ++i) dims.push_back(a.shape()[i]);
  dims.push_back(ca + cb);
  auto out = detail::make_result<Real>(Shape(dims), {a, b});
  const Real* pa = a.values().data();
  const Real* pb = b.values().data();
  Real* po = out.values().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    std::copy(pa + r * ca, pa + (r + 1) * ca, po + r * (ca + cb));
    std::copy(pb + r * cb, pb + (r + 1) * cb, po + r * (ca + cb) + ca);
  }
  if (out.node_->requires_grad) {
    auto an = a.node_;
    auto bn = b.node_;
    out.node_->backward = [an, bn, rows, ca, cb](NodeT<Real>& self) {
      const Real* g = self.grad.data();
      if (an->requires_grad) {
        an->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t c = 0; c < ca; ++c) an->grad[r * ca + c] += g[r * (ca + cb) + c];
      }
      if (bn->requires_grad) {
        bn->ensure_grad();
        for (std::int64_t r = 0; r < rows; ++r)
          for (std::int64_t c = 0; c < cb; ++c)
            bn->grad[r * cb + c] += g[r * (ca + cb) + ca + c];
      }
    };
  }
  return out;
}

template <class Real>
TensorT<Real> gather_rows(const TensorT<Real>& x, std::vector<std::int64_t> idx) {
  if (x.shape().ndim() != 2)
    throw InvalidArgument("gather_rows: expected 2 axes, got " + x.shape().str());
  const std::int64_t rows = x.shape()[0], cols = x.shape()[1];
  for (auto i : idx)
    if (i < 0 || i >= rows)
      throw InvalidArgument("gather_rows: index " + std::to_string(i) + " out of range [0, " +
                            std::to_string(rows) + ")");
  auto out =
      detail::make_result<Real>(Shape{static_cast<std::int64_t>(idx.size()), cols}, {x});
  const Real* px = x.values().data();
  Real* po = out.values().data();
  for (std::size_t r = 0; r < idx.size(); ++r)
    std::copy(px + idx[r] * cols, px + (idx[r] + 1) * cols, po + r * cols);
  if (out.node_->requires_grad) {
    auto xn = x.node_;
    out.node_->backward = [xn, idx = std::move(idx), cols](NodeT<Real>& self) {
      xn->ensure_grad();
      const Real* g = self.grad.data();
      for (std::size_t r = 0; r < idx.size(); ++r)
        for (std::int64_t c = 0; c < cols; ++c) xn->grad[idx[r] * cols + c] += g[r * cols + c];
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions (double accumulation)
// ---------------------------------------------------------------------------

namespace detail {
inline Shape drop_axis(const Shape& s, int axis) {
  std::vector<std::int64_t> dims;
  for (int i = 0; i < s.ndim(); ++i)
    if (i != axis) dims.push_back(s[i]);
  if (dims.empty()) dims.push_back(1);
  return Shape(dims);
}

inline void check_axis(const Shape& s, int axis, const char* op) {
  if (axis < 0 || axis >= s.ndim())
    throw InvalidArgument(std::string(op) + ": axis " + std::to_string(axis) +
                          " out of range for " + s.str());
}

struct AxisSplit {
  std::int64_t outer, len, inner;
};
inline AxisSplit axis_split(const Shape& s, int axis) {
  AxisSplit a{1, s[axis], 1};
  for (int i = 0; i < axis; ++i) a.outer *= s[i];
  for (int i = axis + 1; i < s.ndim(); ++i) a.inner *= s[i];
  return a;
}
}  // namespace detail

template <class Real>
TensorT<Real> reduce_sum(const TensorT<Real>& x, int axis) {
  detail::check_axis(x.shape(), axis, "reduce_sum");
  auto split = detail::axis_split(x.shape(), axis);
  auto out = detail::make_result<Real>(detail::drop_axis(x.shape(), axis), {x});
  const Real* px = x.values().data();
  Real* po = out.values().data();
  for (std::int64_t o = 0; o < split.outer; ++o)
    for (std::int64_t i = 0; i < split.inner; ++i) {
      double acc = 0.0;
      for (std::int64_t l = 0; l < split.len; ++l)
        acc += static_cast<double>(px[(o * split.len + l) * split.inner + i]);
      po[o * split.inner + i] = static_cast<Real>(acc);
    }
  if (out.node_->requires_grad) {
    auto xn = x.node_;
    out.node_->backward = [xn, split](NodeT<Real>& self) {
      xn->ensure_grad();
      const Real* g = self.grad.data();
      for (std::int64_t o = 0; o < split.outer; ++o)
        for (std::int64_t l = 0; l < split.len; ++l)
          for (std::int64_t i = 0; i < split.inner; ++i)
            xn->grad[(o * split.len + l) * split.inner + i] += g[o * split.inner + i];
    };
  }
  return out;
}

template <class Real>
TensorT<Real> reduce_mean(const TensorT<Real>& x, int axis) {
  detail::check_axis(x.shape(), axis, "reduce_mean");
  return scale(reduce_sum(x, axis), 1.0 / static_cast<double>(x.shape()[axis]));
}

template <class Real>
TensorT<Real> reduce_mean_all(const TensorT<Real>& x) {
  auto out = detail::make_result<Real>(Shape{1}, {x});
  double acc = 0.0;
  for (auto v : x.values()) acc += static_cast<double>(v);
  out.values()[0] = static_cast<Real>(acc / static_cast<double>(x.numel()));
  if (out.node_->requires_grad) {
    auto xn = x.node_;
    const Real inv = static_cast<Real>(1.0 / static_cast<double>(x.numel()));
    out.node_->backward = [xn, inv](NodeT<Real>& self) {
      xn->ensure_grad();
      const Real g = self.grad[0] * inv;
      for (auto& gi : xn->grad) gi += g;
    };
  }
  return out;
}

// Max over one axis; gradient routes to the first attaining element.
template <class Real>
TensorT<Real> reduce_max(const TensorT<Real>& x, int axis) {
  detail::check_axis(x.shape(), axis, "reduce_max");
  auto split = detail::axis_split(x.shape(), axis);
  auto out = detail::make_result<Real>(detail::drop_axis(x.shape(), axis), {x});
  const Real* px = x.values().data();
  Real* po = out.values().data();
  auto argmax = std::make_shared<std::vector<std::int64_t>>(
      static_cast<std::size_t>(split.outer * split.inner));
  for (std::int64_t o = 0; o < split.outer; ++o)
    for (std::int64_t i = 0; i < split.inner; ++i) {
      Real best = px[(o * split.len) * split.inner + i];
      std::int64_t bi = 0;
      for (std::int64_t l = 1; l < split.len; ++l) {
        const Real v = px[(o * split.len + l) * split.inner + i];
        if (v > best) {
          best = v;
          bi = l;
        }
      }
      po[o * split.inner + i] = best;
      (*argmax)[o * split.inner + i] = bi;
    }
  if (out.node_->requires_grad) {
    auto xn = x.node_;
    out.node_->backward = [xn, split, argmax](NodeT<Real>& self) {
      xn->ensure_grad();
      const Real* g = self.grad.data();
      for (std::int64_t o = 0; o < split.outer; ++o)
        for (std::int64_t i = 0; i < split.inner; ++i) {
          const std::int64_t l = (*argmax)[o * split.inner + i];
          xn->grad[(o * split.len + l) * split.inner + i] += g[o * split.inner + i];
        }
    };
  }
  return out;
}

// ---------------------------------------------------------------------------
// Row-wise nonlinear ops (last axis)
// ---------------------------------------------------------------------------

template <class Real>
TensorT<Real> softmax_last(const TensorT<Real>& x) {
  const std::int64_t cols = x.shape().back();
  const std::int64_t rows = x.numel() / cols;
  auto out = detail::make_result<Real>(x.shape(), {x});
  const Real* px = x.values().data();
  Real* po = out.values().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* xr = px + r * cols;
    Real* yr = po + r * cols;
    Real m = xr[0];
    for (std::int64_t c = 1; c < cols; ++c) m = std::max(m, xr[c]);
    double denom = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) denom += std::exp(static_cast<double>(xr[c] - m));
    for (std::int64_t c = 0; c < cols; ++c)
      yr[c] = static_cast<Real>(std::exp(static_cast<double>(xr[c] - m)) / denom);
  }
  if (out.node_->requires_grad) {
    auto xn = x.node_;
    out.node_->backward = [xn, rows, cols](NodeT<Real>& self) {
      xn->ensure_grad();
      const Real* y = self.value.data();
      const Real* g = self.grad.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        double dot = 0.0;
        for (std::int64_t c = 0; c < cols; ++c)
          dot += static_cast<double>(g[r * cols + c]) * static_cast<double>(y[r * cols + c]);
        for (std::int64_t c = 0; c < cols; ++c)
          xn->grad[r * cols + c] += static_cast<Real>(
              static_cast<double>(y[r * cols + c]) *
              (static_cast<double>(g[r * cols + c]) - dot));
      }
    };
  }
  return out;
}

template <class Real>
TensorT<Real> log_softmax_last(const TensorT<Real>& x) {
  const std::int64_t cols = x.shape().back();
  const std::int64_t rows = x.numel() / cols;
  auto out = detail::make_result<Real>(x.shape(), {x});
  const Real* px = x.values().data();
  Real* po = out.values().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    const Real* xr = px + r * cols;
    Real m = xr[0];
    for (std::int64_t c = 1; c < cols; ++c) m = std::max(m, xr[c]);
    double denom = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) denom += std::exp(static_cast<double>(xr[c] - m));
    const double lse = static_cast<double>(m) + std::log(denom);
    for (std::int64_t c = 0; c < cols; ++c)
      po[r * cols + c] = static_cast<Real>(static_cast<double>(xr[c]) - lse);
  }
  if (out.node_->requires_grad) {
    auto xn = x.node_;
    out.node_->backward = [xn, rows, cols](NodeT<Real>& self) {
      xn->ensure_grad();
      const Real* y = self.value.data();
      const Real* g = self.grad.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        double gsum = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) gsum += static_cast<double>(g[r * cols + c]);
        for (std::int64_t c = 0; c < cols; ++c)
          xn->grad[r * cols + c] += static_cast<Real>(
              static_cast<double>(g[r * cols + c]) -
              std::exp(static_cast<double>(y[r * cols + c])) * gsum);
      }
    };
  }
  return out;
}

template <class Real>
TensorT<Real> layer_norm(const TensorT<Real>& x, const TensorT<Real>& gain,
                         const TensorT<Real>& bias, double eps = 1e-5) {
  const std::int64_t cols = x.shape().back();
  if (gain.numel() != cols || bias.numel() != cols)
    throw InvalidArgument("layer_norm: gain/bias " + gain.shape().str() + "/" +
                          bias.shape().str() + " do not match last axis of " + x.shape().str());
  const std::int64_t rows = x.numel() / cols;
  auto out = detail::make_result<Real>(x.shape(), {x, gain, bias});
  // Normalized rows are kept for the backward pass.
  auto xhat = std::make_shared<std::vector<Real>>(x.values().size());
  auto inv_std = std::make_shared<std::vector<Real>>(static_cast<std::size_t>(rows));
  const Real* px = x.values().data();
  const Real* pg = gain.values().data();
  const Real* pb = bias.values().data();
  Real* po = out.values().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double mean = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) mean += static_cast<double>(px[r * cols + c]);
    mean /= static_cast<double>(cols);
    double var = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) {
      const double d = static_cast<double>(px[r * cols + c]) - mean;
      var += d * d;
    }
    var /= static_cast<double>(cols);
    const double inv = 1.0 / std::sqrt(var + eps);
    (*inv_std)[r] = static_cast<Real>(inv);
    for (std::int64_t c = 0; c < cols; ++c) {
      const double h = (static_cast<double>(px[r * cols + c]) - mean) * inv;
      (*xhat)[r * cols + c] = static_cast<Real>(h);
      po[r * cols + c] = static_cast<Real>(h * static_cast<double>(pg[c]) +
                                           static_cast<double>(pb[c]));
    }
  }
  if (out.node_->requires_grad) {
    auto xn = x.node_;
    auto gn = gain.node_;
    auto bn = bias.node_;
    out.node_->backward = [xn, gn, bn, xhat, inv_std, rows, cols](NodeT<Real>& self) {
      const Real* g = self.grad.data();
      const Real* pg2 = gn->value.data();
      if (gn->requires_grad) gn->ensure_grad();
      if (bn->requires_grad) bn->ensure_grad();
      if (xn->requires_grad) xn->ensure_grad();
      for (std::int64_t r = 0; r < rows; ++r) {
        double sum_gy = 0.0, sum_gyh = 0.0;
        for (std::int64_t c = 0; c < cols; ++c) {
          const double gy = static_cast<double>(g[r * cols + c]) * static_cast<double>(pg2[c]);
          sum_gy += gy;
          sum_gyh += gy * static_cast<double>((*xhat)[r * cols + c]);
        }
        const double inv = static_cast<double>((*inv_std)[r]);
        const double n = static_cast<double>(cols);
        for (std::int64_t c = 0; c < cols; ++c) {
          const double h = static_cast<double>((*xhat)[r * cols + c]);
          const double gy = static_cast<double>(g[r * cols + c]) * static_cast<double>(pg2[c]);
          if (xn->requires_grad)
            xn->grad[r * cols + c] +=
                static_cast<Real>(inv * (gy - sum_gy / n - h * sum_gyh / n));
          if (gn->requires_grad)
            gn->grad[c] += static_cast<Real>(static_cast<double>(g[r * cols + c]) * h);
          if (bn->requires_grad) bn->grad[c] += g[r * cols + c];
        }
      }
    };
  }
  return out;
}

template <class Real>
TensorT<Real> gelu(const TensorT<Real>& x) {
  auto out = detail::make_result<Real>(x.shape(), {x});
  const Real* px = x.values().data();
  Real* po = out.values().data();
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  for (std::int64_t i = 0; i < x.numel(); ++i) {
    const double v = static_cast<double>(px[i]);
    po[i] = static_cast<Real>(0.5 * v * (1.0 + std::erf(v * inv_sqrt2)));
  }
  if (out.node_->requires_grad) {
    auto xn = x.node_;
    out.node_->backward = [xn](NodeT<Real>& self) {
      xn->ensure_grad();
      constexpr double inv_sqrt2pi = 0.3989422804014326779;
      const Real* g = self.grad.data();
      for (std::size_t i = 0; i < self.grad.size(); ++i) {
        const double v = static_cast<double>(xn->value[i]);
        const double cdf = 0.5 * (1.0 + std::erf(v * 0.7071067811865475244));
        const double pdf = inv_sqrt2pi * std::exp(-0.5 * v * v);
        xn->grad[i] += static_cast<Real>(static_cast<double>(g[i]) * (cdf + v * pdf));
      }
    };
  }
  return out;
}

// Row-wise x / max(||x||, eps). Rows with norm below eps (the degenerate
// case) are treated as having a constant denominator.
template <class Real>
TensorT<Real> l2_normalize_last(const TensorT<Real>& x, double eps = 1e-12) {
  const std::int64_t cols = x.shape().back();
  const std::int64_t rows = x.numel() / cols;
  auto out = detail::make_result<Real>(x.shape(), {x});
  auto norms = std::make_shared<std::vector<double>>(static_cast<std::size_t>(rows));
  const Real* px = x.values().data();
  Real* po = out.values().data();
  for (std::int64_t r = 0; r < rows; ++r) {
    double n2 = 0.0;
    for (std::int64_t c = 0; c < cols; ++c) {
      const double v = static_cast<double>(px[r * cols + c]);
      n2 += v * v;
    }
    const double n = std::max(std::sqrt(n2), eps);
    (*norms)[r] = n;
    for (std::int64_t c = 0; c < cols; ++c)
      po[r * cols + c] = static_cast<Real>(static_cast<double>(px[r * cols + c]) / n);
  }
  if (out.node_->requires_grad) {
    auto xn = x.node_;
    out.node_->backward = [xn, norms, rows, cols, eps](NodeT<Real>& self) {
      xn->ensure_grad();
      const Real* g = self.grad.data();
      const Real* y = self.value.data();
      for (std::int64_t r = 0; r < rows; ++r) {
        const double n = (*norms)[r];
        if (n <= eps) {
          for (std::int64_t c = 0; c < cols; ++c)
            xn->grad[r * cols + c] += static_cast<Real>(static_cast<double>(g[r * cols + c]) / n);
          continue;
        }
        double dot = 0.0;
        for (std::int64_t c = 0; c < cols; ++c)
          dot += static_cast<double>(g[r * cols + c]) * static_cast<double>(y[r * cols + c]);
        for (std::int64_t c = 0; c < cols; ++c)
          xn->grad[r * cols + c] += static_cast<Real>(
              (static_cast<double>(g[r * cols + c]) -
               static_cast<double>(y[r * cols + c]) * dot) /
              n);
      }
    };
  }
  return out;
}

}  // namespace cscon
