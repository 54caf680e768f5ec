#pragma once

// Dense float64 tensors with a reverse-mode tape.
//
// Every op records its output on a Tape together with a closure that pushes the
// output gradient back to its parents. Ops validate shapes (reporting both
// operands) and refuse to emit non-finite values.

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <deque>
#include <functional>
#include <memory>
#include <numeric>
#include <span>
#include <sstream>
#include <string>
#include <utility>
#include <vector>

#include "sri/errors.hpp"

namespace sri::ad {

using Shape = std::vector<std::size_t>;

inline std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << '[';
  for (std::size_t i = 0; i < s.size(); ++i) os << (i ? "," : "") << s[i];
  os << ']';
  return os.str();
}

inline std::size_t numel(const Shape& s) {
  return std::accumulate(s.begin(), s.end(), std::size_t{1}, std::multiplies<>());
}

class Tensor {
 public:
  Tensor() = default;
  explicit Tensor(Shape shape, double fill = 0.0) : shape_(std::move(shape)), data_(numel(shape_), fill) {}
  Tensor(Shape shape, std::vector<double> data) : shape_(std::move(shape)), data_(std::move(data)) {
    if (data_.size() != numel(shape_))
      throw ArgumentError("Tensor: " + std::to_string(data_.size()) + " values for shape " + shape_str(shape_));
  }
  static Tensor scalar(double v) { return Tensor({1}, std::vector<double>{v}); }

  const Shape& shape() const { return shape_; }
  std::size_t rank() const { return shape_.size(); }
  std::size_t dim(int i) const { return shape_.at(i < 0 ? shape_.size() + i : static_cast<std::size_t>(i)); }
  std::size_t size() const { return data_.size(); }
  double* data() { return data_.data(); }
  const double* data() const { return data_.data(); }
  std::span<double> values() { return data_; }
  std::span<const double> values() const { return data_; }
  std::vector<double>& storage() { return data_; }
  const std::vector<double>& storage() const { return data_; }
  double& operator[](std::size_t i) { return data_[i]; }
  double operator[](std::size_t i) const { return data_[i]; }
  double item() const {
    if (data_.size() != 1) throw ArgumentError("item() on tensor of shape " + shape_str(shape_));
    return data_[0];
  }
  bool all_finite() const {
    return std::all_of(data_.begin(), data_.end(), [](double v) { return std::isfinite(v); });
  }
  void reshape(Shape s) {
    if (numel(s) != data_.size()) throw ArgumentError("reshape " + shape_str(shape_) + " -> " + shape_str(s));
    shape_ = std::move(s);
  }
  friend bool operator==(const Tensor&, const Tensor&) = default;

 private:
  Shape shape_;
  std::vector<double> data_;
};

/// Handle to a node on a Tape.
struct Var {
  int id = -1;
};

class Tape {
 public:
  using Backward = std::function<void(Tape&, const Tensor& out_grad)>;

  Var constant(Tensor t) { return push(std::move(t), false, nullptr, "constant"); }
  Var leaf(Tensor t) { return push(std::move(t), true, nullptr, "leaf"); }

  const Tensor& value(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).value; }
  bool requires_grad(Var v) const { return nodes_.at(static_cast<std::size_t>(v.id)).requires_grad; }

  /// Gradient of the last backward() target w.r.t. `v` (zeros if unreached).
  Tensor grad(Var v) const {
    const Node& n = nodes_.at(static_cast<std::size_t>(v.id));
    return n.grad.size() ? n.grad : Tensor(n.value.shape());
  }

  /// Accumulation buffer for a parent's gradient, allocated on first use.
  Tensor& grad_buffer(Var v) {
    Node& n = nodes_[static_cast<std::size_t>(v.id)];
    if (n.grad.size() != n.value.size()) n.grad = Tensor(n.value.shape());
    return n.grad;
  }

  Var push(Tensor value, bool requires_grad, Backward fn, const char* op) {
    if (!value.all_finite()) throw NumericError(std::string("non-finite value produced by ") + op);
    nodes_.push_back(Node{std::move(value), Tensor{}, requires_grad, std::move(fn), op});
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  /// Reverse sweep from a scalar node; each node is visited once, in reverse
  /// recording order (which is a topological order).
  void backward(Var loss) {
    const Tensor& lv = value(loss);
    if (lv.size() != 1) throw ArgumentError("backward: loss must be scalar, got shape " + shape_str(lv.shape()));
    for (auto& n : nodes_) n.grad = Tensor{};
    grad_buffer(loss)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (!n.requires_grad || !n.backward || n.grad.size() == 0) continue;
      n.backward(*this, n.grad);
    }
  }

  std::size_t size() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    Backward backward;
    const char* op = "";
  };
  std::deque<Node> nodes_;
};

// ---------------------------------------------------------------------------
// Kernels

namespace kernel {

/// C[m,n] += A[m,k] * B[k,n]
inline void gemm_nn(std::size_t m, std::size_t n, std::size_t k, const double* __restrict A,
                    const double* __restrict B, double* __restrict C) {
  for (std::size_t i = 0; i < m; ++i) {
    double* __restrict c = C + i * n;
    const double* a = A + i * k;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      const double* __restrict b = B + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

/// C[k,n] += A[m,k]^T * B[m,n]
inline void gemm_tn(std::size_t m, std::size_t n, std::size_t k, const double* __restrict A,
                    const double* __restrict B, double* __restrict C) {
  for (std::size_t i = 0; i < m; ++i) {
    const double* a = A + i * k;
    const double* __restrict b = B + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double av = a[p];
      double* __restrict c = C + p * n;
      for (std::size_t j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}

/// C[m,k] += A[m,n] * B[k,n]^T
inline void gemm_nt(std::size_t m, std::size_t n, std::size_t k, const double* A, const double* B, double* C) {
  std::vector<double> bt(k * n);
  for (std::size_t p = 0; p < k; ++p)
    for (std::size_t j = 0; j < n; ++j) bt[j * k + p] = B[p * n + j];
  gemm_nn(m, k, n, A, bt.data(), C);
}

}  // namespace kernel

namespace detail {

inline void require(bool ok, const std::string& msg) {
  if (!ok) throw ArgumentError(msg);
}

inline void accumulate(Tape& t, Var v, const Tensor& g) {
  if (!t.requires_grad(v)) return;
  Tensor& buf = t.grad_buffer(v);
  double* b = buf.data();
  const double* s = g.data();
  for (std::size_t i = 0; i < g.size(); ++i) b[i] += s[i];
}

inline bool any_grad(Tape& t, std::initializer_list<Var> vs) {
  return std::any_of(vs.begin(), vs.end(), [&](Var v) { return t.requires_grad(v); });
}

/// (outer, axis length, inner) decomposition of a shape around `axis`.
struct AxisSplit {
  std::size_t outer = 1, len = 1, inner = 1;
};

inline std::size_t normalize_axis(const Shape& s, int axis) {
  const int r = static_cast<int>(s.size());
  const int a = axis < 0 ? axis + r : axis;
  if (a < 0 || a >= r) throw ArgumentError("axis " + std::to_string(axis) + " out of range for " + shape_str(s));
  return static_cast<std::size_t>(a);
}

inline AxisSplit split_axis(const Shape& s, std::size_t a) {
  AxisSplit sp;
  for (std::size_t i = 0; i < a; ++i) sp.outer *= s[i];
  sp.len = s[a];
  for (std::size_t i = a + 1; i < s.size(); ++i) sp.inner *= s[i];
  return sp;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Ops

/// x[..., k] @ w[k, n] -> [..., n]
inline Var matmul(Tape& t, Var x, Var w) {
  const Tensor& X = t.value(x);
  const Tensor& W = t.value(w);
  detail::require(W.rank() == 2 && X.rank() >= 1 && X.dim(-1) == W.dim(0),
                  "matmul: incompatible shapes " + shape_str(X.shape()) + " and " + shape_str(W.shape()));
  const std::size_t k = W.dim(0), n = W.dim(1), m = X.size() / k;
  Shape os = X.shape();
  os.back() = n;
  Tensor out(os);
  kernel::gemm_nn(m, n, k, X.data(), W.data(), out.data());
  bool grad = detail::any_grad(t, {x, w});
  return t.push(std::move(out), grad,
                [x, w, m, n, k](Tape& tp, const Tensor& g) {
                  if (tp.requires_grad(x)) {
                    Tensor& gx = tp.grad_buffer(x);
                    kernel::gemm_nt(m, n, k, g.data(), tp.value(w).data(), gx.data());
                  }
                  if (tp.requires_grad(w)) {
                    Tensor& gw = tp.grad_buffer(w);
                    kernel::gemm_tn(m, n, k, tp.value(x).data(), g.data(), gw.data());
                  }
                },
                "matmul");
}

inline Var add(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  detail::require(A.shape() == B.shape(), "add: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += B[i];
  return t.push(std::move(out), detail::any_grad(t, {a, b}),
                [a, b](Tape& tp, const Tensor& g) {
                  detail::accumulate(tp, a, g);
                  detail::accumulate(tp, b, g);
                },
                "add");
}

inline Var sub(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  detail::require(A.shape() == B.shape(), "sub: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= B[i];
  return t.push(std::move(out), detail::any_grad(t, {a, b}),
                [a, b](Tape& tp, const Tensor& g) {
                  detail::accumulate(tp, a, g);
                  if (tp.requires_grad(b)) {
                    Tensor& gb = tp.grad_buffer(b);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
                  }
                },
                "sub");
}

/// Elementwise product of equal shapes.
inline Var mul(Tape& t, Var a, Var b) {
  const Tensor& A = t.value(a);
  const Tensor& B = t.value(b);
  detail::require(A.shape() == B.shape(), "mul: shape mismatch " + shape_str(A.shape()) + " vs " + shape_str(B.shape()));
  Tensor out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= B[i];
  return t.push(std::move(out), detail::any_grad(t, {a, b}),
                [a, b](Tape& tp, const Tensor& g) {
                  if (tp.requires_grad(a)) {
                    Tensor& ga = tp.grad_buffer(a);
                    const Tensor& B = tp.value(b);
                    for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * B[i];
                  }
                  if (tp.requires_grad(b)) {
                    Tensor& gb = tp.grad_buffer(b);
                    const Tensor& A = tp.value(a);
                    for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * A[i];
                  }
                },
                "mul");
}

/// x + y where y's shape equals a suffix of x's shape (bias rows, position tables).
inline Var add_bcast(Tape& t, Var x, Var y) {
  const Tensor& X = t.value(x);
  const Tensor& Y = t.value(y);
  const Shape& xs = X.shape();
  const Shape& ys = Y.shape();
  detail::require(ys.size() <= xs.size() && std::equal(ys.rbegin(), ys.rend(), xs.rbegin()),
                  "add_bcast: " + shape_str(ys) + " is not a suffix of " + shape_str(xs));
  const std::size_t inner = Y.size(), outer = X.size() / std::max<std::size_t>(inner, 1);
  Tensor out = X;
  for (std::size_t o = 0; o < outer; ++o)
    for (std::size_t i = 0; i < inner; ++i) out[o * inner + i] += Y[i];
  return t.push(std::move(out), detail::any_grad(t, {x, y}),
                [x, y, inner, outer](Tape& tp, const Tensor& g) {
                  detail::accumulate(tp, x, g);
                  if (tp.requires_grad(y)) {
                    Tensor& gy = tp.grad_buffer(y);
                    for (std::size_t o = 0; o < outer; ++o)
                      for (std::size_t i = 0; i < inner; ++i) gy[i] += g[o * inner + i];
                  }
                },
                "add_bcast");
}

inline Var scale(Tape& t, Var a, double s) {
  Tensor out = t.value(a);
  for (auto& v : out.values()) v *= s;
  return t.push(std::move(out), t.requires_grad(a),
                [a, s](Tape& tp, const Tensor& g) {
                  Tensor& ga = tp.grad_buffer(a);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += s * g[i];
                },
                "scale");
}

inline constexpr double kLeakySlope = 0.01;

inline Var leaky_relu(Tape& t, Var a, double slope = kLeakySlope) {
  Tensor out = t.value(a);
  for (auto& v : out.values()) v = v > 0.0 ? v : slope * v;
  return t.push(std::move(out), t.requires_grad(a),
                [a, slope](Tape& tp, const Tensor& g) {
                  Tensor& ga = tp.grad_buffer(a);
                  const Tensor& A = tp.value(a);
                  for (std::size_t i = 0; i < g.size(); ++i) ga[i] += A[i] > 0.0 ? g[i] : slope * g[i];
                },
                "leaky_relu");
}

inline Var reshape(Tape& t, Var a, Shape s) {
  Tensor out = t.value(a);
  out.reshape(std::move(s));
  return t.push(std::move(out), t.requires_grad(a), [a](Tape& tp, const Tensor& g) { detail::accumulate(tp, a, g); },
                "reshape");
}

/// Concatenation along `axis`; all other dims must agree.
inline Var concat(Tape& t, const std::vector<Var>& parts, int axis = -1) {
  detail::require(!parts.empty(), "concat: no inputs");
  const Shape& s0 = t.value(parts[0]).shape();
  const std::size_t ax = detail::normalize_axis(s0, axis);
  Shape os = s0;
  os[ax] = 0;
  std::vector<std::size_t> lens;
  for (Var p : parts) {
    const Shape& s = t.value(p).shape();
    bool ok = s.size() == s0.size();
    for (std::size_t i = 0; ok && i < s.size(); ++i) ok = i == ax || s[i] == s0[i];
    detail::require(ok, "concat: shape mismatch " + shape_str(s0) + " vs " + shape_str(s));
    os[ax] += s[ax];
    lens.push_back(s[ax]);
  }
  const auto sp = detail::split_axis(os, ax);
  Tensor out(os);
  std::size_t off = 0;
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor& P = t.value(parts[k]);
    const std::size_t block = lens[k] * sp.inner;
    for (std::size_t o = 0; o < sp.outer; ++o)
      std::copy_n(P.data() + o * block, block, out.data() + o * sp.len * sp.inner + off * sp.inner);
    off += lens[k];
  }
  bool grad = std::any_of(parts.begin(), parts.end(), [&](Var p) { return t.requires_grad(p); });
  return t.push(std::move(out), grad,
                [parts, lens, sp](Tape& tp, const Tensor& g) {
                  std::size_t off = 0;
                  for (std::size_t k = 0; k < parts.size(); ++k) {
                    const std::size_t block = lens[k] * sp.inner;
                    if (tp.requires_grad(parts[k])) {
                      Tensor& gp = tp.grad_buffer(parts[k]);
                      for (std::size_t o = 0; o < sp.outer; ++o) {
                        const double* src = g.data() + o * sp.len * sp.inner + off * sp.inner;
                        double* dst = gp.data() + o * block;
                        for (std::size_t i = 0; i < block; ++i) dst[i] += src[i];
                      }
                    }
                    off += lens[k];
                  }
                },
                "concat");
}

/// Mean over one axis; the axis is removed from the shape.
inline Var mean_axis(Tape& t, Var a, int axis) {
  const Tensor& A = t.value(a);
  const std::size_t ax = detail::normalize_axis(A.shape(), axis);
  const auto sp = detail::split_axis(A.shape(), ax);
  Shape os = A.shape();
  os.erase(os.begin() + static_cast<std::ptrdiff_t>(ax));
  if (os.empty()) os = {1};
  Tensor out(os);
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t l = 0; l < sp.len; ++l)
      for (std::size_t i = 0; i < sp.inner; ++i) out[o * sp.inner + i] += A[(o * sp.len + l) * sp.inner + i];
  for (auto& v : out.values()) v /= static_cast<double>(sp.len);
  return t.push(std::move(out), t.requires_grad(a),
                [a, sp](Tape& tp, const Tensor& g) {
                  Tensor& ga = tp.grad_buffer(a);
                  const double inv = 1.0 / static_cast<double>(sp.len);
                  for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t l = 0; l < sp.len; ++l)
                      for (std::size_t i = 0; i < sp.inner; ++i)
                        ga[(o * sp.len + l) * sp.inner + i] += g[o * sp.inner + i] * inv;
                },
                "mean_axis");
}

inline Var softmax_axis(Tape& t, Var a, int axis = -1) {
  const Tensor& A = t.value(a);
  const std::size_t ax = detail::normalize_axis(A.shape(), axis);
  const auto sp = detail::split_axis(A.shape(), ax);
  Tensor out(A.shape());
  for (std::size_t o = 0; o < sp.outer; ++o)
    for (std::size_t i = 0; i < sp.inner; ++i) {
      auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
      double mx = -INFINITY;
      for (std::size_t l = 0; l < sp.len; ++l) mx = std::max(mx, A[at(l)]);
      double z = 0.0;
      for (std::size_t l = 0; l < sp.len; ++l) z += (out[at(l)] = std::exp(A[at(l)] - mx));
      for (std::size_t l = 0; l < sp.len; ++l) out[at(l)] /= z;
    }
  auto y = std::make_shared<const Tensor>(out);
  return t.push(std::move(out), t.requires_grad(a),
                [a, y, sp](Tape& tp, const Tensor& g) {
                  const Tensor& Y = *y;
                  Tensor& ga = tp.grad_buffer(a);
                  for (std::size_t o = 0; o < sp.outer; ++o)
                    for (std::size_t i = 0; i < sp.inner; ++i) {
                      auto at = [&](std::size_t l) { return (o * sp.len + l) * sp.inner + i; };
                      double dotp = 0.0;
                      for (std::size_t l = 0; l < sp.len; ++l) dotp += g[at(l)] * Y[at(l)];
                      for (std::size_t l = 0; l < sp.len; ++l) ga[at(l)] += Y[at(l)] * (g[at(l)] - dotp);
                    }
                },
                "softmax_axis");
}

/// Layer normalization over the last axis with learned gain and bias.
inline Var layer_norm(Tape& t, Var x, Var gain, Var bias, double eps = 1e-5) {
  const Tensor& X = t.value(x);
  const std::size_t d = X.dim(-1), rows = X.size() / d;
  detail::require(t.value(gain).shape() == Shape{d} && t.value(bias).shape() == Shape{d},
                  "layer_norm: gain/bias must have shape [" + std::to_string(d) + "], got " +
                      shape_str(t.value(gain).shape()) + " and " + shape_str(t.value(bias).shape()));
  Tensor xhat(X.shape()), out(X.shape());
  std::vector<double> inv_std(rows);
  const Tensor& G = t.value(gain);
  const Tensor& B = t.value(bias);
  for (std::size_t r = 0; r < rows; ++r) {
    const double* xr = X.data() + r * d;
    double mu = 0.0;
    for (std::size_t j = 0; j < d; ++j) mu += xr[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::size_t j = 0; j < d; ++j) var += (xr[j] - mu) * (xr[j] - mu);
    var /= static_cast<double>(d);
    inv_std[r] = 1.0 / std::sqrt(var + eps);
    for (std::size_t j = 0; j < d; ++j) {
      xhat[r * d + j] = (xr[j] - mu) * inv_std[r];
      out[r * d + j] = xhat[r * d + j] * G[j] + B[j];
    }
  }
  return t.push(std::move(out), detail::any_grad(t, {x, gain, bias}),
                [x, gain, bias, d, rows, xhat = std::move(xhat), inv_std = std::move(inv_std)](Tape& tp,
                                                                                               const Tensor& g) {
                  const Tensor& G = tp.value(gain);
                  if (tp.requires_grad(gain) || tp.requires_grad(bias)) {
                    Tensor& gg = tp.grad_buffer(gain);
                    Tensor& gb = tp.grad_buffer(bias);
                    for (std::size_t r = 0; r < rows; ++r)
                      for (std::size_t j = 0; j < d; ++j) {
                        gg[j] += g[r * d + j] * xhat[r * d + j];
                        gb[j] += g[r * d + j];
                      }
                  }
                  if (tp.requires_grad(x)) {
                    Tensor& gx = tp.grad_buffer(x);
                    const double invd = 1.0 / static_cast<double>(d);
                    for (std::size_t r = 0; r < rows; ++r) {
                      double s1 = 0.0, s2 = 0.0;
                      for (std::size_t j = 0; j < d; ++j) {
                        const double gh = g[r * d + j] * G[j];
                        s1 += gh;
                        s2 += gh * xhat[r * d + j];
                      }
                      for (std::size_t j = 0; j < d; ++j) {
                        const double gh = g[r * d + j] * G[j];
                        gx[r * d + j] += inv_std[r] * (gh - invd * s1 - xhat[r * d + j] * invd * s2);
                      }
                    }
                  }
                },
                "layer_norm");
}

/// Multi-head scaled dot-product attention.
///   q: [B, Tq, d], k and v: [B, Tk, d], key_mask: [B, Tk] with 1 = valid.
/// Masked keys receive exactly zero weight. Returns [B, Tq, d].
inline Var scaled_dot_attention(Tape& t, Var q, Var k, Var v, const Tensor& key_mask, std::size_t heads) {
  const Tensor& Q = t.value(q);
  const Tensor& K = t.value(k);
  const Tensor& V = t.value(v);
  detail::require(Q.rank() == 3 && K.rank() == 3 && V.rank() == 3 && K.shape() == V.shape() && Q.dim(0) == K.dim(0) &&
                      Q.dim(2) == K.dim(2),
                  "attention: incompatible shapes q=" + shape_str(Q.shape()) + " k=" + shape_str(K.shape()) +
                      " v=" + shape_str(V.shape()));
  const std::size_t B = Q.dim(0), Tq = Q.dim(1), Tk = K.dim(1), d = Q.dim(2);
  detail::require(key_mask.shape() == Shape{B, Tk},
                  "attention: mask shape " + shape_str(key_mask.shape()) + " does not match keys " +
                      shape_str(K.shape()));
  detail::require(heads >= 1 && d % heads == 0,
                  "attention: width " + std::to_string(d) + " not divisible by " + std::to_string(heads) + " heads");
  const std::size_t dh = d / heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor out({B, Tq, d});
  auto probs = std::make_shared<std::vector<double>>(B * heads * Tq * Tk, 0.0);
  std::vector<double> row(Tk);
  for (std::size_t b = 0; b < B; ++b) {
    const double* mask = key_mask.data() + b * Tk;
    bool any = false;
    for (std::size_t j = 0; j < Tk; ++j) any = any || mask[j] != 0.0;
    detail::require(any, "attention: every key masked in batch row " + std::to_string(b));
    for (std::size_t h = 0; h < heads; ++h)
      for (std::size_t i = 0; i < Tq; ++i) {
        const double* qi = Q.data() + (b * Tq + i) * d + h * dh;
        double mx = -INFINITY;
        for (std::size_t j = 0; j < Tk; ++j) {
          if (mask[j] == 0.0) continue;
          const double* kj = K.data() + (b * Tk + j) * d + h * dh;
          double s = 0.0;
          for (std::size_t c = 0; c < dh; ++c) s += qi[c] * kj[c];
          row[j] = s * sc;
          mx = std::max(mx, row[j]);
        }
        double z = 0.0;
        for (std::size_t j = 0; j < Tk; ++j) {
          if (mask[j] == 0.0) continue;
          row[j] = std::exp(row[j] - mx);
          z += row[j];
        }
        double* p = probs->data() + ((b * heads + h) * Tq + i) * Tk;
        double* o = out.data() + (b * Tq + i) * d + h * dh;
        for (std::size_t j = 0; j < Tk; ++j) {
          if (mask[j] == 0.0) continue;
          p[j] = row[j] / z;
          const double* vj = V.data() + (b * Tk + j) * d + h * dh;
          for (std::size_t c = 0; c < dh; ++c) o[c] += p[j] * vj[c];
        }
      }
  }
  return t.push(
      std::move(out), detail::any_grad(t, {q, k, v}),
      [q, k, v, probs, B, Tq, Tk, d, dh, heads, sc, mask = key_mask](Tape& tp, const Tensor& g) {
        const Tensor& Q = tp.value(q);
        const Tensor& K = tp.value(k);
        const Tensor& V = tp.value(v);
        Tensor gq(Q.shape()), gk(K.shape()), gv(V.shape());
        std::vector<double> dp(Tk);
        for (std::size_t b = 0; b < B; ++b) {
          const double* m = mask.data() + b * Tk;
          for (std::size_t h = 0; h < heads; ++h)
            for (std::size_t i = 0; i < Tq; ++i) {
              const double* p = probs->data() + ((b * heads + h) * Tq + i) * Tk;
              const double* gi = g.data() + (b * Tq + i) * d + h * dh;
              double acc = 0.0;
              for (std::size_t j = 0; j < Tk; ++j) {
                if (m[j] == 0.0) continue;
                const double* vj = V.data() + (b * Tk + j) * d + h * dh;
                double* gvj = gv.data() + (b * Tk + j) * d + h * dh;
                double s = 0.0;
                for (std::size_t c = 0; c < dh; ++c) {
                  s += gi[c] * vj[c];
                  gvj[c] += p[j] * gi[c];
                }
                dp[j] = s;
                acc += s * p[j];
              }
              const double* qi = Q.data() + (b * Tq + i) * d + h * dh;
              double* gqi = gq.data() + (b * Tq + i) * d + h * dh;
              for (std::size_t j = 0; j < Tk; ++j) {
                if (m[j] == 0.0) continue;
                const double ds = p[j] * (dp[j] - acc) * sc;
                const double* kj = K.data() + (b * Tk + j) * d + h * dh;
                double* gkj = gk.data() + (b * Tk + j) * d + h * dh;
                for (std::size_t c = 0; c < dh; ++c) {
                  gqi[c] += ds * kj[c];
                  gkj[c] += ds * qi[c];
                }
              }
            }
        }
        detail::accumulate(tp, q, gq);
        detail::accumulate(tp, k, gk);
        detail::accumulate(tp, v, gv);
      },
      "attention");
}

/// Mean over the token axis of x: [B, T, d] counting only mask == 1 tokens.
inline Var masked_mean(Tape& t, Var x, const Tensor& mask) {
  const Tensor& X = t.value(x);
  detail::require(X.rank() == 3 && mask.shape() == Shape{X.dim(0), X.dim(1)},
                  "masked_mean: mask " + shape_str(mask.shape()) + " does not match " + shape_str(X.shape()));
  const std::size_t B = X.dim(0), T = X.dim(1), d = X.dim(2);
  Tensor out({B, d});
  std::vector<double> inv(B);
  for (std::size_t b = 0; b < B; ++b) {
    double cnt = 0.0;
    for (std::size_t j = 0; j < T; ++j)
      if (mask[b * T + j] != 0.0) {
        cnt += 1.0;
        for (std::size_t c = 0; c < d; ++c) out[b * d + c] += X[(b * T + j) * d + c];
      }
    detail::require(cnt > 0.0, "masked_mean: empty row " + std::to_string(b));
    inv[b] = 1.0 / cnt;
    for (std::size_t c = 0; c < d; ++c) out[b * d + c] *= inv[b];
  }
  return t.push(std::move(out), t.requires_grad(x),
                [x, mask, inv = std::move(inv), B, T, d](Tape& tp, const Tensor& g) {
                  Tensor& gx = tp.grad_buffer(x);
                  for (std::size_t b = 0; b < B; ++b)
                    for (std::size_t j = 0; j < T; ++j)
                      if (mask[b * T + j] != 0.0)
                        for (std::size_t c = 0; c < d; ++c) gx[(b * T + j) * d + c] += g[b * d + c] * inv[b];
                },
                "masked_mean");
}

/// Rows of x (first axis) selected by `idx`, in order; duplicates allowed.
inline Var gather_rows(Tape& t, Var x, std::vector<std::size_t> idx) {
  const Tensor& X = t.value(x);
  detail::require(X.rank() >= 1, "gather_rows: scalar input");
  const std::size_t rows = X.dim(0), w = X.size() / std::max<std::size_t>(rows, 1);
  Shape os = X.shape();
  os[0] = idx.size();
  Tensor out(os);
  for (std::size_t r = 0; r < idx.size(); ++r) {
    detail::require(idx[r] < rows, "gather_rows: index " + std::to_string(idx[r]) + " out of range for " +
                                       shape_str(X.shape()));
    std::copy_n(X.data() + idx[r] * w, w, out.data() + r * w);
  }
  return t.push(std::move(out), t.requires_grad(x),
                [x, idx = std::move(idx), w](Tape& tp, const Tensor& g) {
                  Tensor& gx = tp.grad_buffer(x);
                  for (std::size_t r = 0; r < idx.size(); ++r)
                    for (std::size_t c = 0; c < w; ++c) gx[idx[r] * w + c] += g[r * w + c];
                },
                "gather_rows");
}

inline Var sum(Tape& t, Var a) {
  const Tensor& A = t.value(a);
  double s = 0.0;
  for (double v : A.values()) s += v;
  return t.push(Tensor::scalar(s), t.requires_grad(a),
                [a](Tape& tp, const Tensor& g) {
                  Tensor& ga = tp.grad_buffer(a);
                  for (auto& v : ga.values()) v += g[0];
                },
                "sum");
}

inline Var mean(Tape& t, Var a) {
  const double n = static_cast<double>(t.value(a).size());
  return scale(t, sum(t, a), 1.0 / n);
}

/// mean((pred - target)^2) over all entries.
inline Var mse(Tape& t, Var pred, const Tensor& target) {
  const Tensor& P = t.value(pred);
  detail::require(P.size() == target.size(),
                  "mse: prediction " + shape_str(P.shape()) + " vs target " + shape_str(target.shape()));
  const double n = static_cast<double>(P.size());
  double s = 0.0;
  for (std::size_t i = 0; i < P.size(); ++i) s += (P[i] - target[i]) * (P[i] - target[i]);
  return t.push(Tensor::scalar(s / n), t.requires_grad(pred),
                [pred, target, n](Tape& tp, const Tensor& g) {
                  const Tensor& P = tp.value(pred);
                  Tensor& gp = tp.grad_buffer(pred);
                  for (std::size_t i = 0; i < P.size(); ++i) gp[i] += g[0] * 2.0 * (P[i] - target[i]) / n;
                },
                "mse");
}

/// Fully connected layer: x @ w + b.
inline Var linear(Tape& t, Var x, Var w, Var b) { return add_bcast(t, matmul(t, x, w), b); }

}  // namespace sri::ad
