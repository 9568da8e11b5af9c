#pragma once

// Reverse-mode differentiation on a flat tape. Every operation computes its
// output eagerly and, when any input is tracked, records a closure that pushes
// the output's adjoint into the inputs' adjoint buffers. A tape is built per
// forward pass and discarded after backward; parameters live outside the tape
// and are re-registered as leaves each pass (see ParameterStore::bind).
//
// Broadcasting is limited to trailing-axis expansion: for binary elementwise
// ops the right operand's shape must equal a suffix of the left operand's
// shape (a single-element tensor broadcasts everywhere). Anything fancier is
// rejected.

#include <algorithm>
#include <cmath>
#include <cstring>
#include <functional>
#include <limits>
#include <map>
#include <stdexcept>
#include <string>
#include <unordered_map>
#include <vector>

#include "tsbench/tensor.hpp"

namespace tsbench {

struct GradientMap {
  std::unordered_map<int, std::vector<double>> by_node;
  long long interior_visits = 0;   // backward closures invoked
  long long reachable_interior = 0;

  const std::vector<double>* find(const Tensor& t) const {
    if (t.node < 0) return nullptr;
    auto it = by_node.find(t.node);
    return it == by_node.end() ? nullptr : &it->second;
  }
};

class Tape {
 public:
  struct Node {
    long long numel = 0;
    std::vector<int> inputs;
    std::function<void(Tape&, int)> backprop;  // empty for leaves
    std::vector<double> grad;
  };

  // Registers an existing tensor as a leaf and returns a tracked alias
  // sharing its storage. Gradients for it are looked up through the alias.
  Tensor leaf(const Tensor& t) {
    Tensor out = t;
    out.node = add_node(t.numel(), {}, nullptr);
    out.requires_grad = true;
    return out;
  }

  int add_node(long long numel, std::vector<int> inputs, std::function<void(Tape&, int)> backprop) {
    Node n;
    n.numel = numel;
    n.inputs = std::move(inputs);
    n.backprop = std::move(backprop);
    nodes_.push_back(std::move(n));
    bytes_peak_ = std::max(bytes_peak_, bytes_live());
    return static_cast<int>(nodes_.size()) - 1;
  }

  std::vector<double>& grad_buf(int node) {
    Node& n = nodes_[static_cast<std::size_t>(node)];
    if (n.grad.empty()) n.grad.assign(static_cast<std::size_t>(n.numel), 0.0);
    return n.grad;
  }

  std::size_t node_count() const { return nodes_.size(); }

  // In-process allocation estimate: tape values are owned by tensors, so we
  // count adjoint buffers plus node bookkeeping.
  long long bytes_live() const {
    long long b = 0;
    for (const auto& n : nodes_) b += n.numel * 8;
    return b;
  }
  long long bytes_peak() const { return bytes_peak_; }

  GradientMap backward(const Tensor& root) {
    if (root.node < 0)
      throw std::invalid_argument("backward: root tensor is not recorded on this tape");
    if (root.numel() != 1)
      throw std::invalid_argument("backward: root must be scalar, got shape " + shape_str(root.shape));
    for (auto& n : nodes_) n.grad.clear();
    grad_buf(root.node)[0] = 1.0;

    std::vector<char> needed(nodes_.size(), 0);
    needed[static_cast<std::size_t>(root.node)] = 1;
    GradientMap out;
    for (int id = root.node; id >= 0; --id) {
      if (!needed[static_cast<std::size_t>(id)]) continue;
      Node& n = nodes_[static_cast<std::size_t>(id)];
      for (int in : n.inputs) needed[static_cast<std::size_t>(in)] = 1;
      if (n.backprop) {
        ++out.reachable_interior;
        n.backprop(*this, id);
        ++out.interior_visits;
      }
    }
    for (std::size_t id = 0; id < nodes_.size(); ++id) {
      if (!nodes_[id].grad.empty()) out.by_node.emplace(static_cast<int>(id), std::move(nodes_[id].grad));
      nodes_[id].grad.clear();
    }
    return out;
  }

 private:
  std::vector<Node> nodes_;
  long long bytes_peak_ = 0;
};

namespace detail {

inline bool tracked(const Tensor& t) { return t.node >= 0; }

// Accumulating matrix kernels, row-major.
inline void mm_nn(const double* A, const double* B, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    double* c = C + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      const double* b = B + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * b[j];
    }
  }
}
// C[m x k] += A[m x n] * B^T where B is [k x n]
inline void mm_nt(const double* A, const double* B, double* C, int m, int n, int k) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * n;
    double* c = C + static_cast<std::size_t>(i) * k;
    for (int p = 0; p < k; ++p) {
      const double* b = B + static_cast<std::size_t>(p) * n;
      double acc = 0.0;
      for (int j = 0; j < n; ++j) acc += a[j] * b[j];
      c[p] += acc;
    }
  }
}
// C[k x n] += A^T * G where A is [m x k], G is [m x n]
inline void mm_tn(const double* A, const double* G, double* C, int m, int k, int n) {
  for (int i = 0; i < m; ++i) {
    const double* a = A + static_cast<std::size_t>(i) * k;
    const double* g = G + static_cast<std::size_t>(i) * n;
    for (int p = 0; p < k; ++p) {
      const double av = a[p];
      double* c = C + static_cast<std::size_t>(p) * n;
      for (int j = 0; j < n; ++j) c[j] += av * g[j];
    }
  }
}

// Right operand must be a trailing suffix of the left shape; returns the
// repeat count (numel(a)/numel(b)). A one-element b broadcasts everywhere.
inline long long broadcast_reps(const Tensor& a, const Tensor& b, const char* op) {
  if (b.numel() == 1) return a.numel();
  if (b.rank() > a.rank())
    throw std::invalid_argument(std::string(op) + ": right operand rank exceeds left, " +
                                shape_str(a.shape) + " vs " + shape_str(b.shape));
  const int off = a.rank() - b.rank();
  for (int i = 0; i < b.rank(); ++i)
    if (a.dim(off + i) != b.dim(i))
      throw std::invalid_argument(std::string(op) + ": shape " + shape_str(b.shape) +
                                  " is not a trailing suffix of " + shape_str(a.shape));
  return a.numel() / b.numel();
}

struct AxisSplit {
  long long outer, n, inner;
};
inline AxisSplit axis_split(const Shape& s, int axis, const char* op) {
  if (axis < 0 || axis >= static_cast<int>(s.size()))
    throw std::invalid_argument(std::string(op) + ": axis " + std::to_string(axis) +
                                " out of range for " + shape_str(s));
  AxisSplit sp{1, s[static_cast<std::size_t>(axis)], 1};
  for (int i = 0; i < axis; ++i) sp.outer *= s[static_cast<std::size_t>(i)];
  for (int i = axis + 1; i < static_cast<int>(s.size()); ++i) sp.inner *= s[static_cast<std::size_t>(i)];
  return sp;
}

}  // namespace detail

// ---------------------------------------------------------------------------
// Elementwise binary ops

inline Tensor add(Tape& tape, const Tensor& a, const Tensor& b) {
  const long long reps = detail::broadcast_reps(a, b, "add");
  const long long nb = b.numel();
  Tensor out(a.shape);
  for (long long r = 0; r < reps; ++r)
    for (long long i = 0; i < nb; ++i) (*out.data)[static_cast<std::size_t>(r * nb + i)] =
        (*a.data)[static_cast<std::size_t>(r * nb + i)] + (*b.data)[static_cast<std::size_t>(i)];
  if (detail::tracked(a) || detail::tracked(b)) {
    const int an = a.node, bn = b.node;
    out.node = tape.add_node(out.numel(), [&] {
      std::vector<int> in;
      if (an >= 0) in.push_back(an);
      if (bn >= 0) in.push_back(bn);
      return in;
    }(), [an, bn, reps, nb](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      if (an >= 0) {
        auto& ga = t.grad_buf(an);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
      }
      if (bn >= 0) {
        auto& gb = t.grad_buf(bn);
        for (long long r = 0; r < reps; ++r)
          for (long long i = 0; i < nb; ++i) gb[static_cast<std::size_t>(i)] += g[static_cast<std::size_t>(r * nb + i)];
      }
    });
    out.requires_grad = true;
  }
  return out;
}

inline Tensor mul(Tape& tape, const Tensor& a, const Tensor& b) {
  const long long reps = detail::broadcast_reps(a, b, "mul");
  const long long nb = b.numel();
  Tensor out(a.shape);
  for (long long r = 0; r < reps; ++r)
    for (long long i = 0; i < nb; ++i) (*out.data)[static_cast<std::size_t>(r * nb + i)] =
        (*a.data)[static_cast<std::size_t>(r * nb + i)] * (*b.data)[static_cast<std::size_t>(i)];
  if (detail::tracked(a) || detail::tracked(b)) {
    const int an = a.node, bn = b.node;
    auto av = a.data, bv = b.data;
    out.node = tape.add_node(out.numel(), [&] {
      std::vector<int> in;
      if (an >= 0) in.push_back(an);
      if (bn >= 0) in.push_back(bn);
      return in;
    }(), [an, bn, av, bv, reps, nb](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      if (an >= 0) {
        auto& ga = t.grad_buf(an);
        for (long long r = 0; r < reps; ++r)
          for (long long i = 0; i < nb; ++i) {
            const std::size_t idx = static_cast<std::size_t>(r * nb + i);
            ga[idx] += g[idx] * (*bv)[static_cast<std::size_t>(i)];
          }
      }
      if (bn >= 0) {
        auto& gb = t.grad_buf(bn);
        for (long long r = 0; r < reps; ++r)
          for (long long i = 0; i < nb; ++i) {
            const std::size_t idx = static_cast<std::size_t>(r * nb + i);
            gb[static_cast<std::size_t>(i)] += g[idx] * (*av)[idx];
          }
      }
    });
    out.requires_grad = true;
  }
  return out;
}

// Multiply by a plain constant.
inline Tensor scale(Tape& tape, const Tensor& a, double c) {
  Tensor out(a.shape);
  for (std::size_t i = 0; i < a.data->size(); ++i) (*out.data)[i] = (*a.data)[i] * c;
  if (detail::tracked(a)) {
    const int an = a.node;
    out.node = tape.add_node(out.numel(), {an}, [an, c](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& ga = t.grad_buf(an);
      for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * c;
    });
    out.requires_grad = true;
  }
  return out;
}

inline Tensor sub(Tape& tape, const Tensor& a, const Tensor& b) { return add(tape, a, scale(tape, b, -1.0)); }

// ---------------------------------------------------------------------------
// Matrix multiply: a is (..., m, k); b is (k, n) or has the same leading
// batch extents as a with trailing (k, n).

inline Tensor matmul(Tape& tape, const Tensor& a, const Tensor& b) {
  if (a.rank() < 2 || b.rank() < 2)
    throw std::invalid_argument("matmul: operands must have rank >= 2, got " + shape_str(a.shape) +
                                " and " + shape_str(b.shape));
  const int m = a.dim(a.rank() - 2), k = a.dim(a.rank() - 1);
  const int kb = b.dim(b.rank() - 2), n = b.dim(b.rank() - 1);
  if (k != kb)
    throw std::invalid_argument("matmul: inner extents differ, " + shape_str(a.shape) + " vs " +
                                shape_str(b.shape));
  const bool batched_b = b.rank() != 2;
  if (batched_b) {
    if (a.rank() != b.rank())
      throw std::invalid_argument("matmul: batched operands must have equal rank, " +
                                  shape_str(a.shape) + " vs " + shape_str(b.shape));
    for (int i = 0; i < a.rank() - 2; ++i)
      if (a.dim(i) != b.dim(i))
        throw std::invalid_argument("matmul: batch extents differ, " + shape_str(a.shape) + " vs " +
                                    shape_str(b.shape));
  }
  Shape out_shape(a.shape.begin(), a.shape.end() - 1);
  out_shape.push_back(n);
  Tensor out(out_shape);
  const long long batches = a.numel() / (static_cast<long long>(m) * k);
  for (long long bi = 0; bi < batches; ++bi)
    detail::mm_nn(a.ptr() + bi * m * k, b.ptr() + (batched_b ? bi * static_cast<long long>(k) * n : 0),
                  out.ptr() + bi * static_cast<long long>(m) * n, m, k, n);
  if (detail::tracked(a) || detail::tracked(b)) {
    const int an = a.node, bn = b.node;
    auto av = a.data, bv = b.data;
    std::vector<int> in;
    if (an >= 0) in.push_back(an);
    if (bn >= 0) in.push_back(bn);
    out.node = tape.add_node(out.numel(), std::move(in),
                             [an, bn, av, bv, m, k, n, batches, batched_b](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      if (an >= 0) {
        auto& ga = t.grad_buf(an);
        for (long long bi = 0; bi < batches; ++bi)
          detail::mm_nt(g.data() + bi * static_cast<long long>(m) * n,
                        bv->data() + (batched_b ? bi * static_cast<long long>(k) * n : 0),
                        ga.data() + bi * static_cast<long long>(m) * k, m, n, k);
      }
      if (bn >= 0) {
        auto& gb = t.grad_buf(bn);
        for (long long bi = 0; bi < batches; ++bi)
          detail::mm_tn(av->data() + bi * static_cast<long long>(m) * k,
                        g.data() + bi * static_cast<long long>(m) * n,
                        gb.data() + (batched_b ? bi * static_cast<long long>(k) * n : 0), m, k, n);
      }
    });
    out.requires_grad = true;
  }
  return out;
}

// x (..., din) * W (din, dout) + bias (dout)
inline Tensor affine(Tape& tape, const Tensor& x, const Tensor& w, const Tensor& bias) {
  return add(tape, matmul(tape, x, w), bias);
}

// ---------------------------------------------------------------------------
// 1-D convolution. input (B, L, Cin), kernel (K, Cin, Cout).
// causal: left zero padding of (K-1)*dilation, stride must be 1, output length L.
// valid (causal=false): no padding, out_len = floor((L - eff_k)/stride) + 1.

inline Tensor conv1d(Tape& tape, const Tensor& input, const Tensor& kernel, int stride, int dilation,
                     bool causal) {
  if (input.rank() != 3 || kernel.rank() != 3)
    throw std::invalid_argument("conv1d: expected input (B,L,Cin) and kernel (K,Cin,Cout), got " +
                                shape_str(input.shape) + " and " + shape_str(kernel.shape));
  const int B = input.dim(0), L = input.dim(1), cin = input.dim(2);
  const int K = kernel.dim(0), kcin = kernel.dim(1), cout = kernel.dim(2);
  if (cin != kcin)
    throw std::invalid_argument("conv1d: channel extents differ, input " + shape_str(input.shape) +
                                " vs kernel " + shape_str(kernel.shape));
  if (stride < 1 || dilation < 1) throw std::invalid_argument("conv1d: stride and dilation must be >= 1");
  if (causal && stride != 1) throw std::invalid_argument("conv1d: causal mode requires stride 1");
  const int eff_k = (K - 1) * dilation + 1;
  const int pad = causal ? (K - 1) * dilation : 0;
  int out_len;
  if (causal) {
    out_len = L;
  } else {
    if (eff_k > L)
      throw std::invalid_argument("conv1d: effective kernel " + std::to_string(eff_k) +
                                  " exceeds input length " + std::to_string(L));
    out_len = (L - eff_k) / stride + 1;
  }
  Tensor out({B, out_len, cout});
  for (int b = 0; b < B; ++b)
    for (int t = 0; t < out_len; ++t)
      for (int kk = 0; kk < K; ++kk) {
        const int idx = t * stride + kk * dilation - pad;
        if (idx < 0 || idx >= L) continue;
        const double* in_row = input.ptr() + (static_cast<std::size_t>(b) * L + idx) * cin;
        const double* ker_row = kernel.ptr() + static_cast<std::size_t>(kk) * cin * cout;
        double* out_row = out.ptr() + (static_cast<std::size_t>(b) * out_len + t) * cout;
        for (int ci = 0; ci < cin; ++ci) {
          const double iv = in_row[ci];
          const double* kr = ker_row + static_cast<std::size_t>(ci) * cout;
          for (int co = 0; co < cout; ++co) out_row[co] += iv * kr[co];
        }
      }
  if (detail::tracked(input) || detail::tracked(kernel)) {
    const int in_node = input.node, k_node = kernel.node;
    auto iv = input.data, kv = kernel.data;
    std::vector<int> ins;
    if (in_node >= 0) ins.push_back(in_node);
    if (k_node >= 0) ins.push_back(k_node);
    out.node = tape.add_node(out.numel(), std::move(ins),
                             [=](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      std::vector<double>* gi = in_node >= 0 ? &t.grad_buf(in_node) : nullptr;
      std::vector<double>* gk = k_node >= 0 ? &t.grad_buf(k_node) : nullptr;
      for (int b = 0; b < B; ++b)
        for (int to = 0; to < out_len; ++to)
          for (int kk = 0; kk < K; ++kk) {
            const int idx = to * stride + kk * dilation - pad;
            if (idx < 0 || idx >= L) continue;
            const double* grow = g.data() + (static_cast<std::size_t>(b) * out_len + to) * cout;
            const std::size_t in_off = (static_cast<std::size_t>(b) * L + idx) * cin;
            const std::size_t k_off = static_cast<std::size_t>(kk) * cin * cout;
            for (int ci = 0; ci < cin; ++ci) {
              double acc = 0.0;
              const double* kr = kv->data() + k_off + static_cast<std::size_t>(ci) * cout;
              for (int co = 0; co < cout; ++co) acc += kr[co] * grow[co];
              if (gi) (*gi)[in_off + ci] += acc;
              if (gk) {
                const double ival = (*iv)[in_off + ci];
                double* kg = gk->data() + k_off + static_cast<std::size_t>(ci) * cout;
                for (int co = 0; co < cout; ++co) kg[co] += ival * grow[co];
              }
            }
          }
    });
    out.requires_grad = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Unary activations

namespace detail {
template <class F, class DF>
inline Tensor unary(Tape& tape, const Tensor& x, F f, DF df_from_xy) {
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.data->size(); ++i) (*out.data)[i] = f((*x.data)[i]);
  if (tracked(x)) {
    const int xn = x.node;
    auto xv = x.data, yv = out.data;
    out.node = tape.add_node(out.numel(), {xn}, [xn, xv, yv, df_from_xy](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(xn);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df_from_xy((*xv)[i], (*yv)[i]);
    });
    out.requires_grad = true;
  }
  return out;
}
}  // namespace detail

inline Tensor relu(Tape& tape, const Tensor& x) {
  return detail::unary(tape, x, [](double v) { return v > 0.0 ? v : 0.0; },
                       [](double v, double) { return v > 0.0 ? 1.0 : 0.0; });
}

inline Tensor gelu(Tape& tape, const Tensor& x) {
  constexpr double inv_sqrt2 = 0.7071067811865475244;
  constexpr double inv_sqrt2pi = 0.3989422804014326779;
  return detail::unary(tape, x,
                       [=](double v) { return 0.5 * v * (1.0 + std::erf(v * inv_sqrt2)); },
                       [=](double v, double) {
                         return 0.5 * (1.0 + std::erf(v * inv_sqrt2)) +
                                v * inv_sqrt2pi * std::exp(-0.5 * v * v);
                       });
}

inline Tensor sigmoid(Tape& tape, const Tensor& x) {
  return detail::unary(tape, x, [](double v) { return 1.0 / (1.0 + std::exp(-v)); },
                       [](double, double y) { return y * (1.0 - y); });
}

inline Tensor tanh_op(Tape& tape, const Tensor& x) {
  return detail::unary(tape, x, [](double v) { return std::tanh(v); },
                       [](double, double y) { return 1.0 - y * y; });
}

inline Tensor recip(Tape& tape, const Tensor& x) {
  return detail::unary(tape, x, [](double v) { return 1.0 / v; },
                       [](double, double y) { return -y * y; });
}

// ---------------------------------------------------------------------------
// Softmax over an axis.

inline Tensor softmax(Tape& tape, const Tensor& x, int axis) {
  const auto sp = detail::axis_split(x.shape, axis, "softmax");
  Tensor out(x.shape);
  for (long long o = 0; o < sp.outer; ++o)
    for (long long in = 0; in < sp.inner; ++in) {
      const auto lane = [&](long long j) { return static_cast<std::size_t>((o * sp.n + j) * sp.inner + in); };
      double mx = -std::numeric_limits<double>::infinity();
      for (long long j = 0; j < sp.n; ++j) mx = std::max(mx, (*x.data)[lane(j)]);
      double sum = 0.0;
      for (long long j = 0; j < sp.n; ++j) {
        const double e = std::exp((*x.data)[lane(j)] - mx);
        (*out.data)[lane(j)] = e;
        sum += e;
      }
      for (long long j = 0; j < sp.n; ++j) (*out.data)[lane(j)] /= sum;
    }
  if (detail::tracked(x)) {
    const int xn = x.node;
    auto yv = out.data;
    out.node = tape.add_node(out.numel(), {xn}, [xn, yv, sp](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(xn);
      for (long long o = 0; o < sp.outer; ++o)
        for (long long in = 0; in < sp.inner; ++in) {
          const auto lane = [&](long long j) { return static_cast<std::size_t>((o * sp.n + j) * sp.inner + in); };
          double dot = 0.0;
          for (long long j = 0; j < sp.n; ++j) dot += g[lane(j)] * (*yv)[lane(j)];
          for (long long j = 0; j < sp.n; ++j) gx[lane(j)] += (*yv)[lane(j)] * (g[lane(j)] - dot);
        }
    });
    out.requires_grad = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Layer normalization over the last axis, learnable gamma/beta of that width.

inline Tensor layer_norm(Tape& tape, const Tensor& x, const Tensor& gamma, const Tensor& beta,
                         double eps = 1e-5) {
  if (x.rank() < 1) throw std::invalid_argument("layer_norm: rank-0 input");
  const int n = x.dim(x.rank() - 1);
  if (gamma.numel() != n || beta.numel() != n)
    throw std::invalid_argument("layer_norm: gamma/beta width " + shape_str(gamma.shape) +
                                " does not match last axis of " + shape_str(x.shape));
  const long long lanes = x.numel() / n;
  Tensor xhat(x.shape);
  std::vector<double> inv_std(static_cast<std::size_t>(lanes));
  for (long long l = 0; l < lanes; ++l) {
    const double* xr = x.ptr() + l * n;
    double mean = 0.0;
    for (int j = 0; j < n; ++j) mean += xr[j];
    mean /= n;
    double var = 0.0;
    for (int j = 0; j < n; ++j) var += (xr[j] - mean) * (xr[j] - mean);
    var /= n;
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(l)] = is;
    double* hr = xhat.ptr() + l * n;
    for (int j = 0; j < n; ++j) hr[j] = (xr[j] - mean) * is;
  }
  Tensor out(x.shape);
  for (long long l = 0; l < lanes; ++l)
    for (int j = 0; j < n; ++j)
      out.ptr()[l * n + j] = xhat.ptr()[l * n + j] * (*gamma.data)[static_cast<std::size_t>(j)] +
                             (*beta.data)[static_cast<std::size_t>(j)];
  if (detail::tracked(x) || detail::tracked(gamma) || detail::tracked(beta)) {
    const int xn = x.node, gn = gamma.node, bn = beta.node;
    auto hv = xhat.data, gv = gamma.data;
    auto isv = std::make_shared<std::vector<double>>(std::move(inv_std));
    std::vector<int> ins;
    for (int id : {xn, gn, bn})
      if (id >= 0) ins.push_back(id);
    out.node = tape.add_node(out.numel(), std::move(ins), [=](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      std::vector<double>* gx = xn >= 0 ? &t.grad_buf(xn) : nullptr;
      std::vector<double>* gg = gn >= 0 ? &t.grad_buf(gn) : nullptr;
      std::vector<double>* gb = bn >= 0 ? &t.grad_buf(bn) : nullptr;
      for (long long l = 0; l < lanes; ++l) {
        const double* hr = hv->data() + l * n;
        const double* gr = g.data() + l * n;
        if (gg || gb)
          for (int j = 0; j < n; ++j) {
            if (gg) (*gg)[static_cast<std::size_t>(j)] += gr[j] * hr[j];
            if (gb) (*gb)[static_cast<std::size_t>(j)] += gr[j];
          }
        if (gx) {
          double mean_dy = 0.0, mean_dyh = 0.0;
          for (int j = 0; j < n; ++j) {
            const double dy = gr[j] * (*gv)[static_cast<std::size_t>(j)];
            mean_dy += dy;
            mean_dyh += dy * hr[j];
          }
          mean_dy /= n;
          mean_dyh /= n;
          const double is = (*isv)[static_cast<std::size_t>(l)];
          double* gxr = gx->data() + l * n;
          for (int j = 0; j < n; ++j) {
            const double dy = gr[j] * (*gv)[static_cast<std::size_t>(j)];
            gxr[j] += is * (dy - mean_dy - hr[j] * mean_dyh);
          }
        }
      }
    });
    out.requires_grad = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Reductions

inline Tensor sum_axis(Tape& tape, const Tensor& x, int axis) {
  const auto sp = detail::axis_split(x.shape, axis, "sum");
  Shape os = x.shape;
  os.erase(os.begin() + axis);
  if (os.empty()) os.push_back(1);
  Tensor out(os);
  for (long long o = 0; o < sp.outer; ++o)
    for (long long j = 0; j < sp.n; ++j)
      for (long long in = 0; in < sp.inner; ++in)
        out.ptr()[o * sp.inner + in] += x.ptr()[(o * sp.n + j) * sp.inner + in];
  if (detail::tracked(x)) {
    const int xn = x.node;
    out.node = tape.add_node(out.numel(), {xn}, [xn, sp](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(xn);
      for (long long o = 0; o < sp.outer; ++o)
        for (long long j = 0; j < sp.n; ++j)
          for (long long in = 0; in < sp.inner; ++in)
            gx[static_cast<std::size_t>((o * sp.n + j) * sp.inner + in)] +=
                g[static_cast<std::size_t>(o * sp.inner + in)];
    });
    out.requires_grad = true;
  }
  return out;
}

inline Tensor mean_axis(Tape& tape, const Tensor& x, int axis) {
  const double n = x.dim(axis);
  return scale(tape, sum_axis(tape, x, axis), 1.0 / n);
}

inline Tensor sum_all(Tape& tape, const Tensor& x) {
  Tensor out({1});
  double s = 0.0;
  for (double v : *x.data) s += v;
  (*out.data)[0] = s;
  if (detail::tracked(x)) {
    const int xn = x.node;
    out.node = tape.add_node(1, {xn}, [xn](Tape& t, int self) {
      const double g = t.grad_buf(self)[0];
      auto& gx = t.grad_buf(xn);
      for (auto& v : gx) v += g;
    });
    out.requires_grad = true;
  }
  return out;
}

inline Tensor mean_all(Tape& tape, const Tensor& x) {
  return scale(tape, sum_all(tape, x), 1.0 / static_cast<double>(x.numel()));
}

// ---------------------------------------------------------------------------
// Shape ops

inline Tensor reshape(Tape& tape, const Tensor& x, Shape new_shape) {
  if (shape_numel(new_shape) != x.numel())
    throw std::invalid_argument("reshape: " + shape_str(x.shape) + " to " + shape_str(new_shape) +
                                " changes element count");
  Tensor out(new_shape, *x.data);
  if (detail::tracked(x)) {
    const int xn = x.node;
    out.node = tape.add_node(out.numel(), {xn}, [xn](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(xn);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i];
    });
    out.requires_grad = true;
  }
  return out;
}

inline Tensor transpose(Tape& tape, const Tensor& x, int ax0, int ax1) {
  const int r = x.rank();
  if (ax0 < 0 || ax1 < 0 || ax0 >= r || ax1 >= r)
    throw std::invalid_argument("transpose: axes out of range for " + shape_str(x.shape));
  Shape os = x.shape;
  std::swap(os[static_cast<std::size_t>(ax0)], os[static_cast<std::size_t>(ax1)]);
  std::vector<long long> in_strides(static_cast<std::size_t>(r), 1), out_strides(static_cast<std::size_t>(r), 1);
  for (int i = r - 2; i >= 0; --i)
    in_strides[static_cast<std::size_t>(i)] = in_strides[static_cast<std::size_t>(i + 1)] * x.dim(i + 1);
  for (int i = r - 2; i >= 0; --i)
    out_strides[static_cast<std::size_t>(i)] = out_strides[static_cast<std::size_t>(i + 1)] * os[static_cast<std::size_t>(i + 1)];
  // Map each output linear index to the input linear index.
  auto perm = std::make_shared<std::vector<long long>>(static_cast<std::size_t>(x.numel()));
  Tensor out(os);
  std::vector<int> idx(static_cast<std::size_t>(r), 0);
  for (long long oi = 0; oi < out.numel(); ++oi) {
    long long rem = oi;
    for (int i = 0; i < r; ++i) {
      idx[static_cast<std::size_t>(i)] = static_cast<int>(rem / out_strides[static_cast<std::size_t>(i)]);
      rem %= out_strides[static_cast<std::size_t>(i)];
    }
    std::swap(idx[static_cast<std::size_t>(ax0)], idx[static_cast<std::size_t>(ax1)]);
    long long ii = 0;
    for (int i = 0; i < r; ++i) ii += idx[static_cast<std::size_t>(i)] * in_strides[static_cast<std::size_t>(i)];
    (*perm)[static_cast<std::size_t>(oi)] = ii;
    (*out.data)[static_cast<std::size_t>(oi)] = (*x.data)[static_cast<std::size_t>(ii)];
  }
  if (detail::tracked(x)) {
    const int xn = x.node;
    out.node = tape.add_node(out.numel(), {xn}, [xn, perm](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(xn);
      for (std::size_t oi = 0; oi < g.size(); ++oi) gx[static_cast<std::size_t>((*perm)[oi])] += g[oi];
    });
    out.requires_grad = true;
  }
  return out;
}

inline Tensor concat(Tape& tape, const std::vector<Tensor>& parts, int axis) {
  if (parts.empty()) throw std::invalid_argument("concat: no inputs");
  const Shape& s0 = parts[0].shape;
  int total = 0;
  for (const auto& p : parts) {
    if (p.rank() != static_cast<int>(s0.size()))
      throw std::invalid_argument("concat: rank mismatch, " + shape_str(s0) + " vs " + shape_str(p.shape));
    for (int i = 0; i < p.rank(); ++i)
      if (i != axis && p.dim(i) != s0[static_cast<std::size_t>(i)])
        throw std::invalid_argument("concat: extent mismatch off-axis, " + shape_str(s0) + " vs " +
                                    shape_str(p.shape));
    total += p.dim(axis);
  }
  Shape os = s0;
  os[static_cast<std::size_t>(axis)] = total;
  const auto osp = detail::axis_split(os, axis, "concat");
  Tensor out(os);
  long long off = 0;
  bool any_tracked = false;
  struct Piece { int node; long long n, off; };
  std::vector<Piece> pieces;
  for (const auto& p : parts) {
    const long long pn = p.dim(axis);
    for (long long o = 0; o < osp.outer; ++o)
      std::memcpy(out.ptr() + (o * osp.n + off) * osp.inner,
                  p.ptr() + o * pn * osp.inner,
                  static_cast<std::size_t>(pn * osp.inner) * sizeof(double));
    pieces.push_back({p.node, pn, off});
    any_tracked = any_tracked || detail::tracked(p);
    off += pn;
  }
  if (any_tracked) {
    std::vector<int> ins;
    for (const auto& pc : pieces)
      if (pc.node >= 0) ins.push_back(pc.node);
    out.node = tape.add_node(out.numel(), std::move(ins), [pieces, osp](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      for (const auto& pc : pieces) {
        if (pc.node < 0) continue;
        auto& gp = t.grad_buf(pc.node);
        for (long long o = 0; o < osp.outer; ++o)
          for (long long j = 0; j < pc.n; ++j)
            for (long long in = 0; in < osp.inner; ++in)
              gp[static_cast<std::size_t>((o * pc.n + j) * osp.inner + in)] +=
                  g[static_cast<std::size_t>((o * osp.n + pc.off + j) * osp.inner + in)];
      }
    });
    out.requires_grad = true;
  }
  return out;
}

inline Tensor slice(Tape& tape, const Tensor& x, int axis, int start, int len) {
  const auto sp = detail::axis_split(x.shape, axis, "slice");
  if (start < 0 || len < 0 || start + len > sp.n)
    throw std::invalid_argument("slice: range [" + std::to_string(start) + "," +
                                std::to_string(start + len) + ") out of extent " + std::to_string(sp.n) +
                                " in " + shape_str(x.shape));
  Shape os = x.shape;
  os[static_cast<std::size_t>(axis)] = len;
  Tensor out(os);
  for (long long o = 0; o < sp.outer; ++o)
    std::memcpy(out.ptr() + o * len * sp.inner, x.ptr() + (o * sp.n + start) * sp.inner,
                static_cast<std::size_t>(len * sp.inner) * sizeof(double));
  if (detail::tracked(x)) {
    const int xn = x.node;
    out.node = tape.add_node(out.numel(), {xn}, [xn, sp, start, len](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(xn);
      for (long long o = 0; o < sp.outer; ++o)
        for (long long j = 0; j < len; ++j)
          for (long long in = 0; in < sp.inner; ++in)
            gx[static_cast<std::size_t>((o * sp.n + start + j) * sp.inner + in)] +=
                g[static_cast<std::size_t>((o * len + j) * sp.inner + in)];
    });
    out.requires_grad = true;
  }
  return out;
}

// Repeats a unit axis `times` times (the inverse of summing over it).
inline Tensor repeat_axis(Tape& tape, const Tensor& x, int axis, int times) {
  const auto sp = detail::axis_split(x.shape, axis, "repeat_axis");
  if (sp.n != 1)
    throw std::invalid_argument("repeat_axis: axis extent must be 1 in " + shape_str(x.shape));
  Shape os = x.shape;
  os[static_cast<std::size_t>(axis)] = times;
  Tensor out(os);
  for (long long o = 0; o < sp.outer; ++o)
    for (int j = 0; j < times; ++j)
      std::memcpy(out.ptr() + (o * times + j) * sp.inner, x.ptr() + o * sp.inner,
                  static_cast<std::size_t>(sp.inner) * sizeof(double));
  if (detail::tracked(x)) {
    const int xn = x.node;
    out.node = tape.add_node(out.numel(), {xn}, [xn, sp, times](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(xn);
      for (long long o = 0; o < sp.outer; ++o)
        for (int j = 0; j < times; ++j)
          for (long long in = 0; in < sp.inner; ++in)
            gx[static_cast<std::size_t>(o * sp.inner + in)] +=
                g[static_cast<std::size_t>((o * times + j) * sp.inner + in)];
    });
    out.requires_grad = true;
  }
  return out;
}

// table (N, d), ids (B) -> (B, d). Unknown ids are rejected.
inline Tensor embedding(Tape& tape, const Tensor& table, const std::vector<int>& ids) {
  if (table.rank() != 2)
    throw std::invalid_argument("embedding: table must be rank 2, got " + shape_str(table.shape));
  const int N = table.dim(0), d = table.dim(1);
  for (int id : ids)
    if (id < 0 || id >= N)
      throw std::invalid_argument("embedding: series id " + std::to_string(id) +
                                  " outside table of " + std::to_string(N) + " rows");
  Tensor out({static_cast<int>(ids.size()), d});
  for (std::size_t b = 0; b < ids.size(); ++b)
    std::memcpy(out.ptr() + b * static_cast<std::size_t>(d),
                table.ptr() + static_cast<std::size_t>(ids[b]) * d, static_cast<std::size_t>(d) * sizeof(double));
  if (detail::tracked(table)) {
    const int tn = table.node;
    auto ids_copy = std::make_shared<std::vector<int>>(ids);
    out.node = tape.add_node(out.numel(), {tn}, [tn, ids_copy, d](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& gt = t.grad_buf(tn);
      for (std::size_t b = 0; b < ids_copy->size(); ++b)
        for (int j = 0; j < d; ++j)
          gt[static_cast<std::size_t>((*ids_copy)[b]) * d + j] += g[b * static_cast<std::size_t>(d) + j];
    });
    out.requires_grad = true;
  }
  return out;
}

// Row gather along axis 0; backward scatter-adds.
inline Tensor gather_rows(Tape& tape, const Tensor& x, const std::vector<int>& rows) {
  if (x.rank() < 1) throw std::invalid_argument("gather_rows: rank-0 input");
  const int n = x.dim(0);
  const long long inner = x.numel() / n;
  for (int r : rows)
    if (r < 0 || r >= n)
      throw std::invalid_argument("gather_rows: row " + std::to_string(r) + " outside extent " +
                                  std::to_string(n));
  Shape os = x.shape;
  os[0] = static_cast<int>(rows.size());
  Tensor out(os);
  for (std::size_t i = 0; i < rows.size(); ++i)
    std::memcpy(out.ptr() + static_cast<long long>(i) * inner,
                x.ptr() + static_cast<long long>(rows[i]) * inner,
                static_cast<std::size_t>(inner) * sizeof(double));
  if (detail::tracked(x)) {
    const int xn = x.node;
    auto rows_copy = std::make_shared<std::vector<int>>(rows);
    out.node = tape.add_node(out.numel(), {xn}, [xn, rows_copy, inner](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(xn);
      for (std::size_t i = 0; i < rows_copy->size(); ++i)
        for (long long j = 0; j < inner; ++j)
          gx[static_cast<std::size_t>((*rows_copy)[i] * inner + j)] +=
              g[static_cast<std::size_t>(static_cast<long long>(i) * inner + j)];
    });
    out.requires_grad = true;
  }
  return out;
}

// Train-mode dropout; mask drawn from the caller's seed stream so a repeated
// forward with the same stream state reproduces the same mask.
inline Tensor dropout(Tape& tape, const Tensor& x, double rate, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout: rate must be in [0,1)");
  if (rate == 0.0) return x;
  auto mask = std::make_shared<std::vector<double>>(x.data->size());
  const double keep = 1.0 - rate;
  for (auto& m : *mask) m = rng.uniform(0.0, 1.0) < keep ? 1.0 / keep : 0.0;
  Tensor out(x.shape);
  for (std::size_t i = 0; i < x.data->size(); ++i) (*out.data)[i] = (*x.data)[i] * (*mask)[i];
  if (detail::tracked(x)) {
    const int xn = x.node;
    out.node = tape.add_node(out.numel(), {xn}, [xn, mask](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(xn);
      for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * (*mask)[i];
    });
    out.requires_grad = true;
  }
  return out;
}

// Mean pooling along the time axis of (B, L, C) with partial final group.
inline Tensor mean_pool1d(Tape& tape, const Tensor& x, int factor) {
  if (x.rank() != 3) throw std::invalid_argument("mean_pool1d: expected (B,L,C), got " + shape_str(x.shape));
  if (factor < 1) throw std::invalid_argument("mean_pool1d: factor must be >= 1");
  const int B = x.dim(0), L = x.dim(1), C = x.dim(2);
  const int out_len = (L + factor - 1) / factor;
  Tensor out({B, out_len, C});
  for (int b = 0; b < B; ++b)
    for (int j = 0; j < out_len; ++j) {
      const int lo = j * factor, hi = std::min(L, lo + factor);
      for (int t = lo; t < hi; ++t)
        for (int c = 0; c < C; ++c) out.at(b, j, c) += x.at(b, t, c);
      for (int c = 0; c < C; ++c) out.at(b, j, c) /= (hi - lo);
    }
  if (detail::tracked(x)) {
    const int xn = x.node;
    out.node = tape.add_node(out.numel(), {xn}, [xn, B, L, C, factor, out_len](Tape& t, int self) {
      const auto& g = t.grad_buf(self);
      auto& gx = t.grad_buf(xn);
      for (int b = 0; b < B; ++b)
        for (int j = 0; j < out_len; ++j) {
          const int lo = j * factor, hi = std::min(L, lo + factor);
          const double inv = 1.0 / (hi - lo);
          for (int tt = lo; tt < hi; ++tt)
            for (int c = 0; c < C; ++c)
              gx[(static_cast<std::size_t>(b) * L + tt) * C + c] +=
                  g[(static_cast<std::size_t>(b) * out_len + j) * C + c] * inv;
        }
    });
    out.requires_grad = true;
  }
  return out;
}

// ---------------------------------------------------------------------------
// Kind-keyed dispatcher over the ops above.

enum class OpKind {
  MatMul,
  Conv1D,
  Add,
  Mul,
  Affine,
  ReLU,
  GELU,
  Sigmoid,
  Tanh,
  Softmax,
  LayerNorm,
  Mean,
  Sum,
  Concat,
  Slice,
  Embedding,
  Dropout,
};

struct OpAttrs {
  int axis = 0;
  int stride = 1;
  int dilation = 1;
  bool causal = false;
  int start = 0;
  int length = 0;
  double rate = 0.0;
  std::vector<int> ids;
  Rng* rng = nullptr;
};

inline Tensor forward_op(Tape& tape, OpKind kind, const std::vector<Tensor>& inputs,
                         const OpAttrs& attrs = {}) {
  auto need = [&](std::size_t n, const char* name) {
    if (inputs.size() != n)
      throw std::invalid_argument(std::string(name) + ": expected " + std::to_string(n) +
                                  " inputs, got " + std::to_string(inputs.size()));
  };
  switch (kind) {
    case OpKind::MatMul: need(2, "matmul"); return matmul(tape, inputs[0], inputs[1]);
    case OpKind::Conv1D: need(2, "conv1d");
      return conv1d(tape, inputs[0], inputs[1], attrs.stride, attrs.dilation, attrs.causal);
    case OpKind::Add: need(2, "add"); return add(tape, inputs[0], inputs[1]);
    case OpKind::Mul: need(2, "mul"); return mul(tape, inputs[0], inputs[1]);
    case OpKind::Affine: need(3, "affine"); return affine(tape, inputs[0], inputs[1], inputs[2]);
    case OpKind::ReLU: need(1, "relu"); return relu(tape, inputs[0]);
    case OpKind::GELU: need(1, "gelu"); return gelu(tape, inputs[0]);
    case OpKind::Sigmoid: need(1, "sigmoid"); return sigmoid(tape, inputs[0]);
    case OpKind::Tanh: need(1, "tanh"); return tanh_op(tape, inputs[0]);
    case OpKind::Softmax: need(1, "softmax"); return softmax(tape, inputs[0], attrs.axis);
    case OpKind::LayerNorm: need(3, "layer_norm");
      return layer_norm(tape, inputs[0], inputs[1], inputs[2]);
    case OpKind::Mean: need(1, "mean"); return mean_axis(tape, inputs[0], attrs.axis);
    case OpKind::Sum: need(1, "sum"); return sum_axis(tape, inputs[0], attrs.axis);
    case OpKind::Concat: return concat(tape, inputs, attrs.axis);
    case OpKind::Slice: need(1, "slice");
      return slice(tape, inputs[0], attrs.axis, attrs.start, attrs.length);
    case OpKind::Embedding: need(1, "embedding"); return embedding(tape, inputs[0], attrs.ids);
    case OpKind::Dropout: need(1, "dropout");
      if (!attrs.rng) throw std::invalid_argument("dropout: rng attribute required");
      return dropout(tape, inputs[0], attrs.rate, *attrs.rng);
  }
  throw std::invalid_argument("forward_op: unknown kind");
}

}  // namespace tsbench
