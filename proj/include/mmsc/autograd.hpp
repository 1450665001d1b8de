#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <deque>
#include <functional>
#include <limits>
#include <map>
#include <span>
#include <unordered_map>
#include <string>
#include <utility>
#include <vector>

#include "mmsc/errors.hpp"
#include "mmsc/tensor.hpp"

namespace mmsc {

class Tape;

// Handle to a value recorded on a tape.
class Var {
 public:
  Var() = default;
  Var(Tape* tape, std::uint32_t id) : tape_(tape), id_(id) {}

  Tape* tape() const { return tape_; }
  std::uint32_t id() const { return id_; }
  bool defined() const { return tape_ != nullptr; }
  const Tensor& value() const;

 private:
  Tape* tape_ = nullptr;
  std::uint32_t id_ = std::numeric_limits<std::uint32_t>::max();
};

using GradMap = std::map<std::string, Tensor>;

enum class ActivationKind { LeakyRelu, Elu, Tanh, Sigmoid };

inline constexpr double kLeakyReluSlope = 0.01;  // cited default
inline constexpr double kEluAlpha = 1.0;         // cited default

// Reverse-mode gradient record. One forward pass per tape; the adjoint pass
// replays recorded operations in exact reverse order. Confined to one worker.
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  void clear() {
    nodes_.clear();
    param_leaves_.clear();
    param_ids_.clear();
    bound_store_ = nullptr;
    min_kink_gap_ = std::numeric_limits<double>::infinity();
  }

  std::size_t node_count() const { return nodes_.size(); }

  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

  // Parameter leaves are cached by name, so one tape serves one store.
  void bind_store(const void* store) {
    if (bound_store_ == nullptr) bound_store_ = store;
    if (bound_store_ != store) {
      throw UsageError("tape already bound to a different parameter store");
    }
  }

  // Smallest |pre-activation| seen at any kinked nonlinearity (leaky_relu,
  // relu) since the last clear; lets gradient-check harnesses resample
  // inputs that land too close to a non-differentiable point.
  double min_kink_gap() const { return min_kink_gap_; }

  Var constant(Tensor v) { return push(std::move(v), false, {}, nullptr); }

  // Repeated lookups of the same name return the same leaf, so gradient
  // contributions from every use accumulate in one place.
  Var leaf_param(const std::string& name, Tensor value) {
    auto it = param_ids_.find(name);
    if (it != param_ids_.end()) return Var(this, it->second);
    Var v = push(std::move(value), grad_enabled_, {}, nullptr);
    param_ids_.emplace(name, v.id());
    if (grad_enabled_) param_leaves_.emplace_back(name, v.id());
    return v;
  }

  const Tensor& value_of(std::uint32_t id) const { return nodes_[id].value; }

  // Accumulates gradients of `loss` for every parameter name registered on
  // this tape; `all_names` callers can extend the result with zeros.
  GradMap backward(const Var& loss) {
    if (loss.tape() != this) throw UsageError("backward: loss was not produced on this tape");
    if (!loss.value().is_scalar()) {
      throw UsageError("backward: loss must be scalar, shape " + shape_str(loss.value().shape()));
    }
    if (!grad_enabled_) throw UsageError("backward: tape recorded with gradients disabled");
    grads_.assign(nodes_.size(), Tensor());
    grads_[loss.id()] = Tensor::scalar(1.0);
    for (std::uint32_t i = loss.id() + 1; i-- > 0;) {
      Node& n = nodes_[i];
      if (!n.requires_grad || !n.backward) continue;
      if (grads_[i].size() == 0) continue;  // not on the path to the loss
      n.backward(*this, i);
    }
    GradMap out;
    for (const auto& [name, id] : param_leaves_) {
      if (grads_[id].size() != 0) {
        out[name] = grads_[id];
      } else {
        out[name] = Tensor::zeros(nodes_[id].value.shape());
      }
    }
    grads_.clear();
    return out;
  }

  // ---- op construction internals -------------------------------------

  using BackFn = std::function<void(Tape&, std::uint32_t)>;

  Var push(Tensor value, bool requires_grad, std::vector<std::uint32_t> parents, BackFn back) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad && grad_enabled_;
    n.parents = std::move(parents);
    if (n.requires_grad) n.backward = std::move(back);
    nodes_.push_back(std::move(n));
    return Var(this, static_cast<std::uint32_t>(nodes_.size() - 1));
  }

  void accumulate(std::uint32_t id, const Tensor& g) {
    if (!nodes_[id].requires_grad) return;
    Tensor& slot = grads_[id];
    if (slot.size() == 0) {
      slot = g;
    } else {
      auto& d = slot.data_mut();
      const auto& s = g.data();
      for (std::size_t i = 0; i < d.size(); ++i) d[i] += s[i];
    }
  }

  const Tensor& grad_at(std::uint32_t id) const { return grads_[id]; }
  bool requires_grad_at(std::uint32_t id) const { return nodes_[id].requires_grad; }
  void note_kink_gap(double gap) { min_kink_gap_ = std::min(min_kink_gap_, gap); }

 private:
  struct Node {
    Tensor value;
    bool requires_grad = false;
    std::vector<std::uint32_t> parents;
    BackFn backward;
  };

  std::deque<Node> nodes_;  // deque: Var::value() references stay valid as ops record
  std::vector<Tensor> grads_;
  std::vector<std::pair<std::string, std::uint32_t>> param_leaves_;
  std::unordered_map<std::string, std::uint32_t> param_ids_;
  bool grad_enabled_ = true;
  const void* bound_store_ = nullptr;
  double min_kink_gap_ = std::numeric_limits<double>::infinity();
};

inline const Tensor& Var::value() const { return tape_->value_of(id_); }

namespace detail {

inline Tape* tape_of(const Var& a) {
  if (!a.defined()) throw UsageError("operation on an undefined Var");
  return a.tape();
}

inline Tape* tape_of(const Var& a, const Var& b) {
  Tape* t = tape_of(a);
  if (t != tape_of(b)) throw UsageError("operands live on different tapes");
  return t;
}

inline bool needs_grad(const Var& v) { return v.tape()->requires_grad_at(v.id()); }

}  // namespace detail

// ---- primitive operations ---------------------------------------------

inline Var matmul(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 2 || B.rank() != 2 || A.shape()[1] != B.shape()[0]) {
    throw DimensionError("matmul: incompatible shapes " + shape_str(A.shape()) + " and " +
                         shape_str(B.shape()));
  }
  const std::size_t m = A.shape()[0], k = A.shape()[1], n = B.shape()[1];
  Tensor C = Tensor::zeros({m, n});
  for (std::size_t i = 0; i < m; ++i) {
    for (std::size_t p = 0; p < k; ++p) {
      const double av = A(i, p);
      if (av == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) C(i, j) += av * B(p, j);
    }
  }
  C.check_finite();
  const bool ga = detail::needs_grad(a), gb = detail::needs_grad(b);
  const std::uint32_t ia = a.id(), ib = b.id();
  return t->push(std::move(C), ga || gb, {ia, ib}, [ia, ib, ga, gb, m, k, n](Tape& tp, std::uint32_t self) {
    const Tensor& dC = tp.grad_at(self);
    if (ga) {
      const Tensor& B2 = tp.value_of(ib);
      Tensor dA = Tensor::zeros({m, k});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t j = 0; j < n; ++j) {
          const double g = dC(i, j);
          if (g == 0.0) continue;
          for (std::size_t p = 0; p < k; ++p) dA(i, p) += g * B2(p, j);
        }
      tp.accumulate(ia, dA);
    }
    if (gb) {
      const Tensor& A2 = tp.value_of(ia);
      Tensor dB = Tensor::zeros({k, n});
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double av = A2(i, p);
          if (av == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) dB(p, j) += av * dC(i, j);
        }
      tp.accumulate(ib, dB);
    }
  });
}

// y = x . M for a length-k vector and k-by-n matrix.
inline Var vec_mat(const Var& x, const Var& m) {
  Tape* t = detail::tape_of(x, m);
  const Tensor& X = x.value();
  const Tensor& M = m.value();
  if (X.rank() != 1 || M.rank() != 2 || X.size() != M.shape()[0]) {
    throw DimensionError("vec_mat: incompatible shapes " + shape_str(X.shape()) + " and " +
                         shape_str(M.shape()));
  }
  const std::size_t k = M.shape()[0], n = M.shape()[1];
  Tensor Y = Tensor::zeros({n});
  for (std::size_t p = 0; p < k; ++p) {
    const double xv = X(p);
    if (xv == 0.0) continue;
    for (std::size_t j = 0; j < n; ++j) Y(j) += xv * M(p, j);
  }
  Y.check_finite();
  const bool gx = detail::needs_grad(x), gm = detail::needs_grad(m);
  const std::uint32_t ix = x.id(), im = m.id();
  return t->push(std::move(Y), gx || gm, {ix, im}, [ix, im, gx, gm, k, n](Tape& tp, std::uint32_t self) {
    const Tensor& dY = tp.grad_at(self);
    if (gx) {
      const Tensor& M2 = tp.value_of(im);
      Tensor dX = Tensor::zeros({k});
      for (std::size_t p = 0; p < k; ++p) {
        double acc = 0.0;
        for (std::size_t j = 0; j < n; ++j) acc += M2(p, j) * dY(j);
        dX(p) = acc;
      }
      tp.accumulate(ix, dX);
    }
    if (gm) {
      const Tensor& X2 = tp.value_of(ix);
      Tensor dM = Tensor::zeros({k, n});
      for (std::size_t p = 0; p < k; ++p) {
        const double xv = X2(p);
        if (xv == 0.0) continue;
        for (std::size_t j = 0; j < n; ++j) dM(p, j) = xv * dY(j);
      }
      tp.accumulate(im, dM);
    }
  });
}

// y = M . v for an m-by-k matrix and length-k vector.
inline Var mat_vec(const Var& m, const Var& v) {
  Tape* t = detail::tape_of(m, v);
  const Tensor& M = m.value();
  const Tensor& V = v.value();
  if (M.rank() != 2 || V.rank() != 1 || M.shape()[1] != V.size()) {
    throw DimensionError("mat_vec: incompatible shapes " + shape_str(M.shape()) + " and " +
                         shape_str(V.shape()));
  }
  const std::size_t rows = M.shape()[0], k = M.shape()[1];
  Tensor Y = Tensor::zeros({rows});
  for (std::size_t i = 0; i < rows; ++i) {
    double acc = 0.0;
    for (std::size_t p = 0; p < k; ++p) acc += M(i, p) * V(p);
    Y(i) = acc;
  }
  Y.check_finite();
  const bool gm = detail::needs_grad(m), gv = detail::needs_grad(v);
  const std::uint32_t im = m.id(), iv = v.id();
  return t->push(std::move(Y), gm || gv, {im, iv}, [im, iv, gm, gv, rows, k](Tape& tp, std::uint32_t self) {
    const Tensor& dY = tp.grad_at(self);
    if (gm) {
      const Tensor& V2 = tp.value_of(iv);
      Tensor dM = Tensor::zeros({rows, k});
      for (std::size_t i = 0; i < rows; ++i) {
        const double g = dY(i);
        if (g == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) dM(i, p) = g * V2(p);
      }
      tp.accumulate(im, dM);
    }
    if (gv) {
      const Tensor& M2 = tp.value_of(im);
      Tensor dV = Tensor::zeros({k});
      for (std::size_t i = 0; i < rows; ++i) {
        const double g = dY(i);
        if (g == 0.0) continue;
        for (std::size_t p = 0; p < k; ++p) dV(p) += g * M2(i, p);
      }
      tp.accumulate(iv, dV);
    }
  });
}

inline Var transpose(const Var& a) {
  Tape* t = detail::tape_of(a);
  const Tensor& A = a.value();
  if (A.rank() != 2) throw DimensionError("transpose: expected rank-2, got " + shape_str(A.shape()));
  const std::size_t m = A.shape()[0], n = A.shape()[1];
  Tensor Y = Tensor::zeros({n, m});
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) Y(j, i) = A(i, j);
  const std::uint32_t ia = a.id();
  return t->push(std::move(Y), detail::needs_grad(a), {ia}, [ia, m, n](Tape& tp, std::uint32_t self) {
    const Tensor& dY = tp.grad_at(self);
    Tensor dA = Tensor::zeros({m, n});
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) dA(i, j) = dY(j, i);
    tp.accumulate(ia, dA);
  });
}

namespace detail {

template <typename Fwd, typename Bwd>
Var binary_elementwise(const Var& a, const Var& b, const char* name, Fwd fwd, Bwd bwd) {
  Tape* t = tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  require_same_shape(A, B, name);
  Tensor Y = A;
  auto& yd = Y.data_mut();
  const auto& bd = B.data();
  for (std::size_t i = 0; i < yd.size(); ++i) yd[i] = fwd(yd[i], bd[i]);
  Y.check_finite();
  const bool ga = needs_grad(a), gb = needs_grad(b);
  const std::uint32_t ia = a.id(), ib = b.id();
  return t->push(std::move(Y), ga || gb, {ia, ib}, [ia, ib, ga, gb, bwd](Tape& tp, std::uint32_t self) {
    const Tensor& dY = tp.grad_at(self);
    const Tensor& A2 = tp.value_of(ia);
    const Tensor& B2 = tp.value_of(ib);
    if (ga) {
      Tensor dA = Tensor::zeros(A2.shape());
      for (std::size_t i = 0; i < dA.size(); ++i) dA(i) = bwd(dY(i), A2(i), B2(i), true);
      tp.accumulate(ia, dA);
    }
    if (gb) {
      Tensor dB = Tensor::zeros(B2.shape());
      for (std::size_t i = 0; i < dB.size(); ++i) dB(i) = bwd(dY(i), A2(i), B2(i), false);
      tp.accumulate(ib, dB);
    }
  });
}

}  // namespace detail

inline Var add(const Var& a, const Var& b) {
  return detail::binary_elementwise(
      a, b, "add", [](double x, double y) { return x + y; },
      [](double g, double, double, bool) { return g; });
}

inline Var sub(const Var& a, const Var& b) {
  return detail::binary_elementwise(
      a, b, "sub", [](double x, double y) { return x - y; },
      [](double g, double, double, bool first) { return first ? g : -g; });
}

inline Var mul(const Var& a, const Var& b) {
  return detail::binary_elementwise(
      a, b, "mul", [](double x, double y) { return x * y; },
      [](double g, double x, double y, bool first) { return first ? g * y : g * x; });
}

inline Var scale(const Var& a, double c) {
  Tape* t = detail::tape_of(a);
  Tensor Y = a.value();
  for (auto& v : Y.data_mut()) v *= c;
  Y.check_finite();
  const std::uint32_t ia = a.id();
  return t->push(std::move(Y), detail::needs_grad(a), {ia}, [ia, c](Tape& tp, std::uint32_t self) {
    Tensor g = tp.grad_at(self);
    for (auto& v : g.data_mut()) v *= c;
    tp.accumulate(ia, g);
  });
}

inline Var add_const(const Var& a, double c) {
  Tape* t = detail::tape_of(a);
  Tensor Y = a.value();
  for (auto& v : Y.data_mut()) v += c;
  Y.check_finite();
  const std::uint32_t ia = a.id();
  return t->push(std::move(Y), detail::needs_grad(a), {ia},
                 [ia](Tape& tp, std::uint32_t self) { tp.accumulate(ia, tp.grad_at(self)); });
}

namespace detail {

template <typename Fwd, typename Deriv>
Var unary_elementwise(const Var& a, Fwd fwd, Deriv deriv) {
  Tape* t = tape_of(a);
  Tensor Y = a.value();
  for (auto& v : Y.data_mut()) v = fwd(v);
  Y.check_finite();
  const std::uint32_t ia = a.id();
  return t->push(std::move(Y), needs_grad(a), {ia}, [ia, deriv](Tape& tp, std::uint32_t self) {
    const Tensor& dY = tp.grad_at(self);
    const Tensor& X = tp.value_of(ia);
    const Tensor& Y2 = tp.value_of(self);
    Tensor dA = Tensor::zeros(X.shape());
    for (std::size_t i = 0; i < dA.size(); ++i) dA(i) = dY(i) * deriv(X(i), Y2(i));
    tp.accumulate(ia, dA);
  });
}

inline void note_kinks(Tape* t, const Tensor& x) {
  double gap = std::numeric_limits<double>::infinity();
  for (double v : x.data()) gap = std::min(gap, std::abs(v));
  t->note_kink_gap(gap);
}

}  // namespace detail

inline Var leaky_relu(const Var& a) {
  detail::note_kinks(a.tape(), a.value());
  return detail::unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : kLeakyReluSlope * x; },
      [](double x, double) { return x > 0.0 ? 1.0 : kLeakyReluSlope; });
}

inline Var relu(const Var& a) {
  detail::note_kinks(a.tape(), a.value());
  return detail::unary_elementwise(a, [](double x) { return x > 0.0 ? x : 0.0; },
                                   [](double x, double) { return x > 0.0 ? 1.0 : 0.0; });
}

inline Var elu(const Var& a) {
  return detail::unary_elementwise(
      a, [](double x) { return x > 0.0 ? x : kEluAlpha * std::expm1(x); },
      [](double x, double y) { return x > 0.0 ? 1.0 : y + kEluAlpha; });
}

inline Var tanh_op(const Var& a) {
  return detail::unary_elementwise(a, [](double x) { return std::tanh(x); },
                                   [](double, double y) { return 1.0 - y * y; });
}

inline Var sigmoid(const Var& a) {
  return detail::unary_elementwise(
      a,
      [](double x) {
        if (x >= 0.0) return 1.0 / (1.0 + std::exp(-x));
        const double e = std::exp(x);
        return e / (1.0 + e);
      },
      [](double, double y) { return y * (1.0 - y); });
}

inline Var apply_activation(ActivationKind kind, const Var& a) {
  switch (kind) {
    case ActivationKind::LeakyRelu: return leaky_relu(a);
    case ActivationKind::Elu: return elu(a);
    case ActivationKind::Tanh: return tanh_op(a);
    case ActivationKind::Sigmoid: return sigmoid(a);
  }
  throw UsageError("apply_activation: unknown kind");
}

// Row-wise softmax, numerically stabilized by max-subtraction. Rank-1 input
// is treated as a single row.
inline Var softmax(const Var& a) {
  Tape* t = detail::tape_of(a);
  const Tensor& X = a.value();
  const std::size_t rows = X.rank() == 2 ? X.shape()[0] : 1;
  const std::size_t cols = X.rank() == 2 ? X.shape()[1] : X.size();
  Tensor Y = X;
  auto& yd = Y.data_mut();
  for (std::size_t r = 0; r < rows; ++r) {
    double* row = yd.data() + r * cols;
    double mx = row[0];
    for (std::size_t j = 1; j < cols; ++j) mx = std::max(mx, row[j]);
    double sum = 0.0;
    for (std::size_t j = 0; j < cols; ++j) {
      row[j] = std::exp(row[j] - mx);
      sum += row[j];
    }
    for (std::size_t j = 0; j < cols; ++j) row[j] /= sum;
  }
  const std::uint32_t ia = a.id();
  return t->push(std::move(Y), detail::needs_grad(a), {ia},
                 [ia, rows, cols](Tape& tp, std::uint32_t self) {
                   const Tensor& dY = tp.grad_at(self);
                   const Tensor& Y2 = tp.value_of(self);
                   Tensor dA = Tensor::zeros(tp.value_of(ia).shape());
                   for (std::size_t r = 0; r < rows; ++r) {
                     double dotv = 0.0;
                     for (std::size_t j = 0; j < cols; ++j)
                       dotv += dY(r * cols + j) * Y2(r * cols + j);
                     for (std::size_t j = 0; j < cols; ++j) {
                       const std::size_t i = r * cols + j;
                       dA(i) = Y2(i) * (dY(i) - dotv);
                     }
                   }
                   tp.accumulate(ia, dA);
                 });
}

inline Var softmax_rows(const Var& a) { return softmax(a); }

// log(sum(exp(x))) over a vector, max-stabilized; gradient is softmax(x).
inline Var logsumexp(const Var& a) {
  Tape* t = detail::tape_of(a);
  const Tensor& X = a.value();
  if (X.rank() != 1) throw DimensionError("logsumexp: expected rank-1, got " + shape_str(X.shape()));
  double mx = X(0);
  for (std::size_t i = 1; i < X.size(); ++i) mx = std::max(mx, X(i));
  double sum = 0.0;
  for (std::size_t i = 0; i < X.size(); ++i) sum += std::exp(X(i) - mx);
  Tensor Y = Tensor::scalar(mx + std::log(sum));
  const std::uint32_t ia = a.id();
  return t->push(std::move(Y), detail::needs_grad(a), {ia}, [ia](Tape& tp, std::uint32_t self) {
    const double g = tp.grad_at(self).item();
    const Tensor& X2 = tp.value_of(ia);
    const double lse = tp.value_of(self).item();
    Tensor dA = Tensor::zeros(X2.shape());
    for (std::size_t i = 0; i < dA.size(); ++i) dA(i) = g * std::exp(X2(i) - lse);
    tp.accumulate(ia, dA);
  });
}

inline Var sum(const Var& a) {
  Tape* t = detail::tape_of(a);
  const Tensor& X = a.value();
  double s = 0.0;
  for (double v : X.data()) s += v;
  const std::uint32_t ia = a.id();
  return t->push(Tensor::scalar(s), detail::needs_grad(a), {ia}, [ia](Tape& tp, std::uint32_t self) {
    const double g = tp.grad_at(self).item();
    tp.accumulate(ia, Tensor::full(tp.value_of(ia).shape(), g));
  });
}

inline Var mean_rows(const Var& a) {
  Tape* t = detail::tape_of(a);
  const Tensor& X = a.value();
  if (X.rank() != 2) throw DimensionError("mean_rows: expected rank-2, got " + shape_str(X.shape()));
  const std::size_t rows = X.shape()[0], cols = X.shape()[1];
  Tensor Y = Tensor::zeros({cols});
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) Y(j) += X(r, j);
  for (std::size_t j = 0; j < cols; ++j) Y(j) /= static_cast<double>(rows);
  const std::uint32_t ia = a.id();
  return t->push(std::move(Y), detail::needs_grad(a), {ia}, [ia, rows, cols](Tape& tp, std::uint32_t self) {
    const Tensor& dY = tp.grad_at(self);
    Tensor dA = Tensor::zeros({rows, cols});
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < cols; ++j) dA(r, j) = dY(j) / static_cast<double>(rows);
    tp.accumulate(ia, dA);
  });
}

inline Var dot(const Var& u, const Var& v) {
  Tape* t = detail::tape_of(u, v);
  const Tensor& U = u.value();
  const Tensor& V = v.value();
  require_same_shape(U, V, "dot");
  double s = 0.0;
  for (std::size_t i = 0; i < U.size(); ++i) s += U(i) * V(i);
  const bool gu = detail::needs_grad(u), gv = detail::needs_grad(v);
  const std::uint32_t iu = u.id(), iv = v.id();
  return t->push(Tensor::scalar(s), gu || gv, {iu, iv}, [iu, iv, gu, gv](Tape& tp, std::uint32_t self) {
    const double g = tp.grad_at(self).item();
    const Tensor& U2 = tp.value_of(iu);
    const Tensor& V2 = tp.value_of(iv);
    if (gu) {
      Tensor dU = Tensor::zeros(U2.shape());
      for (std::size_t i = 0; i < dU.size(); ++i) dU(i) = g * V2(i);
      tp.accumulate(iu, dU);
    }
    if (gv) {
      Tensor dV = Tensor::zeros(V2.shape());
      for (std::size_t i = 0; i < dV.size(); ++i) dV(i) = g * U2(i);
      tp.accumulate(iv, dV);
    }
  });
}

// Cosine similarity of two equal-length vectors; rejects zero-norm input.
inline Var cosine_sim(const Var& u, const Var& v) {
  Tape* t = detail::tape_of(u, v);
  const Tensor& U = u.value();
  const Tensor& V = v.value();
  if (U.rank() != 1 || V.rank() != 1 || U.size() != V.size()) {
    throw DimensionError("cosine_sim: incompatible shapes " + shape_str(U.shape()) + " and " +
                         shape_str(V.shape()));
  }
  double uu = 0.0, vv = 0.0, uv = 0.0;
  for (std::size_t i = 0; i < U.size(); ++i) {
    uu += U(i) * U(i);
    vv += V(i) * V(i);
    uv += U(i) * V(i);
  }
  const double nu = std::sqrt(uu), nv = std::sqrt(vv);
  if (nu == 0.0 || nv == 0.0) throw DegenerateInputError("cosine_sim: zero-norm vector");
  const double c = uv / (nu * nv);
  const bool gu = detail::needs_grad(u), gv = detail::needs_grad(v);
  const std::uint32_t iu = u.id(), iv = v.id();
  return t->push(Tensor::scalar(c), gu || gv, {iu, iv},
                 [iu, iv, gu, gv, nu, nv, c](Tape& tp, std::uint32_t self) {
                   const double g = tp.grad_at(self).item();
                   const Tensor& U2 = tp.value_of(iu);
                   const Tensor& V2 = tp.value_of(iv);
                   if (gu) {
                     Tensor dU = Tensor::zeros(U2.shape());
                     for (std::size_t i = 0; i < dU.size(); ++i)
                       dU(i) = g * (V2(i) / (nu * nv) - c * U2(i) / (nu * nu));
                     tp.accumulate(iu, dU);
                   }
                   if (gv) {
                     Tensor dV = Tensor::zeros(V2.shape());
                     for (std::size_t i = 0; i < dV.size(); ++i)
                       dV(i) = g * (U2(i) / (nu * nv) - c * V2(i) / (nv * nv));
                     tp.accumulate(iv, dV);
                   }
                 });
}

inline Var concat_vec(const Var& a, const Var& b) {
  Tape* t = detail::tape_of(a, b);
  const Tensor& A = a.value();
  const Tensor& B = b.value();
  if (A.rank() != 1 || B.rank() != 1) throw DimensionError("concat_vec: expected rank-1 operands");
  std::vector<double> data;
  data.reserve(A.size() + B.size());
  data.insert(data.end(), A.data().begin(), A.data().end());
  data.insert(data.end(), B.data().begin(), B.data().end());
  const std::size_t na = A.size(), nb = B.size();
  const bool ga = detail::needs_grad(a), gb = detail::needs_grad(b);
  const std::uint32_t ia = a.id(), ib = b.id();
  return t->push(Tensor::vector(std::move(data)), ga || gb, {ia, ib},
                 [ia, ib, ga, gb, na, nb](Tape& tp, std::uint32_t self) {
                   const Tensor& dY = tp.grad_at(self);
                   if (ga) {
                     Tensor dA = Tensor::zeros({na});
                     for (std::size_t i = 0; i < na; ++i) dA(i) = dY(i);
                     tp.accumulate(ia, dA);
                   }
                   if (gb) {
                     Tensor dB = Tensor::zeros({nb});
                     for (std::size_t i = 0; i < nb; ++i) dB(i) = dY(na + i);
                     tp.accumulate(ib, dB);
                   }
                 });
}

inline Var slice_vec(const Var& a, std::size_t begin, std::size_t len) {
  Tape* t = detail::tape_of(a);
  const Tensor& A = a.value();
  if (A.rank() != 1 || begin + len > A.size()) {
    throw DimensionError("slice_vec: range [" + std::to_string(begin) + ", " +
                         std::to_string(begin + len) + ") exceeds " + shape_str(A.shape()));
  }
  std::vector<double> data(A.data().begin() + static_cast<std::ptrdiff_t>(begin),
                           A.data().begin() + static_cast<std::ptrdiff_t>(begin + len));
  const std::uint32_t ia = a.id();
  return t->push(Tensor::vector(std::move(data)), detail::needs_grad(a), {ia},
                 [ia, begin, len](Tape& tp, std::uint32_t self) {
                   const Tensor& dY = tp.grad_at(self);
                   Tensor dA = Tensor::zeros(tp.value_of(ia).shape());
                   for (std::size_t i = 0; i < len; ++i) dA(begin + i) = dY(i);
                   tp.accumulate(ia, dA);
                 });
}

inline Var stack_rows(const std::vector<Var>& rows) {
  if (rows.empty()) throw UsageError("stack_rows: empty input");
  Tape* t = detail::tape_of(rows[0]);
  const std::size_t cols = rows[0].value().size();
  std::vector<double> data;
  data.reserve(rows.size() * cols);
  bool any_grad = false;
  std::vector<std::uint32_t> parents;
  parents.reserve(rows.size());
  for (const auto& r : rows) {
    if (r.tape() != t) throw UsageError("stack_rows: operands live on different tapes");
    const Tensor& R = r.value();
    if (R.rank() != 1 || R.size() != cols) {
      throw DimensionError("stack_rows: row shape " + shape_str(R.shape()) + " does not match width " +
                           std::to_string(cols));
    }
    data.insert(data.end(), R.data().begin(), R.data().end());
    any_grad = any_grad || detail::needs_grad(r);
    parents.push_back(r.id());
  }
  Tensor Y = Tensor::matrix(rows.size(), cols, std::move(data));
  auto parent_ids = parents;
  return t->push(std::move(Y), any_grad, std::move(parents),
                 [parent_ids, cols](Tape& tp, std::uint32_t self) {
                   const Tensor& dY = tp.grad_at(self);
                   for (std::size_t r = 0; r < parent_ids.size(); ++r) {
                     if (!tp.requires_grad_at(parent_ids[r])) continue;
                     Tensor dR = Tensor::zeros({cols});
                     for (std::size_t j = 0; j < cols; ++j) dR(j) = dY(r * cols + j);
                     tp.accumulate(parent_ids[r], dR);
                   }
                 });
}

inline Var concat_scalars(const std::vector<Var>& scalars) {
  if (scalars.empty()) throw UsageError("concat_scalars: empty input");
  Tape* t = detail::tape_of(scalars[0]);
  std::vector<double> data;
  data.reserve(scalars.size());
  bool any_grad = false;
  std::vector<std::uint32_t> parents;
  for (const auto& s : scalars) {
    if (s.tape() != t) throw UsageError("concat_scalars: operands live on different tapes");
    data.push_back(s.value().item());
    any_grad = any_grad || detail::needs_grad(s);
    parents.push_back(s.id());
  }
  auto parent_ids = parents;
  return t->push(Tensor::vector(std::move(data)), any_grad, std::move(parents),
                 [parent_ids](Tape& tp, std::uint32_t self) {
                   const Tensor& dY = tp.grad_at(self);
                   for (std::size_t i = 0; i < parent_ids.size(); ++i) {
                     if (!tp.requires_grad_at(parent_ids[i])) continue;
                     tp.accumulate(parent_ids[i], Tensor::scalar(dY(i)));
                   }
                 });
}

// Concatenate equal-height matrices side by side.
inline Var concat_cols(const std::vector<Var>& blocks) {
  if (blocks.empty()) throw UsageError("concat_cols: empty input");
  Tape* t = detail::tape_of(blocks[0]);
  const std::size_t rows = blocks[0].value().shape()[0];
  std::size_t total_cols = 0;
  bool any_grad = false;
  std::vector<std::uint32_t> parents;
  std::vector<std::size_t> widths;
  for (const auto& b : blocks) {
    if (b.tape() != t) throw UsageError("concat_cols: operands live on different tapes");
    const Tensor& B = b.value();
    if (B.rank() != 2 || B.shape()[0] != rows) {
      throw DimensionError("concat_cols: block shape " + shape_str(B.shape()) +
                           " does not match height " + std::to_string(rows));
    }
    total_cols += B.shape()[1];
    widths.push_back(B.shape()[1]);
    any_grad = any_grad || detail::needs_grad(b);
    parents.push_back(b.id());
  }
  Tensor Y = Tensor::zeros({rows, total_cols});
  std::size_t col0 = 0;
  for (const auto& b : blocks) {
    const Tensor& B = b.value();
    for (std::size_t r = 0; r < rows; ++r)
      for (std::size_t j = 0; j < B.shape()[1]; ++j) Y(r, col0 + j) = B(r, j);
    col0 += B.shape()[1];
  }
  auto parent_ids = parents;
  return t->push(std::move(Y), any_grad, std::move(parents),
                 [parent_ids, widths, rows](Tape& tp, std::uint32_t self) {
                   const Tensor& dY = tp.grad_at(self);
                   std::size_t c0 = 0;
                   for (std::size_t k = 0; k < parent_ids.size(); ++k) {
                     if (tp.requires_grad_at(parent_ids[k])) {
                       Tensor dB = Tensor::zeros({rows, widths[k]});
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t j = 0; j < widths[k]; ++j) dB(r, j) = dY(r, c0 + j);
                       tp.accumulate(parent_ids[k], dB);
                     }
                     c0 += widths[k];
                   }
                 });
}

// Broadcast helpers over rows of a matrix.
inline Var mul_rowvec(const Var& m, const Var& v) {
  Tape* t = detail::tape_of(m, v);
  const Tensor& M = m.value();
  const Tensor& V = v.value();
  if (M.rank() != 2 || V.rank() != 1 || M.shape()[1] != V.size()) {
    throw DimensionError("mul_rowvec: incompatible shapes " + shape_str(M.shape()) + " and " +
                         shape_str(V.shape()));
  }
  const std::size_t rows = M.shape()[0], cols = M.shape()[1];
  Tensor Y = M;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) Y(r, j) *= V(j);
  Y.check_finite();
  const bool gm = detail::needs_grad(m), gv = detail::needs_grad(v);
  const std::uint32_t im = m.id(), iv = v.id();
  return t->push(std::move(Y), gm || gv, {im, iv}, [im, iv, gm, gv, rows, cols](Tape& tp, std::uint32_t self) {
    const Tensor& dY = tp.grad_at(self);
    const Tensor& M2 = tp.value_of(im);
    const Tensor& V2 = tp.value_of(iv);
    if (gm) {
      Tensor dM = Tensor::zeros({rows, cols});
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) dM(r, j) = dY(r, j) * V2(j);
      tp.accumulate(im, dM);
    }
    if (gv) {
      Tensor dV = Tensor::zeros({cols});
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) dV(j) += dY(r, j) * M2(r, j);
      tp.accumulate(iv, dV);
    }
  });
}

inline Var add_rowvec(const Var& m, const Var& v) {
  Tape* t = detail::tape_of(m, v);
  const Tensor& M = m.value();
  const Tensor& V = v.value();
  if (M.rank() != 2 || V.rank() != 1 || M.shape()[1] != V.size()) {
    throw DimensionError("add_rowvec: incompatible shapes " + shape_str(M.shape()) + " and " +
                         shape_str(V.shape()));
  }
  const std::size_t rows = M.shape()[0], cols = M.shape()[1];
  Tensor Y = M;
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t j = 0; j < cols; ++j) Y(r, j) += V(j);
  Y.check_finite();
  const bool gm = detail::needs_grad(m), gv = detail::needs_grad(v);
  const std::uint32_t im = m.id(), iv = v.id();
  return t->push(std::move(Y), gm || gv, {im, iv}, [im, iv, gm, gv, rows, cols](Tape& tp, std::uint32_t self) {
    const Tensor& dY = tp.grad_at(self);
    if (gm) tp.accumulate(im, dY);
    if (gv) {
      Tensor dV = Tensor::zeros({cols});
      for (std::size_t r = 0; r < rows; ++r)
        for (std::size_t j = 0; j < cols; ++j) dV(j) += dY(r, j);
      tp.accumulate(iv, dV);
    }
  });
}

// y_i = v_i + s for a vector v and scalar s.
inline Var add_scalar_bcast(const Var& v, const Var& s) {
  Tape* t = detail::tape_of(v, s);
  const Tensor& V = v.value();
  const Tensor& S = s.value();
  if (V.rank() != 1 || !S.is_scalar()) {
    throw DimensionError("add_scalar_bcast: expected vector and scalar, got " + shape_str(V.shape()) +
                         " and " + shape_str(S.shape()));
  }
  Tensor Y = V;
  const double sv = S.item();
  for (auto& x : Y.data_mut()) x += sv;
  Y.check_finite();
  const bool gv = detail::needs_grad(v), gs = detail::needs_grad(s);
  const std::uint32_t iv = v.id(), is = s.id();
  return t->push(std::move(Y), gv || gs, {iv, is}, [iv, is, gv, gs](Tape& tp, std::uint32_t self) {
    const Tensor& dY = tp.grad_at(self);
    if (gv) tp.accumulate(iv, dY);
    if (gs) {
      double acc = 0.0;
      for (double g : dY.data()) acc += g;
      tp.accumulate(is, Tensor::scalar(acc));
    }
  });
}

}  // namespace mmsc
