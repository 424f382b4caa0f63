#pragma once

// Define-by-run reverse-mode differentiation over rank-2 tensors. A Tape is
// built fresh for every evaluation; nodes are appended in creation order, so
// a node's inputs always have smaller ids and a reverse sweep over the node
// list is a valid topological order.

#include <cmath>
#include <cstddef>
#include <cstdint>
#include <initializer_list>
#include <limits>
#include <map>
#include <span>
#include <string>
#include <utility>
#include <vector>

#include "bissm/error.hpp"
#include "bissm/tensor.hpp"

namespace bissm::ad {

using NodeId = std::size_t;
using ParamId = std::size_t;

inline constexpr std::size_t kNone = std::numeric_limits<std::size_t>::max();

enum class Op : std::uint8_t {
  kConstant,
  kParameter,
  kMatMul,
  kAdd,
  kAddRow,  // matrix + row vector, the only broadcast supported
  kSub,
  kMul,
  kScale,
  kConcat,  // along columns
  kSlice,   // column range
  kSigmoid,
  kTanh,
  kSumSquares,
  kMean,
};

inline const char* op_name(Op op) {
  switch (op) {
    case Op::kConstant: return "constant";
    case Op::kParameter: return "parameter";
    case Op::kMatMul: return "matmul";
    case Op::kAdd: return "add";
    case Op::kAddRow: return "add_row";
    case Op::kSub: return "sub";
    case Op::kMul: return "mul";
    case Op::kScale: return "scale";
    case Op::kConcat: return "concat";
    case Op::kSlice: return "slice";
    case Op::kSigmoid: return "sigmoid";
    case Op::kTanh: return "tanh";
    case Op::kSumSquares: return "sum_squares";
    case Op::kMean: return "mean";
  }
  return "?";
}

struct TapeNode {
  Op op = Op::kConstant;
  std::vector<NodeId> inputs;
  Tensor value;
  double factor = 0.0;        // kScale
  std::size_t begin = 0;      // kSlice
  std::size_t end = 0;        // kSlice
  ParamId param = kNone;      // kParameter
};

/// Named learnable tensors addressed by a stable ParamId (registration order).
class ParamStore {
 public:
  ParamId add(std::string name, Tensor value) {
    names_.push_back(std::move(name));
    values_.push_back(std::move(value));
    return values_.size() - 1;
  }

  std::size_t size() const { return values_.size(); }
  const Tensor& value(ParamId id) const { return values_.at(id); }
  Tensor& value(ParamId id) { return values_.at(id); }
  const std::string& name(ParamId id) const { return names_.at(id); }
  const std::vector<Tensor>& values() const { return values_; }

  ParamId find(const std::string& name) const {
    for (std::size_t i = 0; i < names_.size(); ++i) {
      if (names_[i] == name) return i;
    }
    return kNone;
  }

  std::size_t scalar_count() const {
    std::size_t n = 0;
    for (const auto& v : values_) n += v.size();
    return n;
  }

  friend bool operator==(const ParamStore&, const ParamStore&) = default;

 private:
  std::vector<std::string> names_;
  std::vector<Tensor> values_;
};

/// Gradient per parameter id; shapes match the parameters.
using GradientMap = std::map<ParamId, Tensor>;

class Tape;

/// Handle to a node on a tape. Cheap to copy; valid while the tape lives.
class Var {
 public:
  Var() = default;
  const Tensor& value() const;
  NodeId id() const { return id_; }
  Tape* tape() const { return tape_; }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }

 private:
  friend class Tape;
  Var(Tape* tape, NodeId id) : tape_(tape), id_(id) {}
  Tape* tape_ = nullptr;
  NodeId id_ = kNone;
};

class Tape {
 public:
  explicit Tape(const ParamStore* params = nullptr) : params_(params) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var constant(Tensor value) {
    TapeNode n;
    n.op = Op::kConstant;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// Leaf bound to a stored parameter. Repeated calls with the same id on one
  /// tape return the same node so gradients are accumulated once.
  Var param(ParamId id) {
    if (params_ == nullptr) throw Error("Tape::param: tape has no parameter store");
    if (id >= params_->size()) {
      throw Error("Tape::param: unknown parameter id " + std::to_string(id));
    }
    if (param_nodes_.size() < params_->size()) param_nodes_.resize(params_->size(), kNone);
    if (param_nodes_[id] != kNone) return Var(this, param_nodes_[id]);
    TapeNode n;
    n.op = Op::kParameter;
    n.param = id;
    n.value = params_->value(id);
    Var v = push(std::move(n));
    param_nodes_[id] = v.id();
    return v;
  }

  Var record(TapeNode node) { return push(std::move(node)); }

  const TapeNode& node(NodeId id) const { return nodes_.at(id); }
  std::size_t size() const { return nodes_.size(); }
  const ParamStore* params() const { return params_; }

  /// Reverse sweep from a scalar loss. Returns the gradient of every parameter
  /// leaf recorded on this tape. Does not modify the tape.
  GradientMap backward(Var loss) const;

 private:
  Var push(TapeNode n) {
    nodes_.push_back(std::move(n));
    return Var(this, nodes_.size() - 1);
  }

  const ParamStore* params_;
  std::vector<TapeNode> nodes_;
  std::vector<NodeId> param_nodes_;
};

inline const Tensor& Var::value() const {
  if (tape_ == nullptr) throw Error("Var: not bound to a tape");
  return tape_->node(id_).value;
}

namespace detail {

inline Tape& common_tape(const char* op, Var a, Var b) {
  if (a.tape() == nullptr || a.tape() != b.tape()) {
    throw Error(std::string(op) + ": operands live on different tapes");
  }
  return *a.tape();
}

[[noreturn]] inline void shape_mismatch(const char* op, const Tensor& a, const Tensor& b) {
  throw ShapeError(std::string(op) + ": shape mismatch " + a.shape_string() + " vs " +
                   b.shape_string());
}

inline Var unary(Op op, Var a, Tensor value) {
  TapeNode n;
  n.op = op;
  n.inputs = {a.id()};
  n.value = std::move(value);
  return a.tape()->record(std::move(n));
}

inline Var binary(Op op, Tape& tape, Var a, Var b, Tensor value) {
  TapeNode n;
  n.op = op;
  n.inputs = {a.id(), b.id()};
  n.value = std::move(value);
  return tape.record(std::move(n));
}

// c += a * b
inline void gemm_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    double* crow = &c(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      const double* brow = b.data().data() + p * n;
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c += a^T * b
inline void gemm_tn_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.cols();
  for (std::size_t i = 0; i < m; ++i) {
    const double* brow = b.data().data() + i * n;
    for (std::size_t p = 0; p < k; ++p) {
      const double aip = a(i, p);
      if (aip == 0.0) continue;
      double* crow = &c(p, 0);
      for (std::size_t j = 0; j < n; ++j) crow[j] += aip * brow[j];
    }
  }
}

// c += a * b^T
inline void gemm_nt_acc(const Tensor& a, const Tensor& b, Tensor& c) {
  const std::size_t m = a.rows(), k = a.cols(), n = b.rows();
  for (std::size_t i = 0; i < m; ++i) {
    const double* arow = a.data().data() + i * k;
    for (std::size_t j = 0; j < n; ++j) {
      const double* brow = b.data().data() + j * k;
      double s = 0.0;
      for (std::size_t p = 0; p < k; ++p) s += arow[p] * brow[p];
      c(i, j) += s;
    }
  }
}

inline double sigmoid(double x) { return 1.0 / (1.0 + std::exp(-x)); }

}  // namespace detail

inline Var matmul(Var a, Var b) {
  Tape& tape = detail::common_tape("matmul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.cols() != y.rows()) detail::shape_mismatch("matmul", x, y);
  Tensor out(x.rows(), y.cols());
  detail::gemm_acc(x, y, out);
  return detail::binary(Op::kMatMul, tape, a, b, std::move(out));
}

/// Elementwise sum; `b` may also be a 1 x cols row added to every row of `a`.
inline Var add(Var a, Var b) {
  Tape& tape = detail::common_tape("add", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.same_shape(y)) {
    Tensor out = x;
    for (std::size_t i = 0; i < out.size(); ++i) out[i] += y[i];
    return detail::binary(Op::kAdd, tape, a, b, std::move(out));
  }
  if (y.rows() == 1 && y.cols() == x.cols()) {
    Tensor out = x;
    for (std::size_t r = 0; r < out.rows(); ++r) {
      for (std::size_t c = 0; c < out.cols(); ++c) out(r, c) += y(0, c);
    }
    return detail::binary(Op::kAddRow, tape, a, b, std::move(out));
  }
  detail::shape_mismatch("add", x, y);
}

inline Var sub(Var a, Var b) {
  Tape& tape = detail::common_tape("sub", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (!x.same_shape(y)) detail::shape_mismatch("sub", x, y);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] -= y[i];
  return detail::binary(Op::kSub, tape, a, b, std::move(out));
}

/// Elementwise (Hadamard) product.
inline Var mul(Var a, Var b) {
  Tape& tape = detail::common_tape("mul", a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (!x.same_shape(y)) detail::shape_mismatch("mul", x, y);
  Tensor out = x;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= y[i];
  return detail::binary(Op::kMul, tape, a, b, std::move(out));
}

inline Var scale(Var a, double factor) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= factor;
  TapeNode n;
  n.op = Op::kScale;
  n.inputs = {a.id()};
  n.factor = factor;
  n.value = std::move(out);
  return a.tape()->record(std::move(n));
}

/// Concatenates along columns; all parts must have the same row count.
inline Var concat(std::span<const Var> parts) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Tape* tape = parts.front().tape();
  const std::size_t rows = parts.front().rows();
  std::size_t cols = 0;
  for (const Var& p : parts) {
    if (p.tape() != tape) throw Error("concat: operands live on different tapes");
    if (p.rows() != rows) detail::shape_mismatch("concat", parts.front().value(), p.value());
    cols += p.cols();
  }
  Tensor out(rows, cols);
  std::size_t offset = 0;
  TapeNode n;
  n.op = Op::kConcat;
  for (const Var& p : parts) {
    const Tensor& v = p.value();
    for (std::size_t r = 0; r < rows; ++r) {
      for (std::size_t c = 0; c < v.cols(); ++c) out(r, offset + c) = v(r, c);
    }
    offset += v.cols();
    n.inputs.push_back(p.id());
  }
  n.value = std::move(out);
  return tape->record(std::move(n));
}

inline Var concat(std::initializer_list<Var> parts) {
  return concat(std::span<const Var>(parts.begin(), parts.size()));
}

/// Columns [begin, end) of `a`.
inline Var slice(Var a, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  if (begin >= end || end > x.cols()) {
    throw ShapeError("slice: column range [" + std::to_string(begin) + ", " +
                     std::to_string(end) + ") invalid for shape " + x.shape_string());
  }
  Tensor out(x.rows(), end - begin);
  for (std::size_t r = 0; r < x.rows(); ++r) {
    for (std::size_t c = begin; c < end; ++c) out(r, c - begin) = x(r, c);
  }
  TapeNode n;
  n.op = Op::kSlice;
  n.inputs = {a.id()};
  n.begin = begin;
  n.end = end;
  n.value = std::move(out);
  return a.tape()->record(std::move(n));
}

inline Var sigmoid(Var a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = detail::sigmoid(out[i]);
  return detail::unary(Op::kSigmoid, a, std::move(out));
}

inline Var tanh(Var a) {
  Tensor out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::tanh(out[i]);
  return detail::unary(Op::kTanh, a, std::move(out));
}

/// Sum of squared entries, a 1 x 1 result.
inline Var sum_squares(Var a) {
  double s = 0.0;
  for (double v : a.value().data()) s += v * v;
  return detail::unary(Op::kSumSquares, a, Tensor::scalar(s));
}

/// Mean of all entries, a 1 x 1 result.
inline Var mean(Var a) {
  const Tensor& x = a.value();
  if (x.size() == 0) throw ShapeError("mean: empty tensor");
  double s = 0.0;
  for (double v : x.data()) s += v;
  return detail::unary(Op::kMean, a, Tensor::scalar(s / static_cast<double>(x.size())));
}

inline Var operator+(Var a, Var b) { return add(a, b); }
inline Var operator-(Var a, Var b) { return sub(a, b); }
inline Var operator*(Var a, Var b) { return mul(a, b); }
inline Var operator*(double s, Var a) { return scale(a, s); }

inline GradientMap Tape::backward(Var loss) const {
  if (loss.tape() != this) throw Error("backward: loss node is not on this tape");
  const NodeId root = loss.id();
  if (root >= nodes_.size()) throw Error("backward: node id not on tape");
  if (nodes_[root].value.size() != 1) {
    throw ShapeError("backward: loss must be scalar, got shape " +
                     nodes_[root].value.shape_string());
  }

  std::vector<Tensor> adj(root + 1);
  adj[root] = Tensor::scalar(1.0);
  auto grad_of = [&](NodeId id) -> Tensor& {
    if (adj[id].size() == 0) adj[id] = Tensor(nodes_[id].value.rows(), nodes_[id].value.cols());
    return adj[id];
  };

  GradientMap grads;
  for (NodeId id = root + 1; id-- > 0;) {
    if (adj[id].size() == 0) continue;
    const TapeNode& n = nodes_[id];
    const Tensor& g = adj[id];
    switch (n.op) {
      case Op::kConstant:
        break;
      case Op::kParameter: {
        auto [it, inserted] = grads.try_emplace(n.param, g);
        if (!inserted) {
          for (std::size_t i = 0; i < g.size(); ++i) it->second[i] += g[i];
        }
        break;
      }
      case Op::kMatMul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        detail::gemm_nt_acc(g, b, grad_of(n.inputs[0]));
        detail::gemm_tn_acc(a, g, grad_of(n.inputs[1]));
        break;
      }
      case Op::kAdd: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        Tensor& gb = grad_of(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i];
        break;
      }
      case Op::kAddRow: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        Tensor& gb = grad_of(n.inputs[1]);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) gb(0, c) += g(r, c);
        }
        break;
      }
      case Op::kSub: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i];
        Tensor& gb = grad_of(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] -= g[i];
        break;
      }
      case Op::kMul: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        const Tensor& b = nodes_[n.inputs[1]].value;
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += g[i] * b[i];
        Tensor& gb = grad_of(n.inputs[1]);
        for (std::size_t i = 0; i < g.size(); ++i) gb[i] += g[i] * a[i];
        break;
      }
      case Op::kScale: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) ga[i] += n.factor * g[i];
        break;
      }
      case Op::kConcat: {
        std::size_t offset = 0;
        for (NodeId in : n.inputs) {
          Tensor& gi = grad_of(in);
          for (std::size_t r = 0; r < gi.rows(); ++r) {
            for (std::size_t c = 0; c < gi.cols(); ++c) gi(r, c) += g(r, offset + c);
          }
          offset += gi.cols();
        }
        break;
      }
      case Op::kSlice: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t r = 0; r < g.rows(); ++r) {
          for (std::size_t c = 0; c < g.cols(); ++c) ga(r, n.begin + c) += g(r, c);
        }
        break;
      }
      case Op::kSigmoid: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = n.value[i];
          ga[i] += g[i] * y * (1.0 - y);
        }
        break;
      }
      case Op::kTanh: {
        Tensor& ga = grad_of(n.inputs[0]);
        for (std::size_t i = 0; i < g.size(); ++i) {
          const double y = n.value[i];
          ga[i] += g[i] * (1.0 - y * y);
        }
        break;
      }
      case Op::kSumSquares: {
        const Tensor& a = nodes_[n.inputs[0]].value;
        Tensor& ga = grad_of(n.inputs[0]);
        const double s = 2.0 * g[0];
        for (std::size_t i = 0; i < a.size(); ++i) ga[i] += s * a[i];
        break;
      }
      case Op::kMean: {
        Tensor& ga = grad_of(n.inputs[0]);
        const double s = g[0] / static_cast<double>(ga.size());
        for (std::size_t i = 0; i < ga.size(); ++i) ga[i] += s;
        break;
      }
    }
  }
  return grads;
}

}  // namespace bissm::ad
