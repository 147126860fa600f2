#pragma once

// Reverse-mode differentiation over a small op set acting on batches
// (one sample per column): affine maps with parameters held in a
// ParameterSet, pointwise activations, add/sub/scale and the squared
// Frobenius norm.

#include <cmath>
#include <string>
#include <vector>

#include "pairlab/error.hpp"
#include "pairlab/linalg.hpp"

namespace pairlab {

enum class Activation { tanh, elu, identity };

inline std::string to_string(Activation a) {
  switch (a) {
    case Activation::tanh: return "tanh";
    case Activation::elu: return "elu";
    case Activation::identity: return "identity";
  }
  return "tanh";
}

inline Activation parse_activation(const std::string& s) {
  if (s == "tanh") return Activation::tanh;
  if (s == "elu") return Activation::elu;
  if (s == "identity" || s == "linear") return Activation::identity;
  throw ArgumentError("unknown activation '" + s + "'");
}

/// Ordered list of parameter tensors (biases are stored as k x 1 matrices).
struct ParameterSet {
  std::vector<Matrix> tensors;

  std::size_t size() const { return tensors.size(); }
  Index coordinate_count() const {
    Index c = 0;
    for (const auto& t : tensors) c += t.size();
    return c;
  }
  ParameterSet zeros_like() const {
    ParameterSet z;
    z.tensors.reserve(tensors.size());
    for (const auto& t : tensors) z.tensors.push_back(Matrix::Zero(t.rows(), t.cols()));
    return z;
  }
  bool all_finite() const {
    for (const auto& t : tensors)
      if (!t.allFinite()) return false;
    return true;
  }
  bool operator==(const ParameterSet& o) const {
    if (tensors.size() != o.tensors.size()) return false;
    for (std::size_t i = 0; i < tensors.size(); ++i) {
      if (tensors[i].rows() != o.tensors[i].rows() || tensors[i].cols() != o.tensors[i].cols()) return false;
      if (tensors[i] != o.tensors[i]) return false;
    }
    return true;
  }
};

namespace detail {

inline Matrix activate(const Matrix& x, Activation a) {
  switch (a) {
    case Activation::tanh: return x.array().tanh().matrix();
    case Activation::elu: return x.unaryExpr([](double v) { return v > 0.0 ? v : std::expm1(v); });
    case Activation::identity: return x;
  }
  return x;
}

// Derivative expressed through the activation output y.
inline Matrix activation_backward(const Matrix& y, const Matrix& g, Activation a) {
  switch (a) {
    case Activation::tanh: return (g.array() * (1.0 - y.array().square())).matrix();
    case Activation::elu:
      return g.binaryExpr(y, [](double gv, double yv) { return yv > 0.0 ? gv : gv * (yv + 1.0); });
    case Activation::identity: return g;
  }
  return g;
}

}  // namespace detail

class GradientTape {
 public:
  using NodeId = int;

  explicit GradientTape(const ParameterSet* params = nullptr) : params_(params) {}

  NodeId input(Matrix value) {
    Node n;
    n.op = Op::input;
    n.value = std::move(value);
    return push(std::move(n));
  }

  /// W x + b, with W = params[weight_slot] and b = params[bias_slot].
  NodeId affine(NodeId x, int weight_slot, int bias_slot) {
    if (!params_) throw ArgumentError("tape: affine op requires a parameter set");
    const Matrix& w = param(weight_slot);
    const Matrix& b = param(bias_slot);
    const Matrix& xv = nodes_[idx(x)].value;
    if (w.cols() != xv.rows() || b.rows() != w.rows() || b.cols() != 1) {
      throw ArgumentError("tape: affine shape mismatch");
    }
    Node n;
    n.op = Op::affine;
    n.a = x;
    n.weight_slot = weight_slot;
    n.bias_slot = bias_slot;
    n.value.noalias() = w * xv;
    n.value.colwise() += b.col(0);
    return push(std::move(n));
  }

  NodeId activation(NodeId x, Activation act) {
    Node n;
    n.op = Op::activation;
    n.a = x;
    n.act = act;
    n.value = detail::activate(nodes_[idx(x)].value, act);
    return push(std::move(n));
  }

  NodeId add(NodeId a, NodeId b) { return binary(Op::add, a, b); }
  NodeId sub(NodeId a, NodeId b) { return binary(Op::sub, a, b); }

  NodeId scale(NodeId a, double s) {
    Node n;
    n.op = Op::scale;
    n.a = a;
    n.scalar = s;
    n.value = s * nodes_[idx(a)].value;
    return push(std::move(n));
  }

  /// Squared Frobenius norm, a 1 x 1 node.
  NodeId squared_norm(NodeId a) {
    Node n;
    n.op = Op::squared_norm;
    n.a = a;
    n.value = Matrix::Constant(1, 1, nodes_[idx(a)].value.squaredNorm());
    return push(std::move(n));
  }

  const Matrix& value(NodeId id) const { return nodes_[idx(id)].value; }
  double scalar(NodeId id) const { return nodes_[idx(id)].value(0, 0); }
  std::size_t size() const { return nodes_.size(); }

  /// Propagates `seed` (shape of value(root)) back through the tape.
  /// Gradients accumulate across calls until clear_gradients().
  void backward(NodeId root, const Matrix& seed) {
    const auto r = idx(root);
    if (seed.rows() != nodes_[r].value.rows() || seed.cols() != nodes_[r].value.cols()) {
      throw ArgumentError("tape: seed shape does not match root value");
    }
    if (params_ && param_grad_.size() != params_->size()) param_grad_ = params_->zeros_like();
    std::vector<Matrix> grads(nodes_.size());
    grads[r] = seed;
    for (std::size_t k = r + 1; k-- > 0;) {
      if (grads[k].size() == 0) continue;
      const Node& n = nodes_[k];
      Matrix& g = grads[k];
      switch (n.op) {
        case Op::input:
          break;
        case Op::affine: {
          const Matrix& xv = nodes_[idx(n.a)].value;
          const Matrix& w = param(n.weight_slot);
          param_grad_.tensors[static_cast<std::size_t>(n.weight_slot)].noalias() += g * xv.transpose();
          param_grad_.tensors[static_cast<std::size_t>(n.bias_slot)].col(0) += g.rowwise().sum();
          accumulate(grads, n.a, w.transpose() * g);
          break;
        }
        case Op::activation:
          accumulate(grads, n.a, detail::activation_backward(n.value, g, n.act));
          break;
        case Op::add:
          accumulate(grads, n.a, g);
          accumulate(grads, n.b, g);
          break;
        case Op::sub:
          accumulate(grads, n.a, g);
          accumulate(grads, n.b, -g);
          break;
        case Op::scale:
          accumulate(grads, n.a, n.scalar * g);
          break;
        case Op::squared_norm:
          accumulate(grads, n.a, (2.0 * g(0, 0)) * nodes_[idx(n.a)].value);
          break;
      }
    }
    for (std::size_t k = 0; k < nodes_.size(); ++k) {
      if (nodes_[k].op != Op::input || grads[k].size() == 0) continue;
      if (input_grad_.size() < nodes_.size()) input_grad_.resize(nodes_.size());
      if (input_grad_[k].size() == 0) input_grad_[k] = Matrix::Zero(grads[k].rows(), grads[k].cols());
      input_grad_[k] += grads[k];
    }
  }

  void backward(NodeId root) { backward(root, Matrix::Ones(1, 1)); }

  /// Accumulated gradient with respect to an input node (zero if unreached).
  Matrix input_gradient(NodeId id) const {
    const auto k = idx(id);
    if (k < input_grad_.size() && input_grad_[k].size() != 0) return input_grad_[k];
    return Matrix::Zero(nodes_[k].value.rows(), nodes_[k].value.cols());
  }

  /// Accumulated gradient with respect to the parameter set.
  const ParameterSet& parameter_gradient() const { return param_grad_; }

  void clear_gradients() {
    param_grad_ = ParameterSet{};
    input_grad_.clear();
  }

  /// Re-evaluates every recorded op from the recorded inputs and checks the
  /// stored values are reproduced bitwise.
  bool replay_matches() const {
    for (const Node& n : nodes_) {
      Matrix v;
      switch (n.op) {
        case Op::input: continue;
        case Op::affine:
          v.noalias() = param(n.weight_slot) * nodes_[idx(n.a)].value;
          v.colwise() += param(n.bias_slot).col(0);
          break;
        case Op::activation: v = detail::activate(nodes_[idx(n.a)].value, n.act); break;
        case Op::add: v = nodes_[idx(n.a)].value + nodes_[idx(n.b)].value; break;
        case Op::sub: v = nodes_[idx(n.a)].value - nodes_[idx(n.b)].value; break;
        case Op::scale: v = n.scalar * nodes_[idx(n.a)].value; break;
        case Op::squared_norm: v = Matrix::Constant(1, 1, nodes_[idx(n.a)].value.squaredNorm()); break;
      }
      if (v.rows() != n.value.rows() || v.cols() != n.value.cols() || v != n.value) return false;
    }
    return true;
  }

 private:
  enum class Op { input, affine, activation, add, sub, scale, squared_norm };

  struct Node {
    Op op = Op::input;
    NodeId a = -1;
    NodeId b = -1;
    int weight_slot = -1;
    int bias_slot = -1;
    Activation act = Activation::identity;
    double scalar = 0.0;
    Matrix value;
  };

  std::size_t idx(NodeId id) const {
    if (id < 0 || static_cast<std::size_t>(id) >= nodes_.size()) throw ArgumentError("tape: unknown node");
    return static_cast<std::size_t>(id);
  }

  const Matrix& param(int slot) const {
    if (slot < 0 || static_cast<std::size_t>(slot) >= params_->size()) throw ArgumentError("tape: unknown parameter slot");
    return params_->tensors[static_cast<std::size_t>(slot)];
  }

  NodeId binary(Op op, NodeId a, NodeId b) {
    const Matrix& av = nodes_[idx(a)].value;
    const Matrix& bv = nodes_[idx(b)].value;
    if (av.rows() != bv.rows() || av.cols() != bv.cols()) throw ArgumentError("tape: operand shape mismatch");
    Node n;
    n.op = op;
    n.a = a;
    n.b = b;
    n.value = op == Op::add ? Matrix(av + bv) : Matrix(av - bv);
    return push(std::move(n));
  }

  void accumulate(std::vector<Matrix>& grads, NodeId target, const Matrix& g) const {
    auto& t = grads[idx(target)];
    if (t.size() == 0) t = g;
    else t += g;
  }

  NodeId push(Node n) {
    nodes_.push_back(std::move(n));
    return static_cast<NodeId>(nodes_.size() - 1);
  }

  const ParameterSet* params_;
  std::vector<Node> nodes_;
  ParameterSet param_grad_;
  std::vector<Matrix> input_grad_;
};

}  // namespace pairlab
