#pragma once

#include <functional>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "pkkd/tensor.hpp"

namespace pkkd {

class TapeError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

template <class Scalar>
class Tape;

/// Handle to a value recorded on a tape. Cheap to copy; valid for the
/// lifetime of the tape that produced it.
template <class Scalar>
struct Var {
  Tape<Scalar>* tape = nullptr;
  int id = -1;

  const Tensor<Scalar>& value() const { return tape->value(id); }
  bool valid() const { return tape != nullptr && id >= 0; }
};

template <class Scalar>
using GradMap = std::map<std::string, Tensor<Scalar>>;

/// Define-by-run recording of primitive applications. Nodes are appended in
/// execution order, so creation order is a topological order and one reverse
/// sweep visits every node exactly once. A tape is confined to the thread
/// that builds it.
template <class Scalar>
class Tape {
 public:
  /// Accumulates this node's output gradient into its parents. Receives the
  /// tape and the node's own index; reads grad(self), writes via accum_grad.
  using BackFn = std::function<void(Tape&, int)>;

  struct Node {
    Tensor<Scalar> value;
    std::vector<int> parents;
    BackFn backprop;                // empty for leaves/constants
    const char* op = "";
    std::string leaf_name;          // set for named parameter leaves
    bool requires_grad = false;
  };

  Var<Scalar> leaf(Tensor<Scalar> value, std::string name = {}, bool requires_grad = true) {
    Node n;
    n.value = std::move(value);
    n.op = "leaf";
    n.leaf_name = std::move(name);
    n.requires_grad = requires_grad;
    return push(std::move(n));
  }

  Var<Scalar> constant(Tensor<Scalar> value) { return leaf(std::move(value), {}, false); }

  Var<Scalar> make(const char* op, Tensor<Scalar> value, std::vector<Var<Scalar>> parents,
                   BackFn backprop) {
    Node n;
    n.op = op;
    n.value = std::move(value);
    if (!n.value.all_finite())
      throw TapeError(std::string("non-finite values produced by op '") + op + "'");
    n.parents.reserve(parents.size());
    for (const Var<Scalar>& p : parents) {
      if (p.tape != this) throw TapeError(std::string("op '") + op + "' mixes tapes");
      n.parents.push_back(p.id);
      if (nodes_[p.id].requires_grad) n.requires_grad = true;
    }
    if (n.requires_grad) n.backprop = std::move(backprop);
    return push(std::move(n));
  }

  const Tensor<Scalar>& value(int id) const { return nodes_.at(id).value; }
  const Node& node(int id) const { return nodes_.at(id); }
  size_t size() const { return nodes_.size(); }

  void accum_grad(int id, Tensor<Scalar> g) {
    if (!nodes_[id].requires_grad) return;
    if (!grad_set_[id]) {
      grads_[id] = std::move(g);
      grad_set_[id] = true;
    } else {
      grads_[id].array() += g.array();
    }
  }

  bool has_grad(int id) const { return grad_set_[id]; }

  /// Gradient accumulated for a node during the last backward pass (zeros if
  /// the node was unreachable from the loss).
  Tensor<Scalar> grad(const Var<Scalar>& v) const {
    if (v.tape != this) throw TapeError("grad query on foreign tape");
    if (grad_set_.size() == nodes_.size() && grad_set_[v.id]) return grads_[v.id];
    return Tensor<Scalar>::zeros(nodes_[v.id].value.shape());
  }

  /// Reverse pass from a scalar loss. Returns total derivatives for every
  /// named leaf with requires_grad; unreachable ones map to zeros. Gradients
  /// add across fan-out. Deterministic: one fixed-order sweep.
  GradMap<Scalar> backward(const Var<Scalar>& loss) {
    if (loss.tape != this) throw TapeError("loss was not produced on this tape");
    if (loss.id < 0 || loss.id >= static_cast<int>(nodes_.size()))
      throw TapeError("loss is not on the tape");
    if (nodes_[loss.id].value.numel() != 1) throw TapeError("backward requires a scalar loss");

    grads_.assign(nodes_.size(), Tensor<Scalar>());
    grad_set_.assign(nodes_.size(), 0);
    accum_grad(loss.id, Tensor<Scalar>::scalar(Scalar(1)));
    if (!nodes_[loss.id].requires_grad) grad_set_[loss.id] = true;

    for (int id = loss.id; id >= 0; --id) {
      if (!grad_set_[id] || !nodes_[id].backprop) continue;
      if (!grads_[id].all_finite())
        throw TapeError(std::string("non-finite gradient reaching op '") + nodes_[id].op + "'");
      nodes_[id].backprop(*this, id);
    }

    GradMap<Scalar> out;
    for (size_t id = 0; id < nodes_.size(); ++id) {
      const Node& n = nodes_[id];
      if (n.leaf_name.empty() || !n.requires_grad) continue;
      if (grad_set_[id])
        out[n.leaf_name] = grads_[id];
      else
        out[n.leaf_name] = Tensor<Scalar>::zeros(n.value.shape());
    }
    return out;
  }

  const Tensor<Scalar>& raw_grad(int id) const { return grads_[id]; }

  void clear() {
    nodes_.clear();
    grads_.clear();
    grad_set_.clear();
  }

 private:
  Var<Scalar> push(Node n) {
    nodes_.push_back(std::move(n));
    return Var<Scalar>{this, static_cast<int>(nodes_.size()) - 1};
  }

  std::vector<Node> nodes_;
  std::vector<Tensor<Scalar>> grads_;
  std::vector<char> grad_set_;
};

}  // namespace pkkd
