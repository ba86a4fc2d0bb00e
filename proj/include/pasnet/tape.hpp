#pragma once

#include <functional>
#include <utility>
#include <vector>

#include "pasnet/error.hpp"
#include "pasnet/tensor.hpp"

namespace pasnet {

// Handle to a node on a Tape. Only meaningful for the tape that issued it.
struct Var {
  int id = -1;
  bool valid() const { return id >= 0; }
};

// Reverse-mode autodiff tape at tensor-op granularity.
//
// Nodes are recorded in execution order, which is a topological order of the
// computation, so backward() is a single reverse sweep. Each op supplies a
// closure that reads the output gradient and accumulates into its parents'
// gradient buffers. Gradients of spike discontinuities are defined by the
// recording op (surrogate on the hard path, exact on the smoothed path).
class Tape {
 public:
  Tape() = default;
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  // A leaf that never receives gradient (data inputs, frozen constants).
  Var input(Tensor value) { return push(std::move(value), false); }

  // A leaf that accumulates gradient (trainable parameters).
  Var param(Tensor value) { return push(std::move(value), true); }

  const Tensor& val(Var v) const { return nodes_[check(v)].value; }

  bool requires_grad(Var v) const { return nodes_[check(v)].requires_grad; }

  // Gradient of the most recent backward() target w.r.t. v. Zero if the
  // sweep never reached v.
  const Tensor& grad(Var v) { return grad_buffer(v); }

  // Mutable gradient accumulator, allocated on first touch. Backward
  // closures write into parents through this.
  Tensor& grad_buffer(Var v) {
    Node& n = nodes_[check(v)];
    if (!n.has_grad) {
      n.grad = Tensor::zeros(n.value.shape());
      n.has_grad = true;
    }
    return n.grad;
  }

  bool grad_reached(Var v) const { return nodes_[check(v)].has_grad; }

  // Records an op output. `parents` determine gradient requirements; invalid
  // handles mark absent optional inputs. The closure is dropped when no
  // parent needs gradient.
  Var record(Tensor value, std::initializer_list<Var> parents,
             std::function<void(Tape&, Var)> backward_fn) {
    bool needs = false;
    for (Var p : parents)
      if (p.valid()) needs = needs || nodes_[check(p)].requires_grad;
    Var out = push(std::move(value), needs);
    if (needs) nodes_[static_cast<std::size_t>(out.id)].backward_fn = std::move(backward_fn);
    return out;
  }

  void accumulate(Var v, const Tensor& g) {
    Node& n = nodes_[check(v)];
    if (!n.requires_grad) return;
    Tensor& buf = grad_buffer(v);
    require(buf.same_shape(g), "gradient shape mismatch");
    double* d = buf.data();
    const double* s = g.data();
    for (std::size_t i = 0; i < buf.size(); ++i) d[i] += s[i];
  }

  // Reverse sweep from a scalar loss. May be called once per tape.
  void backward(Var loss) {
    if (backward_done_) throw StateError("backward() already ran on this tape");
    Node& l = nodes_[check(loss)];
    if (l.value.size() != 1) throw StateError("backward target must be a scalar");
    if (!l.requires_grad) throw StateError("backward target does not depend on any parameter");
    backward_done_ = true;
    grad_buffer(loss)[0] = 1.0;
    for (int i = loss.id; i >= 0; --i) {
      Node& n = nodes_[static_cast<std::size_t>(i)];
      if (n.has_grad && n.backward_fn) n.backward_fn(*this, Var{i});
    }
  }

  std::size_t node_count() const { return nodes_.size(); }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    bool has_grad = false;
    std::function<void(Tape&, Var)> backward_fn;
  };

  Var push(Tensor value, bool requires_grad) {
    Node n;
    n.value = std::move(value);
    n.requires_grad = requires_grad;
    nodes_.push_back(std::move(n));
    return Var{static_cast<int>(nodes_.size() - 1)};
  }

  std::size_t check(Var v) const {
    if (!v.valid() || static_cast<std::size_t>(v.id) >= nodes_.size())
      throw StateError("invalid tape handle");
    return static_cast<std::size_t>(v.id);
  }

  std::vector<Node> nodes_;
  bool backward_done_ = false;
};

}  // namespace pasnet
