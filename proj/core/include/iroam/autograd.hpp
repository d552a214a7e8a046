#pragma once

#include <deque>
#include <functional>
#include <span>
#include <string>
#include <vector>

#include "iroam/tensor.hpp"

namespace iroam::nn {

/// A named trainable array with its accumulated gradient.
struct Parameter {
  std::string name;
  Tensor value;
  Tensor grad;

  void zero_grad() { grad = Tensor(value.shape(), 0.0); }
};

class Graph;

/// Handle to a node of a Graph. Cheap to copy; only valid while the graph
/// is alive.
class Var {
 public:
  Var() = default;
  Var(Graph* g, int id) : g_(g), id_(id) {}

  const Tensor& value() const;
  const std::vector<int>& shape() const { return value().shape(); }
  int rows() const { return value().rows(); }
  int cols() const { return value().cols(); }
  double item() const { return value().item(); }
  bool requires_grad() const;
  /// Gradient after Graph::backward. Zeros if the node was not reached.
  Tensor grad() const;

  Graph* graph() const { return g_; }
  int id() const { return id_; }
  bool valid() const { return g_ != nullptr; }

 private:
  Graph* g_ = nullptr;
  int id_ = -1;
};

/// Reverse-mode tape. Nodes are appended in topological order, so backward
/// is a single reverse sweep.
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, const Tensor& out_grad)>;

  Graph() = default;
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  /// Leaf that never receives a gradient.
  Var constant(Tensor t);
  /// Leaf that records its gradient (for probes and input-gradient checks).
  Var input(Tensor t);
  /// Leaf bound to a parameter; backward accumulates into `p.grad`.
  Var param(Parameter& p);

  /// Appends an op node. `backward` is only stored when some parent
  /// requires grad.
  Var make(Tensor value, std::span<const Var> parents, BackwardFn backward);

  /// Seeds d(loss)/d(loss) = 1 and sweeps the tape once.
  void backward(Var loss);

  const Tensor& value(int id) const { return nodes_[static_cast<size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<size_t>(id)].requires_grad; }
  /// Mutable gradient buffer of a node, allocated on first use.
  Tensor& grad_buffer(int id);
  Tensor grad(int id) const;

  size_t size() const { return nodes_.size(); }

  /// Disables tape recording of backward closures (inference).
  void set_grad_enabled(bool on) { grad_enabled_ = on; }
  bool grad_enabled() const { return grad_enabled_; }

 private:
  struct Node {
    Tensor value;
    Tensor grad;
    bool requires_grad = false;
    BackwardFn backward;
  };
  std::deque<Node> nodes_;
  bool grad_enabled_ = true;
};

// ---------------------------------------------------------------------------
// Ops. All inputs must belong to the same graph.

Var matmul(Var a, Var b);        // (m,k)(k,n)
Var matmul_nt(Var a, Var b);     // (m,k)(n,k)^T
Var linear(Var x, Var w, Var b);  // x(m,k) w(k,n) + b(1,n) broadcast over rows
Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var scale(Var a, double s);
/// Adds a constant array of the same shape.
Var add_const(Var a, const Tensor& c);
Var relu(Var a);
Var sigmoid(Var a);
Var exp(Var a);
/// Natural log; inputs must be positive.
Var log(Var a);
Var softmax_rows(Var a);
/// Row-wise layer norm with learned gain/bias of shape (1, cols).
Var layer_norm(Var x, Var gamma, Var beta, double eps = 1e-5);
Var transpose(Var a);
Var reshape(Var a, std::vector<int> shape);
Var slice_cols(Var a, int c0, int c1);
Var concat_cols(std::span<const Var> parts);
Var concat_rows(std::span<const Var> parts);
Var gather_rows(Var a, std::span<const int> rows);
Var sum(Var a);
Var mean(Var a);
/// Sum of scalars with weights.
Var weighted_sum(std::span<const Var> scalars, std::span<const double> weights);
/// Element-wise mean of same-shape arrays.
Var average(std::span<const Var> parts);

/// sum |a - target|, subgradient 0 at the kink.
Var l1_loss(Var a, const Tensor& target);

/// Multiclass focal loss summed over rows. `targets[r]` is the class index
/// or -1 to skip the row.
Var focal_loss_rows(Var logits, std::span<const int> targets, double gamma);

/// sum over rows of (1 - GIoU(pred_r, target_r)); boxes are (cx, cy, w, h).
Var giou_loss_rows(Var boxes, const Tensor& targets);

// Feature-map ops on (C, H, W) arrays.

/// Convolution via im2col. Weight is (Cout, Cin*k*k), bias (1, Cout).
Var conv2d(Var x, Var weight, Var bias, int kernel, int stride, int pad);
Var upsample_nearest2x(Var x);
/// (C, H, W) -> (H*W, C), row index = y*W + x.
Var map_to_tokens(Var x);

// Non-differentiable helpers on plain tensors.
Tensor softmax_rows(const Tensor& a);
std::vector<int> argmax_rows(const Tensor& a);

}  // namespace iroam::nn
