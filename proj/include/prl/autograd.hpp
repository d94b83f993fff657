#pragma once

// Tape-based reverse-mode differentiation. A Graph records every primitive
// application in execution order; node ids are therefore a topological order
// and the backward pass is a single reverse sweep.

#include <deque>
#include <functional>
#include <memory>
#include <string>
#include <unordered_map>
#include <vector>

#include "prl/ops.hpp"
#include "prl/tensor.hpp"

namespace prl {

/// A named trainable (or buffer) tensor with its accumulated gradient.
template <typename T>
struct Parameter {
  Parameter() = default;
  Parameter(std::string n, BasicTensor<T> v, bool is_trainable = true)
      : name(std::move(n)), value(std::move(v)), grad(value.shape()), trainable(is_trainable) {}

  void zero_grad() { grad.fill(T(0)); }

  std::string name;
  BasicTensor<T> value;
  BasicTensor<T> grad;
  bool trainable = true;
};

template <typename T>
class Graph;

/// Handle to a node in a Graph. Cheap to copy; valid while the graph lives.
template <typename T>
class Var {
 public:
  Var() = default;
  Var(Graph<T>* graph, int id) : graph_(graph), id_(id) {}

  bool valid() const { return graph_ != nullptr; }
  int id() const { return id_; }
  Graph<T>& graph() const { return *graph_; }
  const BasicTensor<T>& value() const;
  const Shape& shape() const { return value().shape(); }

 private:
  Graph<T>* graph_ = nullptr;
  int id_ = -1;
};

template <typename T>
class Graph {
 public:
  using BackwardFn = std::function<void(Graph&, int self)>;

  /// A non-recording graph keeps values only; backward() is unavailable.
  explicit Graph(bool recording = true) : recording_(recording) {}
  Graph(const Graph&) = delete;
  Graph& operator=(const Graph&) = delete;

  bool recording() const { return recording_; }
  std::size_t size() const { return nodes_.size(); }

  Var<T> constant(BasicTensor<T> value);
  /// Leaf that receives a gradient.
  Var<T> leaf(BasicTensor<T> value);
  /// Binds a parameter; binding the same parameter twice returns the same node.
  Var<T> param(Parameter<T>& p);

  /// Appends a node computed from `parents`. `backward` reads this node's
  /// gradient and accumulates into parents via add_grad().
  Var<T> record(BasicTensor<T> value, std::vector<int> parents, BackwardFn backward);

  const BasicTensor<T>& value(int id) const { return nodes_[static_cast<std::size_t>(id)].value; }
  bool requires_grad(int id) const { return nodes_[static_cast<std::size_t>(id)].requires_grad; }
  /// Gradient of the last backward() target w.r.t. node `id` (zeros if unreached).
  const BasicTensor<T>& grad(int id);
  void add_grad(int id, const BasicTensor<T>& g);

  /// Reverse sweep from a scalar; may be replayed, each call starts from zero.
  void backward(Var<T> loss);

  /// Parameters bound into this graph, in binding order.
  std::vector<std::pair<Parameter<T>*, int>> bound_params() const;

 private:
  struct Node {
    BasicTensor<T> value;
    BasicTensor<T> grad;
    std::vector<int> parents;
    BackwardFn backward;
    bool requires_grad = false;
  };

  bool recording_;
  std::deque<Node> nodes_;  // stable addresses: value() references survive later records
  std::unordered_map<const Parameter<T>*, int> param_nodes_;
  std::vector<std::pair<Parameter<T>*, int>> param_order_;
};

template <typename T>
const BasicTensor<T>& Var<T>::value() const {
  return graph_->value(id_);
}

/// Runs the reverse sweep from `loss` and returns one gradient per parameter
/// (zeros for parameters with no path to the loss). Gradients are also added
/// into each Parameter::grad.
template <typename T>
std::vector<BasicTensor<T>> value_and_grad(Graph<T>& graph, Var<T> loss,
                                           const std::vector<Parameter<T>*>& params);

// ---------------------------------------------------------------------------
// Differentiable primitives.

namespace ag {

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int stride, int padding);

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BasicTensor<T>& running_mean,
                  BasicTensor<T>& running_var, const ops::BatchNormOptions& opts);

template <typename T>
Var<T> pool(Var<T> x, const ops::PoolSpec& spec);

template <typename T>
Var<T> relu(Var<T> x);

template <typename T>
Var<T> bilinear_resize(Var<T> x, int target_h, int target_w);

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias);

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a = false, bool trans_b = false);

template <typename T>
Var<T> softmax_rows(Var<T> x);

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps);

template <typename T>
Var<T> depthwise_xcorr(Var<T> search, Var<T> templ);

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis);

template <typename T>
Var<T> slice(Var<T> x, int axis, int begin, int end);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);

template <typename T>
Var<T> mul(Var<T> a, Var<T> b);

template <typename T>
Var<T> scale(Var<T> x, T factor);

template <typename T>
Var<T> exp(Var<T> x);

template <typename T>
Var<T> sum(Var<T> x);

/// Scalar sum of x * weights for a constant weight tensor of the same shape.
template <typename T>
Var<T> weighted_sum(Var<T> x, const BasicTensor<T>& weights);

template <typename T>
Var<T> reshape(Var<T> x, Shape shape);

template <typename T>
Var<T> map_to_tokens(Var<T> map);

template <typename T>
Var<T> tokens_to_map(Var<T> tokens, int height, int width);

}  // namespace ag
}  // namespace prl
