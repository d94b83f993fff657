#include "prl/autograd.hpp"

#include <cmath>

namespace prl {

template <typename T>
Var<T> Graph<T>::constant(BasicTensor<T> value) {
  Node n;
  n.value = std::move(value);
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Graph<T>::leaf(BasicTensor<T> value) {
  Node n;
  n.value = std::move(value);
  n.requires_grad = recording_;
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
Var<T> Graph<T>::param(Parameter<T>& p) {
  if (auto it = param_nodes_.find(&p); it != param_nodes_.end()) return Var<T>(this, it->second);
  Node n;
  n.value = p.value;
  n.requires_grad = recording_ && p.trainable;
  nodes_.push_back(std::move(n));
  const int id = static_cast<int>(nodes_.size()) - 1;
  param_nodes_.emplace(&p, id);
  param_order_.emplace_back(&p, id);
  return Var<T>(this, id);
}

template <typename T>
Var<T> Graph<T>::record(BasicTensor<T> value, std::vector<int> parents, BackwardFn backward) {
  Node n;
  n.value = std::move(value);
  if (recording_) {
    for (int p : parents) n.requires_grad = n.requires_grad || requires_grad(p);
    if (n.requires_grad) {
      n.parents = std::move(parents);
      n.backward = std::move(backward);
    }
  }
  nodes_.push_back(std::move(n));
  return Var<T>(this, static_cast<int>(nodes_.size()) - 1);
}

template <typename T>
const BasicTensor<T>& Graph<T>::grad(int id) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (n.grad.empty()) n.grad = BasicTensor<T>(n.value.shape());
  return n.grad;
}

template <typename T>
void Graph<T>::add_grad(int id, const BasicTensor<T>& g) {
  Node& n = nodes_[static_cast<std::size_t>(id)];
  if (!n.requires_grad) return;
  require_shape(g.shape(), n.value.shape(), "gradient accumulation");
  if (n.grad.empty()) {
    n.grad = g;
    return;
  }
  for (std::size_t i = 0; i < g.size(); ++i) n.grad[i] += g[i];
}

template <typename T>
void Graph<T>::backward(Var<T> loss) {
  if (!recording_) throw std::logic_error("backward on a non-recording graph");
  if (loss.value().size() != 1) {
    throw ShapeError("backward: loss must be a scalar, got " + loss.value().shape().str());
  }
  for (Node& n : nodes_) n.grad = BasicTensor<T>();
  Node& root = nodes_[static_cast<std::size_t>(loss.id())];
  root.grad = BasicTensor<T>(root.value.shape(), T(1));
  for (int id = loss.id(); id >= 0; --id) {
    Node& n = nodes_[static_cast<std::size_t>(id)];
    if (n.grad.empty() || !n.backward) continue;
    n.backward(*this, id);
  }
}

template <typename T>
std::vector<std::pair<Parameter<T>*, int>> Graph<T>::bound_params() const {
  return param_order_;
}

template <typename T>
std::vector<BasicTensor<T>> value_and_grad(Graph<T>& graph, Var<T> loss,
                                           const std::vector<Parameter<T>*>& params) {
  graph.backward(loss);
  std::unordered_map<const Parameter<T>*, int> bound;
  for (const auto& [p, id] : graph.bound_params()) bound.emplace(p, id);
  std::vector<BasicTensor<T>> grads;
  grads.reserve(params.size());
  for (Parameter<T>* p : params) {
    auto it = bound.find(p);
    BasicTensor<T> g = it == bound.end() ? BasicTensor<T>(p->value.shape()) : graph.grad(it->second);
    for (std::size_t i = 0; i < g.size(); ++i) p->grad[i] += g[i];
    grads.push_back(std::move(g));
  }
  return grads;
}

// ---------------------------------------------------------------------------

namespace ag {
namespace {

template <typename T>
Graph<T>& same_graph(std::initializer_list<Var<T>> vars) {
  Graph<T>* g = nullptr;
  for (const Var<T>& v : vars) {
    if (!v.valid()) continue;
    if (g && &v.graph() != g) throw std::logic_error("operands belong to different graphs");
    g = &v.graph();
  }
  if (!g) throw std::logic_error("operation without operands");
  return *g;
}

}  // namespace

template <typename T>
Var<T> conv2d(Var<T> x, Var<T> weight, Var<T> bias, int stride, int padding) {
  Graph<T>& g = same_graph<T>({x, weight, bias});
  static const BasicTensor<T> kNoBias;
  const bool has_bias = bias.valid();
  auto out = ops::conv2d(x.value(), weight.value(), has_bias ? bias.value() : kNoBias, stride, padding);
  std::vector<int> parents{x.id(), weight.id()};
  if (has_bias) parents.push_back(bias.id());
  const int xi = x.id(), wi = weight.id(), bi = has_bias ? bias.id() : -1;
  return g.record(std::move(out), std::move(parents), [=](Graph<T>& gr, int self) {
    auto grads = ops::conv2d_backward(gr.grad(self), gr.value(xi), gr.value(wi), has_bias, stride,
                                      padding, gr.requires_grad(xi));
    if (gr.requires_grad(xi)) gr.add_grad(xi, grads.input);
    gr.add_grad(wi, grads.weight);
    if (has_bias) gr.add_grad(bi, grads.bias);
  });
}

template <typename T>
Var<T> batch_norm(Var<T> x, Var<T> gamma, Var<T> beta, BasicTensor<T>& running_mean,
                  BasicTensor<T>& running_var, const ops::BatchNormOptions& opts) {
  Graph<T>& g = same_graph<T>({x, gamma, beta});
  ops::BatchNormSaved<T> saved;
  auto out = ops::batch_norm(x.value(), gamma.value(), beta.value(), running_mean, running_var, opts,
                             g.recording() ? &saved : nullptr);
  const int xi = x.id(), gi = gamma.id(), bi = beta.id();
  const bool training = opts.training;
  return g.record(std::move(out), {xi, gi, bi},
                  [=, saved = std::move(saved)](Graph<T>& gr, int self) {
                    auto grads = ops::batch_norm_backward(gr.grad(self), gr.value(xi),
                                                          gr.value(gi), saved, training);
                    gr.add_grad(xi, grads.input);
                    gr.add_grad(gi, grads.gamma);
                    gr.add_grad(bi, grads.beta);
                  });
}

template <typename T>
Var<T> pool(Var<T> x, const ops::PoolSpec& spec) {
  Graph<T>& g = x.graph();
  std::vector<std::int64_t> argmax;
  auto out = ops::pool(x.value(), spec, g.recording() ? &argmax : nullptr);
  const int xi = x.id();
  return g.record(std::move(out), {xi}, [=, argmax = std::move(argmax)](Graph<T>& gr, int self) {
    gr.add_grad(xi, ops::pool_backward(gr.grad(self), argmax, gr.value(xi).shape()));
  });
}

template <typename T>
Var<T> relu(Var<T> x) {
  Graph<T>& g = x.graph();
  const int xi = x.id();
  return g.record(ops::relu(x.value()), {xi}, [=](Graph<T>& gr, int self) {
    gr.add_grad(xi, ops::relu_backward(gr.grad(self), gr.value(xi)));
  });
}

template <typename T>
Var<T> bilinear_resize(Var<T> x, int target_h, int target_w) {
  Graph<T>& g = x.graph();
  const int xi = x.id();
  return g.record(ops::bilinear_resize(x.value(), target_h, target_w), {xi},
                  [=](Graph<T>& gr, int self) {
                    gr.add_grad(xi, ops::bilinear_resize_backward(gr.grad(self), gr.value(xi).shape()));
                  });
}

template <typename T>
Var<T> linear(Var<T> x, Var<T> weight, Var<T> bias) {
  Graph<T>& g = same_graph<T>({x, weight, bias});
  static const BasicTensor<T> kNoBias;
  const bool has_bias = bias.valid();
  auto out = ops::linear(x.value(), weight.value(), has_bias ? bias.value() : kNoBias);
  std::vector<int> parents{x.id(), weight.id()};
  if (has_bias) parents.push_back(bias.id());
  const int xi = x.id(), wi = weight.id(), bi = has_bias ? bias.id() : -1;
  return g.record(std::move(out), std::move(parents), [=](Graph<T>& gr, int self) {
    const BasicTensor<T>& go = gr.grad(self);
    if (gr.requires_grad(xi)) gr.add_grad(xi, ops::matmul(go, gr.value(wi), false, true));
    if (gr.requires_grad(wi)) gr.add_grad(wi, ops::matmul(gr.value(xi), go, true, false));
    if (has_bias && gr.requires_grad(bi)) {
      const int rows = go.dim(0), cols = go.dim(1);
      BasicTensor<T> gb(Shape{cols});
      for (int r = 0; r < rows; ++r) {
        for (int c = 0; c < cols; ++c) gb[static_cast<std::size_t>(c)] += go.at(r, c);
      }
      gr.add_grad(bi, gb);
    }
  });
}

template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_a, bool trans_b) {
  Graph<T>& g = same_graph<T>({a, b});
  const int ai = a.id(), bi = b.id();
  return g.record(ops::matmul(a.value(), b.value(), trans_a, trans_b), {ai, bi},
                  [=](Graph<T>& gr, int self) {
                    const BasicTensor<T>& go = gr.grad(self);
                    const BasicTensor<T>& av = gr.value(ai);
                    const BasicTensor<T>& bv = gr.value(bi);
                    // C = op(A) op(B): dop(A) = G op(B)^T, dop(B) = op(A)^T G
                    if (gr.requires_grad(ai)) {
                      gr.add_grad(ai, trans_a ? ops::matmul(bv, go, trans_b, true)
                                              : ops::matmul(go, bv, false, !trans_b));
                    }
                    if (gr.requires_grad(bi)) {
                      gr.add_grad(bi, trans_b ? ops::matmul(go, av, true, trans_a)
                                              : ops::matmul(av, go, !trans_a, false));
                    }
                  });
}

template <typename T>
Var<T> softmax_rows(Var<T> x) {
  Graph<T>& g = x.graph();
  const int xi = x.id();
  return g.record(ops::softmax_rows(x.value()), {xi}, [=](Graph<T>& gr, int self) {
    gr.add_grad(xi, ops::softmax_rows_backward(gr.grad(self), gr.value(self)));
  });
}

template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, double eps) {
  Graph<T>& g = same_graph<T>({x, gamma, beta});
  ops::LayerNormSaved<T> saved;
  auto out = ops::layer_norm(x.value(), gamma.value(), beta.value(), eps,
                             g.recording() ? &saved : nullptr);
  const int xi = x.id(), gi = gamma.id(), bi = beta.id();
  return g.record(std::move(out), {xi, gi, bi},
                  [=, saved = std::move(saved)](Graph<T>& gr, int self) {
                    auto grads = ops::layer_norm_backward(gr.grad(self), gr.value(xi), gr.value(gi), saved);
                    gr.add_grad(xi, grads.input);
                    gr.add_grad(gi, grads.gamma);
                    gr.add_grad(bi, grads.beta);
                  });
}

template <typename T>
Var<T> depthwise_xcorr(Var<T> search, Var<T> templ) {
  Graph<T>& g = same_graph<T>({search, templ});
  const int si = search.id(), ti = templ.id();
  return g.record(ops::depthwise_xcorr(search.value(), templ.value()), {si, ti},
                  [=](Graph<T>& gr, int self) {
                    auto grads = ops::depthwise_xcorr_backward(gr.grad(self), gr.value(si), gr.value(ti));
                    gr.add_grad(si, grads.search);
                    gr.add_grad(ti, grads.templ);
                  });
}

template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  Graph<T>& g = parts.front().graph();
  std::vector<const BasicTensor<T>*> values;
  std::vector<int> ids;
  for (const Var<T>& p : parts) {
    if (&p.graph() != &g) throw std::logic_error("operands belong to different graphs");
    values.push_back(&p.value());
    ids.push_back(p.id());
  }
  auto out = ops::concat(values, axis);
  return g.record(std::move(out), ids, [=](Graph<T>& gr, int self) {
    const BasicTensor<T>& go = gr.grad(self);
    int begin = 0;
    for (int id : ids) {
      const int extent = gr.value(id).dim(axis);
      if (gr.requires_grad(id)) gr.add_grad(id, ops::slice(go, axis, begin, begin + extent));
      begin += extent;
    }
  });
}

template <typename T>
Var<T> slice(Var<T> x, int axis, int begin, int end) {
  Graph<T>& g = x.graph();
  const int xi = x.id();
  return g.record(ops::slice(x.value(), axis, begin, end), {xi}, [=](Graph<T>& gr, int self) {
    BasicTensor<T> gx(gr.value(xi).shape());
    ops::slice_accumulate(gx, gr.grad(self), axis, begin);
    gr.add_grad(xi, gx);
  });
}

template <typename T>
Var<T> add(Var<T> a, Var<T> b) {
  Graph<T>& g = same_graph<T>({a, b});
  require_shape(b.shape(), a.shape(), "add");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] + b.value()[i];
  const int ai = a.id(), bi = b.id();
  return g.record(std::move(out), {ai, bi}, [=](Graph<T>& gr, int self) {
    const BasicTensor<T> go = gr.grad(self);
    gr.add_grad(ai, go);
    gr.add_grad(bi, go);
  });
}

template <typename T>
Var<T> mul(Var<T> a, Var<T> b) {
  Graph<T>& g = same_graph<T>({a, b});
  require_shape(b.shape(), a.shape(), "mul");
  BasicTensor<T> out(a.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = a.value()[i] * b.value()[i];
  const int ai = a.id(), bi = b.id();
  return g.record(std::move(out), {ai, bi}, [=](Graph<T>& gr, int self) {
    const BasicTensor<T>& go = gr.grad(self);
    const BasicTensor<T>& av = gr.value(ai);
    const BasicTensor<T>& bv = gr.value(bi);
    if (gr.requires_grad(ai)) {
      BasicTensor<T> ga(av.shape());
      for (std::size_t i = 0; i < ga.size(); ++i) ga[i] = go[i] * bv[i];
      gr.add_grad(ai, ga);
    }
    if (gr.requires_grad(bi)) {
      BasicTensor<T> gb(bv.shape());
      for (std::size_t i = 0; i < gb.size(); ++i) gb[i] = go[i] * av[i];
      gr.add_grad(bi, gb);
    }
  });
}

template <typename T>
Var<T> scale(Var<T> x, T factor) {
  Graph<T>& g = x.graph();
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = x.value()[i] * factor;
  const int xi = x.id();
  return g.record(std::move(out), {xi}, [=](Graph<T>& gr, int self) {
    const BasicTensor<T>& go = gr.grad(self);
    BasicTensor<T> gx(go.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = go[i] * factor;
    gr.add_grad(xi, gx);
  });
}

template <typename T>
Var<T> exp(Var<T> x) {
  Graph<T>& g = x.graph();
  BasicTensor<T> out(x.shape());
  for (std::size_t i = 0; i < out.size(); ++i) out[i] = std::exp(x.value()[i]);
  const int xi = x.id();
  return g.record(std::move(out), {xi}, [=](Graph<T>& gr, int self) {
    const BasicTensor<T>& go = gr.grad(self);
    const BasicTensor<T>& y = gr.value(self);
    BasicTensor<T> gx(go.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = go[i] * y[i];
    gr.add_grad(xi, gx);
  });
}

template <typename T>
Var<T> sum(Var<T> x) {
  Graph<T>& g = x.graph();
  double s = 0;
  for (T v : x.value().data()) s += v;
  const int xi = x.id();
  return g.record(BasicTensor<T>::scalar(static_cast<T>(s)), {xi}, [=](Graph<T>& gr, int self) {
    gr.add_grad(xi, BasicTensor<T>(gr.value(xi).shape(), gr.grad(self)[0]));
  });
}

template <typename T>
Var<T> weighted_sum(Var<T> x, const BasicTensor<T>& weights) {
  require_shape(weights.shape(), x.shape(), "weighted_sum");
  Graph<T>& g = x.graph();
  double s = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) s += static_cast<double>(x.value()[i]) * weights[i];
  const int xi = x.id();
  return g.record(BasicTensor<T>::scalar(static_cast<T>(s)), {xi}, [=](Graph<T>& gr, int self) {
    const T go = gr.grad(self)[0];
    BasicTensor<T> gx(weights.shape());
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] = weights[i] * go;
    gr.add_grad(xi, gx);
  });
}

template <typename T>
Var<T> reshape(Var<T> x, Shape shape) {
  Graph<T>& g = x.graph();
  const int xi = x.id();
  return g.record(x.value().reshaped(shape), {xi}, [=](Graph<T>& gr, int self) {
    gr.add_grad(xi, gr.grad(self).reshaped(gr.value(xi).shape()));
  });
}

template <typename T>
Var<T> map_to_tokens(Var<T> map) {
  Graph<T>& g = map.graph();
  const int xi = map.id();
  const int h = map.shape()[2], w = map.shape()[3];
  return g.record(ops::map_to_tokens(map.value()), {xi}, [=](Graph<T>& gr, int self) {
    gr.add_grad(xi, ops::tokens_to_map(gr.grad(self), h, w));
  });
}

template <typename T>
Var<T> tokens_to_map(Var<T> tokens, int height, int width) {
  Graph<T>& g = tokens.graph();
  const int xi = tokens.id();
  return g.record(ops::tokens_to_map(tokens.value(), height, width), {xi},
                  [=](Graph<T>& gr, int self) { gr.add_grad(xi, ops::map_to_tokens(gr.grad(self))); });
}

}  // namespace ag

#define PRL_INSTANTIATE_AG(T)                                                                     \
  template class Graph<T>;                                                                        \
  template std::vector<BasicTensor<T>> value_and_grad(Graph<T>&, Var<T>,                         \
                                                      const std::vector<Parameter<T>*>&);        \
  template Var<T> ag::conv2d(Var<T>, Var<T>, Var<T>, int, int);                                   \
  template Var<T> ag::batch_norm(Var<T>, Var<T>, Var<T>, BasicTensor<T>&, BasicTensor<T>&,       \
                                 const ops::BatchNormOptions&);                                  \
  template Var<T> ag::pool(Var<T>, const ops::PoolSpec&);                                         \
  template Var<T> ag::relu(Var<T>);                                                               \
  template Var<T> ag::bilinear_resize(Var<T>, int, int);                                          \
  template Var<T> ag::linear(Var<T>, Var<T>, Var<T>);                                             \
  template Var<T> ag::matmul(Var<T>, Var<T>, bool, bool);                                         \
  template Var<T> ag::softmax_rows(Var<T>);                                                       \
  template Var<T> ag::layer_norm(Var<T>, Var<T>, Var<T>, double);                                 \
  template Var<T> ag::depthwise_xcorr(Var<T>, Var<T>);                                            \
  template Var<T> ag::concat(const std::vector<Var<T>>&, int);                                    \
  template Var<T> ag::slice(Var<T>, int, int, int);                                               \
  template Var<T> ag::add(Var<T>, Var<T>);                                                        \
  template Var<T> ag::mul(Var<T>, Var<T>);                                                        \
  template Var<T> ag::scale(Var<T>, T);                                                           \
  template Var<T> ag::exp(Var<T>);                                                                \
  template Var<T> ag::sum(Var<T>);                                                                \
  template Var<T> ag::weighted_sum(Var<T>, const BasicTensor<T>&);                                \
  template Var<T> ag::reshape(Var<T>, Shape);                                                     \
  template Var<T> ag::map_to_tokens(Var<T>);                                                      \
  template Var<T> ag::tokens_to_map(Var<T>, int, int);

PRL_INSTANTIATE_AG(float)
PRL_INSTANTIATE_AG(double)

#undef PRL_INSTANTIATE_AG

}  // namespace prl
