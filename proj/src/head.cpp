#include "prl/head.hpp"

#include <cmath>
#include <numbers>

namespace prl {

std::string to_string(const BBox& b) {
  return "(" + std::to_string(b.x) + "," + std::to_string(b.y) + "," + std::to_string(b.w) + "," +
         std::to_string(b.h) + ")";
}

template <typename T>
TrackingHead<T>::TrackingHead(const HeadConfig& config, Rng& rng)
    : config_(config),
      cls1_("head.cls1", config.in_channels, config.hidden, 3, 1, 1, true, rng),
      cls2_("head.cls2", config.hidden, 1, 3, 1, 1, true, rng, nn::Init::kLecun),
      reg1_("head.reg1", config.in_channels, config.hidden, 3, 1, 1, true, rng),
      reg2_("head.reg2", config.hidden, 4, 3, 1, 1, true, rng, nn::Init::kLecun) {
  // start regressing roughly three cells in every direction
  reg2_.bias().value.fill(static_cast<T>(std::log(3.0)));
}

template <typename T>
HeadVars<T> TrackingHead<T>::forward(Graph<T>& g, Var<T> features) {
  if (features.shape().rank() != 4 || features.shape()[1] != config_.in_channels) {
    throw ShapeError("head: expected [N," + std::to_string(config_.in_channels) +
                     ",G,G] features, got " + features.shape().str());
  }
  HeadVars<T> out;
  out.cls = cls2_(g, ag::relu(cls1_(g, features)));
  out.reg = ag::scale(ag::exp(reg2_(g, ag::relu(reg1_(g, features)))), static_cast<T>(config_.stride));
  return out;
}

template <typename T>
void TrackingHead<T>::collect(std::vector<Parameter<T>*>& out) {
  cls1_.collect(out);
  cls2_.collect(out);
  reg1_.collect(out);
  reg2_.collect(out);
}

template <typename T>
Var<T> tokens_to_grid(Var<T> tokens) {
  const int count = tokens.shape()[0];
  const int side = static_cast<int>(std::lround(std::sqrt(static_cast<double>(count))));
  if (side * side != count) {
    throw ShapeError("predict_maps: token count " + std::to_string(count) + " is not a perfect square");
  }
  return ag::tokens_to_map(tokens, side, side);
}

HeadOutputs predict_maps(TrackingHead<float>& head, const Tensor& tokens) {
  Graph<float> g(false);
  HeadVars<float> v = head.forward(g, tokens_to_grid(g.constant(tokens)));
  const int grid = v.cls.shape()[2];
  return {v.cls.value().reshaped(Shape{1, grid, grid}), v.reg.value().reshaped(Shape{4, grid, grid})};
}

Tensor hanning_window(int grid) {
  std::vector<double> h(static_cast<std::size_t>(grid), 1.0);
  if (grid > 1) {
    for (int n = 0; n < grid; ++n) {
      h[static_cast<std::size_t>(n)] = 0.5 - 0.5 * std::cos(2 * std::numbers::pi * n / (grid - 1));
    }
  }
  Tensor w(Shape{grid, grid});
  for (int i = 0; i < grid; ++i) {
    for (int j = 0; j < grid; ++j) {
      w.at(i, j) = static_cast<float>(h[static_cast<std::size_t>(i)] * h[static_cast<std::size_t>(j)]);
    }
  }
  return w;
}

DecodeResult decode_search_box(const HeadOutputs& outputs, const Tensor& window,
                               double window_influence, const GridGeometry& geometry) {
  if (window_influence < 0 || window_influence > 1) {
    throw std::invalid_argument("decode_box: window_influence must lie in [0,1]");
  }
  const int grid = outputs.grid();
  require_shape(window.shape(), Shape{grid, grid}, "decode_box window");
  const std::size_t cells = static_cast<std::size_t>(grid) * grid;
  double best = -1;
  std::size_t arg = 0;
  for (std::size_t c = 0; c < cells; ++c) {
    const double s = 1.0 / (1.0 + std::exp(-static_cast<double>(outputs.cls[c])));
    const double pen = s * (1 - window_influence) + window[c] * window_influence;
    if (pen > best) {
      best = pen;
      arg = c;
    }
  }
  DecodeResult r;
  r.cell_i = static_cast<int>(arg / static_cast<std::size_t>(grid));
  r.cell_j = static_cast<int>(arg % static_cast<std::size_t>(grid));
  r.peak_score = 1.0 / (1.0 + std::exp(-static_cast<double>(outputs.cls[arg])));
  const double l = outputs.reg[arg], t = outputs.reg[cells + arg];
  const double rr = outputs.reg[2 * cells + arg], b = outputs.reg[3 * cells + arg];
  const double px = geometry.cell_x(r.cell_j), py = geometry.cell_y(r.cell_i);
  r.box = {px - l, py - t, l + rr, t + b};
  return r;
}

template class TrackingHead<float>;
template class TrackingHead<double>;
template Var<float> tokens_to_grid(Var<float>);
template Var<double> tokens_to_grid(Var<double>);

}  // namespace prl
