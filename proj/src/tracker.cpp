#include "prl/tracker.hpp"

#include <algorithm>
#include <cmath>

namespace prl {

std::array<float, 3> channel_means(const Image& frame) {
  std::array<double, 3> sum{};
  const std::size_t n = static_cast<std::size_t>(frame.width) * frame.height;
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) sum[static_cast<std::size_t>(c)] += frame.rgb[i * 3 + static_cast<std::size_t>(c)];
  }
  std::array<float, 3> m{};
  for (int c = 0; c < 3; ++c) {
    m[static_cast<std::size_t>(c)] = n ? static_cast<float>(sum[static_cast<std::size_t>(c)] / n / 255.0) : 0.f;
  }
  return m;
}

Tensor crop_patch(const Image& frame, double cx, double cy, double side, int out_size,
                  const std::array<float, 3>* means) {
  if (!(side > 0) || !std::isfinite(side) || out_size < 1 || !std::isfinite(cx) || !std::isfinite(cy)) {
    throw std::invalid_argument("crop_patch: degenerate crop (side " + std::to_string(side) +
                                ", out_size " + std::to_string(out_size) + ")");
  }
  if (frame.width < 1 || frame.height < 1) throw std::invalid_argument("crop_patch: empty frame");
  const std::array<float, 3> m = means ? *means : channel_means(frame);
  const double s = side / out_size;
  const double half = (out_size - 1) / 2.0;
  std::vector<int> x0(static_cast<std::size_t>(out_size)), y0(static_cast<std::size_t>(out_size));
  std::vector<double> fx(static_cast<std::size_t>(out_size)), fy(static_cast<std::size_t>(out_size));
  for (int u = 0; u < out_size; ++u) {
    const double x = (cx - 0.5) + (u - half) * s;
    const double y = (cy - 0.5) + (u - half) * s;
    x0[static_cast<std::size_t>(u)] = static_cast<int>(std::floor(x));
    y0[static_cast<std::size_t>(u)] = static_cast<int>(std::floor(y));
    fx[static_cast<std::size_t>(u)] = x - std::floor(x);
    fy[static_cast<std::size_t>(u)] = y - std::floor(y);
  }
  Tensor out(Shape{1, 3, out_size, out_size});
  auto px = [&](int x, int y, int c) -> double {
    if (x < 0 || y < 0 || x >= frame.width || y >= frame.height) return m[static_cast<std::size_t>(c)];
    return frame.at(x, y, c) / 255.0;
  };
  for (int c = 0; c < 3; ++c) {
    for (int v = 0; v < out_size; ++v) {
      const int yy = y0[static_cast<std::size_t>(v)];
      const double wy = fy[static_cast<std::size_t>(v)];
      for (int u = 0; u < out_size; ++u) {
        const int xx = x0[static_cast<std::size_t>(u)];
        const double wx = fx[static_cast<std::size_t>(u)];
        double val = px(xx, yy, c);
        if (wx != 0 || wy != 0) {
          val = (1 - wy) * ((1 - wx) * val + wx * px(xx + 1, yy, c)) +
                wy * ((1 - wx) * px(xx, yy + 1, c) + wx * px(xx + 1, yy + 1, c));
        }
        out.at(0, c, v, u) = static_cast<float>(val);
      }
    }
  }
  return out;
}

double template_side(double w, double h) {
  const double p = (w + h) / 2;
  return std::sqrt((w + p) * (h + p));
}

double search_side(double w, double h, int template_size, int search_size) {
  return template_side(w, h) * search_size / template_size;
}

BBox search_to_frame(const BBox& b, double scale, double center_x, double center_y,
                     const GridGeometry& geometry) {
  const double cx = center_x + (b.cx() - geometry.center) * scale;
  const double cy = center_y + (b.cy() - geometry.center) * scale;
  return BBox::from_center(cx, cy, b.w * scale, b.h * scale);
}

BBox clip_box(const BBox& b, int width, int height) {
  auto clip_axis = [](double lo, double len, int limit, double& out_lo, double& out_len) {
    double a = std::clamp(lo, 0.0, static_cast<double>(limit));
    double z = std::clamp(lo + len, 0.0, static_cast<double>(limit));
    if (!(z > a)) {
      a = std::min(a, limit - 1.0);
      z = a + 1;
    }
    out_lo = a;
    out_len = z - a;
  };
  BBox r;
  clip_axis(b.x, b.w, width, r.x, r.w);
  clip_axis(b.y, b.h, height, r.y, r.h);
  return r;
}

CoarseReps encode_patch(PrlModel<float>& model, const Tensor& patch) {
  Graph<float> g(false);
  const CoarseRepsVars<float> v = model.encode(g, g.constant(patch), false);
  CoarseReps r;
  if (v.w3.valid()) r.w3 = v.w3.value();
  if (v.w4.valid()) r.w4 = v.w4.value();
  r.w5 = v.w5.value();
  return r;
}

Tracker::Tracker(PrlModel<float>& model, const TrackerConfig& config)
    : model_(model), config_(config), geometry_(model.config().geometry()) {
  if (config.window_influence < 0 || config.window_influence > 1) {
    throw std::invalid_argument("tracker: window_influence must lie in [0,1]");
  }
  if (config.smooth_lr_k < 0 || config.smooth_lr_k > 1) {
    throw std::invalid_argument("tracker: smooth_lr_k must lie in [0,1]");
  }
  state_.window = hanning_window(geometry_.grid);
}

void Tracker::init(const Image& frame, const BBox& box) {
  if (!box.valid()) throw std::invalid_argument("tracker: initial box must have positive extents");
  state_.cx = box.cx();
  state_.cy = box.cy();
  state_.w = box.w;
  state_.h = box.h;
  const auto& mc = model_.config();
  const Tensor patch = crop_patch(frame, state_.cx, state_.cy, template_side(box.w, box.h), mc.template_size);
  state_.templ = encode_patch(model_, patch);
}

HeadOutputs Tracker::predict(const Tensor& search_patch) {
  Graph<float> g(false);
  CoarseRepsVars<float> t;
  if (!state_.templ.w3.empty()) t.w3 = g.constant(state_.templ.w3);
  if (!state_.templ.w4.empty()) t.w4 = g.constant(state_.templ.w4);
  t.w5 = g.constant(state_.templ.w5);
  const CoarseRepsVars<float> s = model_.encode(g, g.constant(search_patch), false);
  const HeadVars<float> out = model_.predict(g, s, t);
  const int grid = out.cls.shape()[2];
  return {out.cls.value().reshaped(Shape{1, grid, grid}), out.reg.value().reshaped(Shape{4, grid, grid})};
}

BBox Tracker::update(const Image& frame) {
  const auto& mc = model_.config();
  const double side = search_side(state_.w, state_.h, mc.template_size, mc.search_size);
  const double scale = side / mc.search_size;
  const auto means = channel_means(frame);
  const Tensor patch = crop_patch(frame, state_.cx, state_.cy, side, mc.search_size, &means);
  const DecodeResult d = decode_search_box(predict(patch), state_.window, config_.window_influence, geometry_);
  const BBox fb = search_to_frame(d.box, scale, state_.cx, state_.cy, geometry_);
  const double lr = config_.smooth_lr_k * d.peak_score;
  const double w = state_.w * (1 - lr) + fb.w * lr;
  const double h = state_.h * (1 - lr) + fb.h * lr;
  state_.cx = std::clamp(fb.cx(), 0.0, static_cast<double>(frame.width));
  state_.cy = std::clamp(fb.cy(), 0.0, static_cast<double>(frame.height));
  state_.w = std::clamp(w, config_.min_size, std::max(config_.min_size, static_cast<double>(frame.width)));
  state_.h = std::clamp(h, config_.min_size, std::max(config_.min_size, static_cast<double>(frame.height)));
  state_.last_score = d.peak_score;
  return clip_box(BBox::from_center(state_.cx, state_.cy, state_.w, state_.h), frame.width, frame.height);
}

std::vector<BBox> track_sequence(const std::vector<std::filesystem::path>& frames, const BBox& init_box,
                                 PrlModel<float>& model, const TrackerConfig& config) {
  if (frames.empty()) throw std::invalid_argument("track_sequence: no frames");
  auto read = [&](std::size_t i) {
    try {
      return load_image(frames[i]);
    } catch (const IoError& e) {
      throw IoError("frame " + std::to_string(i) + ": " + e.what());
    }
  };
  const Image first = read(0);
  if (!init_box.valid() || init_box.x < 0 || init_box.y < 0 || init_box.x + init_box.w > first.width ||
      init_box.y + init_box.h > first.height) {
    throw std::invalid_argument("track_sequence: initial box " + to_string(init_box) +
                                " is not inside the first frame");
  }
  Tracker tracker(model, config);
  tracker.init(first, init_box);
  std::vector<BBox> out{init_box};
  for (std::size_t i = 1; i < frames.size(); ++i) out.push_back(tracker.update(read(i)));
  return out;
}

}  // namespace prl
