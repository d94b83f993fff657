#include "prl/ops.hpp"

#include <Eigen/Core>
#include <algorithm>
#include <cmath>
#include <limits>

namespace prl::ops {
namespace {

template <typename T>
using RowMat = Eigen::Matrix<T, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
template <typename T>
using MapMat = Eigen::Map<RowMat<T>>;
template <typename T>
using ConstMapMat = Eigen::Map<const RowMat<T>>;

std::string dims(const Shape& s) { return s.str(); }

void require_rank(const Shape& s, int rank, const char* op, const char* what) {
  if (s.rank() != rank) {
    throw ShapeError(std::string(op) + ": " + what + " must have rank " + std::to_string(rank) +
                     ", got " + dims(s));
  }
}

struct ConvGeom {
  int n, cin, h, w, cout, kh, kw, ho, wo, stride, pad;
  bool pointwise() const { return kh == 1 && kw == 1 && stride == 1 && pad == 0; }
  std::size_t k() const { return static_cast<std::size_t>(cin) * kh * kw; }
  std::size_t p() const { return static_cast<std::size_t>(ho) * wo; }
};

ConvGeom conv_geometry(const Shape& in, const Shape& wt, int stride, int padding) {
  require_rank(in, 4, "conv2d", "input");
  require_rank(wt, 4, "conv2d", "weight");
  if (stride < 1) throw ShapeError("conv2d: stride must be >= 1");
  if (padding < 0) throw ShapeError("conv2d: padding must be >= 0");
  if (in[1] != wt[1]) {
    throw ShapeError("conv2d: input channels " + std::to_string(in[1]) + " (input " + dims(in) +
                     ") do not match weight channels " + std::to_string(wt[1]) + " (weight " +
                     dims(wt) + ")");
  }
  ConvGeom g{in[0], in[1], in[2], in[3], wt[0], wt[2], wt[3], 0, 0, stride, padding};
  if (g.kh > g.h + 2 * padding || g.kw > g.w + 2 * padding) {
    throw ShapeError("conv2d: kernel " + std::to_string(g.kh) + "x" + std::to_string(g.kw) +
                     " exceeds padded input " + dims(in));
  }
  g.ho = conv_out_extent(g.h, g.kh, stride, padding);
  g.wo = conv_out_extent(g.w, g.kw, stride, padding);
  return g;
}

template <typename T>
void im2col(const T* img, const ConvGeom& g, T* cols) {
  const std::size_t p = g.p();
  for (int c = 0; c < g.cin; ++c) {
    for (int u = 0; u < g.kh; ++u) {
      for (int v = 0; v < g.kw; ++v) {
        T* row = cols + (static_cast<std::size_t>(c * g.kh + u) * g.kw + v) * p;
        const T* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + u;
          T* dst = row + static_cast<std::size_t>(oh) * g.wo;
          if (ih < 0 || ih >= g.h) {
            std::fill(dst, dst + g.wo, T(0));
            continue;
          }
          const T* src = plane + static_cast<std::size_t>(ih) * g.w;
          for (int ow = 0; ow < g.wo; ++ow) {
            const int iw = ow * g.stride - g.pad + v;
            dst[ow] = (iw >= 0 && iw < g.w) ? src[iw] : T(0);
          }
        }
      }
    }
  }
}

template <typename T>
void col2im(const T* cols, const ConvGeom& g, T* img) {
  const std::size_t p = g.p();
  for (int c = 0; c < g.cin; ++c) {
    for (int u = 0; u < g.kh; ++u) {
      for (int v = 0; v < g.kw; ++v) {
        const T* row = cols + (static_cast<std::size_t>(c * g.kh + u) * g.kw + v) * p;
        T* plane = img + static_cast<std::size_t>(c) * g.h * g.w;
        for (int oh = 0; oh < g.ho; ++oh) {
          const int ih = oh * g.stride - g.pad + u;
          if (ih < 0 || ih >= g.h) continue;
          const T* src = row + static_cast<std::size_t>(oh) * g.wo;
          T* dst = plane + static_cast<std::size_t>(ih) * g.w;
          for (int ow = 0; ow < g.wo; ++ow) {
            const int iw = ow * g.stride - g.pad + v;
            if (iw >= 0 && iw < g.w) dst[iw] += src[ow];
          }
        }
      }
    }
  }
}

struct NormLayout {
  int n, c, inner;  // inner = H*W (1 for rank-2)
  std::size_t count() const { return static_cast<std::size_t>(n) * inner; }
};

NormLayout norm_layout(const Shape& s, const char* op) {
  if (s.rank() == 4) return {s[0], s[1], s[2] * s[3]};
  if (s.rank() == 2) return {s[0], s[1], 1};
  throw ShapeError(std::string(op) + ": input must have rank 2 or 4, got " + dims(s));
}

void require_channel_param(const Shape& p, int c, const char* op, const char* name) {
  if (p.rank() != 1 || p[0] != c) {
    throw ShapeError(std::string(op) + ": " + name + " must be [" + std::to_string(c) + "], got " +
                     dims(p));
  }
}

// Resampling coordinate for align-corners bilinear interpolation.
struct Tap {
  int i0, i1;
  double frac;
};

std::vector<Tap> bilinear_taps(int in, int out) {
  std::vector<Tap> taps(static_cast<std::size_t>(out));
  for (int i = 0; i < out; ++i) {
    const double src = out == 1 ? (in - 1) / 2.0
                                : static_cast<double>(i) * (in - 1) / static_cast<double>(out - 1);
    int i0 = static_cast<int>(std::floor(src));
    i0 = std::clamp(i0, 0, in - 1);
    const int i1 = std::min(i0 + 1, in - 1);
    taps[static_cast<std::size_t>(i)] = {i0, i1, src - i0};
  }
  return taps;
}

struct AxisSplit {
  std::size_t outer, extent, inner;
};

AxisSplit split_axis(const Shape& s, int axis) {
  AxisSplit a{1, static_cast<std::size_t>(s[axis]), 1};
  for (int i = 0; i < axis; ++i) a.outer *= static_cast<std::size_t>(s[i]);
  for (int i = axis + 1; i < s.rank(); ++i) a.inner *= static_cast<std::size_t>(s[i]);
  return a;
}

}  // namespace

int conv_out_extent(int in, int kernel, int stride, int padding) {
  const int span = in + 2 * padding - kernel;
  if (span < 0) return 0;
  return span / stride + 1;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int padding) {
  const ConvGeom g = conv_geometry(input.shape(), weight.shape(), stride, padding);
  if (!bias.empty()) require_channel_param(bias.shape(), g.cout, "conv2d", "bias");
  BasicTensor<T> out(Shape{g.n, g.cout, g.ho, g.wo});
  const std::size_t k = g.k(), p = g.p();
  ConstMapMat<T> wmat(weight.data().data(), g.cout, static_cast<Eigen::Index>(k));
  AlignedVector<T> cols;
  if (!g.pointwise()) cols.resize(k * p);
  for (int n = 0; n < g.n; ++n) {
    const T* img = input.data().data() + static_cast<std::size_t>(n) * g.cin * g.h * g.w;
    const T* colp = img;
    if (!g.pointwise()) {
      im2col(img, g, cols.data());
      colp = cols.data();
    }
    ConstMapMat<T> cmat(colp, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    MapMat<T> omat(out.data().data() + static_cast<std::size_t>(n) * g.cout * p, g.cout,
                   static_cast<Eigen::Index>(p));
    omat.noalias() = wmat * cmat;
    if (!bias.empty()) {
      for (int co = 0; co < g.cout; ++co) omat.row(co).array() += bias[static_cast<std::size_t>(co)];
    }
  }
  return out;
}

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                               const BasicTensor<T>& weight, bool has_bias, int stride,
                               int padding, bool need_input_grad) {
  const ConvGeom g = conv_geometry(input.shape(), weight.shape(), stride, padding);
  require_shape(grad_out.shape(), Shape{g.n, g.cout, g.ho, g.wo}, "conv2d_backward grad");
  const std::size_t k = g.k(), p = g.p();
  Conv2dGrads<T> grads;
  grads.weight = BasicTensor<T>(weight.shape());
  if (has_bias) grads.bias = BasicTensor<T>(Shape{g.cout});
  if (need_input_grad) grads.input = BasicTensor<T>(input.shape());

  ConstMapMat<T> wmat(weight.data().data(), g.cout, static_cast<Eigen::Index>(k));
  MapMat<T> gw(grads.weight.data().data(), g.cout, static_cast<Eigen::Index>(k));
  AlignedVector<T> cols, gcols;
  if (!g.pointwise()) {
    cols.resize(k * p);
    if (need_input_grad) gcols.resize(k * p);
  }
  for (int n = 0; n < g.n; ++n) {
    const std::size_t img_off = static_cast<std::size_t>(n) * g.cin * g.h * g.w;
    const T* img = input.data().data() + img_off;
    const T* colp = img;
    if (!g.pointwise()) {
      im2col(img, g, cols.data());
      colp = cols.data();
    }
    ConstMapMat<T> cmat(colp, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
    ConstMapMat<T> gomat(grad_out.data().data() + static_cast<std::size_t>(n) * g.cout * p, g.cout,
                         static_cast<Eigen::Index>(p));
    gw.noalias() += gomat * cmat.transpose();
    if (has_bias) {
      for (int co = 0; co < g.cout; ++co) grads.bias[static_cast<std::size_t>(co)] += gomat.row(co).sum();
    }
    if (need_input_grad) {
      T* gimg = grads.input.data().data() + img_off;
      if (g.pointwise()) {
        MapMat<T> gi(gimg, static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
        gi.noalias() = wmat.transpose() * gomat;
      } else {
        MapMat<T> gc(gcols.data(), static_cast<Eigen::Index>(k), static_cast<Eigen::Index>(p));
        gc.noalias() = wmat.transpose() * gomat;
        col2im(gcols.data(), g, gimg);
      }
    }
  }
  return grads;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, BasicTensor<T>& running_mean,
                          BasicTensor<T>& running_var, const BatchNormOptions& opts,
                          BatchNormSaved<T>* saved) {
  const NormLayout L = norm_layout(input.shape(), "batch_norm");
  if (!(opts.eps > 0)) throw ShapeError("batch_norm: eps must be positive");
  require_channel_param(gamma.shape(), L.c, "batch_norm", "gamma");
  require_channel_param(beta.shape(), L.c, "batch_norm", "beta");
  require_channel_param(running_mean.shape(), L.c, "batch_norm", "running_mean");
  require_channel_param(running_var.shape(), L.c, "batch_norm", "running_var");

  std::vector<T> mean(static_cast<std::size_t>(L.c)), inv_std(static_cast<std::size_t>(L.c));
  const T* x = input.data().data();
  const std::size_t m = L.count();
  for (int c = 0; c < L.c; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    if (opts.training) {
      double sum = 0;
      for (int n = 0; n < L.n; ++n) {
        const T* p = x + (static_cast<std::size_t>(n) * L.c + ci) * L.inner;
        for (int i = 0; i < L.inner; ++i) sum += p[i];
      }
      const double mu = sum / static_cast<double>(m);
      double sq = 0;
      for (int n = 0; n < L.n; ++n) {
        const T* p = x + (static_cast<std::size_t>(n) * L.c + ci) * L.inner;
        for (int i = 0; i < L.inner; ++i) {
          const double d = p[i] - mu;
          sq += d * d;
        }
      }
      const double var = sq / static_cast<double>(m);
      mean[ci] = static_cast<T>(mu);
      inv_std[ci] = static_cast<T>(1.0 / std::sqrt(var + opts.eps));
      const double unbiased = m > 1 ? sq / static_cast<double>(m - 1) : var;
      running_mean[ci] = static_cast<T>((1.0 - opts.momentum) * running_mean[ci] + opts.momentum * mu);
      running_var[ci] =
          static_cast<T>((1.0 - opts.momentum) * running_var[ci] + opts.momentum * unbiased);
    } else {
      mean[ci] = running_mean[ci];
      inv_std[ci] = static_cast<T>(1.0 / std::sqrt(static_cast<double>(running_var[ci]) + opts.eps));
    }
  }

  BasicTensor<T> out(input.shape());
  T* y = out.data().data();
  for (int n = 0; n < L.n; ++n) {
    for (int c = 0; c < L.c; ++c) {
      const auto ci = static_cast<std::size_t>(c);
      const std::size_t off = (static_cast<std::size_t>(n) * L.c + ci) * L.inner;
      const T scale = inv_std[ci] * gamma[ci];
      const T mu = mean[ci];
      const T b = beta[ci];
      for (int i = 0; i < L.inner; ++i) y[off + i] = (x[off + i] - mu) * scale + b;
    }
  }
  if (saved) {
    saved->mean = std::move(mean);
    saved->inv_std = std::move(inv_std);
  }
  return out;
}

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                      const BasicTensor<T>& gamma, const BatchNormSaved<T>& saved,
                                      bool training) {
  const NormLayout L = norm_layout(input.shape(), "batch_norm_backward");
  require_shape(grad_out.shape(), input.shape(), "batch_norm_backward grad");
  BatchNormGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(Shape{L.c}),
                      BasicTensor<T>(Shape{L.c})};
  const T* x = input.data().data();
  const T* dy = grad_out.data().data();
  T* dx = g.input.data().data();
  const double m = static_cast<double>(L.count());
  for (int c = 0; c < L.c; ++c) {
    const auto ci = static_cast<std::size_t>(c);
    const double mu = saved.mean[ci], is = saved.inv_std[ci];
    double sum_dy = 0, sum_dy_xhat = 0;
    for (int n = 0; n < L.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * L.c + ci) * L.inner;
      for (int i = 0; i < L.inner; ++i) {
        sum_dy += dy[off + i];
        sum_dy_xhat += dy[off + i] * (x[off + i] - mu) * is;
      }
    }
    g.gamma[ci] = static_cast<T>(sum_dy_xhat);
    g.beta[ci] = static_cast<T>(sum_dy);
    const double gs = gamma[ci] * is;
    for (int n = 0; n < L.n; ++n) {
      const std::size_t off = (static_cast<std::size_t>(n) * L.c + ci) * L.inner;
      for (int i = 0; i < L.inner; ++i) {
        if (training) {
          const double xhat = (x[off + i] - mu) * is;
          dx[off + i] = static_cast<T>(gs / m * (m * dy[off + i] - sum_dy - xhat * sum_dy_xhat));
        } else {
          dx[off + i] = static_cast<T>(gs * dy[off + i]);
        }
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> pool(const BasicTensor<T>& input, const PoolSpec& spec,
                    std::vector<std::int64_t>* argmax) {
  require_rank(input.shape(), 4, "pool", "input");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  int ho = 0, wo = 0;
  if (spec.kind == PoolSpec::Kind::kAdaptiveMax) {
    if (spec.a <= 0 || spec.b <= 0) throw ShapeError("pool: zero-sized adaptive target");
    if (spec.a > H || spec.b > W) {
      throw ShapeError("pool: adaptive target " + std::to_string(spec.a) + "x" +
                       std::to_string(spec.b) + " exceeds input " + dims(input.shape()));
    }
    ho = spec.a;
    wo = spec.b;
  } else {
    if (spec.a <= 0 || spec.b <= 0) throw ShapeError("pool: kernel and stride must be positive");
    if (spec.a > H || spec.a > W) {
      throw ShapeError("pool: kernel " + std::to_string(spec.a) + " exceeds input " +
                       dims(input.shape()));
    }
    ho = conv_out_extent(H, spec.a, spec.b, 0);
    wo = conv_out_extent(W, spec.a, spec.b, 0);
  }
  BasicTensor<T> out(Shape{N, C, ho, wo});
  if (argmax) argmax->assign(out.size(), 0);
  const T* x = input.data().data();
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const std::size_t plane = static_cast<std::size_t>(nc) * H * W;
    for (int i = 0; i < ho; ++i) {
      int h0, h1;
      if (spec.kind == PoolSpec::Kind::kAdaptiveMax) {
        h0 = adaptive_begin(i, H, ho);
        h1 = adaptive_end(i, H, ho);
      } else {
        h0 = i * spec.b;
        h1 = h0 + spec.a;
      }
      for (int j = 0; j < wo; ++j, ++o) {
        int w0, w1;
        if (spec.kind == PoolSpec::Kind::kAdaptiveMax) {
          w0 = adaptive_begin(j, W, wo);
          w1 = adaptive_end(j, W, wo);
        } else {
          w0 = j * spec.b;
          w1 = w0 + spec.a;
        }
        std::size_t best = plane + static_cast<std::size_t>(h0) * W + w0;
        T best_v = x[best];
        for (int r = h0; r < h1; ++r) {
          for (int c = w0; c < w1; ++c) {
            const std::size_t idx = plane + static_cast<std::size_t>(r) * W + c;
            if (x[idx] > best_v) {
              best_v = x[idx];
              best = idx;
            }
          }
        }
        out[o] = best_v;
        if (argmax) (*argmax)[o] = static_cast<std::int64_t>(best);
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> pool_backward(const BasicTensor<T>& grad_out, const std::vector<std::int64_t>& argmax,
                             const Shape& input_shape) {
  if (argmax.size() != grad_out.size()) throw ShapeError("pool_backward: argmax size mismatch");
  BasicTensor<T> g(input_shape);
  for (std::size_t i = 0; i < argmax.size(); ++i) g[static_cast<std::size_t>(argmax[i])] += grad_out[i];
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input) {
  BasicTensor<T> out(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) out[i] = input[i] > T(0) ? input[i] : T(0);
  return out;
}

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input) {
  BasicTensor<T> g(input.shape());
  for (std::size_t i = 0; i < input.size(); ++i) g[i] = input[i] > T(0) ? grad_out[i] : T(0);
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& input, int target_h, int target_w) {
  require_rank(input.shape(), 4, "bilinear_resize", "input");
  if (target_h < 1 || target_w < 1) throw ShapeError("bilinear_resize: target extents must be >= 1");
  const int N = input.dim(0), C = input.dim(1), H = input.dim(2), W = input.dim(3);
  const auto ty = bilinear_taps(H, target_h);
  const auto tx = bilinear_taps(W, target_w);
  BasicTensor<T> out(Shape{N, C, target_h, target_w});
  const T* x = input.data().data();
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    const T* plane = x + static_cast<std::size_t>(nc) * H * W;
    for (const Tap& a : ty) {
      const T fy = static_cast<T>(a.frac);
      const T* r0 = plane + static_cast<std::size_t>(a.i0) * W;
      const T* r1 = plane + static_cast<std::size_t>(a.i1) * W;
      for (const Tap& b : tx) {
        const T fx = static_cast<T>(b.frac);
        const T top = r0[b.i0] * (T(1) - fx) + r0[b.i1] * fx;
        const T bot = r1[b.i0] * (T(1) - fx) + r1[b.i1] * fx;
        out[o++] = top * (T(1) - fy) + bot * fy;
      }
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> bilinear_resize_backward(const BasicTensor<T>& grad_out, const Shape& input_shape) {
  const int N = input_shape[0], C = input_shape[1], H = input_shape[2], W = input_shape[3];
  const int th = grad_out.dim(2), tw = grad_out.dim(3);
  const auto ty = bilinear_taps(H, th);
  const auto tx = bilinear_taps(W, tw);
  BasicTensor<T> g(input_shape);
  std::size_t o = 0;
  for (int nc = 0; nc < N * C; ++nc) {
    T* plane = g.data().data() + static_cast<std::size_t>(nc) * H * W;
    for (const Tap& a : ty) {
      const T fy = static_cast<T>(a.frac);
      T* r0 = plane + static_cast<std::size_t>(a.i0) * W;
      T* r1 = plane + static_cast<std::size_t>(a.i1) * W;
      for (const Tap& b : tx) {
        const T fx = static_cast<T>(b.frac);
        const T go = grad_out[o++];
        r0[b.i0] += go * (T(1) - fy) * (T(1) - fx);
        r0[b.i1] += go * (T(1) - fy) * fx;
        r1[b.i0] += go * fy * (T(1) - fx);
        r1[b.i1] += go * fy * fx;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias) {
  require_rank(input.shape(), 2, "linear", "input");
  require_rank(weight.shape(), 2, "linear", "weight");
  if (input.dim(1) != weight.dim(0)) {
    throw ShapeError("linear: input " + dims(input.shape()) + " incompatible with weight " +
                     dims(weight.shape()));
  }
  const int rows = input.dim(0), din = input.dim(1), dout = weight.dim(1);
  if (!bias.empty()) require_channel_param(bias.shape(), dout, "linear", "bias");
  BasicTensor<T> out(Shape{rows, dout});
  ConstMapMat<T> x(input.data().data(), rows, din);
  ConstMapMat<T> w(weight.data().data(), din, dout);
  MapMat<T> y(out.data().data(), rows, dout);
  y.noalias() = x * w;
  if (!bias.empty()) {
    Eigen::Map<const Eigen::Matrix<T, 1, Eigen::Dynamic>> b(bias.data().data(), dout);
    y.rowwise() += b;
  }
  return out;
}

template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool trans_a, bool trans_b) {
  require_rank(a.shape(), 2, "matmul", "lhs");
  require_rank(b.shape(), 2, "matmul", "rhs");
  const int ar = trans_a ? a.dim(1) : a.dim(0), ac = trans_a ? a.dim(0) : a.dim(1);
  const int br = trans_b ? b.dim(1) : b.dim(0), bc = trans_b ? b.dim(0) : b.dim(1);
  if (ac != br) {
    throw ShapeError("matmul: inner extents disagree, lhs " + dims(a.shape()) + " rhs " +
                     dims(b.shape()));
  }
  BasicTensor<T> out(Shape{ar, bc});
  ConstMapMat<T> am(a.data().data(), a.dim(0), a.dim(1));
  ConstMapMat<T> bm(b.data().data(), b.dim(0), b.dim(1));
  MapMat<T> om(out.data().data(), ar, bc);
  if (!trans_a && !trans_b) om.noalias() = am * bm;
  else if (trans_a && !trans_b) om.noalias() = am.transpose() * bm;
  else if (!trans_a && trans_b) om.noalias() = am * bm.transpose();
  else om.noalias() = am.transpose() * bm.transpose();
  return out;
}

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& input) {
  require_rank(input.shape(), 2, "softmax_rows", "input");
  const int rows = input.dim(0), k = input.dim(1);
  BasicTensor<T> out(input.shape());
  for (int r = 0; r < rows; ++r) {
    const T* x = input.data().data() + static_cast<std::size_t>(r) * k;
    T* y = out.data().data() + static_cast<std::size_t>(r) * k;
    const T mx = *std::max_element(x, x + k);
    double sum = 0;
    for (int i = 0; i < k; ++i) {
      y[i] = std::exp(x[i] - mx);
      sum += y[i];
    }
    const T inv = static_cast<T>(1.0 / sum);
    for (int i = 0; i < k; ++i) y[i] *= inv;
  }
  return out;
}

template <typename T>
BasicTensor<T> softmax_rows_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output) {
  const int rows = output.dim(0), k = output.dim(1);
  BasicTensor<T> g(output.shape());
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * k;
    double dot = 0;
    for (int i = 0; i < k; ++i) dot += grad_out[off + i] * output[off + i];
    for (int i = 0; i < k; ++i) {
      g[off + i] = static_cast<T>(output[off + i] * (grad_out[off + i] - dot));
    }
  }
  return g;
}

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps, LayerNormSaved<T>* saved) {
  require_rank(input.shape(), 2, "layer_norm", "input");
  if (!(eps > 0)) throw ShapeError("layer_norm: eps must be positive");
  const int rows = input.dim(0), d = input.dim(1);
  require_channel_param(gamma.shape(), d, "layer_norm", "gamma");
  require_channel_param(beta.shape(), d, "layer_norm", "beta");
  BasicTensor<T> out(input.shape());
  std::vector<T> means(static_cast<std::size_t>(rows)), inv(static_cast<std::size_t>(rows));
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * d;
    double sum = 0;
    for (int i = 0; i < d; ++i) sum += input[off + i];
    const double mu = sum / d;
    double sq = 0;
    for (int i = 0; i < d; ++i) {
      const double t = input[off + i] - mu;
      sq += t * t;
    }
    const T m = static_cast<T>(mu);
    const T is = static_cast<T>(1.0 / std::sqrt(sq / d + eps));
    means[static_cast<std::size_t>(r)] = m;
    inv[static_cast<std::size_t>(r)] = is;
    for (int i = 0; i < d; ++i) {
      out[off + i] = (input[off + i] - m) * is * gamma[static_cast<std::size_t>(i)] +
                     beta[static_cast<std::size_t>(i)];
    }
  }
  if (saved) {
    saved->mean = std::move(means);
    saved->inv_std = std::move(inv);
  }
  return out;
}

template <typename T>
LayerNormGrads<T> layer_norm_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                      const BasicTensor<T>& gamma, const LayerNormSaved<T>& saved) {
  const int rows = input.dim(0), d = input.dim(1);
  LayerNormGrads<T> g{BasicTensor<T>(input.shape()), BasicTensor<T>(Shape{d}),
                      BasicTensor<T>(Shape{d})};
  std::vector<double> dxhat(static_cast<std::size_t>(d));
  for (int r = 0; r < rows; ++r) {
    const std::size_t off = static_cast<std::size_t>(r) * d;
    const double mu = saved.mean[static_cast<std::size_t>(r)];
    const double is = saved.inv_std[static_cast<std::size_t>(r)];
    double s1 = 0, s2 = 0;
    for (int i = 0; i < d; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      const double xhat = (input[off + ii] - mu) * is;
      g.gamma[ii] += static_cast<T>(grad_out[off + ii] * xhat);
      g.beta[ii] += grad_out[off + ii];
      dxhat[ii] = grad_out[off + ii] * static_cast<double>(gamma[ii]);
      s1 += dxhat[ii];
      s2 += dxhat[ii] * xhat;
    }
    for (int i = 0; i < d; ++i) {
      const auto ii = static_cast<std::size_t>(i);
      const double xhat = (input[off + ii] - mu) * is;
      g.input[off + ii] = static_cast<T>(is / d * (d * dxhat[ii] - s1 - xhat * s2));
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> depthwise_xcorr(const BasicTensor<T>& search, const BasicTensor<T>& templ) {
  require_rank(search.shape(), 4, "depthwise_xcorr", "search");
  require_rank(templ.shape(), 4, "depthwise_xcorr", "template");
  const int N = search.dim(0), C = search.dim(1), Hs = search.dim(2), Ws = search.dim(3);
  const int Ht = templ.dim(2), Wt = templ.dim(3);
  if (templ.dim(0) != N || templ.dim(1) != C) {
    throw ShapeError("depthwise_xcorr: batch/channels differ, search " + dims(search.shape()) +
                     " template " + dims(templ.shape()));
  }
  if (Ht > Hs || Wt > Ws) {
    throw ShapeError("depthwise_xcorr: template " + dims(templ.shape()) + " larger than search " +
                     dims(search.shape()));
  }
  const int Ho = Hs - Ht + 1, Wo = Ws - Wt + 1;
  BasicTensor<T> out(Shape{N, C, Ho, Wo});
  for (int nc = 0; nc < N * C; ++nc) {
    const T* s = search.data().data() + static_cast<std::size_t>(nc) * Hs * Ws;
    const T* t = templ.data().data() + static_cast<std::size_t>(nc) * Ht * Wt;
    T* o = out.data().data() + static_cast<std::size_t>(nc) * Ho * Wo;
    for (int u = 0; u < Ht; ++u) {
      for (int v = 0; v < Wt; ++v) {
        const T tv = t[u * Wt + v];
        for (int i = 0; i < Ho; ++i) {
          const T* srow = s + static_cast<std::size_t>(i + u) * Ws + v;
          T* orow = o + static_cast<std::size_t>(i) * Wo;
          for (int j = 0; j < Wo; ++j) orow[j] += srow[j] * tv;
        }
      }
    }
  }
  return out;
}

template <typename T>
XcorrGrads<T> depthwise_xcorr_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& search,
                                       const BasicTensor<T>& templ) {
  const int N = search.dim(0), C = search.dim(1), Hs = search.dim(2), Ws = search.dim(3);
  const int Ht = templ.dim(2), Wt = templ.dim(3);
  const int Ho = Hs - Ht + 1, Wo = Ws - Wt + 1;
  require_shape(grad_out.shape(), Shape{N, C, Ho, Wo}, "depthwise_xcorr_backward grad");
  XcorrGrads<T> g{BasicTensor<T>(search.shape()), BasicTensor<T>(templ.shape())};
  for (int nc = 0; nc < N * C; ++nc) {
    const T* s = search.data().data() + static_cast<std::size_t>(nc) * Hs * Ws;
    const T* t = templ.data().data() + static_cast<std::size_t>(nc) * Ht * Wt;
    const T* go = grad_out.data().data() + static_cast<std::size_t>(nc) * Ho * Wo;
    T* gs = g.search.data().data() + static_cast<std::size_t>(nc) * Hs * Ws;
    T* gt = g.templ.data().data() + static_cast<std::size_t>(nc) * Ht * Wt;
    for (int u = 0; u < Ht; ++u) {
      for (int v = 0; v < Wt; ++v) {
        const T tv = t[u * Wt + v];
        T acc = 0;
        for (int i = 0; i < Ho; ++i) {
          const T* srow = s + static_cast<std::size_t>(i + u) * Ws + v;
          T* gsrow = gs + static_cast<std::size_t>(i + u) * Ws + v;
          const T* grow = go + static_cast<std::size_t>(i) * Wo;
          for (int j = 0; j < Wo; ++j) {
            acc += grow[j] * srow[j];
            gsrow[j] += grow[j] * tv;
          }
        }
        gt[u * Wt + v] = acc;
      }
    }
  }
  return g;
}

// ---------------------------------------------------------------------------

template <typename T>
BasicTensor<T> concat(const std::vector<const BasicTensor<T>*>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat: no inputs");
  const Shape& first = parts.front()->shape();
  if (axis < 0 || axis >= first.rank()) throw ShapeError("concat: axis out of range");
  std::vector<int> ext(static_cast<std::size_t>(first.rank()));
  for (int i = 0; i < first.rank(); ++i) ext[static_cast<std::size_t>(i)] = first[i];
  int total = 0;
  for (const auto* p : parts) {
    const Shape& s = p->shape();
    bool ok = s.rank() == first.rank();
    for (int i = 0; ok && i < s.rank(); ++i) ok = (i == axis) || s[i] == first[i];
    if (!ok) {
      throw ShapeError("concat: incompatible parts " + dims(first) + " and " + dims(s) +
                       " along axis " + std::to_string(axis));
    }
    total += s[axis];
  }
  ext[static_cast<std::size_t>(axis)] = total;
  BasicTensor<T> out{Shape(std::span<const int>(ext))};
  const AxisSplit os = split_axis(out.shape(), axis);
  std::size_t offset = 0;
  for (const auto* p : parts) {
    const AxisSplit ps = split_axis(p->shape(), axis);
    const std::size_t block = ps.extent * ps.inner;
    for (std::size_t o = 0; o < ps.outer; ++o) {
      std::copy_n(p->data().data() + o * block, block,
                  out.data().data() + o * os.extent * os.inner + offset * os.inner);
    }
    offset += ps.extent;
  }
  return out;
}

template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& input, int axis, int begin, int end) {
  const Shape& s = input.shape();
  if (axis < 0 || axis >= s.rank() || begin < 0 || end > s[axis] || begin >= end) {
    throw ShapeError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                     ") invalid for axis " + std::to_string(axis) + " of " + dims(s));
  }
  std::vector<int> ext(static_cast<std::size_t>(s.rank()));
  for (int i = 0; i < s.rank(); ++i) ext[static_cast<std::size_t>(i)] = s[i];
  ext[static_cast<std::size_t>(axis)] = end - begin;
  BasicTensor<T> out{Shape(std::span<const int>(ext))};
  const AxisSplit is = split_axis(s, axis);
  const std::size_t len = static_cast<std::size_t>(end - begin) * is.inner;
  for (std::size_t o = 0; o < is.outer; ++o) {
    std::copy_n(input.data().data() + o * is.extent * is.inner + static_cast<std::size_t>(begin) * is.inner,
                len, out.data().data() + o * len);
  }
  return out;
}

template <typename T>
void slice_accumulate(BasicTensor<T>& target, const BasicTensor<T>& grad, int axis, int begin) {
  const AxisSplit ts = split_axis(target.shape(), axis);
  const AxisSplit gs = split_axis(grad.shape(), axis);
  const std::size_t len = gs.extent * gs.inner;
  for (std::size_t o = 0; o < ts.outer; ++o) {
    T* dst = target.data().data() + o * ts.extent * ts.inner + static_cast<std::size_t>(begin) * ts.inner;
    const T* src = grad.data().data() + o * len;
    for (std::size_t i = 0; i < len; ++i) dst[i] += src[i];
  }
}

template <typename T>
BasicTensor<T> map_to_tokens(const BasicTensor<T>& map) {
  require_rank(map.shape(), 4, "map_to_tokens", "map");
  if (map.dim(0) != 1) throw ShapeError("map_to_tokens: batch must be 1, got " + dims(map.shape()));
  const int C = map.dim(1), HW = map.dim(2) * map.dim(3);
  BasicTensor<T> out(Shape{HW, C});
  for (int c = 0; c < C; ++c) {
    for (int t = 0; t < HW; ++t) {
      out[static_cast<std::size_t>(t) * C + c] = map[static_cast<std::size_t>(c) * HW + t];
    }
  }
  return out;
}

template <typename T>
BasicTensor<T> tokens_to_map(const BasicTensor<T>& tokens, int height, int width) {
  require_rank(tokens.shape(), 2, "tokens_to_map", "tokens");
  if (tokens.dim(0) != height * width) {
    throw ShapeError("tokens_to_map: " + std::to_string(tokens.dim(0)) + " tokens cannot fill " +
                     std::to_string(height) + "x" + std::to_string(width));
  }
  const int C = tokens.dim(1), HW = height * width;
  BasicTensor<T> out(Shape{1, C, height, width});
  for (int t = 0; t < HW; ++t) {
    for (int c = 0; c < C; ++c) {
      out[static_cast<std::size_t>(c) * HW + t] = tokens[static_cast<std::size_t>(t) * C + c];
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

#define PRL_INSTANTIATE_OPS(T)                                                                    \
  template BasicTensor<T> conv2d(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&, int, int);                               \
  template Conv2dGrads<T> conv2d_backward(const BasicTensor<T>&, const BasicTensor<T>&,           \
                                          const BasicTensor<T>&, bool, int, int, bool);           \
  template BasicTensor<T> batch_norm(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                     const BasicTensor<T>&, BasicTensor<T>&, BasicTensor<T>&,    \
                                     const BatchNormOptions&, BatchNormSaved<T>*);               \
  template BatchNormGrads<T> batch_norm_backward(const BasicTensor<T>&, const BasicTensor<T>&,    \
                                                 const BasicTensor<T>&, const BatchNormSaved<T>&, \
                                                 bool);                                           \
  template BasicTensor<T> pool(const BasicTensor<T>&, const PoolSpec&, std::vector<std::int64_t>*); \
  template BasicTensor<T> pool_backward(const BasicTensor<T>&, const std::vector<std::int64_t>&,  \
                                        const Shape&);                                            \
  template BasicTensor<T> relu(const BasicTensor<T>&);                                            \
  template BasicTensor<T> relu_backward(const BasicTensor<T>&, const BasicTensor<T>&);            \
  template BasicTensor<T> bilinear_resize(const BasicTensor<T>&, int, int);                       \
  template BasicTensor<T> bilinear_resize_backward(const BasicTensor<T>&, const Shape&);          \
  template BasicTensor<T> linear(const BasicTensor<T>&, const BasicTensor<T>&,                   \
                                 const BasicTensor<T>&);                                          \
  template BasicTensor<T> matmul(const BasicTensor<T>&, const BasicTensor<T>&, bool, bool);      \
  template BasicTensor<T> softmax_rows(const BasicTensor<T>&);                                    \
  template BasicTensor<T> softmax_rows_backward(const BasicTensor<T>&, const BasicTensor<T>&);    \
  template BasicTensor<T> layer_norm(const BasicTensor<T>&, const BasicTensor<T>&,               \
                                     const BasicTensor<T>&, double, LayerNormSaved<T>*);         \
  template LayerNormGrads<T> layer_norm_backward(const BasicTensor<T>&, const BasicTensor<T>&,    \
                                                 const BasicTensor<T>&, const LayerNormSaved<T>&); \
  template BasicTensor<T> depthwise_xcorr(const BasicTensor<T>&, const BasicTensor<T>&);          \
  template XcorrGrads<T> depthwise_xcorr_backward(const BasicTensor<T>&, const BasicTensor<T>&,   \
                                                  const BasicTensor<T>&);                         \
  template BasicTensor<T> concat(const std::vector<const BasicTensor<T>*>&, int);                \
  template BasicTensor<T> slice(const BasicTensor<T>&, int, int, int);                            \
  template void slice_accumulate(BasicTensor<T>&, const BasicTensor<T>&, int, int);               \
  template BasicTensor<T> map_to_tokens(const BasicTensor<T>&);                                   \
  template BasicTensor<T> tokens_to_map(const BasicTensor<T>&, int, int);

PRL_INSTANTIATE_OPS(float)
PRL_INSTANTIATE_OPS(double)

#undef PRL_INSTANTIATE_OPS

}  // namespace prl::ops
