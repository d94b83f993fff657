#pragma once

// Forward and backward kernels for the primitive set. Every function here is
// pure: inputs are read-only and results are returned by value. The autograd
// layer (autograd.hpp) wires these into a tape.

#include <cstdint>
#include <vector>

#include "prl/tensor.hpp"

namespace prl::ops {

// ---------------------------------------------------------------------------
// Convolution (cross-correlation convention, no kernel flip).

/// Output spatial extent of a convolution or pooling window; may be <= 0.
int conv_out_extent(int in, int kernel, int stride, int padding);

/// input [N,Cin,H,W], weight [Cout,Cin,kh,kw], bias [Cout] or empty.
template <typename T>
BasicTensor<T> conv2d(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias, int stride, int padding);

template <typename T>
struct Conv2dGrads {
  BasicTensor<T> input;  // empty when not requested
  BasicTensor<T> weight;
  BasicTensor<T> bias;   // empty when the forward had no bias
};

template <typename T>
Conv2dGrads<T> conv2d_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                               const BasicTensor<T>& weight, bool has_bias, int stride,
                               int padding, bool need_input_grad);

// ---------------------------------------------------------------------------
// Batch normalization over N,H,W per channel. Rank-2 inputs are [N,C].

struct BatchNormOptions {
  double eps = 1e-5;
  double momentum = 0.1;
  bool training = false;
};

/// Per-channel statistics used by a forward pass, kept for the backward pass.
template <typename T>
struct BatchNormSaved {
  std::vector<T> mean;
  std::vector<T> inv_std;
};

/// In training mode normalizes with batch statistics and updates the running
/// statistics in place (unbiased variance). In inference mode uses the
/// running statistics and leaves them untouched.
template <typename T>
BasicTensor<T> batch_norm(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, BasicTensor<T>& running_mean,
                          BasicTensor<T>& running_var, const BatchNormOptions& opts,
                          BatchNormSaved<T>* saved = nullptr);

template <typename T>
struct BatchNormGrads {
  BasicTensor<T> input, gamma, beta;
};

template <typename T>
BatchNormGrads<T> batch_norm_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                      const BasicTensor<T>& gamma, const BatchNormSaved<T>& saved,
                                      bool training);

// ---------------------------------------------------------------------------
// Max pooling.

struct PoolSpec {
  enum class Kind { kMaxFixed, kAdaptiveMax };
  Kind kind = Kind::kMaxFixed;
  int a = 2;  // kernel (fixed) or target height (adaptive)
  int b = 2;  // stride (fixed) or target width (adaptive)

  static PoolSpec max_fixed(int kernel, int stride) { return {Kind::kMaxFixed, kernel, stride}; }
  static PoolSpec adaptive_max(int target_h, int target_w) {
    return {Kind::kAdaptiveMax, target_h, target_w};
  }
};

/// Window [floor(i*L/T), floor((i+1)*L/T)) for adaptive pooling.
inline int adaptive_begin(int i, int in, int out) { return static_cast<int>((static_cast<long long>(i) * in) / out); }
inline int adaptive_end(int i, int in, int out) { return static_cast<int>((static_cast<long long>(i + 1) * in) / out); }

/// `argmax`, when given, receives the flat input index selected for every
/// output element.
template <typename T>
BasicTensor<T> pool(const BasicTensor<T>& input, const PoolSpec& spec,
                    std::vector<std::int64_t>* argmax = nullptr);

template <typename T>
BasicTensor<T> pool_backward(const BasicTensor<T>& grad_out, const std::vector<std::int64_t>& argmax,
                             const Shape& input_shape);

// ---------------------------------------------------------------------------
// Elementwise.

template <typename T>
BasicTensor<T> relu(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> relu_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input);

// ---------------------------------------------------------------------------
// Bilinear resize, align-corners. A target extent of 1 samples the center.

template <typename T>
BasicTensor<T> bilinear_resize(const BasicTensor<T>& input, int target_h, int target_w);

template <typename T>
BasicTensor<T> bilinear_resize_backward(const BasicTensor<T>& grad_out, const Shape& input_shape);

// ---------------------------------------------------------------------------
// Dense algebra on rank-2 tensors.

/// input [T,Din] * weight [Din,Dout] + bias [Dout] (bias may be empty).
template <typename T>
BasicTensor<T> linear(const BasicTensor<T>& input, const BasicTensor<T>& weight,
                      const BasicTensor<T>& bias);

/// op(A) * op(B) with op = transpose when the flag is set.
template <typename T>
BasicTensor<T> matmul(const BasicTensor<T>& a, const BasicTensor<T>& b, bool trans_a = false,
                      bool trans_b = false);

template <typename T>
BasicTensor<T> softmax_rows(const BasicTensor<T>& input);

template <typename T>
BasicTensor<T> softmax_rows_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& output);

template <typename T>
struct LayerNormSaved {
  std::vector<T> mean;
  std::vector<T> inv_std;
};

template <typename T>
BasicTensor<T> layer_norm(const BasicTensor<T>& input, const BasicTensor<T>& gamma,
                          const BasicTensor<T>& beta, double eps,
                          LayerNormSaved<T>* saved = nullptr);

template <typename T>
struct LayerNormGrads {
  BasicTensor<T> input, gamma, beta;
};

template <typename T>
LayerNormGrads<T> layer_norm_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& input,
                                      const BasicTensor<T>& gamma, const LayerNormSaved<T>& saved);

// ---------------------------------------------------------------------------
// Depthwise cross-correlation: search [N,C,Hs,Ws] against template
// [N,C,Ht,Wt] gives [N,C,Hs-Ht+1,Ws-Wt+1].

template <typename T>
BasicTensor<T> depthwise_xcorr(const BasicTensor<T>& search, const BasicTensor<T>& templ);

template <typename T>
struct XcorrGrads {
  BasicTensor<T> search, templ;
};

template <typename T>
XcorrGrads<T> depthwise_xcorr_backward(const BasicTensor<T>& grad_out, const BasicTensor<T>& search,
                                       const BasicTensor<T>& templ);

// ---------------------------------------------------------------------------
// Layout.

/// Concatenate along `axis`; all other extents must agree.
template <typename T>
BasicTensor<T> concat(const std::vector<const BasicTensor<T>*>& parts, int axis);

/// Elements [begin, end) along `axis`.
template <typename T>
BasicTensor<T> slice(const BasicTensor<T>& input, int axis, int begin, int end);

/// Adds `grad` into the [begin,end) range of `target` along `axis`.
template <typename T>
void slice_accumulate(BasicTensor<T>& target, const BasicTensor<T>& grad, int axis, int begin);

/// [1,C,H,W] map to [H*W,C] tokens; token t is location (t / W, t % W).
template <typename T>
BasicTensor<T> map_to_tokens(const BasicTensor<T>& map);

/// [H*W,C] tokens back to a [1,C,H,W] map.
template <typename T>
BasicTensor<T> tokens_to_map(const BasicTensor<T>& tokens, int height, int width);

}  // namespace prl::ops
