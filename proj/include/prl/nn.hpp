#pragma once

// Parameterized layers shared by the backbone, regulators, generator and
// heads. Each layer owns its Parameters and exposes them through collect().

#include <string>
#include <vector>

#include "prl/autograd.hpp"
#include "prl/rng.hpp"

namespace prl::nn {

enum class Init {
  kKaiming,  // uniform, bound sqrt(6 / fan_in); layers followed by ReLU
  kLecun,    // uniform, bound sqrt(3 / fan_in); linear projections
  kZero,
};

template <typename T>
class Conv2d {
 public:
  Conv2d() = default;
  Conv2d(const std::string& name, int in_channels, int out_channels, int kernel, int stride,
         int padding, bool bias, Rng& rng, Init init = Init::kKaiming);

  Var<T> operator()(Graph<T>& g, Var<T> x);

  void collect(std::vector<Parameter<T>*>& out);
  int out_channels() const { return weight_.value.dim(0); }
  int kernel() const { return weight_.value.dim(2); }
  int stride() const { return stride_; }
  int padding() const { return padding_; }
  bool has_bias() const { return has_bias_; }
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
  bool has_bias_ = false;
  int stride_ = 1;
  int padding_ = 0;
};

template <typename T>
class BatchNorm {
 public:
  BatchNorm() = default;
  BatchNorm(const std::string& name, int channels, double eps = 1e-5, double momentum = 0.1);

  Var<T> operator()(Graph<T>& g, Var<T> x, bool training);

  void collect(std::vector<Parameter<T>*>& out);
  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }
  Parameter<T>& running_mean() { return running_mean_; }
  Parameter<T>& running_var() { return running_var_; }
  ops::BatchNormOptions options(bool training) const { return {eps_, momentum_, training}; }

 private:
  Parameter<T> gamma_, beta_, running_mean_, running_var_;
  double eps_ = 1e-5;
  double momentum_ = 0.1;
};

template <typename T>
class Linear {
 public:
  Linear() = default;
  Linear(const std::string& name, int in_features, int out_features, Rng& rng,
         Init init = Init::kLecun, bool bias = true);

  Var<T> operator()(Graph<T>& g, Var<T> x);

  void collect(std::vector<Parameter<T>*>& out);
  Parameter<T>& weight() { return weight_; }
  Parameter<T>& bias() { return bias_; }

 private:
  Parameter<T> weight_;
  Parameter<T> bias_;
  bool has_bias_ = true;
};

template <typename T>
class LayerNorm {
 public:
  LayerNorm() = default;
  LayerNorm(const std::string& name, int features, double eps = 1e-5);

  Var<T> operator()(Graph<T>& g, Var<T> x);

  void collect(std::vector<Parameter<T>*>& out);
  double eps() const { return eps_; }
  Parameter<T>& gamma() { return gamma_; }
  Parameter<T>& beta() { return beta_; }

 private:
  Parameter<T> gamma_, beta_;
  double eps_ = 1e-5;
};

/// Conv(1x1) -> BatchNorm -> ReLU.
template <typename T>
class Cnr {
 public:
  Cnr() = default;
  Cnr(const std::string& name, int in_channels, int out_channels, Rng& rng, double bn_eps = 1e-5,
      double bn_momentum = 0.1);

  Var<T> operator()(Graph<T>& g, Var<T> x, bool training);

  void collect(std::vector<Parameter<T>*>& out);
  Conv2d<T>& conv() { return conv_; }
  BatchNorm<T>& norm() { return norm_; }

 private:
  Conv2d<T> conv_;
  BatchNorm<T> norm_;
};

}  // namespace prl::nn
