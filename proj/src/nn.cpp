#include "prl/nn.hpp"

#include <cmath>

namespace prl::nn {
namespace {

template <typename T>
BasicTensor<T> init_tensor(Shape shape, int fan_in, Init init, Rng& rng) {
  BasicTensor<T> t(shape);
  if (init == Init::kZero) return t;
  const double bound = std::sqrt((init == Init::kKaiming ? 6.0 : 3.0) / fan_in);
  for (T& v : t.data()) v = static_cast<T>(rng.uniform(-bound, bound));
  return t;
}

}  // namespace

template <typename T>
Conv2d<T>::Conv2d(const std::string& name, int in_channels, int out_channels, int kernel,
                  int stride, int padding, bool bias, Rng& rng, Init init)
    : weight_(name + ".weight",
              init_tensor<T>(Shape{out_channels, in_channels, kernel, kernel},
                             in_channels * kernel * kernel, init, rng)),
      has_bias_(bias),
      stride_(stride),
      padding_(padding) {
  if (bias) bias_ = Parameter<T>(name + ".bias", BasicTensor<T>(Shape{out_channels}));
}

template <typename T>
Var<T> Conv2d<T>::operator()(Graph<T>& g, Var<T> x) {
  return ag::conv2d(x, g.param(weight_), has_bias_ ? g.param(bias_) : Var<T>(), stride_, padding_);
}

template <typename T>
void Conv2d<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

template <typename T>
BatchNorm<T>::BatchNorm(const std::string& name, int channels, double eps, double momentum)
    : gamma_(name + ".gamma", BasicTensor<T>(Shape{channels}, T(1))),
      beta_(name + ".beta", BasicTensor<T>(Shape{channels})),
      running_mean_(name + ".running_mean", BasicTensor<T>(Shape{channels}), false),
      running_var_(name + ".running_var", BasicTensor<T>(Shape{channels}, T(1)), false),
      eps_(eps),
      momentum_(momentum) {}

template <typename T>
Var<T> BatchNorm<T>::operator()(Graph<T>& g, Var<T> x, bool training) {
  return ag::batch_norm(x, g.param(gamma_), g.param(beta_), running_mean_.value, running_var_.value,
                        options(training));
}

template <typename T>
void BatchNorm<T>::collect(std::vector<Parameter<T>*>& out) {
  out.insert(out.end(), {&gamma_, &beta_, &running_mean_, &running_var_});
}

template <typename T>
Linear<T>::Linear(const std::string& name, int in_features, int out_features, Rng& rng, Init init,
                  bool bias)
    : weight_(name + ".weight", init_tensor<T>(Shape{in_features, out_features}, in_features, init, rng)),
      has_bias_(bias) {
  if (bias) bias_ = Parameter<T>(name + ".bias", BasicTensor<T>(Shape{out_features}));
}

template <typename T>
Var<T> Linear<T>::operator()(Graph<T>& g, Var<T> x) {
  return ag::linear(x, g.param(weight_), has_bias_ ? g.param(bias_) : Var<T>());
}

template <typename T>
void Linear<T>::collect(std::vector<Parameter<T>*>& out) {
  out.push_back(&weight_);
  if (has_bias_) out.push_back(&bias_);
}

template <typename T>
LayerNorm<T>::LayerNorm(const std::string& name, int features, double eps)
    : gamma_(name + ".gamma", BasicTensor<T>(Shape{features}, T(1))),
      beta_(name + ".beta", BasicTensor<T>(Shape{features})),
      eps_(eps) {}

template <typename T>
Var<T> LayerNorm<T>::operator()(Graph<T>& g, Var<T> x) {
  return ag::layer_norm(x, g.param(gamma_), g.param(beta_), eps_);
}

template <typename T>
void LayerNorm<T>::collect(std::vector<Parameter<T>*>& out) {
  out.insert(out.end(), {&gamma_, &beta_});
}

template <typename T>
Cnr<T>::Cnr(const std::string& name, int in_channels, int out_channels, Rng& rng, double bn_eps,
            double bn_momentum)
    : conv_(name + ".conv", in_channels, out_channels, 1, 1, 0, false, rng),
      norm_(name + ".bn", out_channels, bn_eps, bn_momentum) {}

template <typename T>
Var<T> Cnr<T>::operator()(Graph<T>& g, Var<T> x, bool training) {
  return ag::relu(norm_(g, conv_(g, x), training));
}

template <typename T>
void Cnr<T>::collect(std::vector<Parameter<T>*>& out) {
  conv_.collect(out);
  norm_.collect(out);
}

template class Conv2d<float>;
template class Conv2d<double>;
template class BatchNorm<float>;
template class BatchNorm<double>;
template class Linear<float>;
template class Linear<double>;
template class LayerNorm<float>;
template class LayerNorm<double>;
template class Cnr<float>;
template class Cnr<double>;

}  // namespace prl::nn
