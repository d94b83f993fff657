#include "prl/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>

#include "prl/rng.hpp"

namespace prl {
namespace {

std::vector<std::size_t> choose_probes(std::size_t n, std::size_t max_probes, Rng& rng) {
  std::vector<std::size_t> idx(n);
  std::iota(idx.begin(), idx.end(), std::size_t{0});
  if (max_probes == 0 || max_probes >= n) return idx;
  for (std::size_t i = 0; i < max_probes; ++i) {
    const std::size_t j = i + static_cast<std::size_t>(rng.next_u64() % (n - i));
    std::swap(idx[i], idx[j]);
  }
  idx.resize(max_probes);
  std::sort(idx.begin(), idx.end());
  return idx;
}

// Reduces an arbitrary output to a scalar with weights fixed on first use.
template <typename T>
class Scalarizer {
 public:
  explicit Scalarizer(std::uint64_t seed) : rng_(seed) {}

  Var<T> operator()(Var<T> out) {
    if (out.value().size() == 1) return ag::sum(out);
    if (weights_.empty()) {
      weights_ = BasicTensor<T>(out.shape());
      for (auto& w : weights_.data()) w = static_cast<T>(rng_.uniform(-1.0, 1.0));
    }
    return ag::weighted_sum(out, weights_);
  }

 private:
  Rng rng_;
  BasicTensor<T> weights_;
};

double floor_for(double fp, double fm, double step, const GradCheckOptions& opts) {
  if (!opts.resolution_floor) return 1e-6;
  const double resolution = 64 * std::numeric_limits<double>::epsilon() *
                            std::max({std::abs(fp), std::abs(fm), 1.0}) / (2 * step);
  return std::max(1e-6, 1e3 * resolution);
}

void update(GradCheckReport& r, double analytic, double numeric, double floor) {
  const double e = relative_error(analytic, numeric, floor);
  ++r.probes;
  if (e >= r.max_rel_error) {
    r.max_rel_error = e;
    r.analytic = analytic;
    r.numeric = numeric;
  }
}

}  // namespace

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

template <typename T>
GradCheckReport grad_check(const InputFn<T>& fn, const BasicTensor<T>& input, double step,
                           const GradCheckOptions& opts) {
  if (!(step > 0)) throw std::invalid_argument("grad_check: step must be positive");
  Scalarizer<T> scalarize(opts.seed);
  BasicTensor<T> analytic;
  {
    Graph<T> g;
    Var<T> x = g.leaf(input);
    Var<T> loss = scalarize(fn(g, x));
    g.backward(loss);
    analytic = g.grad(x.id());
  }
  auto eval = [&](const BasicTensor<T>& at) {
    Graph<T> g(false);
    return static_cast<double>(scalarize(fn(g, g.constant(at))).value()[0]);
  };
  Rng rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  GradCheckReport report;
  BasicTensor<T> probe = input;
  for (std::size_t i : choose_probes(input.size(), opts.max_probes, rng)) {
    const T orig = probe[i];
    probe[i] = static_cast<T>(orig + step);
    const double fp = eval(probe);
    probe[i] = static_cast<T>(orig - step);
    const double fm = eval(probe);
    probe[i] = orig;
    update(report, analytic[i], (fp - fm) / (2 * step), floor_for(fp, fm, step, opts));
  }
  return report;
}

template <typename T>
GradCheckReport grad_check_params(const ParamFn<T>& fn, const std::vector<Parameter<T>*>& params,
                                  double step, const GradCheckOptions& opts) {
  if (!(step > 0)) throw std::invalid_argument("grad_check_params: step must be positive");
  Scalarizer<T> scalarize(opts.seed);
  std::vector<BasicTensor<T>> analytic;
  {
    Graph<T> g;
    Var<T> loss = scalarize(fn(g));
    for (Parameter<T>* p : params) p->zero_grad();
    analytic = value_and_grad(g, loss, params);
  }
  auto eval = [&] {
    Graph<T> g(false);
    return static_cast<double>(scalarize(fn(g)).value()[0]);
  };
  Rng rng(opts.seed ^ 0x9e3779b97f4a7c15ULL);
  GradCheckReport report;
  for (std::size_t k = 0; k < params.size(); ++k) {
    BasicTensor<T>& v = params[k]->value;
    for (std::size_t i : choose_probes(v.size(), opts.max_probes, rng)) {
      const T orig = v[i];
      v[i] = static_cast<T>(orig + step);
      const double fp = eval();
      v[i] = static_cast<T>(orig - step);
      const double fm = eval();
      v[i] = orig;
      update(report, analytic[k][i], (fp - fm) / (2 * step), floor_for(fp, fm, step, opts));
    }
  }
  return report;
}

template GradCheckReport grad_check(const InputFn<float>&, const BasicTensor<float>&, double,
                                    const GradCheckOptions&);
template GradCheckReport grad_check(const InputFn<double>&, const BasicTensor<double>&, double,
                                    const GradCheckOptions&);
template GradCheckReport grad_check_params(const ParamFn<float>&, const std::vector<Parameter<float>*>&,
                                           double, const GradCheckOptions&);
template GradCheckReport grad_check_params(const ParamFn<double>&,
                                           const std::vector<Parameter<double>*>&, double,
                                           const GradCheckOptions&);

}  // namespace prl
