#pragma once

// Central-difference verification of reverse-mode gradients.

#include <cstdint>
#include <functional>
#include <vector>

#include "prl/autograd.hpp"

namespace prl {

struct GradCheckOptions {
  /// Number of randomly chosen elements to probe; 0 probes every element.
  std::size_t max_probes = 0;
  std::uint64_t seed = 0x5eed;
  /// Judge gradients smaller than 1e3 x the finite-difference resolution
  /// (64 ulps of |f| over 2 * step) against that floor instead of 1e-6.
  bool resolution_floor = true;
};

struct GradCheckReport {
  double max_rel_error = 0;
  std::size_t probes = 0;
  // worst probe
  double analytic = 0;
  double numeric = 0;
};

/// |a - b| / max(|a|, |b|, floor)
double relative_error(double analytic, double numeric, double floor = 1e-6);

template <typename T>
using InputFn = std::function<Var<T>(Graph<T>&, Var<T>)>;

template <typename T>
using ParamFn = std::function<Var<T>(Graph<T>&)>;

/// Checks d(fn)/d(input). Non-scalar outputs are contracted with a fixed
/// random weighting before differentiation.
template <typename T>
GradCheckReport grad_check(const InputFn<T>& fn, const BasicTensor<T>& input, double step,
                           const GradCheckOptions& opts = {});

/// Checks d(fn)/d(p) for every listed parameter by perturbing p.value in place.
template <typename T>
GradCheckReport grad_check_params(const ParamFn<T>& fn, const std::vector<Parameter<T>*>& params,
                                  double step, const GradCheckOptions& opts = {});

}  // namespace prl
