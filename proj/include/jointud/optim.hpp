#pragma once

#include <cstdint>
#include <vector>

#include "jointud/autodiff.hpp"

namespace jointud::ad {

template <typename Real>
struct AdamState {
  std::vector<Tensor<Real>> m;
  std::vector<Tensor<Real>> v;
  std::int64_t t = 0;
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.9;
  double eps = 1e-8;
};

template <typename Real>
AdamState<Real> make_adam(const ParameterStore<Real>& params, double lr, double beta1, double beta2,
                          double eps = 1e-8);

// Bias-corrected ADAM step over every trainable parameter. Each parameter's
// L2 rate enters as an added gradient 2*l2*w before the moment updates.
template <typename Real>
void adam_step(ParameterStore<Real>& params, const Gradients<Real>& grads, AdamState<Real>& state);

// Sum over trainable parameters of l2 * ||w||^2.
template <typename Real>
double l2_penalty(const ParameterStore<Real>& params);

}  // namespace jointud::ad
