#include "jointud/optim.hpp"

#include <cmath>

namespace jointud::ad {

template <typename Real>
AdamState<Real> make_adam(const ParameterStore<Real>& params, double lr, double beta1, double beta2, double eps) {
  AdamState<Real> state;
  state.lr = lr;
  state.beta1 = beta1;
  state.beta2 = beta2;
  state.eps = eps;
  for (const auto& p : params) {
    state.m.emplace_back(p.value.shape());
    state.v.emplace_back(p.value.shape());
  }
  return state;
}

template <typename Real>
void adam_step(ParameterStore<Real>& params, const Gradients<Real>& grads, AdamState<Real>& state) {
  if (state.m.size() != params.size()) throw std::invalid_argument("adam state does not match parameters");
  state.t += 1;
  const double b1 = state.beta1, b2 = state.beta2;
  const double c1 = 1.0 - std::pow(b1, static_cast<double>(state.t));
  const double c2 = 1.0 - std::pow(b2, static_cast<double>(state.t));
  for (std::size_t id = 0; id < params.size(); ++id) {
    Parameter<Real>& p = params[id];
    if (!p.trainable) continue;
    const bool has_grad = id < grads.size() && !grads[id].empty();
    if (has_grad && !grads[id].same_shape(p.value)) {
      throw std::invalid_argument("gradient shape mismatch for parameter " + p.name);
    }
    Tensor<Real>& m = state.m[id];
    Tensor<Real>& v = state.v[id];
    auto w = p.value.data();
    for (std::size_t i = 0; i < w.size(); ++i) {
      double g = has_grad ? static_cast<double>(grads[id][i]) : 0.0;
      g += 2.0 * p.l2 * static_cast<double>(w[i]);
      const double mi = b1 * static_cast<double>(m[i]) + (1.0 - b1) * g;
      const double vi = b2 * static_cast<double>(v[i]) + (1.0 - b2) * g * g;
      m[i] = static_cast<Real>(mi);
      v[i] = static_cast<Real>(vi);
      const double step = state.lr * (mi / c1) / (std::sqrt(vi / c2) + state.eps);
      w[i] = static_cast<Real>(static_cast<double>(w[i]) - step);
    }
  }
}

template <typename Real>
double l2_penalty(const ParameterStore<Real>& params) {
  double total = 0.0;
  for (const auto& p : params) {
    if (!p.trainable || p.l2 == 0.0) continue;
    double sq = 0.0;
    for (Real w : p.value.data()) sq += static_cast<double>(w) * static_cast<double>(w);
    total += p.l2 * sq;
  }
  return total;
}

template AdamState<float> make_adam<float>(const ParameterStore<float>&, double, double, double, double);
template AdamState<double> make_adam<double>(const ParameterStore<double>&, double, double, double, double);
template void adam_step<float>(ParameterStore<float>&, const Gradients<float>&, AdamState<float>&);
template void adam_step<double>(ParameterStore<double>&, const Gradients<double>&, AdamState<double>&);
template double l2_penalty<float>(const ParameterStore<float>&);
template double l2_penalty<double>(const ParameterStore<double>&);

}  // namespace jointud::ad
