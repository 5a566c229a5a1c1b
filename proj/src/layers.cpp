#include "jointud/layers.hpp"

#include <cmath>

namespace jointud::nn {

template <typename Real>
Tensor<Real> glorot_normal(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng) {
  Tensor<Real> t(shape);
  const double stddev = std::sqrt(2.0 / static_cast<double>(fan_in + fan_out));
  for (Real& v : t.storage()) v = static_cast<Real>(rng.normal(0.0, stddev));
  return t;
}

template <typename Real>
Dense make_dense(ParameterStore<Real>& store, const std::string& name, std::size_t in, std::size_t out,
                 Activation activation, double input_dropout, Rng& init) {
  Dense d;
  d.in = in;
  d.out = out;
  d.activation = activation;
  d.input_dropout = input_dropout;
  Rng r = init.split(name);
  d.weight = store.add(name + ".weight", glorot_normal<Real>({in, out}, in, out, r));
  d.bias = store.add(name + ".bias", Tensor<Real>(Shape{1, out}));
  return d;
}

template <typename Real>
Var<Real> dense_logits(const Dense& layer, Tape<Real>& tape, Var<Real> x, bool train, Rng& rng) {
  if (x.cols() != layer.in) {
    throw ad::ShapeError("dense", "input " + shape_str(x.shape()) + " for layer with " + std::to_string(layer.in) +
                                      " inputs");
  }
  Var<Real> h = ad::dropout(x, layer.input_dropout, train, rng);
  return ad::add(ad::matmul(h, tape.param(layer.weight)), tape.param(layer.bias));
}

template <typename Real>
Var<Real> dense_forward(const Dense& layer, Tape<Real>& tape, Var<Real> x, bool train, Rng& rng) {
  Var<Real> z = dense_logits(layer, tape, x, train, rng);
  switch (layer.activation) {
    case Activation::tanh:
      return ad::tanh(z);
    case Activation::softmax:
      return ad::softmax_rows(z);
    case Activation::relu:
      return ad::relu(z);
    case Activation::linear:
      break;
  }
  return z;
}

template <typename Real>
ConvStack make_conv_stack(ParameterStore<Real>& store, const std::string& name, std::size_t in,
                          const std::vector<ConvSpec>& specs, double l2, Rng& init) {
  ConvStack stack;
  stack.in = in;
  std::size_t channels = in;
  for (std::size_t i = 0; i < specs.size(); ++i) {
    const ConvSpec& spec = specs[i];
    const std::string prefix = name + "." + std::to_string(i);
    Rng r = init.split(prefix);
    ConvStack::Layer layer;
    layer.dilation = spec.dilation;
    layer.kernel = store.add(prefix + ".kernel",
                             glorot_normal<Real>({spec.width, channels, spec.filters}, spec.width * channels,
                                                 spec.width * spec.filters, r),
                             true, l2);
    layer.bias = store.add(prefix + ".bias", Tensor<Real>(Shape{1, spec.filters}));
    stack.layers.push_back(layer);
    channels = spec.filters;
  }
  stack.out = channels;
  return stack;
}

template <typename Real>
Var<Real> conv_stack_forward(const ConvStack& stack, Tape<Real>& tape, Var<Real> x) {
  Var<Real> h = x;
  for (const auto& layer : stack.layers) {
    h = ad::relu(ad::add(ad::dilated_conv1d(h, tape.param(layer.kernel), layer.dilation), tape.param(layer.bias)));
  }
  return h;
}

template <typename Real>
BiLstmStack make_bilstm(ParameterStore<Real>& store, const std::string& name, std::size_t in, std::size_t hidden,
                        std::size_t num_layers, double l2, Rng& init) {
  BiLstmStack stack;
  stack.hidden = hidden;
  std::size_t layer_in = in;
  for (std::size_t i = 0; i < num_layers; ++i) {
    BiLstmStack::Layer layer;
    layer.in = layer_in;
    for (int dir = 0; dir < 2; ++dir) {
      const std::string prefix = name + "." + std::to_string(i) + (dir == 0 ? ".fwd" : ".bwd");
      Rng r = init.split(prefix);
      BiLstmStack::Direction d;
      d.w = store.add(prefix + ".w", glorot_normal<Real>({layer_in, 4 * hidden}, layer_in, 4 * hidden, r), true, l2);
      d.u = store.add(prefix + ".u", glorot_normal<Real>({hidden, 4 * hidden}, hidden, 4 * hidden, r), true, l2);
      Tensor<Real> bias(Shape{1, 4 * hidden});
      for (std::size_t h = 0; h < hidden; ++h) bias[hidden + h] = Real(1);  // forget gate
      d.b = store.add(prefix + ".b", std::move(bias));
      (dir == 0 ? layer.forward : layer.backward) = d;
    }
    stack.layers.push_back(layer);
    layer_in = 2 * hidden;
  }
  return stack;
}

namespace {

std::vector<double> dropout_mask(std::size_t size, double rate, Rng& rng) {
  std::vector<double> mask(size);
  const double keep = 1.0 / (1.0 - rate);
  for (double& m : mask) m = rng.uniform() < rate ? 0.0 : keep;
  return mask;
}

}  // namespace

template <typename Real>
Var<Real> bilstm_forward(const BiLstmStack& stack, Tape<Real>& tape, Var<Real> x, bool train, Rng& rng,
                         const RegularizationConfig& reg) {
  if (x.rows() == 0) throw std::invalid_argument("bilstm_forward: empty sequence");
  Var<Real> h = x;
  for (const auto& layer : stack.layers) {
    std::vector<Var<Real>> directions;
    for (int dir = 0; dir < 2; ++dir) {
      const BiLstmStack::Direction& d = dir == 0 ? layer.forward : layer.backward;
      ad::LstmMasks masks;
      if (train && reg.lstm_dropout > 0.0) masks.input = dropout_mask(layer.in, reg.lstm_dropout, rng);
      if (train && reg.lstm_recurrent_dropout > 0.0) {
        masks.recurrent = dropout_mask(stack.hidden, reg.lstm_recurrent_dropout, rng);
      }
      directions.push_back(ad::lstm(h, tape.param(d.w), tape.param(d.u), tape.param(d.b), dir == 1, masks));
    }
    h = ad::concat(directions, 1);
    h = ad::gaussian_dropout(h, reg.gaussian_dropout_rate, train, rng);
    h = ad::gaussian_noise(h, reg.gaussian_noise_std, train, rng);
  }
  return h;
}

#define JOINTUD_INSTANTIATE(Real)                                                                             \
  template Tensor<Real> glorot_normal<Real>(const Shape&, std::size_t, std::size_t, Rng&);                    \
  template Dense make_dense<Real>(ParameterStore<Real>&, const std::string&, std::size_t, std::size_t,         \
                                  Activation, double, Rng&);                                                  \
  template Var<Real> dense_logits<Real>(const Dense&, Tape<Real>&, Var<Real>, bool, Rng&);                     \
  template Var<Real> dense_forward<Real>(const Dense&, Tape<Real>&, Var<Real>, bool, Rng&);                    \
  template ConvStack make_conv_stack<Real>(ParameterStore<Real>&, const std::string&, std::size_t,            \
                                           const std::vector<ConvSpec>&, double, Rng&);                       \
  template Var<Real> conv_stack_forward<Real>(const ConvStack&, Tape<Real>&, Var<Real>);                      \
  template BiLstmStack make_bilstm<Real>(ParameterStore<Real>&, const std::string&, std::size_t, std::size_t, \
                                         std::size_t, double, Rng&);                                          \
  template Var<Real> bilstm_forward<Real>(const BiLstmStack&, Tape<Real>&, Var<Real>, bool, Rng&,              \
                                          const RegularizationConfig&);

JOINTUD_INSTANTIATE(float)
JOINTUD_INSTANTIATE(double)

#undef JOINTUD_INSTANTIATE

}  // namespace jointud::nn
