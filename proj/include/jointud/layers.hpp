// Neural layers built from autodiff primitives.
//
// Layers only hold parameter ids; the values live in a ParameterStore. The
// same layer description therefore runs in 32-bit training and in 64-bit
// gradient checks (ParameterStore::cast).
#pragma once

#include <string>
#include <vector>

#include "jointud/autodiff.hpp"
#include "jointud/rng.hpp"

namespace jointud::nn {

using ad::ParamId;
using ad::ParameterStore;
using ad::Tape;
using ad::Var;

enum class Activation { tanh, softmax, linear, relu };

struct RegularizationConfig {
  double gaussian_dropout_rate = 0.25;
  double gaussian_noise_std = 0.2;
  double dense_dropout = 0.25;
  double lstm_dropout = 0.25;
  double lstm_recurrent_dropout = 0.25;
  double l2_network = 1e-6;
  double l2_embeddings = 1e-5;
};

struct Dense {
  ParamId weight = 0;
  ParamId bias = 0;
  std::size_t in = 0;
  std::size_t out = 0;
  Activation activation = Activation::tanh;
  double input_dropout = 0.0;
};

template <typename Real>
Dense make_dense(ParameterStore<Real>& store, const std::string& name, std::size_t in, std::size_t out,
                 Activation activation, double input_dropout, Rng& init);

// activation(dropout(x) W + b)
template <typename Real>
Var<Real> dense_forward(const Dense& layer, Tape<Real>& tape, Var<Real> x, bool train, Rng& rng);

// dropout(x) W + b, without the activation (logits of softmax outputs).
template <typename Real>
Var<Real> dense_logits(const Dense& layer, Tape<Real>& tape, Var<Real> x, bool train, Rng& rng);

struct ConvSpec {
  std::size_t filters = 0;
  std::size_t width = 3;
  std::size_t dilation = 1;
};

struct ConvStack {
  struct Layer {
    ParamId kernel = 0;
    ParamId bias = 0;
    std::size_t dilation = 1;
  };
  std::vector<Layer> layers;
  std::size_t in = 0;
  std::size_t out = 0;
};

template <typename Real>
ConvStack make_conv_stack(ParameterStore<Real>& store, const std::string& name, std::size_t in,
                          const std::vector<ConvSpec>& specs, double l2, Rng& init);

// Same-length dilated convolutions, each followed by ReLU.
template <typename Real>
Var<Real> conv_stack_forward(const ConvStack& stack, Tape<Real>& tape, Var<Real> x);

struct BiLstmStack {
  struct Direction {
    ParamId w = 0;
    ParamId u = 0;
    ParamId b = 0;
  };
  struct Layer {
    Direction forward;
    Direction backward;
    std::size_t in = 0;
  };
  std::vector<Layer> layers;
  std::size_t hidden = 0;
  std::size_t out() const { return 2 * hidden; }
};

template <typename Real>
BiLstmStack make_bilstm(ParameterStore<Real>& store, const std::string& name, std::size_t in, std::size_t hidden,
                        std::size_t num_layers, double l2, Rng& init);

// Concatenated forward/backward states of the top layer. At train time each
// layer sees input dropout and a per-sequence recurrent mask, and its output
// goes through Gaussian dropout followed by Gaussian noise.
template <typename Real>
Var<Real> bilstm_forward(const BiLstmStack& stack, Tape<Real>& tape, Var<Real> x, bool train, Rng& rng,
                         const RegularizationConfig& reg);

// Left fold of ad::add; parts must be non-empty and equally shaped.
template <typename Real>
Var<Real> add_all(const std::vector<Var<Real>>& parts) {
  Var<Real> total = parts.at(0);
  for (std::size_t i = 1; i < parts.size(); ++i) total = ad::add(total, parts[i]);
  return total;
}

// Normal(0, 2 / (fan_in + fan_out)) initialization.
template <typename Real>
Tensor<Real> glorot_normal(const Shape& shape, std::size_t fan_in, std::size_t fan_out, Rng& rng);

}  // namespace jointud::nn
