// Reverse-mode automatic differentiation over dense tensors.
//
// A Tape records every operation of one forward pass. Nodes are appended in
// evaluation order, so walking them backwards is a valid reverse topological
// order. Parameters live in a ParameterStore and are bound to a tape by
// reference; their gradients are collected per tape and handed to the
// optimizer with take_param_grads().
#pragma once

#include <cstddef>
#include <deque>
#include <functional>
#include <optional>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "jointud/rng.hpp"
#include "jointud/tensor.hpp"

namespace jointud::ad {

class ShapeError : public std::invalid_argument {
 public:
  ShapeError(std::string_view op, const std::string& detail);
};

template <typename Real>
struct Parameter {
  std::string name;
  Tensor<Real> value;
  bool trainable = true;
  double l2 = 0.0;
};

using ParamId = std::size_t;

template <typename Real>
class ParameterStore {
 public:
  ParamId add(std::string name, Tensor<Real> value, bool trainable = true, double l2 = 0.0);

  Parameter<Real>& operator[](ParamId id) { return params_.at(id); }
  const Parameter<Real>& operator[](ParamId id) const { return params_.at(id); }
  std::size_t size() const { return params_.size(); }
  std::optional<ParamId> find(std::string_view name) const;

  auto begin() { return params_.begin(); }
  auto end() { return params_.end(); }
  auto begin() const { return params_.begin(); }
  auto end() const { return params_.end(); }

  template <typename Other>
  ParameterStore<Other> cast() const {
    ParameterStore<Other> out;
    for (const auto& p : params_) out.add(p.name, p.value.template cast<Other>(), p.trainable, p.l2);
    return out;
  }

 private:
  std::vector<Parameter<Real>> params_;
};

// Indexed by ParamId; an empty tensor means the parameter received no gradient.
template <typename Real>
using Gradients = std::vector<Tensor<Real>>;

template <typename Real>
void accumulate(Gradients<Real>& into, const Gradients<Real>& from);

template <typename Real>
class Tape;

template <typename Real>
class Var {
 public:
  Var() = default;
  Var(Tape<Real>* tape, std::size_t id) : tape_(tape), id_(id) {}

  const Tensor<Real>& value() const;
  const Shape& shape() const { return value().shape(); }
  std::size_t rows() const { return value().rows(); }
  std::size_t cols() const { return value().cols(); }
  std::size_t id() const { return id_; }
  Tape<Real>* tape() const { return tape_; }
  bool valid() const { return tape_ != nullptr; }

 private:
  Tape<Real>* tape_ = nullptr;
  std::size_t id_ = 0;
};

template <typename Real>
class Tape {
 public:
  using BackwardFn = std::function<void(Tape&, std::size_t self)>;

  // With record_gradients=false parameter leaves are constants, so no
  // backward closures are kept (inference).
  explicit Tape(const ParameterStore<Real>* params = nullptr, bool record_gradients = true)
      : params_(params), record_gradients_(record_gradients) {}
  Tape(const Tape&) = delete;
  Tape& operator=(const Tape&) = delete;

  Var<Real> constant(Tensor<Real> value);
  // Leaf that receives a gradient; used by gradient checks and tests.
  Var<Real> input(Tensor<Real> value);
  Var<Real> param(ParamId id);

  // Seeds d(loss)/d(loss) = 1 and propagates to every reachable node.
  void backward(Var<Real> loss);

  // Gradient of a recorded node; zeros when nothing flowed into it.
  Tensor<Real> grad(Var<Real> v) const;
  Gradients<Real> take_param_grads();

  // Used by operations.
  Var<Real> record(Tensor<Real> value, const std::vector<std::size_t>& inputs, BackwardFn backward);
  const Tensor<Real>& value(std::size_t node) const;
  const Tensor<Real>& upstream(std::size_t node) const { return nodes_[node].grad; }
  Tensor<Real>& grad_buffer(std::size_t node);
  bool requires_grad(std::size_t node) const { return nodes_[node].requires_grad; }
  std::size_t node_count() const { return nodes_.size(); }
  const ParameterStore<Real>* params() const { return params_; }

 private:
  struct Node {
    Tensor<Real> value;
    const Tensor<Real>* ref = nullptr;  // parameter leaves alias the store
    Tensor<Real> grad;
    bool requires_grad = false;
    std::optional<ParamId> param;
    BackwardFn backward;
  };

  const ParameterStore<Real>* params_;
  bool record_gradients_ = true;
  std::deque<Node> nodes_;
  Gradients<Real> param_grads_;
  bool backward_done_ = false;
};

template <typename Real>
const Tensor<Real>& Var<Real>::value() const {
  return tape_->value(id_);
}

// Debug hook for the gradient-check tool: flips the sign of one backward rule.
void inject_fault(std::string op);
void clear_fault();

// ---- primitives -----------------------------------------------------------

template <typename Real> Var<Real> matmul(Var<Real> a, Var<Real> b);
template <typename Real> Var<Real> transpose(Var<Real> a);
// b may have the same shape as a or be a single row broadcast over a's rows.
template <typename Real> Var<Real> add(Var<Real> a, Var<Real> b);
template <typename Real> Var<Real> mul(Var<Real> a, Var<Real> b);
template <typename Real> Var<Real> scale(Var<Real> a, double factor);
template <typename Real> Var<Real> sum(Var<Real> a);
template <typename Real> Var<Real> concat(const std::vector<Var<Real>>& parts, int axis);
template <typename Real> Var<Real> slice_rows(Var<Real> a, std::size_t begin, std::size_t end);
template <typename Real> Var<Real> broadcast_rows(Var<Real> a, std::size_t rows);

template <typename Real> Var<Real> tanh(Var<Real> a);
template <typename Real> Var<Real> relu(Var<Real> a);
template <typename Real> Var<Real> sigmoid(Var<Real> a);
template <typename Real> Var<Real> softmax_rows(Var<Real> a);

// Sum over rows of weight[i] * -log(P[i, target[i]]); negative targets are skipped.
template <typename Real>
Var<Real> cross_entropy_rows(Var<Real> probabilities, std::span<const int> targets, std::span<const double> weights);
// Same quantity computed from logits through a stable log-sum-exp.
template <typename Real>
Var<Real> softmax_cross_entropy_rows(Var<Real> logits, std::span<const int> targets,
                                     std::span<const double> weights);

// (T x C) -> (1 x C), maximum over the time axis.
template <typename Real> Var<Real> global_max_pool(Var<Real> a);
// input (T x Cin), kernel {k, Cin, Cout} with odd k; output (T x Cout), zero padded.
template <typename Real> Var<Real> dilated_conv1d(Var<Real> input, Var<Real> kernel, std::size_t dilation);

template <typename Real> Var<Real> dropout(Var<Real> a, double rate, bool train, Rng& rng);
template <typename Real> Var<Real> gaussian_dropout(Var<Real> a, double rate, bool train, Rng& rng);
template <typename Real> Var<Real> gaussian_noise(Var<Real> a, double stddev, bool train, Rng& rng);

// sum_{k=1..K} tr(A^k)
template <typename Real> Var<Real> trace_powers(Var<Real> a, int K);

template <typename Real> Var<Real> gather_rows(Var<Real> table, std::span<const int> indices);
// Index -1 selects the single fallback row.
template <typename Real>
Var<Real> gather_rows_with_fallback(Var<Real> table, Var<Real> fallback, std::span<const int> indices);

struct LstmMasks {
  std::vector<double> input;      // empty, or one multiplier per input channel
  std::vector<double> recurrent;  // empty, or one multiplier per hidden unit
};

// One LSTM direction over a whole sequence. Gate layout in W/U/b columns is
// [input | forget | candidate | output].
template <typename Real>
Var<Real> lstm(Var<Real> x, Var<Real> w, Var<Real> u, Var<Real> b, bool reverse, const LstmMasks& masks);

}  // namespace jointud::ad
