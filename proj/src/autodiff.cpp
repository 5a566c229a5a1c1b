#include "jointud/autodiff.hpp"

#include <algorithm>
#include <atomic>
#include <cmath>
#include <limits>
#include <mutex>

namespace jointud {

std::string shape_str(const Shape& shape) {
  std::string out = "[";
  for (std::size_t i = 0; i < shape.size(); ++i) {
    if (i) out += 'x';
    out += std::to_string(shape[i]);
  }
  return out + "]";
}

}  // namespace jointud

namespace jointud::ad {

namespace {

std::atomic<bool> g_fault_active{false};
std::mutex g_fault_mutex;
std::string g_fault_op;

double fault_sign(std::string_view op) {
  if (!g_fault_active.load(std::memory_order_relaxed)) return 1.0;
  std::lock_guard lock(g_fault_mutex);
  return g_fault_op == op ? -1.0 : 1.0;
}

template <typename Real>
Real clamp_prob(Real p) {
  constexpr Real tiny = std::numeric_limits<Real>::min();
  return p < tiny ? tiny : p;
}

template <typename Real>
void require_matrix(std::string_view op, const Tensor<Real>& t) {
  if (t.rank() != 2) throw ShapeError(op, "expected a matrix, got " + shape_str(t.shape()));
}

template <typename Real>
Tape<Real>& tape_of(Var<Real> v) {
  if (!v.valid()) throw std::invalid_argument("operation on an unbound variable");
  return *v.tape();
}

template <typename Real>
Tape<Real>& same_tape(Var<Real> a, Var<Real> b) {
  if (a.tape() != b.tape()) throw std::invalid_argument("variables belong to different tapes");
  return tape_of(a);
}

}  // namespace

ShapeError::ShapeError(std::string_view op, const std::string& detail)
    : std::invalid_argument(std::string(op) + ": " + detail) {}

void inject_fault(std::string op) {
  std::lock_guard lock(g_fault_mutex);
  g_fault_op = std::move(op);
  g_fault_active = !g_fault_op.empty();
}

void clear_fault() { inject_fault(""); }

// ---- ParameterStore ---------------------------------------------------------

template <typename Real>
ParamId ParameterStore<Real>::add(std::string name, Tensor<Real> value, bool trainable, double l2) {
  if (find(name)) throw std::invalid_argument("duplicate parameter name '" + name + "'");
  params_.push_back(Parameter<Real>{std::move(name), std::move(value), trainable, l2});
  return params_.size() - 1;
}

template <typename Real>
std::optional<ParamId> ParameterStore<Real>::find(std::string_view name) const {
  for (std::size_t i = 0; i < params_.size(); ++i) {
    if (params_[i].name == name) return i;
  }
  return std::nullopt;
}

template <typename Real>
void accumulate(Gradients<Real>& into, const Gradients<Real>& from) {
  if (into.size() < from.size()) into.resize(from.size());
  for (std::size_t i = 0; i < from.size(); ++i) {
    if (from[i].empty()) continue;
    if (into[i].empty()) {
      into[i] = from[i];
    } else {
      into[i] += from[i];
    }
  }
}

// ---- Tape -------------------------------------------------------------------

template <typename Real>
Var<Real> Tape<Real>::constant(Tensor<Real> value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Tape<Real>::input(Tensor<Real> value) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  n.requires_grad = true;
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
Var<Real> Tape<Real>::param(ParamId id) {
  if (params_ == nullptr) throw std::logic_error("tape has no parameter store");
  const Parameter<Real>& p = (*params_)[id];
  Node& n = nodes_.emplace_back();
  n.ref = &p.value;
  n.requires_grad = p.trainable && record_gradients_;
  n.param = id;
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
const Tensor<Real>& Tape<Real>::value(std::size_t node) const {
  const Node& n = nodes_[node];
  return n.ref ? *n.ref : n.value;
}

template <typename Real>
Tensor<Real>& Tape<Real>::grad_buffer(std::size_t node) {
  Node& n = nodes_[node];
  if (n.grad.empty()) n.grad = Tensor<Real>(value(node).shape());
  return n.grad;
}

template <typename Real>
Var<Real> Tape<Real>::record(Tensor<Real> value, const std::vector<std::size_t>& inputs, BackwardFn backward) {
  Node& n = nodes_.emplace_back();
  n.value = std::move(value);
  for (std::size_t i : inputs) n.requires_grad = n.requires_grad || nodes_[i].requires_grad;
  if (n.requires_grad) n.backward = std::move(backward);
  return Var<Real>(this, nodes_.size() - 1);
}

template <typename Real>
void Tape<Real>::backward(Var<Real> loss) {
  if (loss.tape() != this) throw std::invalid_argument("backward: loss belongs to another tape");
  if (loss.value().size() != 1) {
    throw ShapeError("backward", "loss must be scalar, got " + shape_str(loss.shape()));
  }
  if (backward_done_) throw std::logic_error("backward called twice on the same tape");
  backward_done_ = true;
  grad_buffer(loss.id())[0] = Real(1);
  for (std::size_t i = loss.id() + 1; i-- > 0;) {
    Node& n = nodes_[i];
    if (n.grad.empty() || !n.requires_grad) continue;
    if (n.backward) n.backward(*this, i);
  }
  if (params_ != nullptr) param_grads_.resize(params_->size());
  for (Node& n : nodes_) {
    if (!n.param || n.grad.empty() || !n.requires_grad) continue;
    Tensor<Real>& g = param_grads_[*n.param];
    if (g.empty()) {
      g = std::move(n.grad);
    } else {
      g += n.grad;
    }
    n.grad = Tensor<Real>();
  }
}

template <typename Real>
Tensor<Real> Tape<Real>::grad(Var<Real> v) const {
  const Node& n = nodes_[v.id()];
  if (!n.grad.empty()) return n.grad;
  if (n.param && *n.param < param_grads_.size() && !param_grads_[*n.param].empty()) return param_grads_[*n.param];
  return Tensor<Real>(value(v.id()).shape());
}

template <typename Real>
Gradients<Real> Tape<Real>::take_param_grads() {
  Gradients<Real> out = std::move(param_grads_);
  param_grads_.clear();
  return out;
}

// ---- linear algebra -----------------------------------------------------------

template <typename Real>
Var<Real> matmul(Var<Real> a, Var<Real> b) {
  Tape<Real>& tape = same_tape(a, b);
  const Tensor<Real>& A = a.value();
  const Tensor<Real>& B = b.value();
  require_matrix("matmul", A);
  require_matrix("matmul", B);
  const std::size_t m = A.rows(), k = A.cols(), n = B.cols();
  if (B.rows() != k) {
    throw ShapeError("matmul", "inner dimensions differ: " + shape_str(A.shape()) + " x " + shape_str(B.shape()));
  }
  Tensor<Real> out(m, n);
  for (std::size_t i = 0; i < m; ++i) {
    Real* o = &out(i, 0);
    for (std::size_t p = 0; p < k; ++p) {
      const Real av = A(i, p);
      if (av == Real(0)) continue;
      const Real* br = &B(p, 0);
      for (std::size_t j = 0; j < n; ++j) o[j] += av * br[j];
    }
  }
  std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib, m, k, n](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("matmul"));
    const Tensor<Real>& G = t.upstream(self);
    const Tensor<Real>& A = t.value(ia);
    const Tensor<Real>& B = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor<Real>& GA = t.grad_buffer(ia);
      for (std::size_t i = 0; i < m; ++i) {
        const Real* g = &G(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
          const Real* br = &B(p, 0);
          Real acc = 0;
          for (std::size_t j = 0; j < n; ++j) acc += g[j] * br[j];
          GA(i, p) += s * acc;
        }
      }
    }
    if (t.requires_grad(ib)) {
      Tensor<Real>& GB = t.grad_buffer(ib);
      for (std::size_t i = 0; i < m; ++i) {
        const Real* g = &G(i, 0);
        for (std::size_t p = 0; p < k; ++p) {
          const Real av = s * A(i, p);
          if (av == Real(0)) continue;
          Real* gb = &GB(p, 0);
          for (std::size_t j = 0; j < n; ++j) gb[j] += av * g[j];
        }
      }
    }
  });
}

template <typename Real>
Var<Real> transpose(Var<Real> a) {
  Tape<Real>& tape = tape_of(a);
  const Tensor<Real>& A = a.value();
  require_matrix("transpose", A);
  const std::size_t m = A.rows(), n = A.cols();
  Tensor<Real> out(n, m);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t j = 0; j < n; ++j) out(j, i) = A(i, j);
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, m, n](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("transpose"));
    const Tensor<Real>& G = t.upstream(self);
    Tensor<Real>& GA = t.grad_buffer(ia);
    for (std::size_t i = 0; i < m; ++i)
      for (std::size_t j = 0; j < n; ++j) GA(i, j) += s * G(j, i);
  });
}

namespace {

enum class Broadcast { none, row };

template <typename Real>
Broadcast broadcast_kind(std::string_view op, const Tensor<Real>& A, const Tensor<Real>& B) {
  if (A.shape() == B.shape()) return Broadcast::none;
  if (B.rows() == 1 && B.cols() == A.cols() && A.rank() >= 1) return Broadcast::row;
  throw ShapeError(op, "incompatible shapes " + shape_str(A.shape()) + " and " + shape_str(B.shape()));
}

}  // namespace

template <typename Real>
Var<Real> add(Var<Real> a, Var<Real> b) {
  Tape<Real>& tape = same_tape(a, b);
  const Tensor<Real>& A = a.value();
  const Tensor<Real>& B = b.value();
  const Broadcast kind = broadcast_kind("add", A, B);
  Tensor<Real> out = A;
  const std::size_t cols = A.cols();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] += kind == Broadcast::none ? B[i] : B[i % cols];
  std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib, kind, cols](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("add"));
    const Tensor<Real>& G = t.upstream(self);
    if (t.requires_grad(ia)) {
      Tensor<Real>& GA = t.grad_buffer(ia);
      for (std::size_t i = 0; i < G.size(); ++i) GA[i] += s * G[i];
    }
    if (t.requires_grad(ib)) {
      Tensor<Real>& GB = t.grad_buffer(ib);
      for (std::size_t i = 0; i < G.size(); ++i) GB[kind == Broadcast::none ? i : i % cols] += s * G[i];
    }
  });
}

template <typename Real>
Var<Real> mul(Var<Real> a, Var<Real> b) {
  Tape<Real>& tape = same_tape(a, b);
  const Tensor<Real>& A = a.value();
  const Tensor<Real>& B = b.value();
  const Broadcast kind = broadcast_kind("mul", A, B);
  const std::size_t cols = A.cols();
  Tensor<Real> out = A;
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= kind == Broadcast::none ? B[i] : B[i % cols];
  std::size_t ia = a.id(), ib = b.id();
  return tape.record(std::move(out), {ia, ib}, [ia, ib, kind, cols](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("mul"));
    const Tensor<Real>& G = t.upstream(self);
    const Tensor<Real>& A = t.value(ia);
    const Tensor<Real>& B = t.value(ib);
    if (t.requires_grad(ia)) {
      Tensor<Real>& GA = t.grad_buffer(ia);
      for (std::size_t i = 0; i < G.size(); ++i) GA[i] += s * G[i] * (kind == Broadcast::none ? B[i] : B[i % cols]);
    }
    if (t.requires_grad(ib)) {
      Tensor<Real>& GB = t.grad_buffer(ib);
      for (std::size_t i = 0; i < G.size(); ++i) GB[kind == Broadcast::none ? i : i % cols] += s * G[i] * A[i];
    }
  });
}

template <typename Real>
Var<Real> scale(Var<Real> a, double factor) {
  Tape<Real>& tape = tape_of(a);
  Tensor<Real> out = a.value();
  const Real f = static_cast<Real>(factor);
  for (Real& v : out.storage()) v *= f;
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, f](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("scale"));
    const Tensor<Real>& G = t.upstream(self);
    Tensor<Real>& GA = t.grad_buffer(ia);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i] += s * f * G[i];
  });
}

template <typename Real>
Var<Real> sum(Var<Real> a) {
  Tape<Real>& tape = tape_of(a);
  Real total = 0;
  for (Real v : a.value().data()) total += v;
  std::size_t ia = a.id();
  return tape.record(Tensor<Real>::scalar(total), {ia}, [ia](Tape<Real>& t, std::size_t self) {
    const Real g = static_cast<Real>(fault_sign("sum")) * t.upstream(self)[0];
    Tensor<Real>& GA = t.grad_buffer(ia);
    for (Real& v : GA.storage()) v += g;
  });
}

template <typename Real>
Var<Real> concat(const std::vector<Var<Real>>& parts, int axis) {
  if (parts.empty()) throw ShapeError("concat", "no inputs");
  if (axis != 0 && axis != 1) throw ShapeError("concat", "axis must be 0 or 1");
  Tape<Real>& tape = tape_of(parts.front());
  std::vector<std::size_t> ids;
  std::vector<std::size_t> offsets;
  std::size_t rows = parts.front().rows(), cols = parts.front().cols();
  std::size_t total = 0;
  for (const Var<Real>& p : parts) {
    if (p.tape() != &tape) throw std::invalid_argument("concat: variables belong to different tapes");
    require_matrix("concat", p.value());
    if (axis == 0 && p.cols() != cols) {
      throw ShapeError("concat", "column mismatch " + shape_str(p.shape()) + " vs " + std::to_string(cols));
    }
    if (axis == 1 && p.rows() != rows) {
      throw ShapeError("concat", "row mismatch " + shape_str(p.shape()) + " vs " + std::to_string(rows));
    }
    ids.push_back(p.id());
    offsets.push_back(total);
    total += axis == 0 ? p.rows() : p.cols();
  }
  Tensor<Real> out = axis == 0 ? Tensor<Real>(total, cols) : Tensor<Real>(rows, total);
  for (std::size_t k = 0; k < parts.size(); ++k) {
    const Tensor<Real>& P = parts[k].value();
    for (std::size_t i = 0; i < P.rows(); ++i)
      for (std::size_t j = 0; j < P.cols(); ++j) {
        if (axis == 0) {
          out(offsets[k] + i, j) = P(i, j);
        } else {
          out(i, offsets[k] + j) = P(i, j);
        }
      }
  }
  return tape.record(std::move(out), ids, [ids, offsets, axis](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("concat"));
    const Tensor<Real>& G = t.upstream(self);
    for (std::size_t k = 0; k < ids.size(); ++k) {
      if (!t.requires_grad(ids[k])) continue;
      Tensor<Real>& GP = t.grad_buffer(ids[k]);
      for (std::size_t i = 0; i < GP.rows(); ++i)
        for (std::size_t j = 0; j < GP.cols(); ++j)
          GP(i, j) += s * (axis == 0 ? G(offsets[k] + i, j) : G(i, offsets[k] + j));
    }
  });
}

template <typename Real>
Var<Real> slice_rows(Var<Real> a, std::size_t begin, std::size_t end) {
  Tape<Real>& tape = tape_of(a);
  const Tensor<Real>& A = a.value();
  require_matrix("slice_rows", A);
  if (begin > end || end > A.rows()) {
    throw ShapeError("slice_rows", "range [" + std::to_string(begin) + "," + std::to_string(end) + ") outside " +
                                       shape_str(A.shape()));
  }
  const std::size_t cols = A.cols();
  Tensor<Real> out(end - begin, cols);
  std::copy(A.data().begin() + begin * cols, A.data().begin() + end * cols, out.storage().begin());
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, begin, cols](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("slice_rows"));
    const Tensor<Real>& G = t.upstream(self);
    Tensor<Real>& GA = t.grad_buffer(ia);
    for (std::size_t i = 0; i < G.size(); ++i) GA[begin * cols + i] += s * G[i];
  });
}

template <typename Real>
Var<Real> broadcast_rows(Var<Real> a, std::size_t rows) {
  Tape<Real>& tape = tape_of(a);
  const Tensor<Real>& A = a.value();
  if (A.rows() != 1) throw ShapeError("broadcast_rows", "expected a single row, got " + shape_str(A.shape()));
  const std::size_t cols = A.cols();
  Tensor<Real> out(rows, cols);
  for (std::size_t i = 0; i < rows; ++i) std::copy(A.data().begin(), A.data().end(), out.row(i).begin());
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, cols](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("broadcast_rows"));
    const Tensor<Real>& G = t.upstream(self);
    Tensor<Real>& GA = t.grad_buffer(ia);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i % cols] += s * G[i];
  });
}

// ---- elementwise nonlinearities -------------------------------------------------

template <typename Real>
Var<Real> tanh(Var<Real> a) {
  Tape<Real>& tape = tape_of(a);
  Tensor<Real> out = a.value();
  for (Real& v : out.storage()) v = std::tanh(v);
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("tanh"));
    const Tensor<Real>& G = t.upstream(self);
    const Tensor<Real>& Y = t.value(self);
    Tensor<Real>& GA = t.grad_buffer(ia);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i] += s * G[i] * (Real(1) - Y[i] * Y[i]);
  });
}

template <typename Real>
Var<Real> relu(Var<Real> a) {
  Tape<Real>& tape = tape_of(a);
  Tensor<Real> out = a.value();
  for (Real& v : out.storage()) v = v > Real(0) ? v : Real(0);
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("relu"));
    const Tensor<Real>& G = t.upstream(self);
    const Tensor<Real>& X = t.value(ia);
    Tensor<Real>& GA = t.grad_buffer(ia);
    for (std::size_t i = 0; i < G.size(); ++i) {
      if (X[i] > Real(0)) GA[i] += s * G[i];
    }
  });
}

template <typename Real>
Var<Real> sigmoid(Var<Real> a) {
  Tape<Real>& tape = tape_of(a);
  Tensor<Real> out = a.value();
  for (Real& v : out.storage()) v = Real(1) / (Real(1) + std::exp(-v));
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("sigmoid"));
    const Tensor<Real>& G = t.upstream(self);
    const Tensor<Real>& Y = t.value(self);
    Tensor<Real>& GA = t.grad_buffer(ia);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i] += s * G[i] * Y[i] * (Real(1) - Y[i]);
  });
}

template <typename Real>
Var<Real> softmax_rows(Var<Real> a) {
  Tape<Real>& tape = tape_of(a);
  Tensor<Real> out = a.value();
  const std::size_t rows = out.rows(), cols = out.cols();
  for (std::size_t i = 0; i < rows; ++i) {
    std::span<Real> r = out.row(i);
    const Real mx = *std::max_element(r.begin(), r.end());
    Real z = 0;
    for (Real& v : r) z += (v = std::exp(v - mx));
    for (Real& v : r) v /= z;
  }
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, rows, cols](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("softmax_rows"));
    const Tensor<Real>& G = t.upstream(self);
    const Tensor<Real>& Y = t.value(self);
    Tensor<Real>& GA = t.grad_buffer(ia);
    for (std::size_t i = 0; i < rows; ++i) {
      Real dot = 0;
      for (std::size_t j = 0; j < cols; ++j) dot += G(i, j) * Y(i, j);
      for (std::size_t j = 0; j < cols; ++j) GA(i, j) += s * Y(i, j) * (G(i, j) - dot);
    }
  });
}

namespace {

void check_targets(std::string_view op, std::size_t rows, std::size_t cols, std::span<const int> targets,
                   std::span<const double> weights) {
  if (targets.size() != rows) {
    throw ShapeError(op, std::to_string(targets.size()) + " targets for " + std::to_string(rows) + " rows");
  }
  if (!weights.empty() && weights.size() != rows) {
    throw ShapeError(op, std::to_string(weights.size()) + " weights for " + std::to_string(rows) + " rows");
  }
  for (int t : targets) {
    if (t >= static_cast<int>(cols)) throw ShapeError(op, "target " + std::to_string(t) + " out of range");
  }
}

}  // namespace

template <typename Real>
Var<Real> cross_entropy_rows(Var<Real> probabilities, std::span<const int> targets, std::span<const double> weights) {
  Tape<Real>& tape = tape_of(probabilities);
  const Tensor<Real>& P = probabilities.value();
  check_targets("cross_entropy_rows", P.rows(), P.cols(), targets, weights);
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  if (w.empty()) w.assign(tg.size(), 1.0);
  Real loss = 0;
  for (std::size_t i = 0; i < tg.size(); ++i) {
    if (tg[i] < 0) continue;
    loss -= static_cast<Real>(w[i]) * std::log(clamp_prob(P(i, tg[i])));
  }
  std::size_t ip = probabilities.id();
  return tape.record(Tensor<Real>::scalar(loss), {ip}, [ip, tg, w](Tape<Real>& t, std::size_t self) {
    const Real g = static_cast<Real>(fault_sign("cross_entropy_rows")) * t.upstream(self)[0];
    const Tensor<Real>& P = t.value(ip);
    Tensor<Real>& GP = t.grad_buffer(ip);
    for (std::size_t i = 0; i < tg.size(); ++i) {
      if (tg[i] < 0) continue;
      const Real p = P(i, tg[i]);
      if (p < std::numeric_limits<Real>::min()) continue;  // clamped region is flat
      GP(i, tg[i]) -= g * static_cast<Real>(w[i]) / p;
    }
  });
}

template <typename Real>
Var<Real> softmax_cross_entropy_rows(Var<Real> logits, std::span<const int> targets, std::span<const double> weights) {
  Tape<Real>& tape = tape_of(logits);
  const Tensor<Real>& Z = logits.value();
  const std::size_t rows = Z.rows(), cols = Z.cols();
  check_targets("softmax_cross_entropy_rows", rows, cols, targets, weights);
  std::vector<int> tg(targets.begin(), targets.end());
  std::vector<double> w(weights.begin(), weights.end());
  if (w.empty()) w.assign(tg.size(), 1.0);
  Tensor<Real> probs(rows, cols);
  Real loss = 0;
  for (std::size_t i = 0; i < rows; ++i) {
    std::span<const Real> z = Z.row(i);
    const Real mx = *std::max_element(z.begin(), z.end());
    Real total = 0;
    for (std::size_t j = 0; j < cols; ++j) total += (probs(i, j) = std::exp(z[j] - mx));
    for (std::size_t j = 0; j < cols; ++j) probs(i, j) /= total;
    if (tg[i] >= 0) loss += static_cast<Real>(w[i]) * (mx + std::log(total) - z[tg[i]]);
  }
  std::size_t iz = logits.id();
  return tape.record(Tensor<Real>::scalar(loss), {iz},
                     [iz, tg, w, probs = std::move(probs), cols](Tape<Real>& t, std::size_t self) {
                       const Real g =
                           static_cast<Real>(fault_sign("softmax_cross_entropy_rows")) * t.upstream(self)[0];
                       Tensor<Real>& GZ = t.grad_buffer(iz);
                       for (std::size_t i = 0; i < tg.size(); ++i) {
                         if (tg[i] < 0) continue;
                         const Real gw = g * static_cast<Real>(w[i]);
                         for (std::size_t j = 0; j < cols; ++j) GZ(i, j) += gw * probs(i, j);
                         GZ(i, tg[i]) -= gw;
                       }
                     });
}

// ---- sequence ops -----------------------------------------------------------------

template <typename Real>
Var<Real> global_max_pool(Var<Real> a) {
  Tape<Real>& tape = tape_of(a);
  const Tensor<Real>& A = a.value();
  require_matrix("global_max_pool", A);
  if (A.rows() == 0) throw ShapeError("global_max_pool", "empty sequence");
  const std::size_t cols = A.cols();
  Tensor<Real> out(1, cols);
  std::vector<std::size_t> arg(cols, 0);
  for (std::size_t c = 0; c < cols; ++c) {
    out(0, c) = A(0, c);
    for (std::size_t r = 1; r < A.rows(); ++r) {
      if (A(r, c) > out(0, c)) {
        out(0, c) = A(r, c);
        arg[c] = r;
      }
    }
  }
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, arg = std::move(arg)](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("global_max_pool"));
    const Tensor<Real>& G = t.upstream(self);
    Tensor<Real>& GA = t.grad_buffer(ia);
    for (std::size_t c = 0; c < arg.size(); ++c) GA(arg[c], c) += s * G(0, c);
  });
}

template <typename Real>
Var<Real> dilated_conv1d(Var<Real> input, Var<Real> kernel, std::size_t dilation) {
  Tape<Real>& tape = same_tape(input, kernel);
  const Tensor<Real>& X = input.value();
  const Tensor<Real>& K = kernel.value();
  require_matrix("dilated_conv1d", X);
  if (K.rank() != 3) throw ShapeError("dilated_conv1d", "kernel must be {k, Cin, Cout}, got " + shape_str(K.shape()));
  const std::size_t width = K.shape()[0], cin = K.shape()[1], cout = K.shape()[2];
  if (width % 2 == 0) throw ShapeError("dilated_conv1d", "kernel width must be odd");
  if (X.cols() != cin) {
    throw ShapeError("dilated_conv1d", "input " + shape_str(X.shape()) + " vs kernel " + shape_str(K.shape()));
  }
  if (dilation == 0) throw ShapeError("dilated_conv1d", "dilation must be positive");
  const long steps = static_cast<long>(X.rows());
  const long half = static_cast<long>(width / 2);
  Tensor<Real> out(X.rows(), cout);
  for (long t = 0; t < steps; ++t) {
    Real* o = &out(t, 0);
    for (std::size_t j = 0; j < width; ++j) {
      const long src = t + (static_cast<long>(j) - half) * static_cast<long>(dilation);
      if (src < 0 || src >= steps) continue;
      for (std::size_t c = 0; c < cin; ++c) {
        const Real xv = X(src, c);
        if (xv == Real(0)) continue;
        const Real* kr = &K[(j * cin + c) * cout];
        for (std::size_t q = 0; q < cout; ++q) o[q] += xv * kr[q];
      }
    }
  }
  std::size_t ix = input.id(), ik = kernel.id();
  return tape.record(std::move(out), {ix, ik},
                     [ix, ik, width, cin, cout, steps, half, dilation](Tape<Real>& t, std::size_t self) {
                       const Real s = static_cast<Real>(fault_sign("dilated_conv1d"));
                       const Tensor<Real>& G = t.upstream(self);
                       const Tensor<Real>& X = t.value(ix);
                       const Tensor<Real>& K = t.value(ik);
                       const bool gx = t.requires_grad(ix), gk = t.requires_grad(ik);
                       Tensor<Real>* GX = gx ? &t.grad_buffer(ix) : nullptr;
                       Tensor<Real>* GK = gk ? &t.grad_buffer(ik) : nullptr;
                       for (long tt = 0; tt < steps; ++tt) {
                         const Real* g = &G(tt, 0);
                         for (std::size_t j = 0; j < width; ++j) {
                           const long src = tt + (static_cast<long>(j) - half) * static_cast<long>(dilation);
                           if (src < 0 || src >= steps) continue;
                           for (std::size_t c = 0; c < cin; ++c) {
                             const Real* kr = &K[(j * cin + c) * cout];
                             if (gx) {
                               Real acc = 0;
                               for (std::size_t q = 0; q < cout; ++q) acc += g[q] * kr[q];
                               (*GX)(src, c) += s * acc;
                             }
                             if (gk) {
                               const Real xv = s * X(src, c);
                               if (xv == Real(0)) continue;
                               Real* gkr = &(*GK)[(j * cin + c) * cout];
                               for (std::size_t q = 0; q < cout; ++q) gkr[q] += xv * g[q];
                             }
                           }
                         }
                       }
                     });
}

// ---- noise ------------------------------------------------------------------------

namespace {

template <typename Real>
Var<Real> multiply_by_mask(Var<Real> a, Tensor<Real> mask, const char* op) {
  Tape<Real>& tape = tape_of(a);
  Tensor<Real> out = a.value();
  for (std::size_t i = 0; i < out.size(); ++i) out[i] *= mask[i];
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia, mask = std::move(mask), op](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign(op));
    const Tensor<Real>& G = t.upstream(self);
    Tensor<Real>& GA = t.grad_buffer(ia);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i] += s * G[i] * mask[i];
  });
}

}  // namespace

template <typename Real>
Var<Real> dropout(Var<Real> a, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("dropout rate must be in [0,1)");
  if (!train || rate == 0.0) return a;
  Tensor<Real> mask(a.shape());
  const Real keep_scale = static_cast<Real>(1.0 / (1.0 - rate));
  for (Real& m : mask.storage()) m = rng.uniform() < rate ? Real(0) : keep_scale;
  return multiply_by_mask(a, std::move(mask), "dropout");
}

template <typename Real>
Var<Real> gaussian_dropout(Var<Real> a, double rate, bool train, Rng& rng) {
  if (rate < 0.0 || rate >= 1.0) throw std::invalid_argument("gaussian dropout rate must be in [0,1)");
  if (!train || rate == 0.0) return a;
  const double stddev = std::sqrt(rate / (1.0 - rate));
  Tensor<Real> mask(a.shape());
  for (Real& m : mask.storage()) m = static_cast<Real>(rng.normal(1.0, stddev));
  return multiply_by_mask(a, std::move(mask), "gaussian_dropout");
}

template <typename Real>
Var<Real> gaussian_noise(Var<Real> a, double stddev, bool train, Rng& rng) {
  if (stddev < 0.0) throw std::invalid_argument("noise stddev must be non-negative");
  if (!train || stddev == 0.0) return a;
  Tape<Real>& tape = tape_of(a);
  Tensor<Real> out = a.value();
  for (Real& v : out.storage()) v += static_cast<Real>(rng.normal(0.0, stddev));
  std::size_t ia = a.id();
  return tape.record(std::move(out), {ia}, [ia](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("gaussian_noise"));
    const Tensor<Real>& G = t.upstream(self);
    Tensor<Real>& GA = t.grad_buffer(ia);
    for (std::size_t i = 0; i < G.size(); ++i) GA[i] += s * G[i];
  });
}

// ---- cycle penalty ------------------------------------------------------------------

namespace {

template <typename Real>
Tensor<Real> square_product(const Tensor<Real>& A, const Tensor<Real>& B) {
  const std::size_t n = A.rows();
  Tensor<Real> out(n, n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t p = 0; p < n; ++p) {
      const Real av = A(i, p);
      if (av == Real(0)) continue;
      for (std::size_t j = 0; j < n; ++j) out(i, j) += av * B(p, j);
    }
  return out;
}

}  // namespace

template <typename Real>
Var<Real> trace_powers(Var<Real> a, int K) {
  Tape<Real>& tape = tape_of(a);
  const Tensor<Real>& A = a.value();
  if (A.rank() != 2 || A.rows() != A.cols()) throw ShapeError("trace_powers", "non-square " + shape_str(A.shape()));
  if (K < 1) throw std::invalid_argument("trace_powers: K must be at least 1");
  const std::size_t n = A.rows();
  // powers[k] = A^k for k = 0..K-1; the backward pass needs exactly these.
  std::vector<Tensor<Real>> powers;
  powers.reserve(K);
  Tensor<Real> identity(n, n);
  for (std::size_t i = 0; i < n; ++i) identity(i, i) = Real(1);
  powers.push_back(std::move(identity));
  Real total = 0;
  Tensor<Real> current = A;
  for (int k = 1; k <= K; ++k) {
    for (std::size_t i = 0; i < n; ++i) total += current(i, i);
    if (k < K) {
      powers.push_back(current);
      current = square_product(current, A);
    }
  }
  std::size_t ia = a.id();
  return tape.record(Tensor<Real>::scalar(total), {ia},
                     [ia, n, powers = std::move(powers)](Tape<Real>& t, std::size_t self) {
                       const Real g = static_cast<Real>(fault_sign("trace_powers")) * t.upstream(self)[0];
                       Tensor<Real>& GA = t.grad_buffer(ia);
                       for (std::size_t k = 1; k <= powers.size(); ++k) {
                         const Tensor<Real>& P = powers[k - 1];
                         const Real c = g * static_cast<Real>(k);
                         for (std::size_t i = 0; i < n; ++i)
                           for (std::size_t j = 0; j < n; ++j) GA(i, j) += c * P(j, i);
                       }
                     });
}

// ---- lookups ------------------------------------------------------------------------

template <typename Real>
Var<Real> gather_rows(Var<Real> table, std::span<const int> indices) {
  Tape<Real>& tape = tape_of(table);
  const Tensor<Real>& T = table.value();
  require_matrix("gather_rows", T);
  const std::size_t cols = T.cols();
  Tensor<Real> out(indices.size(), cols);
  std::vector<int> idx(indices.begin(), indices.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] < 0 || static_cast<std::size_t>(idx[i]) >= T.rows()) {
      throw ShapeError("gather_rows", "index " + std::to_string(idx[i]) + " outside " + shape_str(T.shape()));
    }
    std::copy_n(&T(idx[i], 0), cols, &out(i, 0));
  }
  std::size_t it = table.id();
  return tape.record(std::move(out), {it}, [it, idx = std::move(idx), cols](Tape<Real>& t, std::size_t self) {
    const Real s = static_cast<Real>(fault_sign("gather_rows"));
    const Tensor<Real>& G = t.upstream(self);
    Tensor<Real>& GT = t.grad_buffer(it);
    for (std::size_t i = 0; i < idx.size(); ++i)
      for (std::size_t j = 0; j < cols; ++j) GT(idx[i], j) += s * G(i, j);
  });
}

template <typename Real>
Var<Real> gather_rows_with_fallback(Var<Real> table, Var<Real> fallback, std::span<const int> indices) {
  Tape<Real>& tape = same_tape(table, fallback);
  const Tensor<Real>& T = table.value();
  const Tensor<Real>& F = fallback.value();
  const std::size_t cols = F.cols();
  if (F.rows() != 1 || (T.size() > 0 && T.cols() != cols)) {
    throw ShapeError("gather_rows_with_fallback", "table " + shape_str(T.shape()) + " vs fallback " +
                                                      shape_str(F.shape()));
  }
  Tensor<Real> out(indices.size(), cols);
  std::vector<int> idx(indices.begin(), indices.end());
  for (std::size_t i = 0; i < idx.size(); ++i) {
    if (idx[i] == -1) {
      std::copy_n(&F(0, 0), cols, &out(i, 0));
    } else if (idx[i] >= 0 && static_cast<std::size_t>(idx[i]) < T.rows()) {
      std::copy_n(&T(idx[i], 0), cols, &out(i, 0));
    } else {
      throw ShapeError("gather_rows_with_fallback", "index " + std::to_string(idx[i]) + " outside " +
                                                        shape_str(T.shape()));
    }
  }
  std::size_t it = table.id(), ifb = fallback.id();
  return tape.record(std::move(out), {it, ifb},
                     [it, ifb, idx = std::move(idx), cols](Tape<Real>& t, std::size_t self) {
                       const Real s = static_cast<Real>(fault_sign("gather_rows_with_fallback"));
                       const Tensor<Real>& G = t.upstream(self);
                       for (std::size_t i = 0; i < idx.size(); ++i) {
                         const std::size_t node = idx[i] == -1 ? ifb : it;
                         if (!t.requires_grad(node)) continue;
                         Tensor<Real>& GT = t.grad_buffer(node);
                         const std::size_t row = idx[i] == -1 ? 0 : static_cast<std::size_t>(idx[i]);
                         for (std::size_t j = 0; j < cols; ++j) GT(row, j) += s * G(i, j);
                       }
                     });
}

// ---- LSTM -----------------------------------------------------------------------------

template <typename Real>
Var<Real> lstm(Var<Real> x, Var<Real> w, Var<Real> u, Var<Real> b, bool reverse, const LstmMasks& masks) {
  Tape<Real>& tape = same_tape(x, w);
  if (u.tape() != &tape || b.tape() != &tape) throw std::invalid_argument("lstm: variables on different tapes");
  const Tensor<Real>& X = x.value();
  const Tensor<Real>& W = w.value();
  const Tensor<Real>& U = u.value();
  const Tensor<Real>& B = b.value();
  require_matrix("lstm", X);
  const std::size_t steps = X.rows(), in = X.cols(), hidden = U.rows();
  if (W.rows() != in || W.cols() != 4 * hidden || U.cols() != 4 * hidden || B.size() != 4 * hidden) {
    throw ShapeError("lstm", "x " + shape_str(X.shape()) + ", W " + shape_str(W.shape()) + ", U " +
                                 shape_str(U.shape()) + ", b " + shape_str(B.shape()));
  }
  if (!masks.input.empty() && masks.input.size() != in) throw ShapeError("lstm", "input mask size");
  if (!masks.recurrent.empty() && masks.recurrent.size() != hidden) throw ShapeError("lstm", "recurrent mask size");
  std::vector<Real> mx(in, Real(1)), mh(hidden, Real(1));
  for (std::size_t i = 0; i < masks.input.size(); ++i) mx[i] = static_cast<Real>(masks.input[i]);
  for (std::size_t i = 0; i < masks.recurrent.size(); ++i) mh[i] = static_cast<Real>(masks.recurrent[i]);

  const std::size_t G4 = 4 * hidden;
  // Saved per processing step: gate activations, cell state and tanh(cell).
  Tensor<Real> gates(steps, G4), cells(steps, hidden), tanh_cells(steps, hidden);
  Tensor<Real> out(steps, hidden);
  std::vector<Real> z(G4), hprev(hidden, Real(0)), cprev(hidden, Real(0)), xin(in);
  for (std::size_t s = 0; s < steps; ++s) {
    const std::size_t t = reverse ? steps - 1 - s : s;
    for (std::size_t q = 0; q < G4; ++q) z[q] = B[q];
    for (std::size_t c = 0; c < in; ++c) {
      const Real xv = X(t, c) * mx[c];
      if (xv == Real(0)) continue;
      const Real* wr = &W(c, 0);
      for (std::size_t q = 0; q < G4; ++q) z[q] += xv * wr[q];
    }
    for (std::size_t c = 0; c < hidden; ++c) {
      const Real hv = hprev[c] * mh[c];
      if (hv == Real(0)) continue;
      const Real* ur = &U(c, 0);
      for (std::size_t q = 0; q < G4; ++q) z[q] += hv * ur[q];
    }
    Real* gt = &gates(s, 0);
    for (std::size_t h = 0; h < hidden; ++h) {
      const Real ig = Real(1) / (Real(1) + std::exp(-z[h]));
      const Real fg = Real(1) / (Real(1) + std::exp(-z[hidden + h]));
      const Real cg = std::tanh(z[2 * hidden + h]);
      const Real og = Real(1) / (Real(1) + std::exp(-z[3 * hidden + h]));
      gt[h] = ig;
      gt[hidden + h] = fg;
      gt[2 * hidden + h] = cg;
      gt[3 * hidden + h] = og;
      const Real c = fg * cprev[h] + ig * cg;
      const Real tc = std::tanh(c);
      cells(s, h) = c;
      tanh_cells(s, h) = tc;
      out(t, h) = og * tc;
      cprev[h] = c;
      hprev[h] = og * tc;
    }
  }

  std::size_t ix = x.id(), iw = w.id(), iu = u.id(), ib = b.id();
  return tape.record(
      std::move(out), {ix, iw, iu, ib},
      [=, gates = std::move(gates), cells = std::move(cells), tanh_cells = std::move(tanh_cells),
       mx = std::move(mx), mh = std::move(mh)](Tape<Real>& tp, std::size_t self) {
        const Real sg = static_cast<Real>(fault_sign("lstm"));
        const Tensor<Real>& G = tp.upstream(self);
        const Tensor<Real>& X = tp.value(ix);
        const Tensor<Real>& W = tp.value(iw);
        const Tensor<Real>& U = tp.value(iu);
        const Tensor<Real>& H = tp.value(self);
        Tensor<Real>* GX = tp.requires_grad(ix) ? &tp.grad_buffer(ix) : nullptr;
        Tensor<Real>* GW = tp.requires_grad(iw) ? &tp.grad_buffer(iw) : nullptr;
        Tensor<Real>* GU = tp.requires_grad(iu) ? &tp.grad_buffer(iu) : nullptr;
        Tensor<Real>* GB = tp.requires_grad(ib) ? &tp.grad_buffer(ib) : nullptr;
        std::vector<Real> dh_next(hidden, Real(0)), dc_next(hidden, Real(0)), dz(G4);
        for (std::size_t s = steps; s-- > 0;) {
          const std::size_t t = reverse ? steps - 1 - s : s;
          const Real* gt = &gates(s, 0);
          for (std::size_t h = 0; h < hidden; ++h) {
            const Real ig = gt[h], fg = gt[hidden + h], cg = gt[2 * hidden + h], og = gt[3 * hidden + h];
            const Real tc = tanh_cells(s, h);
            const Real cp = s > 0 ? cells(s - 1, h) : Real(0);
            const Real dh = G(t, h) + dh_next[h];
            const Real dout = dh * tc;
            const Real dc = dh * og * (Real(1) - tc * tc) + dc_next[h];
            dz[h] = dc * cg * ig * (Real(1) - ig);
            dz[hidden + h] = dc * cp * fg * (Real(1) - fg);
            dz[2 * hidden + h] = dc * ig * (Real(1) - cg * cg);
            dz[3 * hidden + h] = dout * og * (Real(1) - og);
            dc_next[h] = dc * fg;
          }
          if (GB) {
            for (std::size_t q = 0; q < G4; ++q) (*GB)[q] += sg * dz[q];
          }
          for (std::size_t c = 0; c < in; ++c) {
            const Real* wr = &W(c, 0);
            if (GX) {
              Real acc = 0;
              for (std::size_t q = 0; q < G4; ++q) acc += dz[q] * wr[q];
              (*GX)(t, c) += sg * acc * mx[c];
            }
            if (GW) {
              const Real xv = sg * X(t, c) * mx[c];
              if (xv != Real(0)) {
                Real* gw = &(*GW)(c, 0);
                for (std::size_t q = 0; q < G4; ++q) gw[q] += xv * dz[q];
              }
            }
          }
          // The previous hidden state is the output at the previously processed position.
          const bool has_prev = s > 0;
          const std::size_t tprev = reverse ? t + 1 : t - 1;
          for (std::size_t c = 0; c < hidden; ++c) {
            const Real* ur = &U(c, 0);
            Real acc = 0;
            for (std::size_t q = 0; q < G4; ++q) acc += dz[q] * ur[q];
            dh_next[c] = acc * mh[c];
            if (GU && has_prev) {
              const Real hv = sg * H(tprev, c) * mh[c];
              if (hv != Real(0)) {
                Real* gu = &(*GU)(c, 0);
                for (std::size_t q = 0; q < G4; ++q) gu[q] += hv * dz[q];
              }
            }
          }
        }
      });
}

// ---- explicit instantiations ----------------------------------------------------------

#define JOINTUD_INSTANTIATE(Real)                                                                          \
  template class ParameterStore<Real>;                                                                     \
  template class Tape<Real>;                                                                               \
  template void accumulate<Real>(Gradients<Real>&, const Gradients<Real>&);                                \
  template Var<Real> matmul<Real>(Var<Real>, Var<Real>);                                                   \
  template Var<Real> transpose<Real>(Var<Real>);                                                           \
  template Var<Real> add<Real>(Var<Real>, Var<Real>);                                                      \
  template Var<Real> mul<Real>(Var<Real>, Var<Real>);                                                      \
  template Var<Real> scale<Real>(Var<Real>, double);                                                       \
  template Var<Real> sum<Real>(Var<Real>);                                                                 \
  template Var<Real> concat<Real>(const std::vector<Var<Real>>&, int);                                     \
  template Var<Real> slice_rows<Real>(Var<Real>, std::size_t, std::size_t);                                \
  template Var<Real> broadcast_rows<Real>(Var<Real>, std::size_t);                                         \
  template Var<Real> tanh<Real>(Var<Real>);                                                                \
  template Var<Real> relu<Real>(Var<Real>);                                                                \
  template Var<Real> sigmoid<Real>(Var<Real>);                                                             \
  template Var<Real> softmax_rows<Real>(Var<Real>);                                                        \
  template Var<Real> cross_entropy_rows<Real>(Var<Real>, std::span<const int>, std::span<const double>);   \
  template Var<Real> softmax_cross_entropy_rows<Real>(Var<Real>, std::span<const int>,                     \
                                                      std::span<const double>);                            \
  template Var<Real> global_max_pool<Real>(Var<Real>);                                                     \
  template Var<Real> dilated_conv1d<Real>(Var<Real>, Var<Real>, std::size_t);                              \
  template Var<Real> dropout<Real>(Var<Real>, double, bool, Rng&);                                         \
  template Var<Real> gaussian_dropout<Real>(Var<Real>, double, bool, Rng&);                                \
  template Var<Real> gaussian_noise<Real>(Var<Real>, double, bool, Rng&);                                  \
  template Var<Real> trace_powers<Real>(Var<Real>, int);                                                   \
  template Var<Real> gather_rows<Real>(Var<Real>, std::span<const int>);                                   \
  template Var<Real> gather_rows_with_fallback<Real>(Var<Real>, Var<Real>, std::span<const int>);          \
  template Var<Real> lstm<Real>(Var<Real>, Var<Real>, Var<Real>, Var<Real>, bool, const LstmMasks&);

JOINTUD_INSTANTIATE(float)
JOINTUD_INSTANTIATE(double)

#undef JOINTUD_INSTANTIATE

}  // namespace jointud::ad
