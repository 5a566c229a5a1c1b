#include <cmath>
#include <string>

#include "doctest.h"
#include "jointud/autodiff.hpp"
#include "jointud/gradcheck.hpp"
#include "jointud/gradient_suite.hpp"
#include "oracles.hpp"

using namespace jointud;
using namespace jointud::ad;

namespace {

using M = Tensor<double>;
using testing::closed_walks;
using testing::identity_matrix;
using testing::random_matrix;

double trace_value(const M& a, int K) {
  Tape<double> tape;
  return trace_powers(tape.constant(a), K).value().item();
}

M trace_grad(const M& a, int K) {
  Tape<double> tape;
  Var<double> x = tape.input(a);
  tape.backward(trace_powers(x, K));
  return tape.grad(x);
}

}  // namespace

TEST_CASE("softmax_rows example") {
  Tape<double> tape;
  const M p = softmax_rows(tape.constant(M::matrix(2, 2, {0, 0, std::log(2.0), 0}))).value();
  CHECK(p(0, 0) == doctest::Approx(0.5));
  CHECK(p(0, 1) == doctest::Approx(0.5));
  CHECK(p(1, 0) == doctest::Approx(2.0 / 3.0));
  CHECK(p(1, 1) == doctest::Approx(1.0 / 3.0));
}

TEST_CASE("dilated convolution with a centre tap is the identity") {
  Tape<double> tape;
  Var<double> x = tape.constant(M(5, 1, 1.0));
  Var<double> k = tape.constant(M(Shape{3, 1, 1}, std::vector<double>{0, 1, 0}));
  const M y = dilated_conv1d(x, k, 2).value();
  for (std::size_t t = 0; t < 5; ++t) CHECK(y(t, 0) == 1.0);
}

TEST_CASE("dilated convolution zero-pads outside the sequence") {
  Tape<double> tape;
  Var<double> x = tape.constant(M(5, 1, 1.0));
  Var<double> k = tape.constant(M(Shape{3, 1, 1}, std::vector<double>{1, 1, 1}));
  const M y = dilated_conv1d(x, k, 2).value();
  CHECK(y(0, 0) == 2.0);
  CHECK(y(1, 0) == 2.0);
  CHECK(y(2, 0) == 3.0);
  CHECK(y(4, 0) == 2.0);
}

TEST_CASE("trace_powers examples") {
  CHECK(trace_value(M::matrix(2, 2, {0, 1, 1, 0}), 3) == doctest::Approx(2.0));
  const M g = trace_grad(identity_matrix(3), 2);
  for (std::size_t i = 0; i < 3; ++i)
    for (std::size_t j = 0; j < 3; ++j) CHECK(g(i, j) == doctest::Approx(i == j ? 3.0 : 0.0));
}

TEST_CASE("trace_powers equals closed-walk enumeration") {
  Rng rng(11);
  for (int trial = 0; trial < 100; ++trial) {
    const M a = random_matrix(6, 6, rng, 0.0, 1.0);
    for (int K = 1; K <= 4; ++K) {
      double expected = 0;
      for (int k = 1; k <= K; ++k) expected += closed_walks(a, k);
      CHECK(std::abs(trace_value(a, K) - expected) <= 1e-9);
    }
  }
}

TEST_CASE("trace_powers gradient equals the sum of scaled transposed powers") {
  Rng rng(12);
  for (int trial = 0; trial < 50; ++trial) {
    const M a = random_matrix(6, 6, rng, 0.0, 1.0);
    for (int K = 1; K <= 4; ++K) {
      const M expected = testing::trace_powers_gradient(a, K);
      const M g = trace_grad(a, K);
      double worst = 0;
      for (std::size_t i = 0; i < g.size(); ++i) worst = std::max(worst, std::abs(g[i] - expected[i]));
      CHECK(worst <= 1e-6);
    }
  }
}

TEST_CASE("finite-difference checks of simple functions") {
  Rng rng(13);
  const M x = random_matrix(3, 4, rng, -1, 1);
  const auto squares = grad_check("squares", [](Tape<double>&, const std::vector<Var<double>>& in) {
    return sum(mul(in[0], in[0]));
  }, {x}, 1e-6);
  CHECK(squares.max_rel_error <= 1e-6);

  const M a = random_matrix(5, 5, rng, 0, 1);
  const auto trace = grad_check("trace", [](Tape<double>&, const std::vector<Var<double>>& in) {
    return trace_powers(in[0], 4);
  }, {a}, 1e-6);
  CHECK(trace.max_rel_error <= 1e-6);

  const M b = random_matrix(4, 3, rng, -1, 1);
  const M w = random_matrix(3, 3, rng, -1, 1);
  const auto chain = grad_check("softmax-matmul", [&](Tape<double>& tape, const std::vector<Var<double>>& in) {
    return sum(mul(softmax_rows(matmul(in[0], in[1])), tape.constant(w)));
  }, {x, b}, 1e-4);
  CHECK(chain.max_rel_error <= 1e-4);
}

TEST_CASE("relative error uses a floor") {
  CHECK(relative_error(1.0, 1.0) == 0.0);
  CHECK(relative_error(2.0, 1.0) == doctest::Approx(0.5));
  CHECK(relative_error(1e-9, 0.0) == doctest::Approx(1e-6));
}

TEST_CASE("noise operations are the identity outside training") {
  Tape<double> tape;
  Rng rng(1);
  Var<double> x = tape.constant(M::matrix(1, 3, {1, 2, 3}));
  CHECK(dropout(x, 0.5, false, rng).id() == x.id());
  CHECK(gaussian_dropout(x, 0.5, false, rng).id() == x.id());
  CHECK(gaussian_noise(x, 0.5, false, rng).id() == x.id());
  CHECK_THROWS(dropout(x, 1.0, true, rng));
}

TEST_CASE("gaussian dropout multiplier has mean one and variance rate/(1-rate)") {
  Tape<double> tape;
  Rng rng(3);
  constexpr std::size_t kN = 200000;
  const M ones(1, kN, 1.0);
  const M y = gaussian_dropout(tape.constant(ones), 0.25, true, rng).value();
  double s = 0, sq = 0;
  for (double v : y.data()) {
    s += v;
    sq += v * v;
  }
  const double mean = s / kN, var = sq / kN - mean * mean;
  const double expected_var = 0.25 / 0.75;
  CHECK(std::abs(mean - 1.0) <= 4.0 * std::sqrt(expected_var / kN));
  CHECK(std::abs(var - expected_var) <= 0.01);
}

TEST_CASE("dropout keeps the expectation") {
  Tape<double> tape;
  Rng rng(4);
  constexpr std::size_t kN = 200000;
  const M y = dropout(tape.constant(M(1, kN, 1.0)), 0.25, true, rng).value();
  double s = 0;
  std::size_t zeros = 0;
  for (double v : y.data()) {
    s += v;
    zeros += v == 0.0;
  }
  CHECK(std::abs(s / kN - 1.0) <= 0.01);
  CHECK(std::abs(static_cast<double>(zeros) / kN - 0.25) <= 0.005);
}

TEST_CASE("shape errors name the operation") {
  Tape<double> tape;
  Var<double> a = tape.constant(M(2, 3));
  Var<double> b = tape.constant(M(2, 3));
  try {
    matmul(a, b);
    FAIL("expected a shape error");
  } catch (const ShapeError& e) {
    CHECK(std::string(e.what()).find("matmul") != std::string::npos);
    CHECK(std::string(e.what()).find("[2x3]") != std::string::npos);
  }
  CHECK_THROWS_AS(trace_powers(a, 2), ShapeError);
  CHECK_THROWS_AS(tape.backward(a), ShapeError);
}

TEST_CASE("parameter gradients and inference tapes") {
  ParameterStore<double> store;
  const ParamId w = store.add("w", M::matrix(1, 2, {1, 2}));
  const ParamId frozen = store.add("frozen", M::matrix(1, 2, {3, 4}), false);
  {
    Tape<double> tape(&store);
    tape.backward(sum(mul(tape.param(w), tape.param(frozen))));
    const auto grads = tape.take_param_grads();
    REQUIRE(grads.size() >= 1);
    CHECK(grads[w][0] == 3.0);
    CHECK(grads[w][1] == 4.0);
    CHECK((grads.size() <= frozen || grads[frozen].empty()));
  }
  {
    Tape<double> tape(&store, false);
    Var<double> out = sum(mul(tape.param(w), tape.param(frozen)));
    CHECK(out.value().item() == 11.0);
  }
}

TEST_CASE("gradient suite passes and detects an injected fault") {
  GradientSuiteOptions options;
  options.instances = 3;
  for (const auto& r : run_gradient_suite(options)) {
    CAPTURE(r.name);
    CHECK(r.passed());
    CHECK(r.entries_checked > 0);
  }
  inject_fault("tanh");
  const auto faulty = run_gradient_suite(options);
  clear_fault();
  bool tanh_failed = false;
  for (const auto& r : faulty) tanh_failed |= r.name == "tanh" && !r.passed();
  CHECK(tanh_failed);
}
