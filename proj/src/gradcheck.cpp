#include "jointud/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace jointud::ad {

double relative_error(double analytic, double numeric, double floor) {
  const double denom = std::max({std::abs(analytic), std::abs(numeric), floor});
  return std::abs(analytic - numeric) / denom;
}

namespace {

double evaluate(const InputFunction& f, const std::vector<Tensor<double>>& point) {
  Tape<double> tape;
  std::vector<Var<double>> inputs;
  for (const auto& t : point) inputs.push_back(tape.constant(t));
  return f(tape, inputs).value().item();
}

std::vector<std::size_t> probe_entries(std::size_t size, std::size_t limit) {
  std::vector<std::size_t> out;
  if (limit == 0 || size <= limit) {
    for (std::size_t i = 0; i < size; ++i) out.push_back(i);
    return out;
  }
  const std::size_t stride = size / limit;
  for (std::size_t k = 0; k < limit; ++k) out.push_back(k * stride + (k % std::max<std::size_t>(stride, 1)));
  return out;
}

}  // namespace

GradCheckReport grad_check(const std::string& name, const InputFunction& f, const std::vector<Tensor<double>>& point,
                           double tolerance, double h) {
  GradCheckReport report{name, 0.0, 0, tolerance};
  Tape<double> tape;
  std::vector<Var<double>> inputs;
  for (const auto& t : point) inputs.push_back(tape.input(t));
  Var<double> out = f(tape, inputs);
  tape.backward(out);

  std::vector<Tensor<double>> probe = point;
  for (std::size_t k = 0; k < point.size(); ++k) {
    const Tensor<double> analytic = tape.grad(inputs[k]);
    for (std::size_t i = 0; i < point[k].size(); ++i) {
      const double orig = probe[k][i];
      probe[k][i] = orig + h;
      const double up = evaluate(f, probe);
      probe[k][i] = orig - h;
      const double down = evaluate(f, probe);
      probe[k][i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      report.max_rel_error = std::max(report.max_rel_error, relative_error(analytic[i], numeric));
      ++report.entries_checked;
    }
  }
  return report;
}

GradCheckReport grad_check_params(const std::string& name, const ParamFunction& f, ParameterStore<double>& params,
                                  double tolerance, std::size_t max_entries_per_param, double h) {
  GradCheckReport report{name, 0.0, 0, tolerance};
  Gradients<double> analytic;
  {
    Tape<double> tape(&params);
    tape.backward(f(tape));
    analytic = tape.take_param_grads();
  }
  auto evaluate_params = [&] {
    Tape<double> tape(&params);
    return f(tape).value().item();
  };
  for (std::size_t id = 0; id < params.size(); ++id) {
    Parameter<double>& p = params[id];
    if (!p.trainable) continue;
    for (std::size_t i : probe_entries(p.value.size(), max_entries_per_param)) {
      const double orig = p.value[i];
      p.value[i] = orig + h;
      const double up = evaluate_params();
      p.value[i] = orig - h;
      const double down = evaluate_params();
      p.value[i] = orig;
      const double numeric = (up - down) / (2.0 * h);
      const double a = id < analytic.size() && !analytic[id].empty() ? analytic[id][i] : 0.0;
      report.max_rel_error = std::max(report.max_rel_error, relative_error(a, numeric));
      ++report.entries_checked;
    }
  }
  return report;
}

}  // namespace jointud::ad
