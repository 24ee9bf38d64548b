#include "lpr/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace lpr {

namespace {
double evaluate(const LossBuilder& build, const std::vector<Tensor*>& inputs) {
  Tape tape(false);
  std::vector<Var> leaves;
  for (Tensor* t : inputs) leaves.push_back(tape.input(*t));
  return tape.value(build(tape, leaves))[0];
}

double relative_error(double a, double n) {
  return std::abs(a - n) / std::max({std::abs(a), std::abs(n), 1e-8});
}
}  // namespace

GradcheckResult gradcheck(const LossBuilder& build,
                          std::vector<Tensor*> inputs,
                          std::vector<Tensor*> params, double h) {
  for (Tensor* p : params) p->zero_grad();
  std::vector<Tensor> analytic_inputs;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (Tensor* t : inputs) leaves.push_back(tape.input(*t));
    tape.backward(build(tape, leaves));
    for (std::size_t i = 0; i < inputs.size(); ++i) {
      analytic_inputs.push_back(tape.grad_buffer(leaves[i]));
    }
  }
  std::vector<std::vector<double>> analytic_params;
  for (Tensor* p : params) {
    auto g = p->grad();
    analytic_params.emplace_back(g.begin(), g.end());
  }

  GradcheckResult result;
  auto probe = [&](Tensor& t, std::size_t i, double analytic) {
    const double saved = t[i];
    t[i] = saved + h;
    const double up = evaluate(build, inputs);
    t[i] = saved - h;
    const double down = evaluate(build, inputs);
    t[i] = saved;
    const double numeric = (up - down) / (2.0 * h);
    result.max_relative_error =
        std::max(result.max_relative_error, relative_error(analytic, numeric));
    ++result.checked;
  };
  for (std::size_t k = 0; k < inputs.size(); ++k)
    for (std::size_t i = 0; i < inputs[k]->size(); ++i)
      probe(*inputs[k], i, analytic_inputs[k][i]);
  for (std::size_t k = 0; k < params.size(); ++k)
    for (std::size_t i = 0; i < params[k]->size(); ++i)
      probe(*params[k], i, analytic_params[k][i]);
  return result;
}

}  // namespace lpr
