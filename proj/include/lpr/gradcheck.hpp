#pragma once

#include <functional>
#include <span>
#include <vector>

#include "lpr/autograd.hpp"

namespace lpr {

/// Builds a scalar loss on `tape` from leaf variables created for `inputs`.
using LossBuilder = std::function<Var(Tape&, std::span<const Var> inputs)>;

struct GradcheckResult {
  double max_relative_error = 0.0;
  std::size_t checked = 0;
};

/// Compares reverse-mode gradients with central differences of step `h`
/// for every scalar in `inputs` and `params`. The error per scalar is
/// |analytic - numeric| / max(|analytic|, |numeric|, 1e-8).
GradcheckResult gradcheck(const LossBuilder& build,
                          std::vector<Tensor*> inputs,
                          std::vector<Tensor*> params, double h = 1e-5);

}  // namespace lpr
