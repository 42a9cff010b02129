#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "vlg/tape.hpp"

namespace vlg::ad {

/// Builds a scalar loss on `tape` from leaves holding the checked inputs.
using LossBuilder = std::function<Var(Tape& tape, std::span<const Var> leaves)>;

struct GradcheckResult {
  /// max over all coordinates of |autodiff - fd| / max(1, |fd|)
  double max_error = 0.0;
  std::size_t coordinates = 0;
  std::size_t worst_input = 0;
  std::size_t worst_index = 0;
};

/// Compares reverse-mode gradients against central finite differences with step `h`.
GradcheckResult gradcheck(const LossBuilder& build, const std::vector<Tensor>& inputs, double h = 1e-5);

}  // namespace vlg::ad
