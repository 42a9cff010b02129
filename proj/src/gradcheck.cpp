#include "vlg/gradcheck.hpp"

#include <algorithm>
#include <cmath>

namespace vlg::ad {

namespace {

double evaluate(const LossBuilder& build, const std::vector<Tensor>& inputs) {
  Tape tape;
  std::vector<Var> leaves;
  for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
  return build(tape, leaves).item();
}

}  // namespace

GradcheckResult gradcheck(const LossBuilder& build, const std::vector<Tensor>& inputs, double h) {
  std::vector<Tensor> analytic;
  {
    Tape tape;
    std::vector<Var> leaves;
    for (const Tensor& t : inputs) leaves.push_back(tape.leaf(t));
    const Var loss = build(tape, leaves);
    const Gradients grads = tape.backward(loss);
    for (const Var& leaf : leaves) analytic.push_back(grads.wrt(leaf));
  }

  GradcheckResult result;
  std::vector<Tensor> probe = inputs;
  for (std::size_t t = 0; t < probe.size(); ++t) {
    for (std::size_t i = 0; i < probe[t].size(); ++i) {
      const double original = probe[t][i];
      probe[t][i] = original + h;
      const double up = evaluate(build, probe);
      probe[t][i] = original - h;
      const double down = evaluate(build, probe);
      probe[t][i] = original;
      const double fd = (up - down) / (2.0 * h);
      const double err = std::abs(analytic[t][i] - fd) / std::max(1.0, std::abs(fd));
      ++result.coordinates;
      if (err > result.max_error || result.coordinates == 1) {
        result.max_error = std::max(result.max_error, err);
        result.worst_input = t;
        result.worst_index = i;
      }
    }
  }
  return result;
}

}  // namespace vlg::ad
