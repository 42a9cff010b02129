#pragma once

// Log-space combination kernels shared by the plain and the on-tape charts.
// Each kernel evaluates a log-sum-exp over (split, child symbols) with the
// shift factored per operand, so the inner loops are multiply-adds over
// exp-shifted values rather than one exp per rule application.

#include <cstddef>
#include <span>
#include <vector>

#include "vlg/tensor.hpp"

namespace vlg::detail {

/// exp(binary[A, B, C] - row_max[A]) for a [N, NT, NT] log-probability tensor.
struct ScaledRules {
  std::size_t n = 0;
  std::size_t nt = 0;
  std::vector<double> prob;
  std::vector<double> row_max;

  ScaledRules(const Tensor& binary, std::size_t n_nonterminals, std::size_t n_symbols);
  const double* at(std::size_t a, std::size_t b) const { return prob.data() + (a * nt + b) * nt; }
};

/// A chart cell: `size` log scores for symbols [offset, offset + size) of the child axis.
struct Cell {
  const double* values = nullptr;
  std::size_t size = 0;
  std::size_t offset = 0;
};

struct Split {
  Cell left;
  Cell right;
};

/// out[A] = log sum_{split, B, C} exp(binary[A,B,C] + left[B] + right[C]),  A < N.
void inside_combine(const ScaledRules& rules, std::span<const Split> splits, double* out);

/// Accumulates gradients of sum_A g[A] out[A]. `grad_binary` ([N, NT, NT]) and
/// the per-split child gradient pointers may be null.
void inside_combine_backward(const ScaledRules& rules, std::span<const Split> splits, const double* out,
                             const double* grad_out, double* grad_binary,
                             std::span<const std::pair<double*, double*>> grad_children);

/// One way a span can be a child: parent outside scores [N] and the sibling cell.
struct OutsideTerm {
  const double* parent = nullptr;
  Cell sibling;
  bool sibling_right = true;
};

/// out[B] = log sum_{terms, A, C} exp(parent[A] + binary[A,B,C] + sibling[C])  (sibling right),
/// or binary[A,C,B] for a left sibling, with B < N.
void outside_combine(const ScaledRules& rules, std::span<const OutsideTerm> terms, double* out);

void outside_combine_backward(const ScaledRules& rules, std::span<const OutsideTerm> terms, const double* out,
                              const double* grad_out, double* grad_binary,
                              std::span<const std::pair<double*, double*>> grad_terms);

}  // namespace vlg::detail
