#pragma once

#include <cstddef>
#include <span>
#include <stdexcept>
#include <vector>

#include "vlg/pcfg.hpp"
#include "vlg/tape.hpp"
#include "vlg/tree.hpp"

namespace vlg {

/// log Z is -inf: no derivation has nonzero probability.
class ZeroProbabilityInput : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

/// Shortest sequence the CNF grammar (S -> A, A -> B C, T -> x) can derive.
inline constexpr std::size_t kMinParseLength = 2;

/// Log-space inside (and optionally outside) scores. Cells over one position hold P
/// preterminal scores; longer cells hold N nonterminal scores.
struct Chart {
  std::size_t length = 0;
  std::size_t n_nonterminals = 0;
  std::size_t n_preterminals = 0;
  std::vector<std::vector<double>> inside;   // indexed by cell(a, b)
  std::vector<std::vector<double>> outside;  // cells of length >= 2, after the outside pass
  double log_z = 0.0;

  std::size_t cell(std::size_t a, std::size_t b) const { return a * (length + 1) + b; }
  const std::vector<double>& alpha(std::size_t a, std::size_t b) const { return inside.at(cell(a, b)); }
};

/// Posterior probability that a constituent covers [a, b), for b - a >= 2.
struct SpanMarginals {
  std::size_t length = 0;
  std::vector<double> values;  // (length + 1)^2, unused cells zero

  double at(std::size_t a, std::size_t b) const { return values.at(a * (length + 1) + b); }
  double& at(std::size_t a, std::size_t b) { return values.at(a * (length + 1) + b); }
  /// Sum over all spans of length >= 2; n - 1 for a proper posterior.
  double total() const;
  /// Marginals in all_spans(length) order.
  std::vector<double> ordered() const;
};

/// Inside pass for emissions of shape [n, P]. Throws ZeroProbabilityInput when log Z
/// is -inf and std::invalid_argument for n < 2.
Chart inside(const RuleProbs& rules, const Tensor& emissions);

/// Outside recursion; fills chart.outside and returns span marginals.
SpanMarginals outside_and_marginals(Chart& chart, const RuleProbs& rules);

/// Span marginals as d log Z / d s(a, b) for zero span scores added to the inside
/// cells, via reverse-mode differentiation of the inside pass.
SpanMarginals marginals_by_differentiation(const RuleProbs& rules, const Tensor& emissions);

/// Bracketing maximizing the summed span marginals; ties go to the leftmost split.
ParseTree mbr_decode(const SpanMarginals& marginals);

struct ViterbiParse {
  ParseTree tree;  // labeled
  double log_prob = 0.0;
};

/// Max-probability labeled derivation; ties go to the leftmost split, then lowest ids.
ViterbiParse viterbi_decode(const RuleProbs& rules, const Tensor& emissions);

inline constexpr std::size_t kBruteForceMaxLength = 7;

/// log Z by explicit enumeration of every tree shape and symbol labeling.
double brute_force_log_z(const RuleProbs& rules, const Tensor& emissions);

/// Number of binary tree shapes over n leaves (Catalan number C_{n-1}).
std::size_t count_tree_shapes(std::size_t n);

// ---- differentiable chart -------------------------------------------------

/// Inside cells recorded on a tape.
struct DiffChart {
  std::size_t length = 0;
  std::size_t n_nonterminals = 0;
  std::size_t n_preterminals = 0;
  std::vector<ad::Var> inside;  // by cell index a * (length + 1) + b
  ad::Var log_z;
};

/// Inside pass on the tape. `emissions` is [n, P]. `span_scores`, when non-empty, holds
/// one scalar per span of length >= 2 in all_spans(n) order, added to that cell.
DiffChart diff_inside(ad::Var root, ad::Var binary, ad::Var emissions, std::size_t n_nonterminals,
                      std::size_t n_preterminals, std::span<const ad::Var> span_scores = {});

/// Outside recursion on the tape. Returns the marginals of all spans of length >= 2
/// as a vector in all_spans(n) order, differentiable w.r.t. every rule input.
ad::Var diff_span_marginals(const DiffChart& chart, ad::Var root, ad::Var binary);

}  // namespace vlg
