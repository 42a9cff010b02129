#include "chart_kernels.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vlg::detail {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

// Writes exp(v - max) into `scaled`, returns max (-inf for an all -inf cell).
double shift(const double* v, std::size_t n, std::vector<double>& scaled) {
  double m = kNegInf;
  for (std::size_t i = 0; i < n; ++i) m = std::max(m, v[i]);
  scaled.resize(n);
  for (std::size_t i = 0; i < n; ++i) scaled[i] = m == kNegInf ? 0.0 : std::exp(v[i] - m);
  return m;
}

}  // namespace

ScaledRules::ScaledRules(const Tensor& binary, std::size_t n_nonterminals, std::size_t n_symbols)
    : n(n_nonterminals), nt(n_symbols), prob(n * nt * nt), row_max(n, kNegInf) {
  if (binary.size() != prob.size()) {
    throw DimensionError("binary rules", binary.shape(), Shape{n, nt, nt});
  }
  for (std::size_t a = 0; a < n; ++a) {
    const double* row = binary.data() + a * nt * nt;
    double m = kNegInf;
    for (std::size_t i = 0; i < nt * nt; ++i) m = std::max(m, row[i]);
    row_max[a] = m;
    for (std::size_t i = 0; i < nt * nt; ++i) prob[a * nt * nt + i] = m == kNegInf ? 0.0 : std::exp(row[i] - m);
  }
}

void inside_combine(const ScaledRules& rules, std::span<const Split> splits, double* out) {
  const std::size_t n = rules.n;
  std::vector<double> pl, pr;
  std::fill(out, out + n, kNegInf);
  for (const Split& s : splits) {
    const double ml = shift(s.left.values, s.left.size, pl);
    const double mr = shift(s.right.values, s.right.size, pr);
    if (ml == kNegInf || mr == kNegInf) continue;
    for (std::size_t a = 0; a < n; ++a) {
      if (rules.row_max[a] == kNegInf) continue;
      double acc = 0.0;
      for (std::size_t b = 0; b < s.left.size; ++b) {
        if (pl[b] == 0.0) continue;
        const double* row = rules.at(a, s.left.offset + b) + s.right.offset;
        double inner = 0.0;
        for (std::size_t c = 0; c < s.right.size; ++c) inner += row[c] * pr[c];
        acc += pl[b] * inner;
      }
      if (acc <= 0.0) continue;
      const double v = rules.row_max[a] + ml + mr + std::log(acc);
      // running log-add over splits
      if (out[a] == kNegInf) {
        out[a] = v;
      } else {
        const double hi = std::max(out[a], v), lo = std::min(out[a], v);
        out[a] = hi + std::log1p(std::exp(lo - hi));
      }
    }
  }
}

void inside_combine_backward(const ScaledRules& rules, std::span<const Split> splits, const double* out,
                             const double* grad_out, double* grad_binary,
                             std::span<const std::pair<double*, double*>> grad_children) {
  const std::size_t n = rules.n, nt = rules.nt;
  std::vector<double> pl, pr;
  for (std::size_t k = 0; k < splits.size(); ++k) {
    const Split& s = splits[k];
    const double ml = shift(s.left.values, s.left.size, pl);
    const double mr = shift(s.right.values, s.right.size, pr);
    if (ml == kNegInf || mr == kNegInf) continue;
    double* gl = grad_children.empty() ? nullptr : grad_children[k].first;
    double* gr = grad_children.empty() ? nullptr : grad_children[k].second;
    for (std::size_t a = 0; a < n; ++a) {
      if (out[a] == kNegInf || grad_out[a] == 0.0 || rules.row_max[a] == kNegInf) continue;
      const double c = grad_out[a] * std::exp(rules.row_max[a] + ml + mr - out[a]);
      for (std::size_t b = 0; b < s.left.size; ++b) {
        if (pl[b] == 0.0) continue;
        const double cb = c * pl[b];
        const double* row = rules.at(a, s.left.offset + b) + s.right.offset;
        double* grow = grad_binary ? grad_binary + (a * nt + s.left.offset + b) * nt + s.right.offset : nullptr;
        double left_acc = 0.0;
        for (std::size_t cc = 0; cc < s.right.size; ++cc) {
          const double w = cb * row[cc] * pr[cc];
          if (grow) grow[cc] += w;
          if (gr) gr[cc] += w;
          left_acc += w;
        }
        if (gl) gl[b] += left_acc;
      }
    }
  }
}

namespace {

// Parent scores shifted by the per-parent rule maximum.
double shift_parent(const ScaledRules& rules, const double* parent, std::vector<double>& scaled) {
  const std::size_t n = rules.n;
  double m = kNegInf;
  for (std::size_t a = 0; a < n; ++a) m = std::max(m, parent[a] + rules.row_max[a]);
  scaled.resize(n);
  for (std::size_t a = 0; a < n; ++a) scaled[a] = m == kNegInf ? 0.0 : std::exp(parent[a] + rules.row_max[a] - m);
  return m;
}

}  // namespace

void outside_combine(const ScaledRules& rules, std::span<const OutsideTerm> terms, double* out) {
  const std::size_t n = rules.n, nt = rules.nt;
  std::vector<double> pp, ps, acc(n);
  std::fill(out, out + n, kNegInf);
  for (const OutsideTerm& t : terms) {
    const double mp = shift_parent(rules, t.parent, pp);
    const double ms = shift(t.sibling.values, t.sibling.size, ps);
    if (mp == kNegInf || ms == kNegInf) continue;
    std::fill(acc.begin(), acc.end(), 0.0);
    for (std::size_t a = 0; a < n; ++a) {
      if (pp[a] == 0.0) continue;
      if (t.sibling_right) {
        for (std::size_t b = 0; b < n; ++b) {
          const double* row = rules.at(a, b) + t.sibling.offset;
          double inner = 0.0;
          for (std::size_t c = 0; c < t.sibling.size; ++c) inner += row[c] * ps[c];
          acc[b] += pp[a] * inner;
        }
      } else {
        for (std::size_t c = 0; c < t.sibling.size; ++c) {
          if (ps[c] == 0.0) continue;
          const double* row = rules.at(a, t.sibling.offset + c);
          const double w = pp[a] * ps[c];
          for (std::size_t b = 0; b < n; ++b) acc[b] += w * row[b];
        }
      }
    }
    (void)nt;
    for (std::size_t b = 0; b < n; ++b) {
      if (acc[b] <= 0.0) continue;
      const double v = mp + ms + std::log(acc[b]);
      if (out[b] == kNegInf) {
        out[b] = v;
      } else {
        const double hi = std::max(out[b], v), lo = std::min(out[b], v);
        out[b] = hi + std::log1p(std::exp(lo - hi));
      }
    }
  }
}

void outside_combine_backward(const ScaledRules& rules, std::span<const OutsideTerm> terms, const double* out,
                              const double* grad_out, double* grad_binary,
                              std::span<const std::pair<double*, double*>> grad_terms) {
  const std::size_t n = rules.n, nt = rules.nt;
  std::vector<double> pp, ps, cb(n);
  for (std::size_t k = 0; k < terms.size(); ++k) {
    const OutsideTerm& t = terms[k];
    const double mp = shift_parent(rules, t.parent, pp);
    const double ms = shift(t.sibling.values, t.sibling.size, ps);
    if (mp == kNegInf || ms == kNegInf) continue;
    double* gp = grad_terms.empty() ? nullptr : grad_terms[k].first;
    double* gs = grad_terms.empty() ? nullptr : grad_terms[k].second;
    for (std::size_t b = 0; b < n; ++b) {
      cb[b] = (out[b] == kNegInf || grad_out[b] == 0.0) ? 0.0 : grad_out[b] * std::exp(mp + ms - out[b]);
    }
    for (std::size_t a = 0; a < n; ++a) {
      if (pp[a] == 0.0) continue;
      double parent_acc = 0.0;
      for (std::size_t b = 0; b < n; ++b) {
        if (cb[b] == 0.0) continue;
        const double wb = cb[b] * pp[a];
        for (std::size_t c = 0; c < t.sibling.size; ++c) {
          const std::size_t idx = t.sibling_right ? (a * nt + b) * nt + t.sibling.offset + c
                                                  : (a * nt + t.sibling.offset + c) * nt + b;
          const double w = wb * rules.prob[idx] * ps[c];
          if (grad_binary) grad_binary[idx] += w;
          if (gs) gs[c] += w;
          parent_acc += w;
        }
      }
      if (gp) gp[a] += parent_acc;
    }
  }
}

}  // namespace vlg::detail
