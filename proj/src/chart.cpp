#include "vlg/chart.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <memory>
#include <numeric>

#include "chart_kernels.hpp"
#include "vlg/ops.hpp"

namespace vlg {

using ad::Var;
using detail::Cell;
using detail::OutsideTerm;
using detail::ScaledRules;
using detail::Split;

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

void check_inputs(const RuleProbs& rules, const Tensor& emissions) {
  const std::size_t n = rules.n_nonterminals, p = rules.n_preterminals, nt = n + p;
  if (rules.root.size() != n) throw DimensionError("chart: root rules", rules.root.shape(), Shape{n});
  if (rules.binary.size() != n * nt * nt) throw DimensionError("chart: binary rules", rules.binary.shape(), Shape{n, nt, nt});
  if (emissions.rank() != 2 || emissions.dim(1) != p) {
    throw DimensionError("chart: emissions", emissions.shape(), Shape{emissions.rank() ? emissions.dim(0) : 0, p});
  }
  if (emissions.dim(0) < kMinParseLength) {
    throw std::invalid_argument("chart: minimum length 2 (got " + std::to_string(emissions.dim(0)) +
                                "); S -> A, A -> B C derives no single-symbol sequence");
  }
}

double log_add(double a, double b) {
  if (a == kNegInf) return b;
  if (b == kNegInf) return a;
  const double hi = std::max(a, b), lo = std::min(a, b);
  return hi + std::log1p(std::exp(lo - hi));
}

double root_log_z(std::span<const double> root, std::span<const double> top) {
  double z = kNegInf;
  for (std::size_t a = 0; a < root.size(); ++a) z = log_add(z, root[a] + top[a]);
  return z;
}

// Child-axis placement of a cell: preterminals for single positions, nonterminals otherwise.
Cell make_cell(const double* values, std::size_t len, std::size_t n_nonterminals, std::size_t n_preterminals) {
  return len == 1 ? Cell{values, n_preterminals, n_nonterminals} : Cell{values, n_nonterminals, 0};
}

}  // namespace

double SpanMarginals::total() const {
  double s = 0.0;
  for (const Span& sp : all_spans(length)) s += at(sp.start, sp.end);
  return s;
}

std::vector<double> SpanMarginals::ordered() const {
  std::vector<double> out;
  for (const Span& sp : all_spans(length)) out.push_back(at(sp.start, sp.end));
  return out;
}

Chart inside(const RuleProbs& rules, const Tensor& emissions) {
  check_inputs(rules, emissions);
  const std::size_t n = emissions.dim(0), nn = rules.n_nonterminals, np = rules.n_preterminals;
  Chart chart;
  chart.length = n;
  chart.n_nonterminals = nn;
  chart.n_preterminals = np;
  chart.inside.resize((n + 1) * (n + 1));
  for (std::size_t i = 0; i < n; ++i) {
    chart.inside[chart.cell(i, i + 1)].assign(emissions.data() + i * np, emissions.data() + (i + 1) * np);
  }
  const ScaledRules scaled(rules.binary, nn, nn + np);
  std::vector<Split> splits;
  for (std::size_t len = 2; len <= n; ++len) {
    for (std::size_t a = 0; a + len <= n; ++a) {
      const std::size_t b = a + len;
      splits.clear();
      for (std::size_t k = a + 1; k < b; ++k) {
        splits.push_back({make_cell(chart.alpha(a, k).data(), k - a, nn, np),
                          make_cell(chart.alpha(k, b).data(), b - k, nn, np)});
      }
      auto& out = chart.inside[chart.cell(a, b)];
      out.assign(nn, kNegInf);
      detail::inside_combine(scaled, splits, out.data());
    }
  }
  chart.log_z = root_log_z(rules.root.values(), chart.alpha(0, n));
  if (chart.log_z == kNegInf) throw ZeroProbabilityInput("inside: zero-probability input (log Z = -inf)");
  return chart;
}

SpanMarginals outside_and_marginals(Chart& chart, const RuleProbs& rules) {
  const std::size_t n = chart.length, nn = rules.n_nonterminals, np = rules.n_preterminals;
  if (n < kMinParseLength || chart.n_nonterminals != nn || chart.n_preterminals != np ||
      chart.inside.size() != (n + 1) * (n + 1) || !std::isfinite(chart.log_z)) {
    throw std::invalid_argument("outside: chart is inconsistent with the rules or was not computed");
  }
  const ScaledRules scaled(rules.binary, nn, nn + np);
  chart.outside.assign((n + 1) * (n + 1), {});
  chart.outside[chart.cell(0, n)].assign(rules.root.values().begin(), rules.root.values().end());
  std::vector<OutsideTerm> terms;
  for (std::size_t len = n - 1; len >= 2; --len) {
    for (std::size_t a = 0; a + len <= n; ++a) {
      const std::size_t b = a + len;
      terms.clear();
      for (std::size_t c = b + 1; c <= n; ++c) {
        terms.push_back({chart.outside[chart.cell(a, c)].data(), make_cell(chart.alpha(b, c).data(), c - b, nn, np), true});
      }
      for (std::size_t c = 0; c < a; ++c) {
        terms.push_back({chart.outside[chart.cell(c, b)].data(), make_cell(chart.alpha(c, a).data(), a - c, nn, np), false});
      }
      auto& out = chart.outside[chart.cell(a, b)];
      out.assign(nn, kNegInf);
      detail::outside_combine(scaled, terms, out.data());
    }
  }
  SpanMarginals m;
  m.length = n;
  m.values.assign((n + 1) * (n + 1), 0.0);
  for (const Span& s : all_spans(n)) {
    const auto& alpha = chart.alpha(s.start, s.end);
    const auto& beta = chart.outside[chart.cell(s.start, s.end)];
    double acc = 0.0;
    for (std::size_t x = 0; x < nn; ++x) {
      const double v = alpha[x] + beta[x] - chart.log_z;
      if (v > kNegInf) acc += std::exp(v);
    }
    m.at(s.start, s.end) = acc;
  }
  return m;
}

SpanMarginals marginals_by_differentiation(const RuleProbs& rules, const Tensor& emissions) {
  check_inputs(rules, emissions);
  const std::size_t n = emissions.dim(0);
  ad::FiniteCheckScope no_check(false);
  ad::Tape tape;
  const std::vector<Span> spans = all_spans(n);
  std::vector<Var> scores;
  for (std::size_t i = 0; i < spans.size(); ++i) scores.push_back(tape.leaf(Tensor::scalar(0.0)));
  const DiffChart chart = diff_inside(tape.constant(rules.root), tape.constant(rules.binary), tape.constant(emissions),
                                      rules.n_nonterminals, rules.n_preterminals, scores);
  const ad::Gradients grads = tape.backward(chart.log_z);
  SpanMarginals m;
  m.length = n;
  m.values.assign((n + 1) * (n + 1), 0.0);
  for (std::size_t i = 0; i < spans.size(); ++i) m.at(spans[i].start, spans[i].end) = grads.wrt(scores[i]).item();
  return m;
}

ParseTree mbr_decode(const SpanMarginals& marginals) {
  const std::size_t n = marginals.length;
  if (n == 0) throw std::invalid_argument("mbr: empty marginals");
  const std::size_t w = n + 1;
  std::vector<double> best(w * w, 0.0);
  std::vector<std::size_t> split(w * w, 0);
  for (std::size_t len = 2; len <= n; ++len) {
    for (std::size_t a = 0; a + len <= n; ++a) {
      const std::size_t b = a + len;
      double top = kNegInf;
      std::size_t arg = a + 1;
      for (std::size_t k = a + 1; k < b; ++k) {
        const double v = best[a * w + k] + best[k * w + b];
        if (v > top) {
          top = v;
          arg = k;
        }
      }
      best[a * w + b] = marginals.at(a, b) + top;
      split[a * w + b] = arg;
    }
  }
  std::vector<Bracket> brackets;
  std::vector<Span> stack{{0, n}};
  while (!stack.empty()) {
    const Span s = stack.back();
    stack.pop_back();
    if (s.length() < 2) continue;
    brackets.emplace_back(s.start, s.end);
    const std::size_t k = split[s.start * w + s.end];
    stack.push_back({s.start, k});
    stack.push_back({k, s.end});
  }
  return ParseTree::from_brackets(n, std::move(brackets));
}

ViterbiParse viterbi_decode(const RuleProbs& rules, const Tensor& emissions) {
  check_inputs(rules, emissions);
  const std::size_t n = emissions.dim(0), nn = rules.n_nonterminals, np = rules.n_preterminals, nt = nn + np;
  const std::size_t w = n + 1;
  // best[cell][symbol] over the full symbol axis; back pointers for nonterminal cells.
  struct Back {
    std::size_t split = 0, left = 0, right = 0;
  };
  std::vector<std::vector<double>> best(w * w, std::vector<double>(nt, kNegInf));
  std::vector<std::vector<Back>> back(w * w, std::vector<Back>(nn));
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t t = 0; t < np; ++t) best[i * w + i + 1][nn + t] = emissions[i * np + t];
  for (std::size_t len = 2; len <= n; ++len) {
    for (std::size_t a = 0; a + len <= n; ++a) {
      const std::size_t b = a + len;
      auto& cell = best[a * w + b];
      for (std::size_t k = a + 1; k < b; ++k) {
        const auto& l = best[a * w + k];
        const auto& r = best[k * w + b];
        for (std::size_t x = 0; x < nn; ++x) {
          for (std::size_t y = 0; y < nt; ++y) {
            if (l[y] == kNegInf) continue;
            for (std::size_t z = 0; z < nt; ++z) {
              if (r[z] == kNegInf) continue;
              const double v = rules.binary_at(x, y, z) + l[y] + r[z];
              if (v > cell[x]) {
                cell[x] = v;
                back[a * w + b][x] = {k, y, z};
              }
            }
          }
        }
      }
    }
  }
  double top = kNegInf;
  std::size_t root_symbol = 0;
  for (std::size_t x = 0; x < nn; ++x) {
    const double v = rules.root[x] + best[n][x];
    if (v > top) {
      top = v;
      root_symbol = x;
    }
  }
  if (top == kNegInf) throw ZeroProbabilityInput("viterbi: zero-probability input");

  std::vector<ParseTree::Node> nodes;
  std::function<int(Span, std::size_t)> build = [&](Span s, std::size_t symbol) -> int {
    const int id = static_cast<int>(nodes.size());
    nodes.push_back({s, 0, -1, -1});
    if (s.length() == 1) {
      nodes[id].symbol = static_cast<int>(symbol - nn);
      return id;
    }
    nodes[id].symbol = static_cast<int>(symbol);
    const Back& bp = back[s.start * w + s.end][symbol];
    const int l = build({s.start, bp.split}, bp.left);
    const int r = build({bp.split, s.end}, bp.right);
    nodes[id].left = l;
    nodes[id].right = r;
    return id;
  };
  build({0, n}, root_symbol);
  return {ParseTree(std::move(nodes)), top};
}

std::size_t count_tree_shapes(std::size_t n) {
  if (n == 0) return 0;
  std::vector<std::size_t> c(n + 1, 0);
  c[1] = 1;
  for (std::size_t len = 2; len <= n; ++len)
    for (std::size_t k = 1; k < len; ++k) c[len] += c[k] * c[len - k];
  return c[n];
}

namespace {

// Internal node of an enumerated shape: children are internal-node indices (>= 0)
// or leaf positions encoded as -(pos + 1).
struct ShapeNode {
  int left;
  int right;
};

// All shapes over [a, b): each entry lists internal nodes (root last) appended to a prefix.
std::vector<std::vector<ShapeNode>> shapes_over(std::size_t a, std::size_t b) {
  std::vector<std::vector<ShapeNode>> result;
  if (b - a == 1) {
    result.push_back({});
    return result;
  }
  for (std::size_t k = a + 1; k < b; ++k) {
    const auto lefts = shapes_over(a, k);
    const auto rights = shapes_over(k, b);
    for (const auto& l : lefts) {
      for (const auto& r : rights) {
        std::vector<ShapeNode> s = l;
        const int left_ref = l.empty() ? -static_cast<int>(a) - 1 : static_cast<int>(l.size()) - 1;
        const int offset = static_cast<int>(s.size());
        for (ShapeNode node : r) {
          if (node.left >= 0) node.left += offset;
          if (node.right >= 0) node.right += offset;
          s.push_back(node);
        }
        const int right_ref = r.empty() ? -static_cast<int>(k) - 1 : static_cast<int>(s.size()) - 1;
        s.push_back({left_ref, right_ref});
        result.push_back(std::move(s));
      }
    }
  }
  return result;
}

// Depth-first labeling of one shape: leaves first, then internal nodes children-before-parent,
// so each rule factor is multiplied in as soon as its parent label is fixed. Probability space.
struct LabelEnumerator {
  std::size_t nn, np, nt, n;
  const std::vector<double>& root;
  const std::vector<double>& binary;
  const std::vector<double>& emission;
  const std::vector<ShapeNode>& shape;
  std::vector<std::size_t> labels;  // leaves [0, n), internal nodes [n, 2n-1)
  long double total = 0.0L;

  std::size_t symbol_of(int ref) const {
    return ref >= 0 ? labels[n + static_cast<std::size_t>(ref)] : nn + labels[-ref - 1];
  }

  void visit(std::size_t var, double p) {
    if (p == 0.0) return;
    if (var < n) {
      for (std::size_t t = 0; t < np; ++t) {
        labels[var] = t;
        visit(var + 1, p * emission[var * np + t]);
      }
      return;
    }
    const ShapeNode& node = shape[var - n];
    const std::size_t lr = symbol_of(node.left) * nt + symbol_of(node.right);
    if (var + 1 == 2 * n - 1) {
      for (std::size_t a = 0; a < nn; ++a) total += static_cast<long double>(p * binary[a * nt * nt + lr] * root[a]);
      return;
    }
    for (std::size_t a = 0; a < nn; ++a) {
      labels[var] = a;
      visit(var + 1, p * binary[a * nt * nt + lr]);
    }
  }
};

std::vector<double> exp_all(const Tensor& t) {
  std::vector<double> out(t.size());
  for (std::size_t i = 0; i < t.size(); ++i) out[i] = std::exp(t[i]);
  return out;
}

}  // namespace

double brute_force_log_z(const RuleProbs& rules, const Tensor& emissions) {
  check_inputs(rules, emissions);
  const std::size_t n = emissions.dim(0);
  if (n > kBruteForceMaxLength) {
    throw std::invalid_argument("brute force: length " + std::to_string(n) + " exceeds the cap of " +
                                std::to_string(kBruteForceMaxLength));
  }
  long double total = 0.0L;
  const std::size_t nn = rules.n_nonterminals, np = rules.n_preterminals;
  const std::vector<double> root = exp_all(rules.root), binary = exp_all(rules.binary), emission = exp_all(emissions);
  for (const auto& shape : shapes_over(0, n)) {
    LabelEnumerator e{nn, np, nn + np, n, root, binary, emission, shape, std::vector<std::size_t>(2 * n - 1, 0)};
    e.visit(0, 1.0);
    total += e.total;
  }
  return total > 0.0L ? static_cast<double>(std::log(total)) : kNegInf;
}

// ---- differentiable chart -------------------------------------------------

DiffChart diff_inside(Var root, Var binary, Var emissions, std::size_t n_nonterminals, std::size_t n_preterminals,
                      std::span<const Var> span_scores) {
  const std::size_t nn = n_nonterminals, np = n_preterminals, nt = nn + np;
  const Tensor& em = emissions.value();
  if (em.rank() != 2 || em.dim(1) != np) throw DimensionError("diff_inside: emissions", em.shape(), Shape{0, np});
  if (root.size() != nn) throw DimensionError("diff_inside: root", root.shape(), Shape{nn});
  if (binary.size() != nn * nt * nt) throw DimensionError("diff_inside: binary", binary.shape(), Shape{nn, nt, nt});
  const std::size_t n = em.dim(0);
  if (n < kMinParseLength) throw std::invalid_argument("diff_inside: minimum length 2, got " + std::to_string(n));
  const std::vector<Span> spans = all_spans(n);
  if (!span_scores.empty() && span_scores.size() != spans.size()) {
    throw DimensionError("diff_inside: expected " + std::to_string(spans.size()) + " span scores");
  }

  ad::Tape& tape = root.tape();
  DiffChart chart;
  chart.length = n;
  chart.n_nonterminals = nn;
  chart.n_preterminals = np;
  chart.inside.resize((n + 1) * (n + 1));
  const auto cell = [n](std::size_t a, std::size_t b) { return a * (n + 1) + b; };
  for (std::size_t i = 0; i < n; ++i) chart.inside[cell(i, i + 1)] = ad::row(emissions, i);

  auto scaled = std::make_shared<const ScaledRules>(binary.value(), nn, nt);
  std::vector<std::size_t> score_index((n + 1) * (n + 1), 0);
  for (std::size_t i = 0; i < spans.size(); ++i) score_index[cell(spans[i].start, spans[i].end)] = i;

  for (std::size_t len = 2; len <= n; ++len) {
    for (std::size_t a = 0; a + len <= n; ++a) {
      const std::size_t b = a + len;
      std::vector<Var> inputs{binary};
      std::vector<std::size_t> lengths;
      std::vector<Split> splits;
      for (std::size_t k = a + 1; k < b; ++k) {
        inputs.push_back(chart.inside[cell(a, k)]);
        inputs.push_back(chart.inside[cell(k, b)]);
        lengths.push_back(k - a);
        lengths.push_back(b - k);
        splits.push_back({make_cell(chart.inside[cell(a, k)].value().data(), k - a, nn, np),
                          make_cell(chart.inside[cell(k, b)].value().data(), b - k, nn, np)});
      }
      std::vector<double> out(nn);
      detail::inside_combine(*scaled, splits, out.data());
      Var alpha = tape.record(
          "inside_cell", Tensor::vector(std::move(out)), std::move(inputs),
          [scaled, lengths, nn, np](const ad::BackwardArgs& args) {
            std::vector<Split> splits;
            std::vector<std::pair<double*, double*>> grads;
            for (std::size_t k = 0; k < lengths.size() / 2; ++k) {
              const Tensor* l = args.inputs[1 + 2 * k];
              const Tensor* r = args.inputs[2 + 2 * k];
              splits.push_back({make_cell(l->data(), lengths[2 * k], nn, np), make_cell(r->data(), lengths[2 * k + 1], nn, np)});
              Tensor* gl = args.grad_inputs[1 + 2 * k];
              Tensor* gr = args.grad_inputs[2 + 2 * k];
              grads.emplace_back(gl ? gl->data() : nullptr, gr ? gr->data() : nullptr);
            }
            Tensor* gb = args.grad_inputs[0];
            detail::inside_combine_backward(*scaled, splits, args.output.data(), args.grad_output.data(),
                                            gb ? gb->data() : nullptr, grads);
          });
      if (!span_scores.empty()) alpha = ad::add(alpha, span_scores[score_index[cell(a, b)]]);
      chart.inside[cell(a, b)] = alpha;
    }
  }
  const double z = root_log_z(root.value().values(), chart.inside[cell(0, n)].value().values());
  if (z == kNegInf) throw ZeroProbabilityInput("diff_inside: zero-probability input (log Z = -inf)");
  chart.log_z = ad::logsumexp(ad::add(root, chart.inside[cell(0, n)]), 0);
  return chart;
}

namespace {

// sum_A exp(alpha[A] + beta[A] - log_z)
Var span_posterior(Var alpha, Var beta, Var log_z) {
  const Tensor& al = alpha.value();
  const Tensor& be = beta.value();
  const double z = log_z.item();
  double m = 0.0;
  for (std::size_t x = 0; x < al.size(); ++x) m += std::exp(al[x] + be[x] - z);
  return alpha.tape().record("span_posterior", Tensor::scalar(m), {alpha, beta, log_z}, [](const ad::BackwardArgs& args) {
    const Tensor& al = *args.inputs[0];
    const Tensor& be = *args.inputs[1];
    const double z = args.inputs[2]->item();
    const double g = args.grad_output[0];
    for (std::size_t x = 0; x < al.size(); ++x) {
      const double w = g * std::exp(al[x] + be[x] - z);
      if (args.grad_inputs[0]) (*args.grad_inputs[0])[x] += w;
      if (args.grad_inputs[1]) (*args.grad_inputs[1])[x] += w;
    }
    if (args.grad_inputs[2]) (*args.grad_inputs[2])[0] -= g * args.output[0];
  });
}

}  // namespace

Var diff_span_marginals(const DiffChart& chart, Var root, Var binary) {
  const std::size_t n = chart.length, nn = chart.n_nonterminals, np = chart.n_preterminals, nt = nn + np;
  if (n < kMinParseLength || chart.inside.size() != (n + 1) * (n + 1) || !chart.log_z.valid()) {
    throw std::invalid_argument("diff_span_marginals: chart is inconsistent or was not computed");
  }
  ad::Tape& tape = root.tape();
  const auto cell = [n](std::size_t a, std::size_t b) { return a * (n + 1) + b; };
  auto scaled = std::make_shared<const ScaledRules>(binary.value(), nn, nt);
  std::vector<Var> outside((n + 1) * (n + 1));
  outside[cell(0, n)] = root;

  for (std::size_t len = n - 1; len >= 2; --len) {
    for (std::size_t a = 0; a + len <= n; ++a) {
      const std::size_t b = a + len;
      std::vector<Var> inputs{binary};
      struct Meta {
        std::size_t sibling_len;
        bool right;
      };
      std::vector<Meta> meta;
      std::vector<OutsideTerm> terms;
      for (std::size_t c = b + 1; c <= n; ++c) {
        inputs.push_back(outside[cell(a, c)]);
        inputs.push_back(chart.inside[cell(b, c)]);
        meta.push_back({c - b, true});
      }
      for (std::size_t c = 0; c < a; ++c) {
        inputs.push_back(outside[cell(c, b)]);
        inputs.push_back(chart.inside[cell(c, a)]);
        meta.push_back({a - c, false});
      }
      for (std::size_t t = 0; t < meta.size(); ++t) {
        terms.push_back({inputs[1 + 2 * t].value().data(),
                         make_cell(inputs[2 + 2 * t].value().data(), meta[t].sibling_len, nn, np), meta[t].right});
      }
      std::vector<double> out(nn);
      detail::outside_combine(*scaled, terms, out.data());
      outside[cell(a, b)] = tape.record(
          "outside_cell", Tensor::vector(std::move(out)), std::move(inputs),
          [scaled, meta, nn, np](const ad::BackwardArgs& args) {
            std::vector<OutsideTerm> terms;
            std::vector<std::pair<double*, double*>> grads;
            for (std::size_t t = 0; t < meta.size(); ++t) {
              terms.push_back({args.inputs[1 + 2 * t]->data(),
                               make_cell(args.inputs[2 + 2 * t]->data(), meta[t].sibling_len, nn, np), meta[t].right});
              Tensor* gp = args.grad_inputs[1 + 2 * t];
              Tensor* gs = args.grad_inputs[2 + 2 * t];
              grads.emplace_back(gp ? gp->data() : nullptr, gs ? gs->data() : nullptr);
            }
            Tensor* gb = args.grad_inputs[0];
            detail::outside_combine_backward(*scaled, terms, args.output.data(), args.grad_output.data(),
                                             gb ? gb->data() : nullptr, grads);
          });
    }
  }

  std::vector<Var> marginals;
  for (const Span& s : all_spans(n)) {
    marginals.push_back(span_posterior(chart.inside[cell(s.start, s.end)], outside[cell(s.start, s.end)], chart.log_z));
  }
  return ad::stack(marginals);
}

}  // namespace vlg
