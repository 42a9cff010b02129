#include "vlg/grounding.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "vlg/ops.hpp"
#include "vlg/tree.hpp"

namespace vlg {

using ad::BackwardArgs;
using ad::Var;

namespace {

std::vector<double> row_norms(const Tensor& t) {
  const std::size_t rows = t.dim(0), d = t.dim(1);
  std::vector<double> out(rows);
  for (std::size_t r = 0; r < rows; ++r) {
    double s = 0.0;
    for (std::size_t i = 0; i < d; ++i) s += t[r * d + i] * t[r * d + i];
    out[r] = std::sqrt(s);
  }
  return out;
}

}  // namespace

Var cosine_matrix(Var a, Var b, std::size_t* zero_norm) {
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  if (x.rank() != 2 || y.rank() != 2 || x.dim(1) != y.dim(1)) throw DimensionError("cosine_matrix", x.shape(), y.shape());
  const std::size_t m = x.dim(0), n = y.dim(0), d = x.dim(1);
  const std::vector<double> nx = row_norms(x), ny = row_norms(y);
  if (zero_norm) {
    for (double v : nx) *zero_norm += v == 0.0;
    for (double v : ny) *zero_norm += v == 0.0;
  }
  Tensor out = Tensor::zeros({m, n});
  for (std::size_t j = 0; j < m; ++j) {
    if (nx[j] == 0.0) continue;
    for (std::size_t k = 0; k < n; ++k) {
      if (ny[k] == 0.0) continue;
      double s = 0.0;
      for (std::size_t i = 0; i < d; ++i) s += x[j * d + i] * y[k * d + i];
      out.at(j, k) = s / (nx[j] * ny[k]);
    }
  }
  return a.tape().record("cosine_matrix", std::move(out), {a, b}, [m, n, d, nx, ny](const BackwardArgs& args) {
    const Tensor& x = *args.inputs[0];
    const Tensor& y = *args.inputs[1];
    const Tensor& c = args.output;
    const Tensor& g = args.grad_output;
    Tensor* gx = args.grad_inputs[0];
    Tensor* gy = args.grad_inputs[1];
    for (std::size_t j = 0; j < m; ++j) {
      if (nx[j] == 0.0) continue;
      for (std::size_t k = 0; k < n; ++k) {
        if (ny[k] == 0.0) continue;
        const double gjk = g[j * n + k];
        if (gjk == 0.0) continue;
        const double inv = 1.0 / (nx[j] * ny[k]);
        const double cjk = c[j * n + k];
        for (std::size_t i = 0; i < d; ++i) {
          if (gx) (*gx)[j * d + i] += gjk * (y[k * d + i] * inv - cjk * x[j * d + i] / (nx[j] * nx[j]));
          if (gy) (*gy)[k * d + i] += gjk * (x[j * d + i] * inv - cjk * y[k * d + i] / (ny[k] * ny[k]));
        }
      }
    }
  });
}

Var with_singleton_marginals(Var marginals, std::size_t n) {
  const std::vector<Span> longer = all_spans(n, 2);
  if (marginals.size() != longer.size()) {
    throw DimensionError("singleton marginals: expected " + std::to_string(longer.size()) + " values, got " +
                         std::to_string(marginals.size()));
  }
  // rows 0..k-1 are the given marginals, row k is the constant 1
  Var table = ad::reshape(ad::concat({ad::reshape(marginals, {longer.size()}), marginals.tape().constant(Tensor::vector({1.0}))}),
                          {longer.size() + 1, 1});
  std::vector<std::size_t> index;
  std::size_t next = 0;
  for (const Span& s : all_spans(n, 1)) index.push_back(s.length() == 1 ? longer.size() : next++);
  return ad::reshape(ad::gather_rows(table, index), {index.size()});
}

Var alignment_score(Var lang_marginals, Var vision_marginals, Var cosines, std::size_t m, std::size_t n,
                    const AlignmentOptions& options) {
  const std::size_t min_length = options.include_singletons ? 1 : 2;
  const std::size_t lm = all_spans(m, min_length).size(), vn = all_spans(n, min_length).size();
  if (lang_marginals.size() != lm || vision_marginals.size() != vn || cosines.shape() != Shape{lm, vn}) {
    throw DimensionError("alignment_score: marginals " + shape_string(lang_marginals.shape()) + " and " +
                         shape_string(vision_marginals.shape()) + " against cosines " + shape_string(cosines.shape()));
  }
  Var s = ad::dot(ad::reshape(lang_marginals, {lm}), ad::matmul(cosines, ad::reshape(vision_marginals, {vn})));
  if (!options.normalize) return s;
  const double wm = options.include_singletons ? 2.0 * m - 1.0 : m - 1.0;
  const double wn = options.include_singletons ? 2.0 * n - 1.0 : n - 1.0;
  return ad::scale(s, 1.0 / (wm * wn));
}

Var contrastive_loss(Var scores, double margin) {
  const Tensor& s = scores.value();
  if (s.rank() != 2 || s.dim(0) != s.dim(1)) throw DimensionError("contrastive_loss: square matrix required, got " + shape_string(s.shape()));
  const std::size_t b = s.dim(0);
  if (b < 2) throw std::invalid_argument("contrastive_loss: batch of " + std::to_string(b) + " has no negatives");
  const double norm = 2.0 * static_cast<double>(b) * static_cast<double>(b - 1);
  double total = 0.0;
  for (std::size_t i = 0; i < b; ++i) {
    const double pos = s.at(i, i);
    for (std::size_t m = 0; m < b; ++m) {
      if (m == i) continue;
      total += std::max(0.0, s.at(m, i) - pos + margin);
      total += std::max(0.0, s.at(i, m) - pos + margin);
    }
  }
  return scores.tape().record("contrastive_loss", Tensor::scalar(total / norm), {scores},
                              [b, margin, norm](const BackwardArgs& args) {
                                const Tensor& s = *args.inputs[0];
                                Tensor& gs = *args.grad_inputs[0];
                                const double g = args.grad_output.item() / norm;
                                for (std::size_t i = 0; i < b; ++i) {
                                  const double pos = s[i * b + i];
                                  for (std::size_t m = 0; m < b; ++m) {
                                    if (m == i) continue;
                                    if (s[m * b + i] - pos + margin > 0.0) {
                                      gs[m * b + i] += g;
                                      gs[i * b + i] -= g;
                                    }
                                    if (s[i * b + m] - pos + margin > 0.0) {
                                      gs[i * b + m] += g;
                                      gs[i * b + i] -= g;
                                    }
                                  }
                                }
                              });
}

LossBundle total_loss(const LossWeights& weights, Var language, Var vision, Var contrastive) {
  LossBundle out{language, vision, contrastive, {}, weights};
  const auto accumulate = [&](Var term, double w) {
    if (!term.valid()) return;
    Var scaled = ad::scale(term, w);
    out.total = out.total.valid() ? ad::add(out.total, scaled) : scaled;
  };
  accumulate(language, weights.language);
  accumulate(vision, weights.vision);
  accumulate(contrastive, weights.contrastive);
  if (!out.total.valid()) throw std::invalid_argument("total_loss: no loss terms");
  return out;
}

}  // namespace vlg
