#include "vlg/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace vlg::ad {

namespace {

constexpr double kNegInf = -std::numeric_limits<double>::infinity();

Tape& tape_of(Var a, Var b) {
  if (&a.tape() != &b.tape()) throw std::logic_error("ops: operands recorded on different tapes");
  return a.tape();
}

// Binary elementwise op with one-element broadcasting on either side.
template <class F, class DA, class DB>
Var binary(const char* name, Var a, Var b, F f, DA dfa, DB dfb) {
  Tape& tape = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool a_bcast = x.size() == 1 && y.size() != 1;
  const bool b_bcast = y.size() == 1 && x.size() != 1;
  if (!a_bcast && !b_bcast && x.shape() != y.shape()) throw DimensionError(name, x.shape(), y.shape());
  const Shape& out_shape = a_bcast ? y.shape() : x.shape();
  const std::size_t n = shape_size(out_shape);
  std::vector<double> out(n);
  for (std::size_t i = 0; i < n; ++i) out[i] = f(x[a_bcast ? 0 : i], y[b_bcast ? 0 : i]);
  return tape.record(name, Tensor(out_shape, std::move(out)), {a, b},
                     [a_bcast, b_bcast, dfa, dfb](const BackwardArgs& args) {
                       const Tensor& x = *args.inputs[0];
                       const Tensor& y = *args.inputs[1];
                       const Tensor& g = args.grad_output;
                       for (std::size_t i = 0; i < g.size(); ++i) {
                         const double xi = x[a_bcast ? 0 : i];
                         const double yi = y[b_bcast ? 0 : i];
                         if (args.grad_inputs[0]) (*args.grad_inputs[0])[a_bcast ? 0 : i] += g[i] * dfa(xi, yi);
                         if (args.grad_inputs[1]) (*args.grad_inputs[1])[b_bcast ? 0 : i] += g[i] * dfb(xi, yi);
                       }
                     });
}

// Unary elementwise op; the derivative sees input x and output y.
template <class F, class D>
Var unary(const char* name, Var a, F f, D df) {
  const Tensor& x = a.value();
  std::vector<double> out(x.size());
  for (std::size_t i = 0; i < x.size(); ++i) out[i] = f(x[i]);
  return a.tape().record(name, Tensor(x.shape(), std::move(out)), {a},
                         [df](const BackwardArgs& args) {
                           const Tensor& x = *args.inputs[0];
                           const Tensor& g = args.grad_output;
                           Tensor& gx = *args.grad_inputs[0];
                           for (std::size_t i = 0; i < g.size(); ++i) gx[i] += g[i] * df(x[i], args.output[i]);
                         });
}

Shape without_axis(const Shape& shape, std::size_t axis) {
  Shape out = shape;
  out.erase(out.begin() + static_cast<std::ptrdiff_t>(axis));
  return out;
}

}  // namespace

Var add(Var a, Var b) {
  return binary("add", a, b, [](double x, double y) { return x + y; },
                [](double, double) { return 1.0; }, [](double, double) { return 1.0; });
}

Var sub(Var a, Var b) {
  return binary("sub", a, b, [](double x, double y) { return x - y; },
                [](double, double) { return 1.0; }, [](double, double) { return -1.0; });
}

Var mul(Var a, Var b) {
  return binary("mul", a, b, [](double x, double y) { return x * y; },
                [](double, double y) { return y; }, [](double x, double) { return x; });
}

Var neg(Var a) { return scale(a, -1.0); }

Var scale(Var a, double factor) {
  return unary("scale", a, [factor](double x) { return factor * x; },
               [factor](double, double) { return factor; });
}

Var add_constant(Var a, double c) {
  return unary("add_constant", a, [c](double x) { return x + c; }, [](double, double) { return 1.0; });
}

Var exp(Var a) {
  return unary("exp", a, [](double x) { return std::exp(x); }, [](double, double y) { return y; });
}

Var log(Var a) {
  return unary("log", a, [](double x) { return std::log(x); }, [](double x, double) { return 1.0 / x; });
}

Var tanh(Var a) {
  return unary("tanh", a, [](double x) { return std::tanh(x); },
               [](double, double y) { return 1.0 - y * y; });
}

Var sigmoid(Var a) {
  return unary("sigmoid", a,
               [](double x) {
                 if (x >= 0) return 1.0 / (1.0 + std::exp(-x));
                 const double e = std::exp(x);
                 return e / (1.0 + e);
               },
               [](double, double y) { return y * (1.0 - y); });
}

Var relu(Var a) {
  return unary("relu", a, [](double x) { return x > 0 ? x : 0.0; },
               [](double x, double) { return x > 0 ? 1.0 : 0.0; });
}

Var square(Var a) {
  return unary("square", a, [](double x) { return x * x; }, [](double x, double) { return 2.0 * x; });
}

Var sum(Var a) {
  const Tensor& x = a.value();
  double s = 0.0;
  for (double v : x.values()) s += v;
  return a.tape().record("sum", Tensor::scalar(s), {a}, [](const BackwardArgs& args) {
    const double g = args.grad_output[0];
    for (double& v : args.grad_inputs[0]->values()) v += g;
  });
}

Var mean(Var a) {
  if (a.size() == 0) throw DimensionError("mean: empty tensor");
  return scale(sum(a), 1.0 / static_cast<double>(a.size()));
}

Var sum(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner, 0.0);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t k = 0; k < s.extent; ++k)
      for (std::size_t i = 0; i < s.inner; ++i) out[o * s.inner + i] += x[(o * s.extent + k) * s.inner + i];
  return a.tape().record("sum_axis", Tensor(without_axis(x.shape(), axis), std::move(out)), {a},
                         [s](const BackwardArgs& args) {
                           Tensor& gx = *args.grad_inputs[0];
                           for (std::size_t o = 0; o < s.outer; ++o)
                             for (std::size_t k = 0; k < s.extent; ++k)
                               for (std::size_t i = 0; i < s.inner; ++i)
                                 gx[(o * s.extent + k) * s.inner + i] += args.grad_output[o * s.inner + i];
                         });
}

Var mean(Var a, std::size_t axis) {
  const std::size_t extent = a.value().dim(axis);
  if (extent == 0) throw DimensionError("mean: empty axis");
  return scale(sum(a, axis), 1.0 / static_cast<double>(extent));
}

Var matmul(Var a, Var b) {
  Tape& tape = tape_of(a, b);
  const Tensor& x = a.value();
  const Tensor& y = b.value();
  const bool a_vec = x.rank() == 1;
  const bool b_vec = y.rank() == 1;
  if (x.rank() < 1 || x.rank() > 2 || y.rank() < 1 || y.rank() > 2 || (a_vec && b_vec)) {
    throw DimensionError("matmul", x.shape(), y.shape());
  }
  const std::size_t m = a_vec ? 1 : x.dim(0);
  const std::size_t k = a_vec ? x.dim(0) : x.dim(1);
  const std::size_t k2 = y.dim(0);
  const std::size_t n = b_vec ? 1 : y.dim(1);
  if (k != k2) throw DimensionError("matmul", x.shape(), y.shape());
  std::vector<double> out(m * n, 0.0);
  for (std::size_t i = 0; i < m; ++i)
    for (std::size_t p = 0; p < k; ++p) {
      const double xv = x[i * k + p];
      if (xv == 0.0) continue;
      for (std::size_t j = 0; j < n; ++j) out[i * n + j] += xv * y[p * n + j];
    }
  Shape shape;
  if (a_vec) shape = {n};
  else if (b_vec) shape = {m};
  else shape = {m, n};
  return tape.record("matmul", Tensor(shape, std::move(out)), {a, b}, [m, k, n](const BackwardArgs& args) {
    const Tensor& x = *args.inputs[0];
    const Tensor& y = *args.inputs[1];
    const Tensor& g = args.grad_output;
    if (Tensor* gx = args.grad_inputs[0]) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          double acc = 0.0;
          for (std::size_t j = 0; j < n; ++j) acc += g[i * n + j] * y[p * n + j];
          (*gx)[i * k + p] += acc;
        }
    }
    if (Tensor* gy = args.grad_inputs[1]) {
      for (std::size_t i = 0; i < m; ++i)
        for (std::size_t p = 0; p < k; ++p) {
          const double xv = x[i * k + p];
          if (xv == 0.0) continue;
          for (std::size_t j = 0; j < n; ++j) (*gy)[p * n + j] += xv * g[i * n + j];
        }
    }
  });
}

Var transpose(Var a) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw DimensionError("transpose: needs rank 2, got " + shape_string(x.shape()));
  const std::size_t r = x.dim(0), c = x.dim(1);
  std::vector<double> out(r * c);
  for (std::size_t i = 0; i < r; ++i)
    for (std::size_t j = 0; j < c; ++j) out[j * r + i] = x[i * c + j];
  return a.tape().record("transpose", Tensor({c, r}, std::move(out)), {a}, [r, c](const BackwardArgs& args) {
    Tensor& gx = *args.grad_inputs[0];
    for (std::size_t i = 0; i < r; ++i)
      for (std::size_t j = 0; j < c; ++j) gx[i * c + j] += args.grad_output[j * r + i];
  });
}

Var affine(Var x, Var weight, Var bias) {
  Tape& tape = tape_of(x, weight);
  tape_of(x, bias);
  const Tensor& xv = x.value();
  const Tensor& w = weight.value();
  const Tensor& b = bias.value();
  if (w.rank() != 2 || b.rank() != 1 || b.dim(0) != w.dim(0)) throw DimensionError("affine", w.shape(), b.shape());
  if (xv.rank() < 1 || xv.rank() > 2 || xv.shape().back() != w.dim(1)) throw DimensionError("affine", xv.shape(), w.shape());
  const std::size_t rows = xv.rank() == 1 ? 1 : xv.dim(0);
  const std::size_t in = w.dim(1), out_dim = w.dim(0);
  std::vector<double> out(rows * out_dim);
  for (std::size_t r = 0; r < rows; ++r)
    for (std::size_t o = 0; o < out_dim; ++o) {
      double acc = b[o];
      const double* wr = w.data() + o * in;
      const double* xr = xv.data() + r * in;
      for (std::size_t i = 0; i < in; ++i) acc += wr[i] * xr[i];
      out[r * out_dim + o] = acc;
    }
  Shape shape = xv.rank() == 1 ? Shape{out_dim} : Shape{rows, out_dim};
  return tape.record("affine", Tensor(shape, std::move(out)), {x, weight, bias},
                     [rows, in, out_dim](const BackwardArgs& args) {
                       const Tensor& xv = *args.inputs[0];
                       const Tensor& w = *args.inputs[1];
                       const Tensor& g = args.grad_output;
                       Tensor* gx = args.grad_inputs[0];
                       Tensor* gw = args.grad_inputs[1];
                       Tensor* gb = args.grad_inputs[2];
                       for (std::size_t r = 0; r < rows; ++r)
                         for (std::size_t o = 0; o < out_dim; ++o) {
                           const double go = g[r * out_dim + o];
                           if (go == 0.0) continue;
                           if (gb) (*gb)[o] += go;
                           const double* wr = w.data() + o * in;
                           const double* xr = xv.data() + r * in;
                           if (gw) {
                             double* gwr = gw->data() + o * in;
                             for (std::size_t i = 0; i < in; ++i) gwr[i] += go * xr[i];
                           }
                           if (gx) {
                             double* gxr = gx->data() + r * in;
                             for (std::size_t i = 0; i < in; ++i) gxr[i] += go * wr[i];
                           }
                         }
                     });
}

Var dot(Var a, Var b) {
  if (a.value().rank() != 1 || a.shape() != b.shape()) throw DimensionError("dot", a.shape(), b.shape());
  return sum(mul(a, b));
}

Var concat(std::span<const Var> parts, std::size_t axis) {
  if (parts.empty()) throw DimensionError("concat: no inputs");
  Tape& tape = parts[0].tape();
  const Shape& first = parts[0].shape();
  if (axis >= first.size()) throw DimensionError("concat: axis " + std::to_string(axis) + " invalid for " + shape_string(first));
  Shape out_shape = first;
  out_shape[axis] = 0;
  std::vector<std::size_t> extents;
  for (const Var& p : parts) {
    tape_of(parts[0], p);
    const Shape& s = p.shape();
    if (s.size() != first.size()) throw DimensionError("concat", first, s);
    for (std::size_t d = 0; d < s.size(); ++d)
      if (d != axis && s[d] != first[d]) throw DimensionError("concat", first, s);
    extents.push_back(s[axis]);
    out_shape[axis] += s[axis];
  }
  const AxisSplit os = split_axis(out_shape, axis);
  std::vector<double> out(shape_size(out_shape));
  std::size_t offset = 0;
  for (std::size_t p = 0; p < parts.size(); ++p) {
    const Tensor& v = parts[p].value();
    const std::size_t e = extents[p];
    for (std::size_t o = 0; o < os.outer; ++o)
      std::copy_n(v.data() + o * e * os.inner, e * os.inner, out.data() + (o * os.extent + offset) * os.inner);
    offset += e;
  }
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record("concat", Tensor(out_shape, std::move(out)), std::move(inputs),
                     [os, extents](const BackwardArgs& args) {
                       std::size_t offset = 0;
                       for (std::size_t p = 0; p < extents.size(); ++p) {
                         const std::size_t e = extents[p];
                         if (Tensor* g = args.grad_inputs[p]) {
                           for (std::size_t o = 0; o < os.outer; ++o) {
                             const double* src = args.grad_output.data() + (o * os.extent + offset) * os.inner;
                             double* dst = g->data() + o * e * os.inner;
                             for (std::size_t i = 0; i < e * os.inner; ++i) dst[i] += src[i];
                           }
                         }
                         offset += e;
                       }
                     });
}

Var concat(std::initializer_list<Var> parts, std::size_t axis) {
  return concat(std::span<const Var>(parts.begin(), parts.size()), axis);
}

Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end) {
  const Tensor& x = a.value();
  const AxisSplit s = split_axis(x.shape(), axis);
  if (begin > end || end > s.extent) {
    throw DimensionError("slice: range [" + std::to_string(begin) + "," + std::to_string(end) +
                         ") out of bounds for " + shape_string(x.shape()));
  }
  const std::size_t e = end - begin;
  Shape shape = x.shape();
  shape[axis] = e;
  std::vector<double> out(s.outer * e * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    std::copy_n(x.data() + (o * s.extent + begin) * s.inner, e * s.inner, out.data() + o * e * s.inner);
  return a.tape().record("slice", Tensor(shape, std::move(out)), {a}, [s, begin, e](const BackwardArgs& args) {
    Tensor& gx = *args.grad_inputs[0];
    for (std::size_t o = 0; o < s.outer; ++o) {
      const double* src = args.grad_output.data() + o * e * s.inner;
      double* dst = gx.data() + (o * s.extent + begin) * s.inner;
      for (std::size_t i = 0; i < e * s.inner; ++i) dst[i] += src[i];
    }
  });
}

Var row(Var a, std::size_t i) {
  const Tensor& x = a.value();
  if (x.rank() == 0 || i >= x.dim(0)) {
    throw DimensionError("row: index " + std::to_string(i) + " out of range for " + shape_string(x.shape()));
  }
  const std::size_t width = x.size() / x.dim(0);
  Shape shape(x.shape().begin() + 1, x.shape().end());
  std::vector<double> out(x.data() + i * width, x.data() + (i + 1) * width);
  return a.tape().record("row", Tensor(shape, std::move(out)), {a}, [i, width](const BackwardArgs& args) {
    double* dst = args.grad_inputs[0]->data() + i * width;
    for (std::size_t j = 0; j < width; ++j) dst[j] += args.grad_output[j];
  });
}

Var stack(std::span<const Var> parts) {
  if (parts.empty()) throw DimensionError("stack: no inputs");
  Tape& tape = parts[0].tape();
  const Shape& first = parts[0].shape();
  const std::size_t width = shape_size(first);
  std::vector<double> out;
  out.reserve(width * parts.size());
  for (const Var& p : parts) {
    tape_of(parts[0], p);
    if (p.shape() != first) throw DimensionError("stack", first, p.shape());
    const auto v = p.value().values();
    out.insert(out.end(), v.begin(), v.end());
  }
  Shape shape{parts.size()};
  shape.insert(shape.end(), first.begin(), first.end());
  std::vector<Var> inputs(parts.begin(), parts.end());
  return tape.record("stack", Tensor(shape, std::move(out)), std::move(inputs), [width](const BackwardArgs& args) {
    for (std::size_t p = 0; p < args.grad_inputs.size(); ++p) {
      if (Tensor* g = args.grad_inputs[p]) {
        const double* src = args.grad_output.data() + p * width;
        for (std::size_t j = 0; j < width; ++j) (*g)[j] += src[j];
      }
    }
  });
}

Var reshape(Var a, Shape shape) {
  const Tensor& x = a.value();
  if (shape_size(shape) != x.size()) throw DimensionError("reshape", x.shape(), shape);
  std::vector<double> out(x.values().begin(), x.values().end());
  return a.tape().record("reshape", Tensor(std::move(shape), std::move(out)), {a}, [](const BackwardArgs& args) {
    Tensor& gx = *args.grad_inputs[0];
    for (std::size_t i = 0; i < gx.size(); ++i) gx[i] += args.grad_output[i];
  });
}

Var gather_rows(Var table, std::span<const std::size_t> indices) {
  const Tensor& t = table.value();
  if (t.rank() != 2) throw DimensionError("gather_rows: needs rank 2, got " + shape_string(t.shape()));
  const std::size_t rows = t.dim(0), d = t.dim(1);
  std::vector<double> out(indices.size() * d);
  for (std::size_t r = 0; r < indices.size(); ++r) {
    if (indices[r] >= rows) {
      throw DimensionError("gather_rows: index " + std::to_string(indices[r]) + " out of range for " + shape_string(t.shape()));
    }
    std::copy_n(t.data() + indices[r] * d, d, out.data() + r * d);
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return table.tape().record("gather_rows", Tensor({idx.size(), d}, std::move(out)), {table},
                             [idx, d](const BackwardArgs& args) {
                               Tensor& gt = *args.grad_inputs[0];
                               for (std::size_t r = 0; r < idx.size(); ++r)
                                 for (std::size_t j = 0; j < d; ++j) gt[idx[r] * d + j] += args.grad_output[r * d + j];
                             });
}

Var gather_cols(Var a, std::span<const std::size_t> indices) {
  const Tensor& t = a.value();
  if (t.rank() != 2) throw DimensionError("gather_cols: needs rank 2, got " + shape_string(t.shape()));
  const std::size_t rows = t.dim(0), cols = t.dim(1), n = indices.size();
  std::vector<double> out(rows * n);
  for (std::size_t j = 0; j < n; ++j) {
    if (indices[j] >= cols) {
      throw DimensionError("gather_cols: index " + std::to_string(indices[j]) + " out of range for " + shape_string(t.shape()));
    }
    for (std::size_t r = 0; r < rows; ++r) out[r * n + j] = t[r * cols + indices[j]];
  }
  std::vector<std::size_t> idx(indices.begin(), indices.end());
  return a.tape().record("gather_cols", Tensor({rows, n}, std::move(out)), {a},
                         [idx, rows, cols](const BackwardArgs& args) {
                           Tensor& gt = *args.grad_inputs[0];
                           const std::size_t n = idx.size();
                           for (std::size_t r = 0; r < rows; ++r)
                             for (std::size_t j = 0; j < n; ++j) gt[r * cols + idx[j]] += args.grad_output[r * n + j];
                         });
}

Var log_softmax(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisSplit s = split_axis(x.shape(), axis);
  if (s.extent == 0) throw DimensionError("log_softmax: empty axis " + std::to_string(axis));
  std::vector<double> out(x.size());
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      const auto at = [&](std::size_t k) { return (o * s.extent + k) * s.inner + i; };
      double m = kNegInf;
      for (std::size_t k = 0; k < s.extent; ++k) m = std::max(m, x[at(k)]);
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) z += std::exp(x[at(k)] - m);
      const double lse = m + std::log(z);
      for (std::size_t k = 0; k < s.extent; ++k) out[at(k)] = x[at(k)] - lse;
    }
  return a.tape().record("log_softmax", Tensor(x.shape(), std::move(out)), {a}, [s](const BackwardArgs& args) {
    const Tensor& y = args.output;
    const Tensor& g = args.grad_output;
    Tensor& gx = *args.grad_inputs[0];
    for (std::size_t o = 0; o < s.outer; ++o)
      for (std::size_t i = 0; i < s.inner; ++i) {
        const auto at = [&](std::size_t k) { return (o * s.extent + k) * s.inner + i; };
        double gsum = 0.0;
        for (std::size_t k = 0; k < s.extent; ++k) gsum += g[at(k)];
        for (std::size_t k = 0; k < s.extent; ++k) gx[at(k)] += g[at(k)] - std::exp(y[at(k)]) * gsum;
      }
  });
}

Var softmax(Var a, std::size_t axis) { return exp(log_softmax(a, axis)); }

Var logsumexp(Var a, std::size_t axis) {
  const Tensor& x = a.value();
  const AxisSplit s = split_axis(x.shape(), axis);
  std::vector<double> out(s.outer * s.inner);
  for (std::size_t o = 0; o < s.outer; ++o)
    for (std::size_t i = 0; i < s.inner; ++i) {
      double m = kNegInf;
      for (std::size_t k = 0; k < s.extent; ++k) m = std::max(m, x[(o * s.extent + k) * s.inner + i]);
      if (m == kNegInf) {
        out[o * s.inner + i] = kNegInf;
        continue;
      }
      double z = 0.0;
      for (std::size_t k = 0; k < s.extent; ++k) z += std::exp(x[(o * s.extent + k) * s.inner + i] - m);
      out[o * s.inner + i] = m + std::log(z);
    }
  return a.tape().record("logsumexp", Tensor(without_axis(x.shape(), axis), std::move(out)), {a},
                         [s](const BackwardArgs& args) {
                           const Tensor& x = *args.inputs[0];
                           Tensor& gx = *args.grad_inputs[0];
                           for (std::size_t o = 0; o < s.outer; ++o)
                             for (std::size_t i = 0; i < s.inner; ++i) {
                               const double y = args.output[o * s.inner + i];
                               if (y == kNegInf) continue;
                               const double g = args.grad_output[o * s.inner + i];
                               for (std::size_t k = 0; k < s.extent; ++k) {
                                 const std::size_t at = (o * s.extent + k) * s.inner + i;
                                 gx[at] += g * std::exp(x[at] - y);
                               }
                             }
                         });
}

Var logsumexp(Var a) { return logsumexp(reshape(a, {a.size()}), 0); }

Var normalize_rows(Var a, std::size_t* zero_rows) {
  const Tensor& x = a.value();
  if (x.rank() != 2) throw DimensionError("normalize_rows: needs rank 2, got " + shape_string(x.shape()));
  const std::size_t r = x.dim(0), d = x.dim(1);
  std::vector<double> norms(r, 0.0);
  std::vector<double> out(x.size(), 0.0);
  for (std::size_t i = 0; i < r; ++i) {
    double s = 0.0;
    for (std::size_t j = 0; j < d; ++j) s += x[i * d + j] * x[i * d + j];
    norms[i] = std::sqrt(s);
    if (norms[i] == 0.0) {
      if (zero_rows) ++*zero_rows;
      continue;
    }
    for (std::size_t j = 0; j < d; ++j) out[i * d + j] = x[i * d + j] / norms[i];
  }
  return a.tape().record("normalize_rows", Tensor(x.shape(), std::move(out)), {a},
                         [norms, d](const BackwardArgs& args) {
                           const Tensor& y = args.output;
                           const Tensor& g = args.grad_output;
                           Tensor& gx = *args.grad_inputs[0];
                           for (std::size_t i = 0; i < norms.size(); ++i) {
                             if (norms[i] == 0.0) continue;
                             double gy = 0.0;
                             for (std::size_t j = 0; j < d; ++j) gy += g[i * d + j] * y[i * d + j];
                             for (std::size_t j = 0; j < d; ++j)
                               gx[i * d + j] += (g[i * d + j] - y[i * d + j] * gy) / norms[i];
                           }
                         });
}

}  // namespace vlg::ad
