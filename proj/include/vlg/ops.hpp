#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "vlg/tape.hpp"

// Differentiable ops over Vars. Elementwise binary ops require equal shapes, except
// that either operand may be a one-element tensor, which is broadcast.

namespace vlg::ad {

Var add(Var a, Var b);
Var sub(Var a, Var b);
Var mul(Var a, Var b);
Var neg(Var a);
Var scale(Var a, double factor);
Var add_constant(Var a, double c);

Var exp(Var a);
Var log(Var a);
Var tanh(Var a);
Var sigmoid(Var a);
Var relu(Var a);
Var square(Var a);

/// Sum of all elements, as a scalar.
Var sum(Var a);
Var mean(Var a);
/// Sum along `axis`, which is removed.
Var sum(Var a, std::size_t axis);
Var mean(Var a, std::size_t axis);

/// [m,k]x[k,n] -> [m,n]; [m,k]x[k] -> [m]; [k]x[k,n] -> [n].
Var matmul(Var a, Var b);
Var transpose(Var a);
/// x W^T + b for x of shape [in] or [rows, in], W [out, in], b [out].
Var affine(Var x, Var weight, Var bias);
Var dot(Var a, Var b);

Var concat(std::span<const Var> parts, std::size_t axis = 0);
Var concat(std::initializer_list<Var> parts, std::size_t axis = 0);
/// Elements [begin, end) along `axis`.
Var slice(Var a, std::size_t axis, std::size_t begin, std::size_t end);
/// Index `i` along axis 0; the axis is removed.
Var row(Var a, std::size_t i);
/// Stacks equally shaped inputs along a new leading axis.
Var stack(std::span<const Var> parts);
Var reshape(Var a, Shape shape);
/// Rows of a [V, d] table -> [n, d].
Var gather_rows(Var table, std::span<const std::size_t> indices);
/// Columns of a [r, c] matrix -> [r, n].
Var gather_cols(Var a, std::span<const std::size_t> indices);

Var log_softmax(Var a, std::size_t axis);
Var softmax(Var a, std::size_t axis);
/// log sum exp along `axis` (removed), max-shifted. An all -inf slice yields -inf.
Var logsumexp(Var a, std::size_t axis);
Var logsumexp(Var a);

/// Divides each row of a [r, d] matrix by its L2 norm. Rows with zero norm map to
/// zero; `zero_rows`, when given, is incremented once per such row.
Var normalize_rows(Var a, std::size_t* zero_rows = nullptr);

}  // namespace vlg::ad
