#pragma once

#include <cstddef>
#include <span>
#include <vector>

#include "cfm/autodiff.hpp"
#include "cfm/rng.hpp"

// Differentiable operations. Every op records itself on the tape of its
// tracked inputs, or evaluates eagerly when all inputs are constants.
// Matrices are rank-2 [rows, cols]; a rank-1 tensor of length n acts as a
// single row where noted.
namespace cfm::ops {

enum class Activation { gelu, tanh, leaky_relu };

Var add(const Var& a, const Var& b);
Var subtract(const Var& a, const Var& b);
// Element-wise product. `b` may also be a [rows, 1] column, broadcast across columns.
Var multiply(const Var& a, const Var& b);
Var matmul(const Var& a, const Var& b);
// x [n, in] * weight [in, out] + bias [out]
Var affine(const Var& x, const Var& weight, const Var& bias);

Var gelu(const Var& x);
Var tanh(const Var& x);
Var leaky_relu(const Var& x, double slope);
Var activate(const Var& x, Activation kind, double leaky_slope = 0.2);

Var square(const Var& x);
Var sqrt(const Var& x);
Var abs(const Var& x);
Var scale(const Var& x, double factor);
Var add_scalar(const Var& x, double offset);

// Full reductions to a [1] scalar.
Var sum(const Var& x);
Var mean(const Var& x);
Var l2_norm_squared(const Var& x);

// [n, d] -> [n, 1]
Var row_sum(const Var& x);

// Column-wise concatenation of matrices that share a row count.
Var concatenate(const std::vector<Var>& parts);
// Row lookup into a [rows, d] table.
Var gather_rows(const Var& table, std::span<const int> indices);
// Inverted dropout with a fixed mask; the mask is a constant of the graph.
Var dropout(const Var& x, const DropoutMask& mask);

}  // namespace cfm::ops
