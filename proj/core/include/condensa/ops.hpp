#pragma once

// Differentiable primitives. Each op records itself on the graph only when one
// of its inputs requires grad; otherwise it is a plain forward computation.

#include <cstddef>
#include <span>

#include "condensa/tensor.hpp"

namespace condensa::ops {

/// x: N×C×H×W, kernel: O×C×KH×KW, bias: O (may be undefined). Zero padding.
Tensor conv2d(Graph& g, const Tensor& x, const Tensor& kernel, const Tensor& bias,
              std::size_t stride, std::size_t pad);

Tensor relu(Graph& g, const Tensor& x);

/// x: D or N×D, weight: K×D, bias: K (may be undefined).
Tensor linear(Graph& g, const Tensor& x, const Tensor& weight, const Tensor& bias);

/// N×C×H×W -> N×C
Tensor global_avg_pool(Graph& g, const Tensor& x);

Tensor softmax(Graph& g, const Tensor& x, std::size_t axis);

/// logits: K. Returns the scalar -log softmax(logits)[label].
Tensor cross_entropy(Graph& g, const Tensor& logits, std::size_t label);

/// Mean of squared element differences.
Tensor mse(Graph& g, const Tensor& a, const Tensor& b);

/// Sum of squared element differences, i.e. squared L2 distance. When
/// `row_weights` is non-empty, row r along the leading axis is scaled by
/// row_weights[r].
Tensor squared_distance(Graph& g, const Tensor& a, const Tensor& b,
                        std::span<const double> row_weights = {});

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& a, double s);
Tensor sum(Graph& g, const Tensor& a);

/// weights: T, stack: T×... -> Σ_t weights[t]·stack[t]
Tensor weighted_sum(Graph& g, const Tensor& weights, const Tensor& stack);

/// x: S -> n×S
Tensor replicate(Graph& g, const Tensor& x, std::size_t n);

enum class PoolAxis { height = 2, width = 3 };

/// Sums an N×C×H×W map over one spatial axis: width -> N×C×H, height -> N×C×W.
Tensor pool_sum(Graph& g, const Tensor& x, PoolAxis axis);

}  // namespace condensa::ops
