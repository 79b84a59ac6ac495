// SPDX-License-Identifier: Apache-2.0
//
// Differentiable primitives. Every op evaluates eagerly and, when any input
// requires grad, appends a backward rule to the graph. Shape violations throw
// gim::ShapeError naming the op and the offending shapes.
#pragma once

#include <array>
#include <cstddef>
#include <span>
#include <vector>

#include "gim/tensor.hpp"

namespace gim::ops {

/// Output length of a zero-padded convolution: floor((L + 2p - k) / s) + 1.
/// Throws ShapeError when L + 2p < k or k, s are zero.
std::size_t conv_out_len(std::size_t length, std::size_t kernel, std::size_t stride,
                         std::size_t pad);

/// Identity on values, zero on gradients. The output never requires grad,
/// so nothing downstream of it can reach `x` through this path.
Tensor grad_block(Graph& g, const Tensor& x);

Tensor add(Graph& g, const Tensor& a, const Tensor& b);
Tensor sub(Graph& g, const Tensor& a, const Tensor& b);
Tensor mul(Graph& g, const Tensor& a, const Tensor& b);
Tensor scale(Graph& g, const Tensor& x, double alpha);
/// 1 - x
Tensor one_minus(Graph& g, const Tensor& x);
/// x[..., c] + bias[c]
Tensor add_bias(Graph& g, const Tensor& x, const Tensor& bias);

Tensor sum(Graph& g, const Tensor& x);
Tensor mean(Graph& g, const Tensor& x);

/// [m,k] x [k,n] -> [m,n]
Tensor matmul(Graph& g, const Tensor& a, const Tensor& b);
Tensor transpose(Graph& g, const Tensor& x);

Tensor relu(Graph& g, const Tensor& x);
Tensor sigmoid(Graph& g, const Tensor& x);
Tensor tanh(Graph& g, const Tensor& x);

/// x [B, Cin, L], w [Cout, Cin, K], optional b [Cout] -> [B, Cout, Lout]. Zero padding.
Tensor conv1d(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b, std::size_t stride,
              std::size_t pad);
/// x [B, Cin, H, W], w [Cout, Cin, Kh, Kw], optional b [Cout]. Zero padding.
Tensor conv2d(Graph& g, const Tensor& x, const Tensor& w, const Tensor& b,
              std::array<std::size_t, 2> stride, std::array<std::size_t, 2> pad);

/// Non-overlapping average pooling over the trailing `window.size()` axes.
Tensor avg_pool(Graph& g, const Tensor& x, std::span<const std::size_t> window);

/// Mean over the listed axes; those axes are removed from the result.
Tensor mean_pool(Graph& g, const Tensor& x, std::span<const std::size_t> axes);

/// Max-shifted log-sum-exp normalisation along `axis`.
Tensor log_softmax(Graph& g, const Tensor& x, std::size_t axis);

/// Mean over rows of -logp[r, index[r]]. logp is [R, C] (or [C] with one index).
Tensor gather_cross_entropy(Graph& g, const Tensor& logp, std::span<const std::size_t> index);

/// x [R, d] -> [n, d] with out[i] = x[index[i]].
Tensor gather_rows(Graph& g, const Tensor& x, std::span<const std::size_t> index);

/// out[a, j] = <pred[a], pool[bag[a*N + j]]> for pred [A, d], pool [P, d]; out is [A, N].
Tensor gather_dot(Graph& g, const Tensor& pred, const Tensor& pool,
                  std::span<const std::size_t> bag, std::size_t bag_size);
/// Same with explicit anchor rows: out[a, j] = <pred[anchor_rows[a]], pool[bag[a*N + j]]>.
Tensor gather_dot(Graph& g, const Tensor& pred, std::span<const std::size_t> anchor_rows, const Tensor& pool,
                  std::span<const std::size_t> bag, std::size_t bag_size);

Tensor permute(Graph& g, const Tensor& x, std::span<const std::size_t> perm);
Tensor reshape(Graph& g, const Tensor& x, Shape shape);
Tensor slice(Graph& g, const Tensor& x, std::size_t axis, std::size_t start, std::size_t length);
/// Stacks equally shaped tensors along a new axis.
Tensor stack(Graph& g, const std::vector<Tensor>& xs, std::size_t axis);

}  // namespace gim::ops
