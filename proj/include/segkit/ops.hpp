#pragma once

// Differentiable primitives. Every op validates shapes (ShapeError naming the
// operands), computes its forward value and, when recording, registers a
// backward rule on the tape of its inputs.

#include <cstdint>
#include <span>
#include <utility>
#include <vector>

#include "segkit/autodiff.hpp"
#include "segkit/rng.hpp"

namespace segkit::ops {

// a[M,K] x b[K,N]; with trans_b, b is [N,K] and b^T is used.
template <typename T>
Var<T> matmul(Var<T> a, Var<T> b, bool trans_b = false);

// x[M,K] x w[K,N] + bias[N].
template <typename T>
Var<T> linear(Var<T> x, Var<T> w, Var<T> bias);

template <typename T>
Var<T> add(Var<T> a, Var<T> b);
template <typename T>
Var<T> sub(Var<T> a, Var<T> b);
// a[M,N] + row[N] broadcast over rows.
template <typename T>
Var<T> add_row(Var<T> a, Var<T> row);
template <typename T>
Var<T> mul(Var<T> a, Var<T> b);
template <typename T>
Var<T> scale(Var<T> a, T factor);
// Multiplies row r of a[M,N] by the constant factors[r].
template <typename T>
Var<T> scale_rows(Var<T> a, std::vector<T> factors);

// Rank 1 or 2 operands; axis 0 stacks rows, axis 1 joins columns.
template <typename T>
Var<T> concat(const std::vector<Var<T>>& parts, std::size_t axis);
template <typename T>
Var<T> slice(Var<T> a, std::size_t axis, std::size_t start, std::size_t length);
template <typename T>
Var<T> gather_rows(Var<T> table, std::span<const std::size_t> rows);
// Embedding lookup: table[V,H], ids in [0, V).
template <typename T>
Var<T> embedding(Var<T> table, std::span<const std::int32_t> ids);

template <typename T>
Var<T> softmax(Var<T> a, int axis = -1);
template <typename T>
Var<T> layer_norm(Var<T> x, Var<T> gamma, Var<T> beta, T eps = T(1e-12));
template <typename T>
Var<T> gelu(Var<T> a);
template <typename T>
Var<T> tanh(Var<T> a);
template <typename T>
Var<T> sigmoid(Var<T> a);
// Inverted dropout. rate == 0 returns `a` itself.
template <typename T>
Var<T> dropout(Var<T> a, double rate, Rng& rng);

// Weighted mean of per-row cross-entropy over logits[M,C]. Empty weights
// means all ones.
template <typename T>
Var<T> cross_entropy(Var<T> logits, std::span<const int> labels, std::span<const T> weights = {});
// Mean of squared differences over all elements.
template <typename T>
Var<T> mse(Var<T> a, Var<T> b);
template <typename T>
Var<T> sum(Var<T> a);
template <typename T>
Var<T> mean(Var<T> a);

// Packed multi-head attention. Rows of q/k/v are grouped into independent
// sequences (offset, length); a query attends only within its sequence and
// only to keys with key_mask == 1. Rows with key_mask == 0 attend to nothing
// and produce zeros.
struct AttentionLayout {
  std::vector<std::pair<std::size_t, std::size_t>> segments;
  std::size_t heads = 1;
  std::vector<std::uint8_t> key_mask;  // empty: every row is real
};

template <typename T>
Var<T> attention(Var<T> q, Var<T> k, Var<T> v, const AttentionLayout& layout, double dropout_rate,
                 Rng* rng);

// Single-direction LSTM over the rows of x[T,D] with zero initial state.
// Gate blocks of w_x[D,4H], w_h[H,4H] and bias[4H] are ordered input,
// forget, candidate, output. With reverse, steps run from row T-1 down to 0
// and output row t is the state after consuming rows T-1..t.
template <typename T>
Var<T> lstm(Var<T> x, Var<T> w_x, Var<T> w_h, Var<T> bias, bool reverse);

}  // namespace segkit::ops
