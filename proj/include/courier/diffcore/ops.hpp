#pragma once

#include <cstdint>
#include <vector>

#include "courier/diffcore/tape.hpp"
#include "courier/diffcore/tensor.hpp"

// Differentiable operations over Tape entries. Every op records one entry and
// its reverse-mode rule. Inputs must live on the same tape.
namespace courier::diff {

// Additive surrogate for -inf applied to masked attention scores.
inline constexpr double kMaskedScore = -1e9;
inline constexpr double kNormEpsilon = 1e-12;

// Elementwise; operands must have identical shapes.
Var add(const Var& a, const Var& b);
Var sub(const Var& a, const Var& b);
Var mul(const Var& a, const Var& b);
Var scale(const Var& a, double factor);
Var add_scalar(const Var& a, double shift);
// a[m x n] + bias[n], bias broadcast over rows.
Var add_row(const Var& a, const Var& bias);

Var relu(const Var& a);
Var tanh(const Var& a);
Var sigmoid(const Var& a);

// a[m x k] * b[k x n].
Var matmul(const Var& a, const Var& b);
Var transpose(const Var& a);

// Concatenates along `axis`; all other extents must agree.
Var concat(const std::vector<Var>& parts, int axis);
Var reshape(const Var& a, Shape shape);

Var sum(const Var& a);
Var mean(const Var& a);
// Reduces `axis` away.
Var sum_axis(const Var& a, int axis);
Var mean_axis(const Var& a, int axis);

// Numerically stable (max-shifted) softmax along `axis`.
Var softmax(const Var& a, int axis);
Var log_softmax(const Var& a, int axis);

// Divides every slice along `axis` by its Euclidean norm. Throws
// DegenerateInputError when a slice norm is <= kNormEpsilon.
Var l2_normalize(const Var& a, int axis);

// Embedding lookup: out[i] = table[indices[i]]. Gradient is scatter-added.
Var gather_rows(const Var& table, const std::vector<std::int64_t>& indices);

// Masked mean of rows: out[g] = mean over valid index[g][*] of x[index[g][l]].
// `index` is [groups x width] row-major; entries < 0 are padding. Groups with
// no valid entry produce a zero row.
Var segment_mean(const Var& x, const std::vector<std::int64_t>& index, std::size_t width);

// mean(softplus(z) - y * z): binary cross-entropy on logits, averaged.
Var bce_with_logits(const Var& logits, const std::vector<double>& targets);

struct AttentionResult {
  Var out;
  // Attention probabilities [queries x keys]; exactly zero on masked keys.
  Tensor weights;
};

// softmax(q k^T / sqrt(d) + mask) v with masked keys shifted by kMaskedScore.
// q[nq x d], k[nk x d], v[nk x dv]; key_mask[nk] is nonzero for usable keys.
// Composed from primitive ops. Throws DegenerateInputError if every key is
// masked.
AttentionResult scaled_dot_attention(const Var& q, const Var& k, const Var& v,
                                     const std::vector<std::uint8_t>& key_mask);

// Row-wise attention where each query row owns its own key set.
// Query row i attends over rows index[i][0..width) of `keys`/`values`
// (entries < 0 are masked). Scores are scaled by 1/sqrt(d). Single fused tape
// entry; equivalent to running scaled_dot_attention once per row.
AttentionResult gather_attention(const Var& queries, const Var& keys, const Var& values,
                                 const std::vector<std::int64_t>& index, std::size_t width);

}  // namespace courier::diff
