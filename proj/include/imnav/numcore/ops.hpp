#pragma once

#include <cstdint>
#include <vector>

#include "imnav/numcore/tape.hpp"
#include "imnav/rng.hpp"

// Differentiable ops over BasicVar<T>; instantiated for float and double.
namespace imnav::nc {

inline constexpr double kNormEpsilon = 1e-8;

template <typename T> BasicVar<T> matmul(BasicVar<T> a, BasicVar<T> b, bool transpose_b = false);
template <typename T> BasicVar<T> add(BasicVar<T> a, BasicVar<T> b);
template <typename T> BasicVar<T> sub(BasicVar<T> a, BasicVar<T> b);
template <typename T> BasicVar<T> mul(BasicVar<T> a, BasicVar<T> b);
// a[m,n] + row[1,n] broadcast over rows.
template <typename T> BasicVar<T> add_row(BasicVar<T> a, BasicVar<T> row);
template <typename T> BasicVar<T> scale(BasicVar<T> a, double s);
template <typename T> BasicVar<T> add_const(BasicVar<T> a, double c);
template <typename T> BasicVar<T> relu(BasicVar<T> a);
template <typename T> BasicVar<T> sigmoid(BasicVar<T> a);
// axis 1: each row sums to one; axis 0: each column.
template <typename T> BasicVar<T> softmax(BasicVar<T> a, int axis);
// Inverted dropout: identity when train is false or rate is zero.
template <typename T> BasicVar<T> dropout(BasicVar<T> a, double rate, Rng& rng, bool train);
template <typename T> BasicVar<T> concat(const std::vector<BasicVar<T>>& parts, int axis);
template <typename T> BasicVar<T> mean(BasicVar<T> a, int axis);
template <typename T> BasicVar<T> sum(BasicVar<T> a);
template <typename T> BasicVar<T> l2_norm(BasicVar<T> a);
template <typename T> BasicVar<T> transpose(BasicVar<T> a);
template <typename T> BasicVar<T> gather_rows(BasicVar<T> a, const std::vector<int>& rows);
template <typename T> BasicVar<T> slice_rows(BasicVar<T> a, int start, int count);

// a.b / (|a||b|); a constant 0 (no gradient) when either norm is <= kNormEpsilon.
template <typename T> BasicVar<T> cosine_similarity(BasicVar<T> a, BasicVar<T> b);
// -log softmax(logits)[target], max-subtracted.
template <typename T> BasicVar<T> cross_entropy(BasicVar<T> logits, int target);

// Attention probabilities, [head][query][key].
struct AttentionWeights {
    int heads = 0;
    int queries = 0;
    int keys = 0;
    std::vector<float> w;
    float at(int h, int q, int k) const { return w[(static_cast<std::size_t>(h) * queries + q) * keys + k]; }
};

// Multi-head scaled dot-product attention. key_mask (optional, one byte per key,
// nonzero = visible) sets masked scores to -inf before the softmax, so masked
// keys receive exactly zero weight.
template <typename T>
BasicVar<T> attention(BasicVar<T> q, BasicVar<T> k, BasicVar<T> v, int heads,
                      const std::vector<std::uint8_t>& key_mask, AttentionWeights* record = nullptr);

}  // namespace imnav::nc
