#pragma once

#include <cstddef>
#include <span>

#include "couda/tensor.hpp"

// Differentiable operations. Each records a graph node when any input
// requires a gradient. Matrix ops accept rank-1 tensors as single rows.
namespace couda::diff {

// Linear algebra.
Tensor matmul(const Tensor& a, const Tensor& b);  // (n x k)(k x m)
Tensor transpose(const Tensor& a);
/// Row-batched vector-matrix product: out[i] = y[i] * M_i, where M_i is the
/// K x K block at rows [i*K, (i+1)*K) of `blocks`.
Tensor batch_vecmat(const Tensor& y, const Tensor& blocks);

// Elementwise (identical shapes).
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);

// Row broadcasting: `row` is 1 x m, `column` is n x 1.
Tensor add_rowwise(const Tensor& a, const Tensor& row);
Tensor scale_rows(const Tensor& a, const Tensor& column);

// Scalar arithmetic.
Tensor scale(const Tensor& a, double factor);
Tensor add_scalar(const Tensor& a, double offset);

// Nonlinearities.
Tensor relu(const Tensor& a);
Tensor sigmoid(const Tensor& a);
Tensor softmax_rowwise(const Tensor& a);
/// Natural log; DomainError on any value <= 0.
Tensor log(const Tensor& a);
/// max(a, floor); the gradient is passed only where a > floor.
Tensor clamp_min(const Tensor& a, double floor);
Tensor square(const Tensor& a);
/// a^p for a >= 0 (DomainError otherwise). The derivative at a == 0 is taken as 0.
Tensor pow_scalar(const Tensor& a, double p);

// Reductions.
Tensor sum(const Tensor& a);
Tensor mean(const Tensor& a);
Tensor sum_rows(const Tensor& a);  // n x m -> n x 1

// Structure.
Tensor concat_rows(std::span<const Tensor> parts);
Tensor concat_rows(const Tensor& a, const Tensor& b);
Tensor slice_rows(const Tensor& a, std::size_t begin, std::size_t end);
Tensor reshape(const Tensor& a, Shape shape);
/// out[i] = a[i, index[i]] as an n x 1 column.
Tensor pick(const Tensor& a, std::span<const std::size_t> index);

/// Cosine similarity of matching rows, n x 1. DomainError on a zero-norm row.
Tensor cosine_similarity_rowwise(const Tensor& a, const Tensor& b);

}  // namespace couda::diff
