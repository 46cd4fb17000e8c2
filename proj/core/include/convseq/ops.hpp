#pragma once

#include <cstdint>
#include <random>
#include <span>
#include <vector>

#include "convseq/tensor.hpp"

namespace convseq {

// Matrix product of A [m x k] and B [k x n].
Tensor matmul(const Tensor& a, const Tensor& b);
// A [m x k] times the transpose of B [n x k]; result [m x n].
Tensor matmul_nt(const Tensor& a, const Tensor& b);

Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& x, double s);
// X [.. x d] plus a length-d vector broadcast over every leading index.
Tensor add_row_vector(const Tensor& x, const Tensor& v);

Tensor sigmoid(const Tensor& x);
Tensor relu(const Tensor& x);

// Max-subtracted softmax along `axis`. -inf entries map to exactly zero.
Tensor softmax(const Tensor& x, std::size_t axis);

// Normalizes over the last axis, then applies gamma * y + beta.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta, double eps);

Tensor sum(const Tensor& x);
Tensor mean(const Tensor& x);

// Rows of `table` [V x d] selected by ids; result [len(ids) x d].
Tensor embedding(const Tensor& table, std::span<const std::int32_t> ids);

// Columns [start, start + count) of a matrix.
Tensor slice_cols(const Tensor& x, std::size_t start, std::size_t count);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor reshape(const Tensor& x, Shape shape);

// Inverted dropout: zeroes each entry with probability `rate` and rescales
// the survivors. Identity when rate == 0.
Tensor dropout(const Tensor& x, double rate, std::mt19937_64& rng);

}  // namespace convseq
