#pragma once

#include <cstdint>
#include <vector>

#include "rpt/rng.hpp"
#include "rpt/tensor.hpp"

namespace rpt::ops {

// All ops build tape nodes when GradMode is enabled and any input requires
// gradients. Shapes are validated up front; mismatches throw DimensionError
// naming both operands.

Tensor matmul(const Tensor& a, const Tensor& b);     // [r,k] x [k,c] -> [r,c]
Tensor matmul_bt(const Tensor& a, const Tensor& b);  // [r,k] x [c,k]^T -> [r,c]

Tensor add(const Tensor& a, const Tensor& b);            // same shape
Tensor mul(const Tensor& a, const Tensor& b);            // elementwise, same shape
Tensor scale(const Tensor& a, double s);                 // constant scalar factor
Tensor add_rowwise(const Tensor& x, const Tensor& bias);  // [r,c] + [c]

Tensor relu(const Tensor& x);
Tensor tanh(const Tensor& x);
Tensor sigmoid(const Tensor& x);

// Per-row standardization over the last axis (population variance) followed
// by the learned affine gamma/beta. Accepts rank 1 or 2.
Tensor layer_norm(const Tensor& x, const Tensor& gamma, const Tensor& beta,
                  double eps = 1e-5);

Tensor softmax(const Tensor& x, std::size_t axis);

// Row softmax over [r,c] where keep[i*c+j]==0 marks entries that must get
// probability exactly 0 and receive no gradient. Every row needs at least
// one kept entry.
Tensor masked_rows_softmax(const Tensor& x, const std::vector<std::uint8_t>& keep);

// Negative log-likelihood of `target` under softmax(logits); logits rank 1.
Tensor cross_entropy(const Tensor& logits, std::size_t target);

Tensor embedding_lookup(const Tensor& table, const std::vector<std::size_t>& ids);

Tensor concat_seq(const Tensor& a, const Tensor& b);   // stack rows
Tensor concat_cols(const Tensor& a, const Tensor& b);  // widen rows
Tensor slice_rows(const Tensor& x, std::size_t begin, std::size_t count);
Tensor slice_cols(const Tensor& x, std::size_t begin, std::size_t count);
Tensor reshape(const Tensor& x, Shape shape);

// Inverted dropout: survivors scaled by 1/(1-p). Identity when training is
// false; the mask consumes one uniform01 draw per element in row-major order.
Tensor dropout(const Tensor& x, double p, bool training, Rng& rng);

Tensor sum(const Tensor& x);  // scalar

}  // namespace rpt::ops
