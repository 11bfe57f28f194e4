// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <vector>

#include "engage/tensor.hpp"

namespace engage {

// Elementwise (same shape), all differentiable.
Tensor add(const Tensor& a, const Tensor& b);
Tensor sub(const Tensor& a, const Tensor& b);
Tensor mul(const Tensor& a, const Tensor& b);
Tensor div(const Tensor& a, const Tensor& b);
Tensor scale(const Tensor& a, double c);
Tensor add_const(const Tensor& a, double c);
// a - s broadcast over all of a; s is a scalar tensor.
Tensor sub_scalar(const Tensor& a, const Tensor& s);

// x: n x d, bias: d. Row-broadcast bias add, the only broadcast supported.
Tensor add_bias(const Tensor& x, const Tensor& bias);

Tensor matmul(const Tensor& a, const Tensor& b);
// x: n x a, w: a x b, bias: b. Per-frame affine map.
Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias);
Tensor transpose(const Tensor& x);
Tensor reshape(const Tensor& x, Shape shape);

Tensor concat_rows(const std::vector<Tensor>& parts);
Tensor concat_cols(const std::vector<Tensor>& parts);
Tensor slice_rows(const Tensor& x, std::int64_t r0, std::int64_t r1);
Tensor slice_cols(const Tensor& x, std::int64_t c0, std::int64_t c1);

Tensor sum(const Tensor& x);  // scalar
Tensor mean(const Tensor& x); // scalar

Tensor softmax_rows(const Tensor& x);
// Row-wise log-sum-exp, returns [n]. Masked variant reduces only over
// entries whose mask byte is nonzero (every row needs at least one).
Tensor lse_rows(const Tensor& x);
Tensor lse_rows_masked(const Tensor& x, const std::vector<std::uint8_t>& mask);
Tensor trace(const Tensor& x);

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps = 1e-5);
Tensor l2_normalize_rows(const Tensor& x, double eps = 1e-12);

Tensor gelu(const Tensor& x);
Tensor sigmoid(const Tensor& x);
Tensor tanh(const Tensor& x);

// Inverted dropout with a deterministic per-call seed; identity when not
// training or rate == 0.
Tensor dropout(const Tensor& x, double rate, bool training, std::uint64_t seed);

// x: n x d, w: d x k, bias: d. Depthwise causal convolution over frames,
// zero history before frame 0.
Tensor causal_depthwise_conv(const Tensor& x, const Tensor& w, const Tensor& bias);

} // namespace engage
