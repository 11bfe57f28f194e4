// SPDX-License-Identifier: Apache-2.0
#pragma once

#include "engage/ops.hpp"
#include "engage/tensor.hpp"

namespace engage {

// Effective per-channel state-space coefficients. Each of the d channels
// carries its own diagonal recurrence over d_state lanes:
//   s_t = a (.) s_{t-1} + b * x_t[c]
//   y_t[c] = <c, s_t> + d[c] * x_t[c]
struct SsmCoeffs {
  Tensor a; // [d x d_state], |a| < 1 for a stable recurrence
  Tensor b; // [d x d_state]
  Tensor c; // [d x d_state]
  Tensor d; // [d]
  std::int64_t width() const { return a.rows(); }
  std::int64_t d_state() const { return a.cols(); }
};

// Trainable parameterization: the transition is stored raw and squashed
// through a scaled tanh so |a| < 1 holds strictly for any parameter value
// the optimizer reaches (bare tanh rounds to exactly 1.0 for large inputs).
struct SsmParams {
  static constexpr double kSquashScale = 1.0 - 1e-6;

  Tensor a_raw; // [d x d_state]
  Tensor b, c;  // [d x d_state]
  Tensor d;     // [d]
  std::int64_t d_state = 0;

  static SsmParams init(std::int64_t width, std::int64_t d_state, Rng& rng);
  SsmCoeffs effective() const { return {scale(tanh(a_raw), kSquashScale), b, c, d}; }
};

// Literal per-frame recurrence (the reference path).
Tensor ssm_scan_naive(const Tensor& x, const SsmCoeffs& p, bool check_stability = true);

// Blocked channel-major scan (the fast path): block-local prefixes with a
// decayed carry combined per block. Matches the naive path within fp error.
Tensor ssm_scan(const Tensor& x, const SsmCoeffs& p, bool check_stability = true);

} // namespace engage
