// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>

#include "engage/tensor.hpp"

namespace engage {

// Compares the tape gradient of a scalar-valued map against central finite
// differences taken on x, returning the max relative error over the checked
// coordinates (denominator max(|g|, 1e-8)). f must rebuild its graph on
// every call and must be smooth around x; h must lie in [1e-7, 1e-3].
double finite_diff_check(const std::function<Tensor()>& f, Tensor& x, double h = 1e-5);

// Same check restricted to at most max_coords coordinates of x, sampled
// with rng. Used for large parameter tensors where the full sweep is slow.
double finite_diff_check_sampled(const std::function<Tensor()>& f, Tensor& x, double h,
                                 std::int64_t max_coords, Rng& rng);

} // namespace engage
