// SPDX-License-Identifier: Apache-2.0
#include "engage/gradcheck.hpp"

#include <algorithm>
#include <cmath>
#include <numeric>
#include <vector>

namespace engage {

namespace {

double check_coords(const std::function<Tensor()>& f, Tensor& x, double h,
                    const std::vector<std::int64_t>& coords) {
  if (h < 1e-7 || h > 1e-3) throw UsageError("finite_diff_check: h out of [1e-7, 1e-3]");
  if (!x.requires_grad()) throw UsageError("finite_diff_check: x does not require grad");

  x.zero_grad();
  Tensor out = f();
  backward(out);
  std::vector<double> analytic(static_cast<std::size_t>(x.numel()), 0.0);
  if (x.has_grad()) {
    const double* g = x.grad_data();
    std::copy(g, g + x.numel(), analytic.begin());
  }

  double max_rel = 0.0;
  {
    NoGradGuard ng;
    for (std::int64_t i : coords) {
      const double orig = x.at(i);
      x.mut(i) = orig + h;
      const double fp = f().value();
      x.mut(i) = orig - h;
      const double fm = f().value();
      x.mut(i) = orig;
      const double fd = (fp - fm) / (2.0 * h);
      const double ga = analytic[static_cast<std::size_t>(i)];
      const double denom = std::max({std::fabs(ga), std::fabs(fd), 1e-8});
      max_rel = std::max(max_rel, std::fabs(ga - fd) / denom);
    }
  }
  x.zero_grad();
  return max_rel;
}

} // namespace

double finite_diff_check(const std::function<Tensor()>& f, Tensor& x, double h) {
  std::vector<std::int64_t> coords(static_cast<std::size_t>(x.numel()));
  std::iota(coords.begin(), coords.end(), 0);
  return check_coords(f, x, h, coords);
}

double finite_diff_check_sampled(const std::function<Tensor()>& f, Tensor& x, double h,
                                 std::int64_t max_coords, Rng& rng) {
  const std::int64_t n = x.numel();
  if (max_coords >= n) return finite_diff_check(f, x, h);
  std::vector<std::int64_t> coords(static_cast<std::size_t>(max_coords));
  for (auto& c : coords) c = rng.index(n);
  return check_coords(f, x, h, coords);
}

} // namespace engage
