// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "engage/gradcheck.hpp"
#include "engage/ssm.hpp"
#include "oracles.hpp"

using namespace engage;

namespace {
SsmCoeffs random_stable(std::int64_t d, std::int64_t ds, Rng& rng, bool requires_grad = false) {
  SsmCoeffs p;
  p.a = Tensor::uniform({d, ds}, rng, -0.95, 0.95, requires_grad);
  p.b = Tensor::randn({d, ds}, rng, 0.7, requires_grad);
  p.c = Tensor::randn({d, ds}, rng, 0.7, requires_grad);
  p.d = Tensor::randn({d}, rng, 0.5, requires_grad);
  return p;
}
} // namespace

TEST_CASE("memoryless when the transition is zero") {
  // a = 0 collapses the recurrence to y_t = <c,b> x_t + d x_t
  Rng rng(1);
  const std::int64_t d = 3, ds = 4, n = 6;
  SsmCoeffs p = random_stable(d, ds, rng);
  for (std::int64_t i = 0; i < p.a.numel(); ++i) p.a.mut(i) = 0.0;
  Tensor x = Tensor::randn({n, d}, rng);
  Tensor y = ssm_scan_naive(x, p);
  for (std::int64_t t = 0; t < n; ++t) {
    for (std::int64_t c = 0; c < d; ++c) {
      double cb = 0.0;
      for (std::int64_t j = 0; j < ds; ++j) cb += p.c.at(c, j) * p.b.at(c, j);
      const double want = (cb + p.d.at(c)) * x.at(t, c);
      CHECK(y.at(t, c) == doctest::Approx(want).epsilon(1e-12));
    }
  }
}

TEST_CASE("unit transition integrates (stability check disabled)") {
  // scalar state per channel, a=b=c=1, d=0: y is the running sum
  const std::int64_t d = 2, n = 10;
  SsmCoeffs p;
  p.a = Tensor::full({d, 1}, 1.0);
  p.b = Tensor::full({d, 1}, 1.0);
  p.c = Tensor::full({d, 1}, 1.0);
  p.d = Tensor::zeros({d});
  Rng rng(2);
  Tensor x = Tensor::randn({n, d}, rng);
  CHECK_THROWS_AS(ssm_scan_naive(x, p), ConfigError);
  Tensor y1 = ssm_scan_naive(x, p, false);
  Tensor y2 = ssm_scan(x, p, false);
  for (std::int64_t c = 0; c < d; ++c) {
    double run = 0.0;
    for (std::int64_t t = 0; t < n; ++t) {
      run += x.at(t, c);
      CHECK(y1.at(t, c) == doctest::Approx(run).epsilon(1e-12));
      CHECK(y2.at(t, c) == doctest::Approx(run).epsilon(1e-10));
    }
  }
}

TEST_CASE("fast scan matches the naive recurrence") {
  Rng rng(3);
  for (int trial = 0; trial < 20; ++trial) {
    const std::int64_t d = 1 + rng.index(6);
    const std::int64_t ds = 1 + rng.index(8);
    const std::int64_t n = 1 + rng.index(256);
    SsmCoeffs p = random_stable(d, ds, rng);
    Tensor x = Tensor::randn({n, d}, rng);
    Tensor a = ssm_scan_naive(x, p);
    Tensor b = ssm_scan(x, p);
    double max_diff = 0.0;
    for (std::int64_t i = 0; i < a.numel(); ++i) {
      max_diff = std::max(max_diff, std::fabs(a.at(i) - b.at(i)));
    }
    CHECK(max_diff < 1e-8);
  }
}

TEST_CASE("both scans match the dense reference") {
  Rng rng(4);
  const std::int64_t d = 3, ds = 4, n = 40;
  SsmCoeffs p = random_stable(d, ds, rng);
  Tensor x = Tensor::randn({n, d}, rng);

  std::vector<double> a_diag(p.a.data(), p.a.data() + p.a.numel());
  std::vector<double> B(p.b.data(), p.b.data() + p.b.numel());
  std::vector<double> C(p.c.data(), p.c.data() + p.c.numel());
  std::vector<double> D(p.d.data(), p.d.data() + p.d.numel());
  std::vector<double> xs(x.data(), x.data() + x.numel());
  auto want = oracles::dense_ssm(xs, n, d, oracles::diag_to_dense_a(a_diag, d, ds), B, C, D, ds);

  Tensor y1 = ssm_scan_naive(x, p);
  Tensor y2 = ssm_scan(x, p);
  for (std::int64_t i = 0; i < y1.numel(); ++i) {
    CHECK(y1.at(i) == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-10));
    CHECK(y2.at(i) == doctest::Approx(want[static_cast<std::size_t>(i)]).epsilon(1e-10));
  }
}

TEST_CASE("ssm causality: later frames never reach earlier outputs") {
  Rng rng(5);
  const std::int64_t d = 4, ds = 3, n = 32;
  SsmCoeffs p = random_stable(d, ds, rng);
  Tensor x = Tensor::randn({n, d}, rng);
  Tensor y_full = ssm_scan(x, p);
  for (std::int64_t t : {std::int64_t(0), std::int64_t(7), std::int64_t(30)}) {
    Tensor x2 = x.clone();
    for (std::int64_t r = t + 1; r < n; ++r) {
      for (std::int64_t c = 0; c < d; ++c) x2.mut(r, c) = 0.0;
    }
    Tensor y2 = ssm_scan(x2, p);
    for (std::int64_t r = 0; r <= t; ++r) {
      for (std::int64_t c = 0; c < d; ++c) CHECK(y2.at(r, c) == y_full.at(r, c));
    }
  }
}

TEST_CASE("scan gradients against finite differences") {
  Rng rng(6);
  const std::int64_t d = 3, ds = 2, n = 9;
  SsmCoeffs p = random_stable(d, ds, rng, true);
  Tensor x = Tensor::randn({n, d}, rng, 1.0, true);
  Tensor w = Tensor::randn({n, d}, rng);
  SUBCASE("fast path") {
    auto f = [&] { return sum(mul(ssm_scan(x, p), w)); };
    CHECK(finite_diff_check(f, x) < 1e-5);
    CHECK(finite_diff_check(f, p.a) < 1e-5);
    CHECK(finite_diff_check(f, p.b) < 1e-5);
    CHECK(finite_diff_check(f, p.c) < 1e-5);
    CHECK(finite_diff_check(f, p.d) < 1e-5);
  }
  SUBCASE("naive path") {
    auto f = [&] { return sum(mul(ssm_scan_naive(x, p), w)); };
    CHECK(finite_diff_check(f, x) < 1e-5);
    CHECK(finite_diff_check(f, p.a) < 1e-5);
  }
}

TEST_CASE("trainable parameterization stays stable") {
  Rng rng(7);
  SsmParams p = SsmParams::init(4, 8, rng);
  SsmCoeffs c = p.effective();
  for (std::int64_t i = 0; i < c.a.numel(); ++i) CHECK(std::fabs(c.a.at(i)) < 1.0);
  // even with extreme raw values the squash keeps |a| < 1
  for (std::int64_t i = 0; i < p.a_raw.numel(); ++i) p.a_raw.mut(i) = 1e6;
  c = p.effective();
  Rng rng2(8);
  Tensor x = Tensor::randn({16, 4}, rng2);
  CHECK_NOTHROW(ssm_scan(x, c));
}
