// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>

#include "engage/gradcheck.hpp"
#include "engage/ops.hpp"

using namespace engage;

TEST_CASE("matmul identity and hand arithmetic") {
  Tensor i2 = Tensor::identity(2);
  Tensor b = Tensor::from_data({2, 2}, {5, 6, 7, 8});
  Tensor out = matmul(i2, b);
  for (std::int64_t i = 0; i < 4; ++i) CHECK(out.at(i) == b.at(i));

  Tensor a = Tensor::from_data({2, 2}, {1, 2, 3, 4});
  Tensor c = matmul(a, b);
  CHECK(c.at(0, 0) == 19);
  CHECK(c.at(0, 1) == 22);
  CHECK(c.at(1, 0) == 43);
  CHECK(c.at(1, 1) == 50);
}

TEST_CASE("matmul shape mismatch reports both shapes") {
  Tensor a = Tensor::zeros({2, 3});
  Tensor b = Tensor::zeros({4, 2});
  CHECK_THROWS_WITH_AS(matmul(a, b), doctest::Contains("[2x3]"), DimensionError);
}

TEST_CASE("matmul gradient vs finite differences") {
  Rng rng(11);
  Tensor a = Tensor::randn({4, 3}, rng, 1.0, true);
  Tensor b = Tensor::randn({3, 2}, rng, 1.0, true);
  auto f = [&] { return sum(matmul(a, b)); };
  CHECK(finite_diff_check(f, a) < 1e-6);
  CHECK(finite_diff_check(f, b) < 1e-6);
}

TEST_CASE("matmul associativity") {
  Rng rng(5);
  for (int trial = 0; trial < 5; ++trial) {
    Tensor a = Tensor::randn({3, 4}, rng);
    Tensor b = Tensor::randn({4, 2}, rng);
    Tensor c = Tensor::randn({2, 5}, rng);
    Tensor left = matmul(matmul(a, b), c);
    Tensor right = matmul(a, matmul(b, c));
    for (std::int64_t i = 0; i < left.numel(); ++i) {
      CHECK(left.at(i) == doctest::Approx(right.at(i)).epsilon(1e-10));
    }
  }
}

TEST_CASE("layer_norm basics") {
  Tensor gain = Tensor::full({3}, 1.0);
  Tensor bias = Tensor::zeros({3});
  SUBCASE("constant row maps to zeros") {
    Tensor x = Tensor::full({2, 3}, 4.2);
    Tensor y = layer_norm(x, gain, bias);
    for (std::int64_t i = 0; i < y.numel(); ++i) CHECK(std::fabs(y.at(i)) < 1e-9);
  }
  SUBCASE("two-point standardization") {
    Tensor g2 = Tensor::full({2}, 1.0);
    Tensor b2 = Tensor::zeros({2});
    Tensor x = Tensor::from_data({1, 2}, {1, 3});
    Tensor y = layer_norm(x, g2, b2, 1e-12);
    CHECK(y.at(0, 0) == doctest::Approx(-1.0).epsilon(1e-6));
    CHECK(y.at(0, 1) == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("gradient check") {
    Rng rng(3);
    Tensor x = Tensor::randn({3, 5}, rng, 1.0, true);
    Tensor g = Tensor::uniform({5}, rng, 0.5, 1.5, true);
    Tensor b = Tensor::randn({5}, rng, 0.1, true);
    Tensor w = Tensor::randn({3, 5}, rng); // fixed mixing so every grad path is exercised
    auto f = [&] { return sum(mul(layer_norm(x, g, b), w)); };
    CHECK(finite_diff_check(f, x) < 1e-5);
    CHECK(finite_diff_check(f, g) < 1e-5);
    CHECK(finite_diff_check(f, b) < 1e-5);
  }
}

TEST_CASE("softmax_rows") {
  SUBCASE("equal logits") {
    Tensor x = Tensor::full({1, 4}, 2.5);
    Tensor y = softmax_rows(x);
    for (std::int64_t j = 0; j < 4; ++j) CHECK(y.at(0, j) == doctest::Approx(0.25).epsilon(1e-12));
  }
  SUBCASE("analytic two-logit row") {
    Tensor x = Tensor::from_data({1, 2}, {0.0, std::log(2.0)});
    Tensor y = softmax_rows(x);
    CHECK(y.at(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
    CHECK(y.at(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
  }
  SUBCASE("large logits do not overflow") {
    Tensor x = Tensor::from_data({1, 2}, {1000.0, 1000.0});
    Tensor y = softmax_rows(x);
    CHECK(y.at(0, 0) == doctest::Approx(0.5).epsilon(1e-12));
    CHECK(y.at(0, 1) == doctest::Approx(0.5).epsilon(1e-12));
  }
  SUBCASE("rows sum to one") {
    Rng rng(17);
    Tensor x = Tensor::randn({6, 9}, rng, 3.0);
    Tensor y = softmax_rows(x);
    for (std::int64_t r = 0; r < 6; ++r) {
      double s = 0.0;
      for (std::int64_t j = 0; j < 9; ++j) s += y.at(r, j);
      CHECK(std::fabs(s - 1.0) < 1e-12);
    }
  }
}

TEST_CASE("linear identity and shape contract") {
  Rng rng(7);
  SUBCASE("identity weights") {
    Tensor x = Tensor::randn({4, 3}, rng);
    Tensor y = linear(x, Tensor::identity(3), Tensor::zeros({3}));
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(y.at(i) == x.at(i));
  }
  SUBCASE("88-wide cue projects to 16") {
    Tensor x = Tensor::randn({7, 88}, rng);
    Tensor w = Tensor::randn({88, 16}, rng);
    Tensor y = linear(x, w, Tensor::zeros({16}));
    CHECK(y.rows() == 7);
    CHECK(y.cols() == 16);
  }
  SUBCASE("gradient check") {
    Tensor x = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor w = Tensor::randn({4, 2}, rng, 1.0, true);
    Tensor b = Tensor::randn({2}, rng, 1.0, true);
    auto f = [&] { return sum(linear(x, w, b)); };
    CHECK(finite_diff_check(f, x) < 1e-6);
    CHECK(finite_diff_check(f, w) < 1e-6);
    CHECK(finite_diff_check(f, b) < 1e-6);
  }
}

TEST_CASE("backward basics") {
  Rng rng(23);
  SUBCASE("sum gives all-ones gradient") {
    Tensor x = Tensor::randn({3, 2}, rng, 1.0, true);
    backward(sum(x));
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(x.grad_buffer()[static_cast<std::size_t>(i)] == 1.0);
  }
  SUBCASE("product rule") {
    Tensor x = Tensor::randn({4}, rng, 1.0, true);
    Tensor y = Tensor::randn({4}, rng, 1.0, true);
    backward(sum(mul(x, y)));
    for (std::int64_t i = 0; i < 4; ++i) {
      CHECK(x.grad_buffer()[static_cast<std::size_t>(i)] == doctest::Approx(y.at(i)));
    }
  }
  SUBCASE("non-scalar root rejected") {
    Tensor x = Tensor::randn({2, 2}, rng, 1.0, true);
    CHECK_THROWS_AS(backward(add(x, x)), UsageError);
  }
  SUBCASE("fanout accumulates") {
    Tensor x = Tensor::randn({3}, rng, 1.0, true);
    Tensor a = Tensor::from_data({3}, {1, 2, 3});
    Tensor b = Tensor::from_data({3}, {10, 20, 30});
    backward(sum(add(mul(x, a), mul(x, b))));
    for (std::int64_t i = 0; i < 3; ++i) {
      CHECK(x.grad_buffer()[static_cast<std::size_t>(i)] ==
            doctest::Approx(a.at(i) + b.at(i)));
    }
  }
  SUBCASE("three-op composite matches finite differences") {
    Tensor x = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor w = Tensor::randn({4, 4}, rng, 0.5, true);
    Tensor g = Tensor::full({4}, 1.0, true);
    Tensor b = Tensor::zeros({4}, true);
    Tensor mixer = Tensor::randn({3, 4}, rng);
    auto f = [&] { return sum(mul(layer_norm(matmul(x, w), g, b), mixer)); };
    CHECK(finite_diff_check(f, x) < 1e-5);
    CHECK(finite_diff_check(f, w) < 1e-5);
  }
}

TEST_CASE("finite_diff_check on a quadratic is near-exact") {
  Tensor x = Tensor::from_data({1}, {3.0}, true);
  auto f = [&] { return sum(mul(x, x)); };
  CHECK(finite_diff_check(f, x, 1e-5) < 1e-8);
}

TEST_CASE("finite_diff_check through softmax") {
  Rng rng(31);
  Tensor x = Tensor::randn({2, 5}, rng, 1.0, true);
  Tensor w = Tensor::randn({2, 5}, rng);
  auto f = [&] { return sum(mul(softmax_rows(x), w)); };
  CHECK(finite_diff_check(f, x) < 1e-5);
}

TEST_CASE("elementwise and shape op gradients") {
  Rng rng(41);
  Tensor x = Tensor::randn({4, 3}, rng, 1.0, true);
  Tensor y = Tensor::randn({4, 3}, rng, 1.0, true);
  Tensor w = Tensor::randn({4, 3}, rng);

  SUBCASE("div") {
    Tensor offset = add_const(mul(y, y), 1.0);
    auto f = [&] { return sum(mul(div(x, add_const(mul(y, y), 1.0)), w)); };
    CHECK(finite_diff_check(f, x) < 1e-5);
    CHECK(finite_diff_check(f, y) < 1e-5);
    (void)offset;
  }
  SUBCASE("gelu sigmoid tanh") {
    auto fg = [&] { return sum(mul(gelu(x), w)); };
    auto fs = [&] { return sum(mul(sigmoid(x), w)); };
    auto ft = [&] { return sum(mul(tanh(x), w)); };
    CHECK(finite_diff_check(fg, x) < 1e-5);
    CHECK(finite_diff_check(fs, x) < 1e-5);
    CHECK(finite_diff_check(ft, x) < 1e-5);
  }
  SUBCASE("concat and slice") {
    auto f = [&] {
      Tensor c = concat_cols({x, y});
      Tensor rows = concat_rows({slice_rows(c, 0, 2), slice_rows(c, 2, 4)});
      return sum(mul(slice_cols(rows, 1, 5), Tensor::full({4, 4}, 0.7)));
    };
    CHECK(finite_diff_check(f, x) < 1e-5);
    CHECK(finite_diff_check(f, y) < 1e-5);
  }
  SUBCASE("transpose reshape sub_scalar") {
    auto f = [&] {
      Tensor t = transpose(x);
      Tensor r = reshape(t, {12});
      return sum(mul(sub_scalar(r, mean(r)), reshape(w, {12})));
    };
    CHECK(finite_diff_check(f, x) < 1e-5);
  }
  SUBCASE("l2 normalize") {
    auto f = [&] { return sum(mul(l2_normalize_rows(x), w)); };
    CHECK(finite_diff_check(f, x) < 1e-5);
  }
  SUBCASE("lse and trace") {
    Tensor sq = Tensor::randn({3, 3}, rng, 1.0, true);
    auto f = [&] { return sub(sum(lse_rows(sq)), trace(sq)); };
    CHECK(finite_diff_check(f, sq) < 1e-5);
  }
  SUBCASE("causal conv") {
    Tensor cw = Tensor::randn({3, 2}, rng, 1.0, true);
    Tensor cb = Tensor::randn({3}, rng, 0.2, true);
    auto f = [&] { return sum(mul(causal_depthwise_conv(x, cw, cb), w)); };
    CHECK(finite_diff_check(f, x) < 1e-5);
    CHECK(finite_diff_check(f, cw) < 1e-5);
    CHECK(finite_diff_check(f, cb) < 1e-5);
  }
}

TEST_CASE("dropout") {
  Rng rng(51);
  Tensor x = Tensor::randn({8, 8}, rng, 1.0, true);
  SUBCASE("eval mode is identity") {
    Tensor y = dropout(x, 0.5, false, 1);
    CHECK(y.same_impl(x));
  }
  SUBCASE("deterministic per seed") {
    Tensor a = dropout(x, 0.3, true, 99);
    Tensor b = dropout(x, 0.3, true, 99);
    for (std::int64_t i = 0; i < x.numel(); ++i) CHECK(a.at(i) == b.at(i));
  }
  SUBCASE("gradient flows through the mask") {
    Tensor w = Tensor::randn({8, 8}, rng);
    auto f = [&] { return sum(mul(dropout(x, 0.4, true, 7), w)); };
    CHECK(finite_diff_check(f, x) < 1e-5);
  }
}

TEST_CASE("checked mode rejects non-finite results") {
  Tensor a = Tensor::from_data({2}, {1.0, 1.0});
  Tensor b = Tensor::from_data({2}, {0.0, 1.0});
  CHECK_THROWS_AS(div(a, b), DataError);
  set_checked_mode(false);
  Tensor q = div(a, b);
  CHECK(std::isinf(q.at(0)));
  set_checked_mode(true);
}

TEST_CASE("per-op finite difference sweep") {
  // every differentiable op, 10 random instances each
  Rng rng(2024);
  for (int trial = 0; trial < 10; ++trial) {
    Tensor x = Tensor::randn({3, 4}, rng, 1.0, true);
    Tensor mix = Tensor::randn({3, 4}, rng);
    auto check = [&](const std::function<Tensor()>& f) {
      CHECK(finite_diff_check(f, x) < 1e-4);
    };
    check([&] { return sum(mul(add(x, mix), mix)); });
    check([&] { return sum(mul(sub(x, mix), mix)); });
    check([&] { return sum(mul(mul(x, mix), mix)); });
    check([&] { return sum(mul(scale(x, 1.7), mix)); });
    check([&] { return sum(mul(softmax_rows(x), mix)); });
    check([&] { return sum(mul(gelu(x), mix)); });
    check([&] { return mean(mul(x, x)); });
  }
}
