// SPDX-License-Identifier: Apache-2.0
#include "engage/ops.hpp"

#include <algorithm>
#include <cmath>
#include <limits>

namespace engage {

namespace {

constexpr double kInvSqrt2 = 0.70710678118654752440;
constexpr double kInvSqrt2Pi = 0.39894228040143267794;

void require_same_shape(const Tensor& a, const Tensor& b, const char* op) {
  if (a.shape() != b.shape()) {
    throw DimensionError(std::string(op) + ": shape mismatch " + shape_str(a.shape()) +
                         " vs " + shape_str(b.shape()));
  }
}

void require_2d(const Tensor& x, const char* op) {
  if (x.rank() != 2) {
    throw DimensionError(std::string(op) + ": expected 2-D tensor, got " + shape_str(x.shape()));
  }
}

bool any_tracked(std::initializer_list<const Tensor*> ts) {
  if (!grad_enabled()) return false;
  for (const Tensor* t : ts) {
    if (t->requires_grad()) return true;
  }
  return false;
}

// C[m x p] += op(A) * op(B); ta/tb transpose A (k x m) / B (p x k).
void mm_acc(const double* a, const double* b, double* c, std::int64_t m,
            std::int64_t k, std::int64_t p, bool ta, bool tb) {
  if (!ta && !tb) {
    for (std::int64_t i = 0; i < m; ++i) {
      double* crow = c + i * p;
      const double* arow = a + i * k;
      for (std::int64_t kk = 0; kk < k; ++kk) {
        const double av = arow[kk];
        const double* brow = b + kk * p;
        for (std::int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (ta && !tb) { // A is k x m
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double* arow = a + kk * m;
      const double* brow = b + kk * p;
      for (std::int64_t i = 0; i < m; ++i) {
        const double av = arow[i];
        double* crow = c + i * p;
        for (std::int64_t j = 0; j < p; ++j) crow[j] += av * brow[j];
      }
    }
  } else if (!ta && tb) { // B is p x k
    for (std::int64_t i = 0; i < m; ++i) {
      const double* arow = a + i * k;
      double* crow = c + i * p;
      for (std::int64_t j = 0; j < p; ++j) {
        const double* brow = b + j * k;
        double acc = 0.0;
        for (std::int64_t kk = 0; kk < k; ++kk) acc += arow[kk] * brow[kk];
        crow[j] += acc;
      }
    }
  } else { // both transposed: A k x m, B p x k
    for (std::int64_t kk = 0; kk < k; ++kk) {
      const double* arow = a + kk * m;
      for (std::int64_t i = 0; i < m; ++i) {
        const double av = arow[i];
        double* crow = c + i * p;
        for (std::int64_t j = 0; j < p; ++j) crow[j] += av * b[j * k + kk];
      }
    }
  }
}

} // namespace

Tensor add(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "add");
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mut(i) = a.at(i) + b.at(i);
  detail::check_finite(out, "add");
  if (any_tracked({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    detail::tape_push([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      if (ta.requires_grad()) detail::accum_grad(ta, go, ta.numel());
      if (tb.requires_grad()) detail::accum_grad(tb, go, tb.numel());
    });
  }
  return out;
}

Tensor sub(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "sub");
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mut(i) = a.at(i) - b.at(i);
  detail::check_finite(out, "sub");
  if (any_tracked({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    detail::tape_push([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      if (ta.requires_grad()) detail::accum_grad(ta, go, ta.numel());
      if (tb.requires_grad()) {
        double* g = tb.grad_data();
        for (std::int64_t i = 0; i < tb.numel(); ++i) g[i] -= go[i];
      }
    });
  }
  return out;
}

Tensor mul(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "mul");
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mut(i) = a.at(i) * b.at(i);
  detail::check_finite(out, "mul");
  if (any_tracked({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    detail::tape_push([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      if (ta.requires_grad()) {
        double* g = ta.grad_data();
        for (std::int64_t i = 0; i < ta.numel(); ++i) g[i] += go[i] * tb.at(i);
      }
      if (tb.requires_grad()) {
        double* g = tb.grad_data();
        for (std::int64_t i = 0; i < tb.numel(); ++i) g[i] += go[i] * ta.at(i);
      }
    });
  }
  return out;
}

Tensor div(const Tensor& a, const Tensor& b) {
  require_same_shape(a, b, "div");
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mut(i) = a.at(i) / b.at(i);
  detail::check_finite(out, "div");
  if (any_tracked({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    detail::tape_push([ta, tb, to]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      if (ta.requires_grad()) {
        double* g = ta.grad_data();
        for (std::int64_t i = 0; i < ta.numel(); ++i) g[i] += go[i] / tb.at(i);
      }
      if (tb.requires_grad()) {
        double* g = tb.grad_data();
        for (std::int64_t i = 0; i < tb.numel(); ++i) {
          const double bv = tb.at(i);
          g[i] -= go[i] * ta.at(i) / (bv * bv);
        }
      }
    });
  }
  return out;
}

Tensor scale(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mut(i) = a.at(i) * c;
  detail::check_finite(out, "scale");
  if (any_tracked({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    detail::tape_push([ta, to, c]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      double* g = ta.grad_data();
      for (std::int64_t i = 0; i < ta.numel(); ++i) g[i] += go[i] * c;
    });
  }
  return out;
}

Tensor add_const(const Tensor& a, double c) {
  Tensor out = Tensor::zeros(a.shape());
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mut(i) = a.at(i) + c;
  detail::check_finite(out, "add_const");
  if (any_tracked({&a})) {
    out.set_requires_grad(true);
    Tensor ta = a, to = out;
    detail::tape_push([ta, to]() mutable {
      if (!to.has_grad()) return;
      detail::accum_grad(ta, to.grad_data(), ta.numel());
    });
  }
  return out;
}

Tensor sub_scalar(const Tensor& a, const Tensor& s) {
  if (s.numel() != 1) throw DimensionError("sub_scalar: subtrahend is not scalar");
  Tensor out = Tensor::zeros(a.shape());
  const double sv = s.at(0);
  const std::int64_t n = a.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mut(i) = a.at(i) - sv;
  detail::check_finite(out, "sub_scalar");
  if (any_tracked({&a, &s})) {
    out.set_requires_grad(true);
    Tensor ta = a, ts = s, to = out;
    detail::tape_push([ta, ts, to]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      if (ta.requires_grad()) detail::accum_grad(ta, go, ta.numel());
      if (ts.requires_grad()) {
        double acc = 0.0;
        for (std::int64_t i = 0; i < to.numel(); ++i) acc += go[i];
        ts.grad_data()[0] -= acc;
      }
    });
  }
  return out;
}

Tensor add_bias(const Tensor& x, const Tensor& bias) {
  require_2d(x, "add_bias");
  if (bias.rank() != 1 || bias.dim(0) != x.cols()) {
    throw DimensionError("add_bias: bias " + shape_str(bias.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  const std::int64_t n = x.rows(), d = x.cols();
  Tensor out = Tensor::zeros({n, d});
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t j = 0; j < d; ++j) out.mut(r, j) = x.at(r, j) + bias.at(j);
  }
  detail::check_finite(out, "add_bias");
  if (any_tracked({&x, &bias})) {
    out.set_requires_grad(true);
    Tensor tx = x, tb = bias, to = out;
    detail::tape_push([tx, tb, to, n, d]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      if (tx.requires_grad()) detail::accum_grad(tx, go, tx.numel());
      if (tb.requires_grad()) {
        double* g = tb.grad_data();
        for (std::int64_t r = 0; r < n; ++r) {
          for (std::int64_t j = 0; j < d; ++j) g[j] += go[r * d + j];
        }
      }
    });
  }
  return out;
}

Tensor matmul(const Tensor& a, const Tensor& b) {
  require_2d(a, "matmul");
  require_2d(b, "matmul");
  if (a.cols() != b.rows()) {
    throw DimensionError("matmul: inner dimensions disagree, " + shape_str(a.shape()) +
                         " * " + shape_str(b.shape()));
  }
  const std::int64_t m = a.rows(), k = a.cols(), p = b.cols();
  Tensor out = Tensor::zeros({m, p});
  mm_acc(a.data(), b.data(), out.data(), m, k, p, false, false);
  detail::check_finite(out, "matmul");
  if (any_tracked({&a, &b})) {
    out.set_requires_grad(true);
    Tensor ta = a, tb = b, to = out;
    detail::tape_push([ta, tb, to, m, k, p]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      if (ta.requires_grad()) {
        // dA = dC * B^T
        mm_acc(go, tb.data(), ta.grad_data(), m, p, k, false, true);
      }
      if (tb.requires_grad()) {
        // dB = A^T * dC
        mm_acc(ta.data(), go, tb.grad_data(), k, m, p, true, false);
      }
    });
  }
  return out;
}

Tensor linear(const Tensor& x, const Tensor& w, const Tensor& bias) {
  return add_bias(matmul(x, w), bias);
}

Tensor transpose(const Tensor& x) {
  require_2d(x, "transpose");
  const std::int64_t n = x.rows(), d = x.cols();
  Tensor out = Tensor::zeros({d, n});
  for (std::int64_t r = 0; r < n; ++r) {
    for (std::int64_t j = 0; j < d; ++j) out.mut(j, r) = x.at(r, j);
  }
  if (any_tracked({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    detail::tape_push([tx, to, n, d]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      double* g = tx.grad_data();
      for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t j = 0; j < d; ++j) g[r * d + j] += go[j * n + r];
      }
    });
  }
  return out;
}

Tensor reshape(const Tensor& x, Shape shape) {
  Tensor out = Tensor::zeros(shape);
  if (out.numel() != x.numel()) {
    throw DimensionError("reshape: cannot view " + shape_str(x.shape()) + " as " +
                         shape_str(shape));
  }
  for (std::int64_t i = 0; i < x.numel(); ++i) out.mut(i) = x.at(i);
  if (any_tracked({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    detail::tape_push([tx, to]() mutable {
      if (!to.has_grad()) return;
      detail::accum_grad(tx, to.grad_data(), tx.numel());
    });
  }
  return out;
}

Tensor concat_rows(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_rows: no inputs");
  const std::int64_t d = parts[0].cols();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_rows");
    if (p.cols() != d) {
      throw DimensionError("concat_rows: column mismatch " + shape_str(p.shape()));
    }
    total += p.rows();
  }
  Tensor out = Tensor::zeros({total, d});
  std::int64_t row = 0;
  for (const auto& p : parts) {
    std::copy(p.data(), p.data() + p.numel(), out.data() + row * d);
    row += p.rows();
  }
  bool tracked = false;
  for (const auto& p : parts) tracked = tracked || detail::track(p);
  if (tracked) {
    out.set_requires_grad(true);
    std::vector<Tensor> tp = parts;
    Tensor to = out;
    detail::tape_push([tp, to, d]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      std::int64_t row = 0;
      for (auto& p : tp) {
        if (p.requires_grad()) detail::accum_grad(p, go + row * d, p.numel());
        row += p.rows();
      }
    });
  }
  return out;
}

Tensor concat_cols(const std::vector<Tensor>& parts) {
  if (parts.empty()) throw UsageError("concat_cols: no inputs");
  const std::int64_t n = parts[0].rows();
  std::int64_t total = 0;
  for (const auto& p : parts) {
    require_2d(p, "concat_cols");
    if (p.rows() != n) {
      throw DimensionError("concat_cols: row mismatch " + shape_str(p.shape()));
    }
    total += p.cols();
  }
  Tensor out = Tensor::zeros({n, total});
  std::int64_t col = 0;
  for (const auto& p : parts) {
    const std::int64_t pc = p.cols();
    for (std::int64_t r = 0; r < n; ++r) {
      std::copy(p.data() + r * pc, p.data() + (r + 1) * pc, out.data() + r * total + col);
    }
    col += pc;
  }
  bool tracked = false;
  for (const auto& p : parts) tracked = tracked || detail::track(p);
  if (tracked) {
    out.set_requires_grad(true);
    std::vector<Tensor> tp = parts;
    Tensor to = out;
    detail::tape_push([tp, to, n, total]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      std::int64_t col = 0;
      for (auto& p : tp) {
        const std::int64_t pc = p.cols();
        if (p.requires_grad()) {
          double* g = p.grad_data();
          for (std::int64_t r = 0; r < n; ++r) {
            for (std::int64_t j = 0; j < pc; ++j) g[r * pc + j] += go[r * total + col + j];
          }
        }
        col += pc;
      }
    });
  }
  return out;
}

Tensor slice_rows(const Tensor& x, std::int64_t r0, std::int64_t r1) {
  require_2d(x, "slice_rows");
  if (r0 < 0 || r1 > x.rows() || r0 >= r1) {
    throw DimensionError("slice_rows: range [" + std::to_string(r0) + "," +
                         std::to_string(r1) + ") on " + shape_str(x.shape()));
  }
  const std::int64_t d = x.cols();
  Tensor out = Tensor::zeros({r1 - r0, d});
  std::copy(x.data() + r0 * d, x.data() + r1 * d, out.data());
  if (any_tracked({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    detail::tape_push([tx, to, r0, d]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      double* g = tx.grad_data();
      for (std::int64_t i = 0; i < to.numel(); ++i) g[r0 * d + i] += go[i];
    });
  }
  return out;
}

Tensor slice_cols(const Tensor& x, std::int64_t c0, std::int64_t c1) {
  require_2d(x, "slice_cols");
  if (c0 < 0 || c1 > x.cols() || c0 >= c1) {
    throw DimensionError("slice_cols: range [" + std::to_string(c0) + "," +
                         std::to_string(c1) + ") on " + shape_str(x.shape()));
  }
  const std::int64_t n = x.rows(), d = x.cols(), w = c1 - c0;
  Tensor out = Tensor::zeros({n, w});
  for (std::int64_t r = 0; r < n; ++r) {
    std::copy(x.data() + r * d + c0, x.data() + r * d + c1, out.data() + r * w);
  }
  if (any_tracked({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    detail::tape_push([tx, to, c0, n, d, w]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      double* g = tx.grad_data();
      for (std::int64_t r = 0; r < n; ++r) {
        for (std::int64_t j = 0; j < w; ++j) g[r * d + c0 + j] += go[r * w + j];
      }
    });
  }
  return out;
}

Tensor sum(const Tensor& x) {
  double acc = 0.0;
  for (std::int64_t i = 0; i < x.numel(); ++i) acc += x.at(i);
  Tensor out = Tensor::scalar(acc);
  detail::check_finite(out, "sum");
  if (any_tracked({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    detail::tape_push([tx, to]() mutable {
      if (!to.has_grad()) return;
      const double go = to.grad_data()[0];
      double* g = tx.grad_data();
      for (std::int64_t i = 0; i < tx.numel(); ++i) g[i] += go;
    });
  }
  return out;
}

Tensor mean(const Tensor& x) { return scale(sum(x), 1.0 / static_cast<double>(x.numel())); }

Tensor softmax_rows(const Tensor& x) {
  require_2d(x, "softmax_rows");
  const std::int64_t n = x.rows(), m = x.cols();
  Tensor out = Tensor::zeros({n, m});
  for (std::int64_t r = 0; r < n; ++r) {
    const double* row = x.data() + r * m;
    double mx = row[0];
    for (std::int64_t j = 1; j < m; ++j) mx = std::max(mx, row[j]);
    double z = 0.0;
    double* orow = out.data() + r * m;
    for (std::int64_t j = 0; j < m; ++j) {
      orow[j] = std::exp(row[j] - mx);
      z += orow[j];
    }
    for (std::int64_t j = 0; j < m; ++j) orow[j] /= z;
  }
  detail::check_finite(out, "softmax_rows");
  if (any_tracked({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    detail::tape_push([tx, to, n, m]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      const double* p = to.data();
      double* g = tx.grad_data();
      for (std::int64_t r = 0; r < n; ++r) {
        double dot = 0.0;
        for (std::int64_t j = 0; j < m; ++j) dot += go[r * m + j] * p[r * m + j];
        for (std::int64_t j = 0; j < m; ++j) {
          g[r * m + j] += p[r * m + j] * (go[r * m + j] - dot);
        }
      }
    });
  }
  return out;
}

Tensor lse_rows(const Tensor& x) {
  std::vector<std::uint8_t> mask(static_cast<std::size_t>(x.numel()), 1);
  return lse_rows_masked(x, mask);
}

Tensor lse_rows_masked(const Tensor& x, const std::vector<std::uint8_t>& mask) {
  require_2d(x, "lse_rows_masked");
  const std::int64_t n = x.rows(), m = x.cols();
  if (static_cast<std::int64_t>(mask.size()) != n * m) {
    throw DimensionError("lse_rows_masked: mask size " + std::to_string(mask.size()) +
                         " vs " + shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros({n});
  for (std::int64_t r = 0; r < n; ++r) {
    const double* row = x.data() + r * m;
    double mx = -std::numeric_limits<double>::infinity();
    for (std::int64_t j = 0; j < m; ++j) {
      if (mask[static_cast<std::size_t>(r * m + j)]) mx = std::max(mx, row[j]);
    }
    if (!std::isfinite(mx)) throw UsageError("lse_rows_masked: empty mask row " + std::to_string(r));
    double z = 0.0;
    for (std::int64_t j = 0; j < m; ++j) {
      if (mask[static_cast<std::size_t>(r * m + j)]) z += std::exp(row[j] - mx);
    }
    out.mut(r) = mx + std::log(z);
  }
  detail::check_finite(out, "lse_rows_masked");
  if (any_tracked({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    auto msk = mask;
    detail::tape_push([tx, to, msk, n, m]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      double* g = tx.grad_data();
      for (std::int64_t r = 0; r < n; ++r) {
        const double lse = to.at(r);
        for (std::int64_t j = 0; j < m; ++j) {
          if (!msk[static_cast<std::size_t>(r * m + j)]) continue;
          g[r * m + j] += go[r] * std::exp(tx.at(r, j) - lse);
        }
      }
    });
  }
  return out;
}

Tensor trace(const Tensor& x) {
  require_2d(x, "trace");
  if (x.rows() != x.cols()) {
    throw DimensionError("trace: matrix not square, " + shape_str(x.shape()));
  }
  const std::int64_t n = x.rows();
  double acc = 0.0;
  for (std::int64_t i = 0; i < n; ++i) acc += x.at(i, i);
  Tensor out = Tensor::scalar(acc);
  if (any_tracked({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    detail::tape_push([tx, to, n]() mutable {
      if (!to.has_grad()) return;
      const double go = to.grad_data()[0];
      double* g = tx.grad_data();
      for (std::int64_t i = 0; i < n; ++i) g[i * n + i] += go;
    });
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias, double eps) {
  require_2d(x, "layer_norm");
  const std::int64_t n = x.rows(), d = x.cols();
  if (d == 0) throw DimensionError("layer_norm: zero feature width");
  if (eps <= 0.0) throw UsageError("layer_norm: eps must be positive");
  if (gain.rank() != 1 || gain.dim(0) != d || bias.rank() != 1 || bias.dim(0) != d) {
    throw DimensionError("layer_norm: gain/bias " + shape_str(gain.shape()) + "/" +
                         shape_str(bias.shape()) + " vs width " + std::to_string(d));
  }
  Tensor out = Tensor::zeros({n, d});
  std::vector<double> xhat(static_cast<std::size_t>(n * d));
  std::vector<double> inv_std(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < n; ++r) {
    const double* row = x.data() + r * d;
    double mu = 0.0;
    for (std::int64_t j = 0; j < d; ++j) mu += row[j];
    mu /= static_cast<double>(d);
    double var = 0.0;
    for (std::int64_t j = 0; j < d; ++j) {
      const double c = row[j] - mu;
      var += c * c;
    }
    var /= static_cast<double>(d);
    const double is = 1.0 / std::sqrt(var + eps);
    inv_std[static_cast<std::size_t>(r)] = is;
    for (std::int64_t j = 0; j < d; ++j) {
      const double xh = (row[j] - mu) * is;
      xhat[static_cast<std::size_t>(r * d + j)] = xh;
      out.mut(r, j) = gain.at(j) * xh + bias.at(j);
    }
  }
  detail::check_finite(out, "layer_norm");
  if (any_tracked({&x, &gain, &bias})) {
    out.set_requires_grad(true);
    Tensor tx = x, tg = gain, tb = bias, to = out;
    detail::tape_push([tx, tg, tb, to, xhat = std::move(xhat), inv_std = std::move(inv_std),
                       n, d]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      if (tg.requires_grad()) {
        double* g = tg.grad_data();
        for (std::int64_t r = 0; r < n; ++r) {
          for (std::int64_t j = 0; j < d; ++j) {
            g[j] += go[r * d + j] * xhat[static_cast<std::size_t>(r * d + j)];
          }
        }
      }
      if (tb.requires_grad()) {
        double* g = tb.grad_data();
        for (std::int64_t r = 0; r < n; ++r) {
          for (std::int64_t j = 0; j < d; ++j) g[j] += go[r * d + j];
        }
      }
      if (tx.requires_grad()) {
        double* g = tx.grad_data();
        for (std::int64_t r = 0; r < n; ++r) {
          double mean_dxh = 0.0, mean_dxh_xh = 0.0;
          for (std::int64_t j = 0; j < d; ++j) {
            const double dxh = go[r * d + j] * tg.at(j);
            const double xh = xhat[static_cast<std::size_t>(r * d + j)];
            mean_dxh += dxh;
            mean_dxh_xh += dxh * xh;
          }
          mean_dxh /= static_cast<double>(d);
          mean_dxh_xh /= static_cast<double>(d);
          const double is = inv_std[static_cast<std::size_t>(r)];
          for (std::int64_t j = 0; j < d; ++j) {
            const double dxh = go[r * d + j] * tg.at(j);
            const double xh = xhat[static_cast<std::size_t>(r * d + j)];
            g[r * d + j] += is * (dxh - mean_dxh - xh * mean_dxh_xh);
          }
        }
      }
    });
  }
  return out;
}

Tensor l2_normalize_rows(const Tensor& x, double eps) {
  require_2d(x, "l2_normalize_rows");
  const std::int64_t n = x.rows(), d = x.cols();
  Tensor out = Tensor::zeros({n, d});
  std::vector<double> norms(static_cast<std::size_t>(n));
  for (std::int64_t r = 0; r < n; ++r) {
    const double* row = x.data() + r * d;
    double ss = eps;
    for (std::int64_t j = 0; j < d; ++j) ss += row[j] * row[j];
    const double nr = std::sqrt(ss);
    norms[static_cast<std::size_t>(r)] = nr;
    for (std::int64_t j = 0; j < d; ++j) out.mut(r, j) = row[j] / nr;
  }
  detail::check_finite(out, "l2_normalize_rows");
  if (any_tracked({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    detail::tape_push([tx, to, norms = std::move(norms), n, d]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      double* g = tx.grad_data();
      for (std::int64_t r = 0; r < n; ++r) {
        const double nr = norms[static_cast<std::size_t>(r)];
        double dot = 0.0;
        for (std::int64_t j = 0; j < d; ++j) dot += go[r * d + j] * tx.at(r, j);
        for (std::int64_t j = 0; j < d; ++j) {
          g[r * d + j] += go[r * d + j] / nr - tx.at(r, j) * dot / (nr * nr * nr);
        }
      }
    });
  }
  return out;
}

Tensor gelu(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    const double v = x.at(i);
    out.mut(i) = 0.5 * v * (1.0 + std::erf(v * kInvSqrt2));
  }
  detail::check_finite(out, "gelu");
  if (any_tracked({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    detail::tape_push([tx, to]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      double* g = tx.grad_data();
      for (std::int64_t i = 0; i < tx.numel(); ++i) {
        const double v = tx.at(i);
        const double cdf = 0.5 * (1.0 + std::erf(v * kInvSqrt2));
        const double pdf = kInvSqrt2Pi * std::exp(-0.5 * v * v);
        g[i] += go[i] * (cdf + v * pdf);
      }
    });
  }
  return out;
}

Tensor sigmoid(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mut(i) = 1.0 / (1.0 + std::exp(-x.at(i)));
  detail::check_finite(out, "sigmoid");
  if (any_tracked({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    detail::tape_push([tx, to]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      double* g = tx.grad_data();
      for (std::int64_t i = 0; i < tx.numel(); ++i) {
        const double s = to.at(i);
        g[i] += go[i] * s * (1.0 - s);
      }
    });
  }
  return out;
}

Tensor tanh(const Tensor& x) {
  Tensor out = Tensor::zeros(x.shape());
  const std::int64_t n = x.numel();
  for (std::int64_t i = 0; i < n; ++i) out.mut(i) = std::tanh(x.at(i));
  detail::check_finite(out, "tanh");
  if (any_tracked({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    detail::tape_push([tx, to]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      double* g = tx.grad_data();
      for (std::int64_t i = 0; i < tx.numel(); ++i) {
        const double t = to.at(i);
        g[i] += go[i] * (1.0 - t * t);
      }
    });
  }
  return out;
}

Tensor dropout(const Tensor& x, double rate, bool training, std::uint64_t seed) {
  if (rate < 0.0 || rate >= 1.0) throw UsageError("dropout: rate must be in [0, 1)");
  if (!training || rate == 0.0) return x;
  Rng rng(seed);
  const std::int64_t n = x.numel();
  const double keep = 1.0 - rate;
  std::vector<double> mask(static_cast<std::size_t>(n));
  Tensor out = Tensor::zeros(x.shape());
  for (std::int64_t i = 0; i < n; ++i) {
    const double m = rng.uniform() >= rate ? 1.0 / keep : 0.0;
    mask[static_cast<std::size_t>(i)] = m;
    out.mut(i) = x.at(i) * m;
  }
  if (any_tracked({&x})) {
    out.set_requires_grad(true);
    Tensor tx = x, to = out;
    detail::tape_push([tx, to, mask = std::move(mask)]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      double* g = tx.grad_data();
      for (std::int64_t i = 0; i < tx.numel(); ++i) {
        g[i] += go[i] * mask[static_cast<std::size_t>(i)];
      }
    });
  }
  return out;
}

Tensor causal_depthwise_conv(const Tensor& x, const Tensor& w, const Tensor& bias) {
  require_2d(x, "causal_depthwise_conv");
  require_2d(w, "causal_depthwise_conv");
  const std::int64_t n = x.rows(), d = x.cols(), k = w.cols();
  if (w.rows() != d || bias.rank() != 1 || bias.dim(0) != d) {
    throw DimensionError("causal_depthwise_conv: weights " + shape_str(w.shape()) +
                         " bias " + shape_str(bias.shape()) + " vs input " +
                         shape_str(x.shape()));
  }
  Tensor out = Tensor::zeros({n, d});
  for (std::int64_t t = 0; t < n; ++t) {
    for (std::int64_t c = 0; c < d; ++c) {
      double acc = bias.at(c);
      const std::int64_t kmax = std::min<std::int64_t>(k, t + 1);
      for (std::int64_t j = 0; j < kmax; ++j) acc += w.at(c, j) * x.at(t - j, c);
      out.mut(t, c) = acc;
    }
  }
  detail::check_finite(out, "causal_depthwise_conv");
  if (any_tracked({&x, &w, &bias})) {
    out.set_requires_grad(true);
    Tensor tx = x, tw = w, tb = bias, to = out;
    detail::tape_push([tx, tw, tb, to, n, d, k]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      for (std::int64_t t = 0; t < n; ++t) {
        for (std::int64_t c = 0; c < d; ++c) {
          const double g = go[t * d + c];
          if (tb.requires_grad()) tb.grad_data()[c] += g;
          const std::int64_t kmax = std::min<std::int64_t>(k, t + 1);
          for (std::int64_t j = 0; j < kmax; ++j) {
            if (tw.requires_grad()) tw.grad_data()[c * k + j] += g * tx.at(t - j, c);
            if (tx.requires_grad()) tx.grad_data()[(t - j) * d + c] += g * tw.at(c, j);
          }
        }
      }
    });
  }
  return out;
}

} // namespace engage
