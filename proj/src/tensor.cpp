// SPDX-License-Identifier: Apache-2.0
#include "engage/tensor.hpp"

#include <cmath>
#include <sstream>

namespace engage {

std::string shape_str(const Shape& s) {
  std::ostringstream os;
  os << "[";
  for (std::size_t i = 0; i < s.size(); ++i) {
    if (i) os << "x";
    os << s[i];
  }
  os << "]";
  return os.str();
}

namespace {
std::int64_t checked_numel(const Shape& shape) {
  std::int64_t n = 1;
  for (auto d : shape) {
    if (d <= 0) throw DimensionError("tensor extents must be positive, got " + shape_str(shape));
    n *= d;
  }
  return n;
}
} // namespace

Tensor Tensor::make(Shape shape) {
  const std::int64_t n = checked_numel(shape);
  auto impl = std::make_shared<TensorImpl>();
  impl->shape = std::move(shape);
  impl->data.assign(static_cast<std::size_t>(n), 0.0);
  return Tensor(std::move(impl));
}

Tensor Tensor::zeros(Shape shape, bool requires_grad) {
  Tensor t = make(std::move(shape));
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::full(Shape shape, double value, bool requires_grad) {
  Tensor t = make(std::move(shape));
  for (auto& v : t.impl_->data) v = value;
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::scalar(double value, bool requires_grad) {
  return full({1}, value, requires_grad);
}

Tensor Tensor::from_data(Shape shape, std::vector<double> values, bool requires_grad) {
  Tensor t = make(std::move(shape));
  if (static_cast<std::int64_t>(values.size()) != t.numel()) {
    throw DimensionError("from_data: " + std::to_string(values.size()) +
                         " values for shape " + shape_str(t.shape()));
  }
  for (std::size_t i = 0; i < values.size(); ++i) t.impl_->data[i] = values[i];
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::randn(Shape shape, Rng& rng, double stdev, bool requires_grad) {
  Tensor t = make(std::move(shape));
  for (auto& v : t.impl_->data) v = stdev * rng.normal();
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::uniform(Shape shape, Rng& rng, double lo, double hi, bool requires_grad) {
  Tensor t = make(std::move(shape));
  for (auto& v : t.impl_->data) v = rng.uniform(lo, hi);
  t.set_requires_grad(requires_grad);
  return t;
}

Tensor Tensor::identity(std::int64_t n) {
  Tensor t = make({n, n});
  for (std::int64_t i = 0; i < n; ++i) t.impl_->data[static_cast<std::size_t>(i * n + i)] = 1.0;
  return t;
}

std::int64_t Tensor::rows() const {
  if (rank() != 2) throw DimensionError("rows(): tensor is not 2-D, shape " + shape_str(shape()));
  return impl_->shape[0];
}

std::int64_t Tensor::cols() const {
  if (rank() != 2) throw DimensionError("cols(): tensor is not 2-D, shape " + shape_str(shape()));
  return impl_->shape[1];
}

double Tensor::value() const {
  if (numel() != 1) throw UsageError("value(): tensor is not scalar, shape " + shape_str(shape()));
  return impl_->data[0];
}

double* Tensor::grad_data() {
  if (impl_->grad.empty()) impl_->grad.assign(impl_->data.size(), 0.0);
  return impl_->grad.data();
}

Tensor Tensor::clone() const {
  Tensor t = make(shape());
  t.impl_->data = impl_->data;
  return t;
}

void Tensor::copy_from(const Tensor& src) {
  if (src.shape() != shape()) {
    throw DimensionError("copy_from: shape mismatch " + shape_str(src.shape()) +
                         " vs " + shape_str(shape()));
  }
  impl_->data = src.impl_->data;
}

// --- thread-local autodiff state ---

namespace {
thread_local bool g_grad_enabled = true;
bool g_checked = true;

struct Tape {
  std::vector<std::function<void()>> entries;
};
thread_local Tape g_tape;
} // namespace

bool grad_enabled() { return g_grad_enabled; }

NoGradGuard::NoGradGuard() : prev_(g_grad_enabled) { g_grad_enabled = false; }
NoGradGuard::~NoGradGuard() { g_grad_enabled = prev_; }

bool checked_mode() { return g_checked; }
void set_checked_mode(bool on) { g_checked = on; }

namespace detail {

void tape_push(std::function<void()> fn) { g_tape.entries.push_back(std::move(fn)); }
std::size_t tape_size() { return g_tape.entries.size(); }
void tape_clear() { g_tape.entries.clear(); }

void check_finite(const Tensor& t, const char* op) {
  if (!g_checked) return;
  const double* p = t.data();
  const std::int64_t n = t.numel();
  for (std::int64_t i = 0; i < n; ++i) {
    if (!std::isfinite(p[i])) {
      throw DataError(std::string(op) + ": non-finite value at index " +
                      std::to_string(i));
    }
  }
}

void accum_grad(Tensor& t, const double* contrib, std::int64_t n) {
  double* g = t.grad_data();
  for (std::int64_t i = 0; i < n; ++i) g[i] += contrib[i];
}

} // namespace detail

void backward(const Tensor& root) {
  if (root.numel() != 1) {
    throw UsageError("backward: root must be scalar, shape " + shape_str(root.shape()));
  }
  if (!root.requires_grad()) {
    throw UsageError("backward: root is not connected to any tracked tensor");
  }
  root.impl()->grad.assign(1, 1.0);
  auto& entries = g_tape.entries;
  for (auto it = entries.rbegin(); it != entries.rend(); ++it) (*it)();
  entries.clear();
}

} // namespace engage
