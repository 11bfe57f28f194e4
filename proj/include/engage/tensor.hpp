// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <functional>
#include <memory>
#include <string>
#include <vector>

#include "engage/alloc.hpp"
#include "engage/errors.hpp"
#include "engage/rng.hpp"

namespace engage {

using Shape = std::vector<std::int64_t>;

std::string shape_str(const Shape& s);

struct TensorImpl {
  Shape shape;
  Buffer data;
  Buffer grad; // empty until the backward pass first touches it
  bool requires_grad = false;
};

// Dense N-dimensional tensor, double precision, row-major contiguous.
// Value-semantic handle over a shared buffer; ops record themselves on a
// thread-local tape when gradients are being tracked.
class Tensor {
 public:
  Tensor() = default;

  static Tensor zeros(Shape shape, bool requires_grad = false);
  static Tensor full(Shape shape, double value, bool requires_grad = false);
  static Tensor scalar(double value, bool requires_grad = false);
  static Tensor from_data(Shape shape, std::vector<double> values,
                          bool requires_grad = false);
  static Tensor randn(Shape shape, Rng& rng, double stdev = 1.0,
                      bool requires_grad = false);
  static Tensor uniform(Shape shape, Rng& rng, double lo, double hi,
                        bool requires_grad = false);
  static Tensor identity(std::int64_t n);

  bool defined() const { return impl_ != nullptr; }
  const Shape& shape() const { return impl_->shape; }
  std::int64_t rank() const { return static_cast<std::int64_t>(impl_->shape.size()); }
  std::int64_t numel() const { return static_cast<std::int64_t>(impl_->data.size()); }
  std::int64_t dim(int i) const { return impl_->shape[static_cast<std::size_t>(i)]; }
  // 2-D conveniences
  std::int64_t rows() const;
  std::int64_t cols() const;

  double* data() { return impl_->data.data(); }
  const double* data() const { return impl_->data.data(); }
  double at(std::int64_t i) const { return impl_->data[static_cast<std::size_t>(i)]; }
  double at(std::int64_t r, std::int64_t c) const {
    return impl_->data[static_cast<std::size_t>(r * cols() + c)];
  }
  double& mut(std::int64_t i) { return impl_->data[static_cast<std::size_t>(i)]; }
  double& mut(std::int64_t r, std::int64_t c) {
    return impl_->data[static_cast<std::size_t>(r * cols() + c)];
  }
  double value() const; // scalar tensors only

  bool requires_grad() const { return impl_->requires_grad; }
  void set_requires_grad(bool rg) { impl_->requires_grad = rg; }

  bool has_grad() const { return impl_ && !impl_->grad.empty(); }
  // Lazily allocates a zeroed gradient buffer.
  double* grad_data();
  const Buffer& grad_buffer() const { return impl_->grad; }
  void zero_grad() { impl_->grad.clear(); }

  // Deep copy of the data, detached from any graph history.
  Tensor clone() const;
  // Overwrite this tensor's data in place (shapes must match).
  void copy_from(const Tensor& src);

  TensorImpl* impl() const { return impl_.get(); }
  bool same_impl(const Tensor& o) const { return impl_ == o.impl_; }

 private:
  explicit Tensor(std::shared_ptr<TensorImpl> impl) : impl_(std::move(impl)) {}
  static Tensor make(Shape shape);
  std::shared_ptr<TensorImpl> impl_;
};

// --- gradient tracking state (thread local) ---

bool grad_enabled();
struct NoGradGuard {
  NoGradGuard();
  ~NoGradGuard();
  NoGradGuard(const NoGradGuard&) = delete;
 private:
  bool prev_;
};

// Checked mode validates op outputs for NaN/Inf. On by default; the
// benchmark path switches it off.
bool checked_mode();
void set_checked_mode(bool on);

namespace detail {
// True when the op should be recorded for this input.
inline bool track(const Tensor& t) { return grad_enabled() && t.requires_grad(); }
void tape_push(std::function<void()> fn);
std::size_t tape_size();
void tape_clear();
void check_finite(const Tensor& t, const char* op);
// grad[i] += v with lazy allocation
void accum_grad(Tensor& t, const double* contrib, std::int64_t n);
} // namespace detail

// Runs the tape backward from a scalar root, accumulating gradients into
// every requires_grad leaf. The tape is consumed.
void backward(const Tensor& root);

} // namespace engage
