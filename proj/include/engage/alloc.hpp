// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <atomic>
#include <cstddef>
#include <memory>
#include <new>
#include <vector>

namespace engage {

// Byte accounting for tensor buffers. Tracks current live bytes and the
// high-water mark since the last reset, and optionally enforces a hard cap
// so the benchmark harness can turn allocation failure into a reported row
// instead of killing the process.
struct AllocCapExceeded : std::bad_alloc {
  std::size_t requested = 0;
  std::size_t cap = 0;
  const char* what() const noexcept override { return "tensor allocation cap exceeded"; }
};

namespace alloc_stats {
std::size_t current_bytes();
std::size_t peak_bytes();
void reset_peak();
// cap == 0 disables the guard.
void set_cap(std::size_t cap);
std::size_t cap();

void on_alloc(std::size_t bytes); // throws AllocCapExceeded when over cap
void on_free(std::size_t bytes);
} // namespace alloc_stats

template <class T>
struct CountingAlloc {
  using value_type = T;

  CountingAlloc() = default;
  template <class U>
  CountingAlloc(const CountingAlloc<U>&) {}

  T* allocate(std::size_t n) {
    alloc_stats::on_alloc(n * sizeof(T));
    return std::allocator<T>().allocate(n);
  }
  void deallocate(T* p, std::size_t n) {
    alloc_stats::on_free(n * sizeof(T));
    std::allocator<T>().deallocate(p, n);
  }

  template <class U>
  bool operator==(const CountingAlloc<U>&) const { return true; }
  template <class U>
  bool operator!=(const CountingAlloc<U>&) const { return false; }
};

// Backing store for all tensor data and gradient buffers.
using Buffer = std::vector<double, CountingAlloc<double>>;

} // namespace engage
