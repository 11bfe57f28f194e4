// SPDX-License-Identifier: Apache-2.0
#include "engage/alloc.hpp"

namespace engage::alloc_stats {

namespace {
std::atomic<std::size_t> g_current{0};
std::atomic<std::size_t> g_peak{0};
std::atomic<std::size_t> g_cap{0};
} // namespace

std::size_t current_bytes() { return g_current.load(std::memory_order_relaxed); }
std::size_t peak_bytes() { return g_peak.load(std::memory_order_relaxed); }

void reset_peak() {
  g_peak.store(g_current.load(std::memory_order_relaxed), std::memory_order_relaxed);
}

void set_cap(std::size_t cap) { g_cap.store(cap, std::memory_order_relaxed); }
std::size_t cap() { return g_cap.load(std::memory_order_relaxed); }

void on_alloc(std::size_t bytes) {
  const std::size_t cur = g_current.fetch_add(bytes, std::memory_order_relaxed) + bytes;
  const std::size_t cap = g_cap.load(std::memory_order_relaxed);
  if (cap != 0 && cur > cap) {
    g_current.fetch_sub(bytes, std::memory_order_relaxed);
    AllocCapExceeded e;
    e.requested = bytes;
    e.cap = cap;
    throw e;
  }
  std::size_t peak = g_peak.load(std::memory_order_relaxed);
  while (cur > peak &&
         !g_peak.compare_exchange_weak(peak, cur, std::memory_order_relaxed)) {
  }
}

void on_free(std::size_t bytes) {
  g_current.fetch_sub(bytes, std::memory_order_relaxed);
}

} // namespace engage::alloc_stats
