// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <iosfwd>
#include <string>
#include <vector>

#include "engage/block.hpp"

namespace engage {

// Dense scaled dot-product self-attention that deliberately materializes the
// full n x n score matrix (the quadratic baseline). Forward-only; allocation
// of the score buffer is subject to the global byte cap.
Tensor full_attention_forward(const Tensor& x, const AttnParams& p);

// Baseline transformer-style block: dense attention + residual + pre-norm
// FFN, sharing every non-SSM parameter with the hybrid block layout.
Tensor baseline_block_forward(const MambaBlock& b, const Tensor& x);

struct BenchConfig {
  std::vector<std::int64_t> lengths{256, 512, 1024, 2048};
  std::int64_t width = 32;
  std::int64_t chunk = 32;
  std::int64_t d_state = 16;
  int repeats = 5;
  int warmups = 2;
  std::size_t cap_bytes = 0; // 0 = no cap
  std::uint64_t seed = 42;
  // partner benchmark
  std::vector<int> partner_counts{2, 3, 5};
  std::int64_t partner_frames = 256;
  std::int64_t partner_k = 32;
  std::int64_t ctx_layers = 2;
};

struct BenchRow {
  std::string variant; // hybrid | full_attention | context
  int m = 0;           // partner count, 0 for length-scaling rows
  std::int64_t n = 0;
  double time_ms = 0.0;        // median over repeats, after warmups
  std::size_t peak_bytes = 0;  // tensor-buffer high-water mark of one run
  std::int64_t params = 0;
  bool oom = false;
};

// One row per (variant, n): hybrid block vs dense-attention baseline, single
// thread. A run that exceeds cap_bytes becomes an OOM row instead of dying.
std::vector<BenchRow> run_scaling_benchmark(const BenchConfig& cfg);

// Context-path cost (partner concat + context stack + cross-attention) as a
// function of the participant count M at fixed n.
std::vector<BenchRow> partner_scaling_benchmark(const BenchConfig& cfg);

// CSV: variant,m,n,time_ms,peak_bytes,params,status,time_ratio,peak_ratio.
// Ratio columns compare against the same variant's row at half the n (or
// half the M-1); empty when no such row exists.
void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows);
std::vector<BenchRow> parse_bench_csv(std::istream& is);

} // namespace engage
