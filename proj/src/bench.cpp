// SPDX-License-Identifier: Apache-2.0
#include "engage/bench.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <sstream>

#include "engage/model.hpp"

namespace engage {

Tensor full_attention_forward(const Tensor& x, const AttnParams& p) {
  NoGradGuard ng;
  const std::int64_t n = x.rows(), d = x.cols();
  if (p.wq.rows() != d) {
    throw DimensionError("full_attention: weights " + shape_str(p.wq.shape()) +
                         " vs input width " + std::to_string(d));
  }
  Tensor q = matmul(x, p.wq);
  Tensor k = matmul(x, p.wk);
  Tensor v = matmul(x, p.wv);
  const std::int64_t dh = d / p.heads;
  const double sc = 1.0 / std::sqrt(static_cast<double>(dh));
  Tensor mixed = Tensor::zeros({n, d});
  Buffer scores(static_cast<std::size_t>(n) * static_cast<std::size_t>(n));
  for (int h = 0; h < p.heads; ++h) {
    const std::int64_t c0 = h * dh;
    // scores = scale * Qh Kh^T, materialized in full
    for (std::int64_t i = 0; i < n; ++i) {
      const double* qi = q.data() + i * d + c0;
      double* srow = scores.data() + i * n;
      for (std::int64_t j = 0; j < n; ++j) {
        const double* kj = k.data() + j * d + c0;
        double acc = 0.0;
        for (std::int64_t t = 0; t < dh; ++t) acc += qi[t] * kj[t];
        srow[j] = acc * sc;
      }
    }
    // row softmax in place
    for (std::int64_t i = 0; i < n; ++i) {
      double* srow = scores.data() + i * n;
      double mx = srow[0];
      for (std::int64_t j = 1; j < n; ++j) mx = std::max(mx, srow[j]);
      double z = 0.0;
      for (std::int64_t j = 0; j < n; ++j) {
        srow[j] = std::exp(srow[j] - mx);
        z += srow[j];
      }
      for (std::int64_t j = 0; j < n; ++j) srow[j] /= z;
    }
    // probs * Vh
    for (std::int64_t i = 0; i < n; ++i) {
      const double* srow = scores.data() + i * n;
      double* orow = mixed.data() + i * d + c0;
      for (std::int64_t j = 0; j < n; ++j) {
        const double pj = srow[j];
        const double* vj = v.data() + j * d + c0;
        for (std::int64_t t = 0; t < dh; ++t) orow[t] += pj * vj[t];
      }
    }
  }
  return matmul(mixed, p.wo);
}

Tensor baseline_block_forward(const MambaBlock& b, const Tensor& x) {
  Tensor u = add(x, full_attention_forward(x, b.attn));
  Tensor ffn_in = layer_norm(u, b.norm_gain, b.norm_bias);
  Tensor h = gelu(linear(ffn_in, b.ffn_w1, b.ffn_b1));
  return add(u, linear(h, b.ffn_w2, b.ffn_b2));
}

namespace {

struct CapGuard {
  explicit CapGuard(std::size_t cap) { alloc_stats::set_cap(cap); }
  ~CapGuard() { alloc_stats::set_cap(0); }
};

struct CheckedOff {
  CheckedOff() : prev(checked_mode()) { set_checked_mode(false); }
  ~CheckedOff() { set_checked_mode(prev); }
  bool prev;
};

struct Probe {
  BenchRow row;
  std::function<void()> fn;
  std::vector<double> times;
};

// Repeat-major measurement: every repeat touches every row once, so a slow
// machine phase hits all rows alike and cancels out of the derived ratios.
// Rows report the median over repeats; a row that trips the byte cap turns
// into an OOM row and is skipped from then on.
void measure_interleaved(std::vector<Probe>& probes, const BenchConfig& cfg) {
  CapGuard cap(cfg.cap_bytes);
  const auto run_guarded = [&](Probe& p, bool timed) {
    if (p.row.oom) return;
    try {
      alloc_stats::reset_peak();
      const std::size_t base = alloc_stats::current_bytes();
      const auto t0 = std::chrono::steady_clock::now();
      p.fn();
      const auto t1 = std::chrono::steady_clock::now();
      if (timed) {
        p.times.push_back(std::chrono::duration<double, std::milli>(t1 - t0).count());
        if (p.row.peak_bytes == 0) p.row.peak_bytes = alloc_stats::peak_bytes() - base;
      }
    } catch (const AllocCapExceeded&) {
      p.row.oom = true;
      p.row.time_ms = 0.0;
      p.row.peak_bytes = 0;
      p.times.clear();
    }
  };
  for (int w = 0; w < cfg.warmups; ++w) {
    for (auto& p : probes) run_guarded(p, false);
  }
  for (int r = 0; r < cfg.repeats; ++r) {
    for (auto& p : probes) run_guarded(p, true);
  }
  for (auto& p : probes) {
    if (p.row.oom || p.times.empty()) continue;
    std::sort(p.times.begin(), p.times.end());
    p.row.time_ms = p.times[p.times.size() / 2];
  }
}

} // namespace

std::vector<BenchRow> run_scaling_benchmark(const BenchConfig& cfg) {
  for (std::size_t i = 1; i < cfg.lengths.size(); ++i) {
    if (cfg.lengths[i] <= cfg.lengths[i - 1]) {
      throw ConfigError("bench: lengths must be sorted ascending");
    }
  }
  // dormant autograd records from earlier (un-backpropped) forwards would
  // pin their saved tensors and distort both the byte cap and the peaks
  detail::tape_clear();
  NoGradGuard ng;
  CheckedOff co;
  Rng rng(cfg.seed);

  MambaBlockConfig hybrid_cfg;
  hybrid_cfg.width = cfg.width;
  hybrid_cfg.d_state = cfg.d_state;
  hybrid_cfg.chunk_size = cfg.chunk;
  hybrid_cfg.dropout = 0.0;
  MambaBlock hybrid = MambaBlock::init(hybrid_cfg, rng);

  MambaBlockConfig base_cfg = hybrid_cfg;
  base_cfg.backend = Backend::attention;
  MambaBlock baseline = MambaBlock::init(base_cfg, rng);

  const std::int64_t hybrid_params = param_count(hybrid);
  const std::int64_t baseline_params = param_count(baseline);
  FwdCtx ctx{false, nullptr};

  std::vector<Probe> probes;
  std::vector<Tensor> inputs;
  inputs.reserve(cfg.lengths.size());
  for (std::int64_t n : cfg.lengths) inputs.push_back(Tensor::randn({n, cfg.width}, rng));
  for (std::size_t i = 0; i < cfg.lengths.size(); ++i) {
    const Tensor& x = inputs[i];
    Probe h;
    h.row = {"hybrid", 0, cfg.lengths[i], 0.0, 0, hybrid_params, false};
    h.fn = [&hybrid, &x, ctx] { hybrid.forward(x, ctx); };
    probes.push_back(std::move(h));
    Probe f;
    f.row = {"full_attention", 0, cfg.lengths[i], 0.0, 0, baseline_params, false};
    f.fn = [&baseline, &x] { baseline_block_forward(baseline, x); };
    probes.push_back(std::move(f));
  }
  measure_interleaved(probes, cfg);
  std::vector<BenchRow> rows;
  rows.reserve(probes.size());
  for (auto& p : probes) rows.push_back(p.row);
  return rows;
}

std::vector<BenchRow> partner_scaling_benchmark(const BenchConfig& cfg) {
  detail::tape_clear();
  NoGradGuard ng;
  CheckedOff co;
  Rng rng(cfg.seed);
  const std::int64_t k = cfg.partner_k, n = cfg.partner_frames;

  MambaBlockConfig bc;
  bc.width = k;
  bc.d_state = cfg.d_state;
  bc.chunk_size = cfg.chunk;
  bc.dropout = 0.0;
  MambaStack ctx_stack = MambaStack::init(cfg.ctx_layers, bc, rng);
  CrossAttnBlock xattn = CrossAttnBlock::init(k, 1, 2, rng);
  const std::int64_t params = param_count(ctx_stack);
  FwdCtx fctx{false, nullptr};

  Tensor target = Tensor::randn({n, k}, rng);
  struct PartnerSet {
    std::vector<GroupEmbeddings> partners;
    std::vector<int> ids;
  };
  std::vector<PartnerSet> sets;
  for (int m : cfg.partner_counts) {
    if (m < 2) throw ConfigError("bench: partner counts must be >= 2");
    PartnerSet set;
    for (int p = 1; p < m; ++p) {
      set.partners.push_back({Tensor::randn({n, k}, rng), Tensor()});
      set.ids.push_back(p);
    }
    sets.push_back(std::move(set));
  }
  std::vector<Probe> probes;
  for (std::size_t i = 0; i < sets.size(); ++i) {
    const PartnerSet& set = sets[i];
    Probe p;
    p.row = {"context", cfg.partner_counts[i], n, 0.0, 0, params, false};
    p.fn = [&set, &ctx_stack, &xattn, &target, fctx] {
      PartnerContext pc = assemble_partner_context(set.partners, set.ids, 0);
      Tensor enc = ctx_stack.forward(pc.audio_ctx, fctx);
      xattn.forward(target, enc);
    };
    probes.push_back(std::move(p));
  }
  measure_interleaved(probes, cfg);
  std::vector<BenchRow> rows;
  rows.reserve(probes.size());
  for (auto& p : probes) rows.push_back(p.row);
  return rows;
}

namespace {
std::string fmt17(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  return buf;
}
} // namespace

void write_bench_csv(std::ostream& os, const std::vector<BenchRow>& rows) {
  os << "variant,m,n,time_ms,peak_bytes,params,status,time_ratio,peak_ratio\n";
  for (const auto& r : rows) {
    // reference row: same variant at half the scale (n, or M-1 for context rows)
    const BenchRow* ref = nullptr;
    for (const auto& q : rows) {
      if (q.variant != r.variant || q.oom || r.oom) continue;
      const bool half_scale =
          r.m == 0 ? (q.m == 0 && q.n * 2 == r.n) : ((q.m - 1) * 2 == r.m - 1);
      if (half_scale) ref = &q;
    }
    os << r.variant << "," << r.m << "," << r.n << "," << fmt17(r.time_ms) << ","
       << r.peak_bytes << "," << r.params << "," << (r.oom ? "oom" : "ok");
    if (ref && ref->time_ms > 0.0 && ref->peak_bytes > 0) {
      os << "," << fmt17(r.time_ms / ref->time_ms) << ","
         << fmt17(static_cast<double>(r.peak_bytes) / static_cast<double>(ref->peak_bytes));
    } else {
      os << ",,";
    }
    os << "\n";
  }
}

std::vector<BenchRow> parse_bench_csv(std::istream& is) {
  std::vector<BenchRow> rows;
  std::string line;
  if (!std::getline(is, line)) throw DataError("bench csv: empty input");
  while (std::getline(is, line)) {
    if (line.empty()) continue;
    std::vector<std::string> fields;
    std::size_t pos = 0;
    while (pos <= line.size()) {
      const auto comma = line.find(',', pos);
      fields.push_back(line.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
      if (comma == std::string::npos) break;
      pos = comma + 1;
    }
    if (fields.size() < 7) throw DataError("bench csv: bad row '" + line + "'");
    BenchRow r;
    r.variant = fields[0];
    r.m = std::stoi(fields[1]);
    r.n = std::stoll(fields[2]);
    r.time_ms = std::stod(fields[3]);
    r.peak_bytes = static_cast<std::size_t>(std::stoull(fields[4]));
    r.params = std::stoll(fields[5]);
    r.oom = fields[6] == "oom";
    rows.push_back(std::move(r));
  }
  return rows;
}

} // namespace engage
