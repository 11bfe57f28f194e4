// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <functional>
#include <string>
#include <vector>

#include "engage/attention.hpp"
#include "engage/ssm.hpp"

namespace engage {

enum class Backend { hybrid, attention };

Backend backend_from_string(const std::string& s);
std::string backend_to_string(Backend b);

struct MambaBlockConfig {
  std::int64_t width = 32;
  std::int64_t d_state = 16;
  std::int64_t chunk_size = 32;
  std::int64_t conv_kernel = 4;
  int heads = 1;
  int ffn_expansion = 2;
  double dropout = 0.1;
  bool selective = false;
  Backend backend = Backend::hybrid;
};

// Per-forward context: eval mode makes dropout the identity; training mode
// draws one seed per dropout site from the provided stream.
struct FwdCtx {
  bool training = false;
  Rng* dropout_rng = nullptr;

  std::uint64_t next_seed() const {
    if (!training) return 0;
    if (!dropout_rng) throw UsageError("forward: training mode requires a dropout rng");
    return dropout_rng->next_u64();
  }
};

using ParamVisitor = std::function<void(const std::string&, Tensor)>;

// Hybrid sequence-mixing block: chunk-local attention in parallel with a
// causal SSM branch, merged into the residual stream, then a pre-norm FFN.
// Width and frame count are preserved. backend == attention drops the SSM
// branch and attends over the whole sequence instead (ablation baseline).
struct MambaBlock {
  MambaBlockConfig cfg;
  AttnParams attn;
  SsmParams ssm;
  Tensor conv_w, conv_b;         // depthwise causal conv on the SSM input
  Tensor ssm_proj_w, ssm_proj_b; // projection of the SSM branch output
  Tensor norm_gain, norm_bias;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;
  Tensor gate_in_w, gate_in_b, gate_out_w, gate_out_b; // selective mode only

  static MambaBlock init(const MambaBlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, const FwdCtx& ctx) const;
  void visit_params(const std::string& prefix, const ParamVisitor& fn) const;
};

struct MambaStack {
  std::vector<MambaBlock> blocks;

  static MambaStack init(std::int64_t layers, const MambaBlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, const FwdCtx& ctx) const;
  void visit_params(const std::string& prefix, const ParamVisitor& fn) const;
};

// Exact scalar-parameter count by enumeration through the visitor.
template <class Module>
std::int64_t param_count(const Module& m) {
  std::int64_t n = 0;
  m.visit_params("m", [&](const std::string&, Tensor t) { n += t.numel(); });
  return n;
}

} // namespace engage
