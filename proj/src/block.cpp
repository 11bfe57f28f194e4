// SPDX-License-Identifier: Apache-2.0
#include "engage/block.hpp"

#include <cmath>

namespace engage {

Backend backend_from_string(const std::string& s) {
  if (s == "hybrid" || s == "mamba") return Backend::hybrid;
  if (s == "attention") return Backend::attention;
  throw ConfigError("unknown backend '" + s + "' (expected mamba|attention)");
}

std::string backend_to_string(Backend b) {
  return b == Backend::hybrid ? "mamba" : "attention";
}

MambaBlock MambaBlock::init(const MambaBlockConfig& cfg, Rng& rng) {
  if (cfg.width <= 0 || cfg.d_state <= 0 || cfg.chunk_size <= 0 || cfg.conv_kernel <= 0 ||
      cfg.ffn_expansion <= 0) {
    throw ConfigError("mamba block: all sizes must be positive");
  }
  MambaBlock b;
  b.cfg = cfg;
  const std::int64_t d = cfg.width;
  const double sd = 1.0 / std::sqrt(static_cast<double>(d));
  b.attn = AttnParams::init(d, cfg.heads, rng);
  b.ssm = SsmParams::init(d, cfg.d_state, rng);
  b.conv_w = Tensor::randn({d, cfg.conv_kernel}, rng,
                           1.0 / std::sqrt(static_cast<double>(cfg.conv_kernel)), true);
  b.conv_b = Tensor::zeros({d}, true);
  b.ssm_proj_w = Tensor::randn({d, d}, rng, sd, true);
  b.ssm_proj_b = Tensor::zeros({d}, true);
  b.norm_gain = Tensor::full({d}, 1.0, true);
  b.norm_bias = Tensor::zeros({d}, true);
  const std::int64_t h = d * cfg.ffn_expansion;
  b.ffn_w1 = Tensor::randn({d, h}, rng, sd, true);
  b.ffn_b1 = Tensor::zeros({h}, true);
  b.ffn_w2 = Tensor::randn({h, d}, rng, 1.0 / std::sqrt(static_cast<double>(h)), true);
  b.ffn_b2 = Tensor::zeros({d}, true);
  if (cfg.selective) {
    b.gate_in_w = Tensor::randn({d, d}, rng, sd, true);
    b.gate_in_b = Tensor::zeros({d}, true);
    b.gate_out_w = Tensor::randn({d, d}, rng, sd, true);
    b.gate_out_b = Tensor::zeros({d}, true);
  }
  return b;
}

Tensor MambaBlock::forward(const Tensor& x, const FwdCtx& ctx) const {
  if (x.rank() != 2 || x.cols() != cfg.width) {
    throw DimensionError("mamba block: input " + shape_str(x.shape()) + " vs width " +
                         std::to_string(cfg.width));
  }
  Tensor mixed;
  if (cfg.backend == Backend::attention) {
    mixed = projected_attention(x, x, attn);
  } else {
    Tensor y_local = chunked_local_attention(x, attn, cfg.chunk_size);
    Tensor conv_out = causal_depthwise_conv(x, conv_w, conv_b);
    Tensor y_ssm;
    if (cfg.selective) {
      // input/output sigmoid gates make the effective B and C input-dependent
      Tensor u = mul(conv_out, sigmoid(linear(x, gate_in_w, gate_in_b)));
      y_ssm = mul(ssm_scan(u, ssm.effective()), sigmoid(linear(x, gate_out_w, gate_out_b)));
    } else {
      y_ssm = ssm_scan(conv_out, ssm.effective());
    }
    mixed = add(y_local, linear(y_ssm, ssm_proj_w, ssm_proj_b));
  }
  Tensor u = add(x, dropout(mixed, cfg.dropout, ctx.training, ctx.next_seed()));
  Tensor ffn_in = layer_norm(u, norm_gain, norm_bias);
  Tensor h = gelu(linear(ffn_in, ffn_w1, ffn_b1));
  Tensor ffn_out = linear(h, ffn_w2, ffn_b2);
  return add(u, dropout(ffn_out, cfg.dropout, ctx.training, ctx.next_seed()));
}

void MambaBlock::visit_params(const std::string& prefix, const ParamVisitor& fn) const {
  attn.visit_params(prefix + ".attn", fn);
  if (cfg.backend == Backend::hybrid) {
    fn(prefix + ".ssm.a_raw", ssm.a_raw);
    fn(prefix + ".ssm.b", ssm.b);
    fn(prefix + ".ssm.c", ssm.c);
    fn(prefix + ".ssm.d", ssm.d);
    fn(prefix + ".conv.w", conv_w);
    fn(prefix + ".conv.b", conv_b);
    fn(prefix + ".ssm_proj.w", ssm_proj_w);
    fn(prefix + ".ssm_proj.b", ssm_proj_b);
    if (cfg.selective) {
      fn(prefix + ".gate_in.w", gate_in_w);
      fn(prefix + ".gate_in.b", gate_in_b);
      fn(prefix + ".gate_out.w", gate_out_w);
      fn(prefix + ".gate_out.b", gate_out_b);
    }
  }
  fn(prefix + ".norm.gain", norm_gain);
  fn(prefix + ".norm.bias", norm_bias);
  fn(prefix + ".ffn.w1", ffn_w1);
  fn(prefix + ".ffn.b1", ffn_b1);
  fn(prefix + ".ffn.w2", ffn_w2);
  fn(prefix + ".ffn.b2", ffn_b2);
}

MambaStack MambaStack::init(std::int64_t layers, const MambaBlockConfig& cfg, Rng& rng) {
  if (layers <= 0) throw ConfigError("mamba stack: layer count must be positive");
  MambaStack s;
  s.blocks.reserve(static_cast<std::size_t>(layers));
  for (std::int64_t i = 0; i < layers; ++i) s.blocks.push_back(MambaBlock::init(cfg, rng));
  return s;
}

Tensor MambaStack::forward(const Tensor& x, const FwdCtx& ctx) const {
  if (blocks.empty()) throw ConfigError("mamba stack: no layers");
  const std::int64_t w = blocks.front().cfg.width;
  for (const auto& b : blocks) {
    if (b.cfg.width != w) throw ConfigError("mamba stack: inconsistent layer widths");
  }
  Tensor h = x;
  for (const auto& b : blocks) h = b.forward(h, ctx);
  return h;
}

void MambaStack::visit_params(const std::string& prefix, const ParamVisitor& fn) const {
  for (std::size_t i = 0; i < blocks.size(); ++i) {
    blocks[i].visit_params(prefix + ".block" + std::to_string(i), fn);
  }
}

} // namespace engage
