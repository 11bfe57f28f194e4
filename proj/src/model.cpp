// SPDX-License-Identifier: Apache-2.0
#include "engage/model.hpp"

#include <cmath>

namespace engage {

MambaBlockConfig ModelConfig::block_cfg(std::int64_t width) const {
  MambaBlockConfig b;
  b.width = width;
  b.d_state = d_state;
  b.chunk_size = chunk_size;
  b.conv_kernel = conv_kernel;
  b.heads = heads;
  b.ffn_expansion = ffn_expansion;
  b.dropout = dropout;
  b.selective = selective;
  b.backend = backend;
  return b;
}

void ModelConfig::validate() const {
  if (d <= 0 || k_audio <= 0 || k_visual <= 0 || layers <= 0 || ctx_layers <= 0 ||
      d_state <= 0 || chunk_size <= 0 || conv_kernel <= 0 || heads <= 0 ||
      ffn_expansion <= 0) {
    throw ConfigError("model config: all sizes must be positive");
  }
  if (dropout < 0.0 || dropout >= 1.0) throw ConfigError("model config: dropout must be in [0,1)");
}

PartnerContext assemble_partner_context(const std::vector<GroupEmbeddings>& partners,
                                        const std::vector<int>& partner_ids, int target_id) {
  if (partners.empty()) throw UsageError("assemble_partner_context: empty partner set");
  if (partners.size() != partner_ids.size()) {
    throw UsageError("assemble_partner_context: ids and embeddings disagree");
  }
  const std::int64_t n = partners[0].audio.rows();
  std::vector<Tensor> audio, visual;
  for (std::size_t i = 0; i < partners.size(); ++i) {
    if (partner_ids[i] == target_id) {
      throw UsageError("assemble_partner_context: target " + std::to_string(target_id) +
                       " present in partner list");
    }
    if (partners[i].audio.rows() != n ||
        (partners[i].visual.defined() && partners[i].visual.rows() != n)) {
      throw DimensionError("assemble_partner_context: partner frame counts not aligned");
    }
    audio.push_back(partners[i].audio);
    if (partners[i].visual.defined()) visual.push_back(partners[i].visual);
  }
  PartnerContext ctx;
  ctx.order = partner_ids;
  ctx.audio_ctx = concat_rows(audio);
  if (visual.size() == partners.size()) ctx.visual_ctx = concat_rows(visual);
  return ctx;
}

CrossAttnBlock CrossAttnBlock::init(std::int64_t k, int heads, int expansion, Rng& rng) {
  CrossAttnBlock b;
  b.attn = AttnParams::init(k, heads, rng);
  b.norm1_g = Tensor::full({k}, 1.0, true);
  b.norm1_b = Tensor::zeros({k}, true);
  b.norm2_g = Tensor::full({k}, 1.0, true);
  b.norm2_b = Tensor::zeros({k}, true);
  const std::int64_t h = k * expansion;
  const double sk = 1.0 / std::sqrt(static_cast<double>(k));
  b.ffn_w1 = Tensor::randn({k, h}, rng, sk, true);
  b.ffn_b1 = Tensor::zeros({h}, true);
  b.ffn_w2 = Tensor::randn({h, k}, rng, 1.0 / std::sqrt(static_cast<double>(h)), true);
  b.ffn_b2 = Tensor::zeros({k}, true);
  return b;
}

Tensor CrossAttnBlock::forward(const Tensor& x, const Tensor& ctx) const {
  if (x.cols() != ctx.cols()) {
    throw DimensionError("cross attention: query width " + shape_str(x.shape()) +
                         " vs context " + shape_str(ctx.shape()));
  }
  Tensor x_hat = add(x, projected_attention(layer_norm(x, norm1_g, norm1_b), ctx, attn));
  Tensor ffn_in = layer_norm(x_hat, norm2_g, norm2_b);
  Tensor h = gelu(linear(ffn_in, ffn_w1, ffn_b1));
  return add(x_hat, linear(h, ffn_w2, ffn_b2));
}

void CrossAttnBlock::visit_params(const std::string& prefix, const ParamVisitor& fn) const {
  attn.visit_params(prefix + ".attn", fn);
  fn(prefix + ".norm1.gain", norm1_g);
  fn(prefix + ".norm1.bias", norm1_b);
  fn(prefix + ".norm2.gain", norm2_g);
  fn(prefix + ".norm2.bias", norm2_b);
  fn(prefix + ".ffn.w1", ffn_w1);
  fn(prefix + ".ffn.b1", ffn_b1);
  fn(prefix + ".ffn.w2", ffn_w2);
  fn(prefix + ".ffn.b2", ffn_b2);
}

GroupEncoder GroupEncoder::init(std::int64_t in_width, std::int64_t k, std::int64_t layers,
                                const MambaBlockConfig& cfg, Rng& rng) {
  GroupEncoder g;
  g.proj_w = Tensor::randn({in_width, k}, rng, 1.0 / std::sqrt(static_cast<double>(in_width)), true);
  g.proj_b = Tensor::zeros({k}, true);
  g.stack = MambaStack::init(layers, cfg, rng);
  return g;
}

Tensor GroupEncoder::forward(const Tensor& x, const FwdCtx& ctx) const {
  if (x.cols() != proj_w.rows()) {
    throw DimensionError("group encoder: input " + shape_str(x.shape()) + " vs projection " +
                         shape_str(proj_w.shape()));
  }
  return stack.forward(linear(x, proj_w, proj_b), ctx);
}

void GroupEncoder::visit_params(const std::string& prefix, const ParamVisitor& fn) const {
  fn(prefix + ".proj.w", proj_w);
  fn(prefix + ".proj.b", proj_b);
  stack.visit_params(prefix + ".stack", fn);
}

Model Model::init(const ModelConfig& cfg) {
  cfg.validate();
  Rng rng(cfg.init_seed);
  Model m;
  m.cfg = cfg;

  for (int i = 0; i < kNumCues; ++i) {
    const auto& info = cue_table()[static_cast<std::size_t>(i)];
    CueEncoder e;
    e.proj_w = Tensor::randn({info.width, cfg.d}, rng,
                             1.0 / std::sqrt(static_cast<double>(info.width)), true);
    e.proj_b = Tensor::zeros({cfg.d}, true);
    e.block = MambaBlock::init(cfg.block_cfg(cfg.d), rng);
    m.cues.push_back(std::move(e));
  }

  if (cfg.modality_fusion) {
    m.audio_group = GroupEncoder::init(2 * cfg.d, cfg.k_audio, cfg.layers,
                                       cfg.block_cfg(cfg.k_audio), rng);
    m.visual_group = GroupEncoder::init(3 * cfg.d, cfg.k_visual, cfg.layers,
                                        cfg.block_cfg(cfg.k_visual), rng);
  } else {
    m.unified_group = GroupEncoder::init(5 * cfg.d, cfg.fused_width(), cfg.layers,
                                         cfg.block_cfg(cfg.fused_width()), rng);
  }

  if (cfg.partner_fusion) {
    if (cfg.modality_fusion) {
      if (!cfg.ctx_identity) {
        m.ctx_audio = MambaStack::init(cfg.ctx_layers, cfg.block_cfg(cfg.k_audio), rng);
        m.ctx_visual = MambaStack::init(cfg.ctx_layers, cfg.block_cfg(cfg.k_visual), rng);
      }
      m.xattn_audio = CrossAttnBlock::init(cfg.k_audio, cfg.heads, cfg.ffn_expansion, rng);
      m.xattn_visual = CrossAttnBlock::init(cfg.k_visual, cfg.heads, cfg.ffn_expansion, rng);
    } else {
      if (!cfg.ctx_identity) {
        m.ctx_audio = MambaStack::init(cfg.ctx_layers, cfg.block_cfg(cfg.fused_width()), rng);
      }
      m.xattn_audio = CrossAttnBlock::init(cfg.fused_width(), cfg.heads, cfg.ffn_expansion, rng);
    }
  }

  if (cfg.modality_fusion && cfg.k_audio != cfg.k_visual) {
    const std::int64_t kc = std::min(cfg.k_audio, cfg.k_visual);
    m.align_proj_audio = Tensor::randn({cfg.k_audio, kc}, rng,
                                       1.0 / std::sqrt(static_cast<double>(cfg.k_audio)), true);
    m.align_proj_visual = Tensor::randn({cfg.k_visual, kc}, rng,
                                        1.0 / std::sqrt(static_cast<double>(cfg.k_visual)), true);
  }

  const std::int64_t df = cfg.fused_width();
  m.fuse_gain = Tensor::full({df}, 1.0, true);
  m.fuse_bias = Tensor::zeros({df}, true);
  const double sdf = 1.0 / std::sqrt(static_cast<double>(df));
  m.head_w1 = Tensor::randn({df, df}, rng, sdf, true);
  m.head_b1 = Tensor::zeros({df}, true);
  m.head_w2 = Tensor::randn({df, 1}, rng, sdf, true);
  m.head_b2 = Tensor::zeros({1}, true);
  return m;
}

GroupEmbeddings Model::encode_participant(const ParticipantFrames& p, const FwdCtx& ctx) const {
  std::array<Tensor, kNumCues> encoded;
  for (int i = 0; i < kNumCues; ++i) {
    const auto& e = cues[static_cast<std::size_t>(i)];
    Tensor proj = project_cue(p.cues[static_cast<std::size_t>(i)], e.proj_w, e.proj_b);
    encoded[static_cast<std::size_t>(i)] = encode_cue(proj, e.block, ctx);
  }
  GroupEmbeddings out;
  if (cfg.modality_fusion) {
    ModalityGroups g = build_modality_groups(encoded);
    out.audio = audio_group->forward(g.audio, ctx);
    out.visual = visual_group->forward(g.visual, ctx);
  } else {
    std::vector<Tensor> all(encoded.begin(), encoded.end());
    out.audio = unified_group->forward(concat_cols(all), ctx);
  }
  return out;
}

ForwardResult Model::forward(const SessionFrames& session, int target, const FwdCtx& ctx) const {
  const int m_count = static_cast<int>(session.participants.size());
  if (target < 0 || target >= m_count) {
    throw UsageError("forward: unknown target index " + std::to_string(target));
  }
  if (cfg.partner_fusion && m_count < 2) {
    throw UsageError("forward: partner fusion needs at least 2 participants");
  }

  ForwardResult res;
  res.embeddings.reserve(static_cast<std::size_t>(m_count));
  for (const auto& p : session.participants) {
    res.embeddings.push_back(encode_participant(p, ctx));
  }

  const GroupEmbeddings& tgt = res.embeddings[static_cast<std::size_t>(target)];
  Tensor xa, xv;
  if (cfg.partner_fusion) {
    std::vector<GroupEmbeddings> partners;
    std::vector<int> ids;
    for (int p = 0; p < m_count; ++p) {
      if (p == target) continue;
      partners.push_back(res.embeddings[static_cast<std::size_t>(p)]);
      ids.push_back(p);
    }
    PartnerContext pc = assemble_partner_context(partners, ids, target);
    if (cfg.modality_fusion) {
      Tensor actx = cfg.ctx_identity ? pc.audio_ctx : ctx_audio->forward(pc.audio_ctx, ctx);
      Tensor vctx = cfg.ctx_identity ? pc.visual_ctx : ctx_visual->forward(pc.visual_ctx, ctx);
      xa = xattn_audio->forward(tgt.audio, actx);
      xv = xattn_visual->forward(tgt.visual, vctx);
    } else {
      Tensor uctx = cfg.ctx_identity ? pc.audio_ctx : ctx_audio->forward(pc.audio_ctx, ctx);
      xa = xattn_audio->forward(tgt.audio, uctx);
    }
  } else {
    xa = tgt.audio;
    if (cfg.modality_fusion) xv = tgt.visual;
  }

  Tensor fused = cfg.modality_fusion ? concat_cols({xa, xv}) : xa;
  Tensor f = layer_norm(fused, fuse_gain, fuse_bias);
  Tensor h = gelu(linear(f, head_w1, head_b1));
  Tensor y = linear(h, head_w2, head_b2);
  if (cfg.bounded_head) y = sigmoid(y);
  res.prediction = y;
  return res;
}

std::vector<std::pair<Tensor, Tensor>> Model::alignment_pairs(
    const std::vector<GroupEmbeddings>& embeddings, std::int64_t lo, std::int64_t hi) const {
  if (!cfg.modality_fusion) {
    throw UsageError("alignment needs separate audio/visual embeddings (modality fusion is off)");
  }
  std::vector<std::pair<Tensor, Tensor>> pairs;
  pairs.reserve(embeddings.size());
  for (const auto& e : embeddings) {
    Tensor a = slice_rows(e.audio, lo, hi);
    Tensor v = slice_rows(e.visual, lo, hi);
    if (align_proj_audio.defined()) {
      a = matmul(a, align_proj_audio);
      v = matmul(v, align_proj_visual);
    }
    pairs.emplace_back(std::move(a), std::move(v));
  }
  return pairs;
}

void Model::visit_params(const ParamVisitor& fn) const {
  for (int i = 0; i < kNumCues; ++i) {
    const std::string prefix = std::string("cue.") + cue_table()[static_cast<std::size_t>(i)].name;
    const auto& e = cues[static_cast<std::size_t>(i)];
    fn(prefix + ".proj.w", e.proj_w);
    fn(prefix + ".proj.b", e.proj_b);
    e.block.visit_params(prefix + ".block", fn);
  }
  if (audio_group) audio_group->visit_params("audio_group", fn);
  if (visual_group) visual_group->visit_params("visual_group", fn);
  if (unified_group) unified_group->visit_params("unified_group", fn);
  if (ctx_audio) ctx_audio->visit_params("ctx_audio", fn);
  if (ctx_visual) ctx_visual->visit_params("ctx_visual", fn);
  if (xattn_audio) xattn_audio->visit_params("xattn_audio", fn);
  if (xattn_visual) xattn_visual->visit_params("xattn_visual", fn);
  if (align_proj_audio.defined()) {
    fn("align_proj.audio", align_proj_audio);
    fn("align_proj.visual", align_proj_visual);
  }
  fn("fuse.gain", fuse_gain);
  fn("fuse.bias", fuse_bias);
  fn("head.w1", head_w1);
  fn("head.b1", head_b1);
  fn("head.w2", head_w2);
  fn("head.b2", head_b2);
}

std::int64_t Model::param_count() const {
  std::int64_t n = 0;
  visit_params([&](const std::string&, Tensor t) { n += t.numel(); });
  return n;
}

} // namespace engage
