// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <optional>

#include "engage/pipeline.hpp"

namespace engage {

struct ModelConfig {
  std::int64_t d = 16;        // common per-cue projected width
  std::int64_t k_audio = 32;  // audio group embedding width
  std::int64_t k_visual = 32; // visual group embedding width
  std::int64_t layers = 4;
  std::int64_t ctx_layers = 4;
  std::int64_t d_state = 16;
  std::int64_t chunk_size = 32;
  std::int64_t conv_kernel = 4;
  int heads = 1;
  int ffn_expansion = 2;
  double dropout = 0.1;
  bool selective = false;
  bool ctx_identity = false;    // bypass the context stacks (debug/ablation)
  bool modality_fusion = true;  // false: single stack over all five cues
  bool partner_fusion = true;   // false: predict from target embeddings alone
  Backend backend = Backend::hybrid;
  bool bounded_head = true; // sigmoid output, engagement labels live in [0,1]
  std::uint64_t init_seed = 1;

  MambaBlockConfig block_cfg(std::int64_t width) const;
  std::int64_t fused_width() const { return k_audio + k_visual; }
  void validate() const;
};

struct GroupEmbeddings {
  Tensor audio;  // n x k_audio (or the unified embedding when modality fusion is off)
  Tensor visual; // n x k_visual (undefined when modality fusion is off)
};

struct PartnerContext {
  Tensor audio_ctx;  // (M-1)n x k_audio
  Tensor visual_ctx; // (M-1)n x k_visual
  std::vector<int> order;
};

// Frame-axis concatenation of partner embeddings, intra-person order kept.
// partner_ids must not contain the target.
PartnerContext assemble_partner_context(const std::vector<GroupEmbeddings>& partners,
                                        const std::vector<int>& partner_ids, int target_id);

// Pre-norm residual cross-attention followed by a pre-norm residual FFN;
// queries come from the target frames, keys/values from the context rows.
struct CrossAttnBlock {
  AttnParams attn;
  Tensor norm1_g, norm1_b;
  Tensor norm2_g, norm2_b;
  Tensor ffn_w1, ffn_b1, ffn_w2, ffn_b2;

  static CrossAttnBlock init(std::int64_t k, int heads, int expansion, Rng& rng);
  Tensor forward(const Tensor& x, const Tensor& ctx) const;
  void visit_params(const std::string& prefix, const ParamVisitor& fn) const;
};

// Width projection into the group embedding space followed by a stack of
// width-preserving blocks.
struct GroupEncoder {
  Tensor proj_w, proj_b;
  MambaStack stack;

  static GroupEncoder init(std::int64_t in_width, std::int64_t k, std::int64_t layers,
                           const MambaBlockConfig& cfg, Rng& rng);
  Tensor forward(const Tensor& x, const FwdCtx& ctx) const;
  void visit_params(const std::string& prefix, const ParamVisitor& fn) const;
};

struct CueEncoder {
  Tensor proj_w, proj_b;
  MambaBlock block;
};

struct ForwardResult {
  Tensor prediction; // n x 1 for the target participant
  std::vector<GroupEmbeddings> embeddings; // all participants, session order
};

struct Model {
  ModelConfig cfg;
  std::vector<CueEncoder> cues; // one per cue, fixed order
  std::optional<GroupEncoder> audio_group, visual_group;
  std::optional<GroupEncoder> unified_group;
  std::optional<MambaStack> ctx_audio, ctx_visual;
  std::optional<CrossAttnBlock> xattn_audio, xattn_visual;
  // shared contrastive projection, created only when k_audio != k_visual
  Tensor align_proj_audio, align_proj_visual;
  Tensor fuse_gain, fuse_bias;
  Tensor head_w1, head_b1, head_w2, head_b2;

  static Model init(const ModelConfig& cfg);

  GroupEmbeddings encode_participant(const ParticipantFrames& p, const FwdCtx& ctx) const;
  ForwardResult forward(const SessionFrames& session, int target, const FwdCtx& ctx) const;
  // Width-matched (audio, visual) embedding pairs for the alignment loss,
  // restricted to window rows [lo, hi); applies the shared projection when
  // the group widths differ.
  std::vector<std::pair<Tensor, Tensor>> alignment_pairs(
      const std::vector<GroupEmbeddings>& embeddings, std::int64_t lo, std::int64_t hi) const;
  void visit_params(const ParamVisitor& fn) const;
  std::int64_t param_count() const;
};

} // namespace engage
