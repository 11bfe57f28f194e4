// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <array>
#include <string>
#include <vector>

#include "engage/block.hpp"
#include "engage/tensor.hpp"

namespace engage {

// The five per-participant cue streams. Audio cues run at the high rate,
// visual cues at a quarter of it; widths are fixed.
inline constexpr int kNumCues = 5;
struct CueInfo {
  const char* name;
  std::int64_t width;
  bool high_rate;
};
const std::array<CueInfo, kNumCues>& cue_table();
std::int64_t total_cue_width(); // 2477

struct CueStream {
  Tensor data; // frames x width
  double rate = 0.0;
};

struct CueSet {
  std::array<CueStream, kNumCues> streams;
  double duration = 0.0; // seconds
};

struct SessionParticipant {
  std::string id;
  CueSet cues;
};

// One recorded conversation: M participants, per-frame engagement labels at
// the high-rate frame count.
struct SessionBatch {
  std::string id;
  std::vector<SessionParticipant> participants;
  Tensor labels; // frames x M
  std::int64_t frames = 0;
  int target_index = 0;
};

// Streams resampled to the common frame count, ready for the model.
struct ParticipantFrames {
  std::array<Tensor, kNumCues> cues;
};
struct SessionFrames {
  std::string id;
  std::vector<std::string> participant_ids;
  std::vector<ParticipantFrames> participants;
  Tensor labels; // frames x M
  std::int64_t frames = 0;
};

// Linear interpolation along the frame axis, endpoints preserved; a single
// input frame repeats.
Tensor resample_linear(const Tensor& stream, std::int64_t target_len);

// frames x w -> frames x d per-frame affine map.
Tensor project_cue(const Tensor& stream, const Tensor& w, const Tensor& bias);

// Single-block sequence encoding, frame count and width preserved.
Tensor encode_cue(const Tensor& stream, const MambaBlock& block, const FwdCtx& ctx);

// Fixed-order feature concatenation: audio = [ege || w2v] (width 2d),
// visual = [clip || of || of2] (width 3d).
struct ModalityGroups {
  Tensor audio;
  Tensor visual;
};
ModalityGroups build_modality_groups(const std::array<Tensor, kNumCues>& encoded);

SessionFrames align_session(const SessionBatch& session);
// Zero-padded window slice [start, start+len) of aligned streams and labels.
SessionFrames slice_window(const SessionFrames& s, std::int64_t start, std::int64_t len);

struct SynthConfig {
  std::uint64_t seed = 7;
  int participants = 2;
  std::int64_t frames = 192; // at the high rate
  double noise = 0.25;       // additive feature noise stdev
  double rate_hi = 8.0;
  double rate_lo = 2.0; // 4:1 ratio kept from the real cue layout
  // Seed of the latent->feature affine map. Held fixed across sessions so
  // the cue semantics generalize; per-session variation lives in the
  // trajectories and the noise.
  std::uint64_t mapping_seed = 0xEE5EED;
};

// Deterministic synthetic dialogue: each participant follows a smooth latent
// engagement trajectory in [0,1]; every cue column is an affine view of the
// latent plus noise, labels are the trajectories themselves.
SessionBatch generate_synthetic_session(const SynthConfig& cfg, const std::string& id);

// Session directory layout: <dir>/<pid>/<cue>.tnsr, <dir>/labels.tnsr and a
// plain key=value <dir>/meta file.
void save_session(const std::string& dir, const SessionBatch& s);
SessionBatch load_session(const std::string& dir);

} // namespace engage
