// SPDX-License-Identifier: Apache-2.0
#include "engage/pipeline.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>

#include "engage/tnsr.hpp"

namespace engage {

namespace fs = std::filesystem;

const std::array<CueInfo, kNumCues>& cue_table() {
  static const std::array<CueInfo, kNumCues> table = {{
      {"ege", 88, true},
      {"w2v", 1024, true},
      {"clip", 512, false},
      {"of", 714, false},
      {"of2", 139, false},
  }};
  return table;
}

std::int64_t total_cue_width() {
  std::int64_t w = 0;
  for (const auto& c : cue_table()) w += c.width;
  return w;
}

Tensor resample_linear(const Tensor& stream, std::int64_t target_len) {
  if (stream.rank() != 2 || stream.rows() < 1) {
    throw DataError("resample_linear: empty or non-2D stream");
  }
  if (target_len < 1) throw UsageError("resample_linear: target length must be positive");
  const std::int64_t m = stream.rows(), w = stream.cols();
  if (m == target_len) return stream;
  Tensor out = Tensor::zeros({target_len, w});
  const bool tracked = detail::track(stream);
  std::vector<std::pair<std::int64_t, double>> sources(static_cast<std::size_t>(target_len));
  for (std::int64_t i = 0; i < target_len; ++i) {
    double pos = 0.0;
    if (target_len > 1 && m > 1) {
      pos = static_cast<double>(i) * static_cast<double>(m - 1) /
            static_cast<double>(target_len - 1);
    }
    std::int64_t lo = static_cast<std::int64_t>(pos);
    if (lo >= m - 1) lo = m - 1;
    const double frac = pos - static_cast<double>(lo);
    sources[static_cast<std::size_t>(i)] = {lo, frac};
    const std::int64_t hi = std::min(lo + 1, m - 1);
    for (std::int64_t j = 0; j < w; ++j) {
      out.mut(i, j) = (1.0 - frac) * stream.at(lo, j) + frac * stream.at(hi, j);
    }
  }
  detail::check_finite(out, "resample_linear");
  if (tracked) {
    out.set_requires_grad(true);
    Tensor tx = stream, to = out;
    detail::tape_push([tx, to, sources = std::move(sources), m, w]() mutable {
      if (!to.has_grad()) return;
      const double* go = to.grad_data();
      double* g = tx.grad_data();
      for (std::int64_t i = 0; i < to.rows(); ++i) {
        const auto [lo, frac] = sources[static_cast<std::size_t>(i)];
        const std::int64_t hi = std::min(lo + 1, m - 1);
        for (std::int64_t j = 0; j < w; ++j) {
          g[lo * w + j] += (1.0 - frac) * go[i * w + j];
          g[hi * w + j] += frac * go[i * w + j];
        }
      }
    });
  }
  return out;
}

Tensor project_cue(const Tensor& stream, const Tensor& w, const Tensor& bias) {
  return linear(stream, w, bias);
}

Tensor encode_cue(const Tensor& stream, const MambaBlock& block, const FwdCtx& ctx) {
  return block.forward(stream, ctx);
}

ModalityGroups build_modality_groups(const std::array<Tensor, kNumCues>& encoded) {
  const std::int64_t n = encoded[0].rows();
  const std::int64_t d = encoded[0].cols();
  for (const auto& e : encoded) {
    if (e.rows() != n) {
      throw DimensionError("build_modality_groups: frame counts not aligned, " +
                           shape_str(e.shape()) + " vs " + std::to_string(n) + " frames");
    }
    if (e.cols() != d) {
      throw DimensionError("build_modality_groups: encoded widths differ, " +
                           shape_str(e.shape()));
    }
  }
  ModalityGroups g;
  g.audio = concat_cols({encoded[0], encoded[1]});
  g.visual = concat_cols({encoded[2], encoded[3], encoded[4]});
  return g;
}

SessionFrames align_session(const SessionBatch& session) {
  SessionFrames out;
  out.id = session.id;
  out.frames = session.frames;
  out.labels = session.labels;
  for (const auto& p : session.participants) {
    out.participant_ids.push_back(p.id);
    ParticipantFrames pf;
    for (int i = 0; i < kNumCues; ++i) {
      const auto& info = cue_table()[static_cast<std::size_t>(i)];
      const Tensor& data = p.cues.streams[static_cast<std::size_t>(i)].data;
      if (data.cols() != info.width) {
        throw DataError("align_session: cue " + std::string(info.name) + " width " +
                        std::to_string(data.cols()) + ", expected " +
                        std::to_string(info.width));
      }
      pf.cues[static_cast<std::size_t>(i)] = resample_linear(data, session.frames);
    }
    out.participants.push_back(std::move(pf));
  }
  return out;
}

namespace {
Tensor padded_rows(const Tensor& x, std::int64_t start, std::int64_t len) {
  const std::int64_t n = x.rows(), w = x.cols();
  Tensor out = Tensor::zeros({len, w});
  const std::int64_t lo = std::max<std::int64_t>(0, start);
  const std::int64_t hi = std::min(n, start + len);
  for (std::int64_t r = lo; r < hi; ++r) {
    std::copy(x.data() + r * w, x.data() + (r + 1) * w, out.data() + (r - start) * w);
  }
  return out;
}
} // namespace

SessionFrames slice_window(const SessionFrames& s, std::int64_t start, std::int64_t len) {
  SessionFrames out;
  out.id = s.id;
  out.frames = len;
  out.participant_ids = s.participant_ids;
  out.labels = padded_rows(s.labels, start, len);
  out.participants.reserve(s.participants.size());
  for (const auto& p : s.participants) {
    ParticipantFrames pf;
    for (int i = 0; i < kNumCues; ++i) {
      pf.cues[static_cast<std::size_t>(i)] =
          padded_rows(p.cues[static_cast<std::size_t>(i)], start, len);
    }
    out.participants.push_back(std::move(pf));
  }
  return out;
}

namespace {

// Smooth latent trajectory: a low-frequency sinusoid mix around 0.5,
// clipped to [0,1]. Frequencies are in cycles per 96 high-rate frames so
// the per-frame delta stays below 0.05 regardless of session length.
struct LatentTrajectory {
  std::array<double, 3> amp, freq, phase;

  static LatentTrajectory draw(Rng& rng) {
    LatentTrajectory t;
    double asum = 0.0;
    for (int k = 0; k < 3; ++k) {
      t.amp[static_cast<std::size_t>(k)] = rng.uniform(0.5, 1.0);
      asum += t.amp[static_cast<std::size_t>(k)];
      t.freq[static_cast<std::size_t>(k)] = rng.uniform(0.3, 1.2);
      t.phase[static_cast<std::size_t>(k)] = rng.uniform(0.0, 6.283185307179586);
    }
    for (int k = 0; k < 3; ++k) t.amp[static_cast<std::size_t>(k)] *= 0.45 / asum;
    return t;
  }

  double at(double hi_frame) const {
    double v = 0.5;
    for (int k = 0; k < 3; ++k) {
      v += amp[static_cast<std::size_t>(k)] *
           std::sin(6.283185307179586 * freq[static_cast<std::size_t>(k)] * hi_frame / 96.0 +
                    phase[static_cast<std::size_t>(k)]);
    }
    return std::clamp(v, 0.0, 1.0);
  }
};

} // namespace

SessionBatch generate_synthetic_session(const SynthConfig& cfg, const std::string& id) {
  if (cfg.participants < 2) {
    throw ConfigError("generate_synthetic_session: a dialogue needs at least 2 participants, got " +
                      std::to_string(cfg.participants));
  }
  if (cfg.frames < 1) throw ConfigError("generate_synthetic_session: frames must be positive");
  Rng rng(cfg.seed);
  const std::int64_t n = cfg.frames;
  const double duration = static_cast<double>(n) / cfg.rate_hi;
  const std::int64_t n_lo =
      std::max<std::int64_t>(1, static_cast<std::int64_t>(std::llround(cfg.rate_lo * duration)));

  // Session-independent affine view of the latent: per column, a gain of
  // magnitude >= 0.3 with random sign plus an offset.
  Rng map_rng(cfg.mapping_seed);
  std::array<std::vector<double>, kNumCues> gains, offsets;
  for (int i = 0; i < kNumCues; ++i) {
    const std::int64_t w = cue_table()[static_cast<std::size_t>(i)].width;
    gains[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(w));
    offsets[static_cast<std::size_t>(i)].resize(static_cast<std::size_t>(w));
    for (std::int64_t j = 0; j < w; ++j) {
      const double mag = map_rng.uniform(0.3, 1.0);
      gains[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          map_rng.uniform() < 0.5 ? mag : -mag;
      offsets[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)] =
          map_rng.uniform(-0.5, 0.5);
    }
  }

  SessionBatch s;
  s.id = id;
  s.frames = n;
  s.target_index = 0;
  s.labels = Tensor::zeros({n, cfg.participants});

  for (int p = 0; p < cfg.participants; ++p) {
    LatentTrajectory latent = LatentTrajectory::draw(rng);
    for (std::int64_t t = 0; t < n; ++t) {
      s.labels.mut(t, p) = latent.at(static_cast<double>(t));
    }
    SessionParticipant part;
    part.id = "p" + std::to_string(p);
    part.cues.duration = duration;
    for (int i = 0; i < kNumCues; ++i) {
      const auto& info = cue_table()[static_cast<std::size_t>(i)];
      const std::int64_t rows = info.high_rate ? n : n_lo;
      const double step = info.high_rate
                              ? 1.0
                              : static_cast<double>(n - 1) / static_cast<double>(std::max<std::int64_t>(1, n_lo - 1));
      Tensor data = Tensor::zeros({rows, info.width});
      for (std::int64_t j = 0; j < info.width; ++j) {
        const double gain = gains[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        const double offset = offsets[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)];
        for (std::int64_t r = 0; r < rows; ++r) {
          const double lv = latent.at(static_cast<double>(r) * step);
          data.mut(r, j) = gain * lv + offset + cfg.noise * rng.normal();
        }
      }
      part.cues.streams[static_cast<std::size_t>(i)] = {std::move(data),
                                                        info.high_rate ? cfg.rate_hi : cfg.rate_lo};
    }
    s.participants.push_back(std::move(part));
  }
  return s;
}

void save_session(const std::string& dir, const SessionBatch& s) {
  fs::create_directories(dir);
  for (const auto& p : s.participants) {
    fs::create_directories(dir + "/" + p.id);
    for (int i = 0; i < kNumCues; ++i) {
      save_tnsr(dir + "/" + p.id + "/" + cue_table()[static_cast<std::size_t>(i)].name + ".tnsr",
                p.cues.streams[static_cast<std::size_t>(i)].data);
    }
  }
  save_tnsr(dir + "/labels.tnsr", s.labels);
  std::vector<std::pair<std::string, std::string>> meta;
  meta.emplace_back("m", std::to_string(s.participants.size()));
  meta.emplace_back("frames", std::to_string(s.frames));
  meta.emplace_back("target", s.participants[static_cast<std::size_t>(s.target_index)].id);
  std::string ids;
  for (const auto& p : s.participants) {
    if (!ids.empty()) ids += ",";
    ids += p.id;
  }
  meta.emplace_back("participants", ids);
  double rate_hi = 0.0, rate_lo = 0.0;
  for (int i = 0; i < kNumCues; ++i) {
    const auto& st = s.participants[0].cues.streams[static_cast<std::size_t>(i)];
    (cue_table()[static_cast<std::size_t>(i)].high_rate ? rate_hi : rate_lo) = st.rate;
  }
  meta.emplace_back("rate_hi", std::to_string(rate_hi));
  meta.emplace_back("rate_lo", std::to_string(rate_lo));
  save_kv(dir + "/meta", meta);
}

SessionBatch load_session(const std::string& dir) {
  auto meta = load_kv(dir + "/meta");
  const auto need = [&](const std::string& k) -> std::string {
    auto it = meta.find(k);
    if (it == meta.end()) throw DataError("load_session: meta key '" + k + "' missing in " + dir);
    return it->second;
  };
  SessionBatch s;
  s.id = fs::path(dir).filename().string();
  s.frames = std::stoll(need("frames"));
  const double rate_hi = std::stod(need("rate_hi"));
  const double rate_lo = std::stod(need("rate_lo"));
  const std::string target = need("target");
  std::string ids = need("participants");

  std::vector<std::string> pid_list;
  std::size_t pos = 0;
  while (pos <= ids.size()) {
    const auto comma = ids.find(',', pos);
    pid_list.push_back(ids.substr(pos, comma == std::string::npos ? std::string::npos : comma - pos));
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (pid_list.size() < 2) throw DataError("load_session: fewer than 2 participants in " + dir);

  s.labels = load_tnsr(dir + "/labels.tnsr");
  if (s.labels.rank() != 2 || s.labels.rows() != s.frames ||
      s.labels.cols() != static_cast<std::int64_t>(pid_list.size())) {
    throw DataError("load_session: labels " + shape_str(s.labels.shape()) + " inconsistent with meta in " + dir);
  }

  for (std::size_t pi = 0; pi < pid_list.size(); ++pi) {
    SessionParticipant part;
    part.id = pid_list[pi];
    if (part.id == target) s.target_index = static_cast<int>(pi);
    part.cues.duration = s.frames > 0 && rate_hi > 0 ? static_cast<double>(s.frames) / rate_hi : 0.0;
    for (int i = 0; i < kNumCues; ++i) {
      const auto& info = cue_table()[static_cast<std::size_t>(i)];
      Tensor data = load_tnsr(dir + "/" + part.id + "/" + std::string(info.name) + ".tnsr");
      if (data.cols() != info.width) {
        throw DataError("load_session: cue " + std::string(info.name) + " width " +
                        std::to_string(data.cols()) + " in " + dir);
      }
      const double rate = info.high_rate ? rate_hi : rate_lo;
      const auto expect = static_cast<std::int64_t>(std::llround(rate * part.cues.duration));
      if (data.rows() == expect + 1) {
        // trailing frame dropped on a one-off rate mismatch
        data = slice_rows(data, 0, expect);
      } else if (std::llabs(data.rows() - expect) > 1) {
        throw DataError("load_session: cue " + std::string(info.name) + " has " +
                        std::to_string(data.rows()) + " frames, expected about " +
                        std::to_string(expect) + " in " + dir);
      }
      part.cues.streams[static_cast<std::size_t>(i)] = {std::move(data), rate};
    }
    s.participants.push_back(std::move(part));
  }
  return s;
}

} // namespace engage
