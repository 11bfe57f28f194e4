// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <string>
#include <vector>

#include "engage/losses.hpp"
#include "engage/model.hpp"

namespace engage {

struct TrainConfig {
  double lr = 5e-5;
  double weight_decay = 0.01;
  std::int64_t batch_windows = 128;
  std::int64_t window = 96;  // central + context on each side
  std::int64_t central = 32; // frames that receive predictions
  std::int64_t warmup_steps = 500;
  double max_grad_norm = 5.0;
  double ema_decay = 0.999;
  std::int64_t epochs = 30;
  std::uint64_t seed = 1;
  LossWeights weights;    // lambda_align == 0 disables the alignment term (ablation)
  AlignmentConfig align;
  double lr_min_ratio = 0.01;
  std::int64_t val_sessions = 1;

  std::int64_t context() const { return (window - central) / 2; }
  void validate() const;
};

struct Window {
  int session = -1;
  int target = -1;
  std::int64_t central_start = 0;
  std::int64_t central_valid = 0; // central frames inside [0, n)
  std::int64_t win_start = 0;     // may be negative (zero-padded)
};

// Central regions tile [0, n) with stride `central`, no gaps or overlaps;
// each window adds `context` frames of (possibly padded) context per side.
std::vector<Window> make_windows(std::int64_t n, std::int64_t central, std::int64_t context);

// Linear warmup to lr, then cosine decay to lr * lr_min_ratio at total_steps.
double lr_schedule(std::int64_t step, const TrainConfig& cfg, std::int64_t total_steps);

// Scales gradients so the global l2 norm is at most max_norm; returns the
// pre-clip norm.
double clip_gradients(const std::vector<Tensor>& params, double max_norm);

struct AdamState {
  std::vector<Tensor> m, v;
  std::int64_t t = 0;
};

// AdamW with decoupled weight decay. Returns false (and leaves all state
// untouched) when any gradient is non-finite.
bool adamw_step(const std::vector<Tensor>& params, AdamState& state, double lr,
                double weight_decay);

void ema_update(const std::vector<Tensor>& shadow, const std::vector<Tensor>& params,
                double decay);

using NamedParams = std::vector<std::pair<std::string, Tensor>>;
NamedParams collect_params(const Model& model);
std::vector<Tensor> param_tensors(const NamedParams& named);

struct TrainState {
  AdamState adam;
  std::vector<Tensor> ema;
  std::int64_t step = 0;
  std::int64_t epoch = 0;
  double best_val = -2.0;
};

struct TrainResult {
  double best_val_ccc = -2.0;
  std::int64_t steps = 0;
  std::string metrics_path;
};

// Full training loop: shuffled window batches, AdamW + clipping + EMA,
// per-step CSV metrics (step,lr,loss_ccc,loss_align,loss_total,val_ccc with
// validation filled on each epoch's last step), best/last checkpoints under
// out_dir. Deterministic for a fixed seed. Pass resume to continue from a
// loaded checkpoint (the step counter and metrics file are continued).
TrainResult train(Model& model, const std::vector<SessionFrames>& train_sessions,
                  const std::vector<SessionFrames>& val_sessions, const TrainConfig& cfg,
                  const std::string& out_dir, TrainState* resume = nullptr);

// Stitched full-sequence predictions: each frame comes from the window
// where it is central.
std::vector<double> predict_session(const Model& model, const SessionFrames& s, int target,
                                    std::int64_t window, std::int64_t central);

struct EvalRow {
  std::string session;
  std::string participant;
  double ccc = 0.0;
};
struct EvalReport {
  std::vector<EvalRow> rows;
  std::vector<std::pair<std::string, double>> per_session;
  double macro = 0.0;
};
EvalReport evaluate(const Model& model, const std::vector<SessionFrames>& sessions,
                    std::int64_t window, std::int64_t central);

// Checkpoint directory: TNSR tensors (param.* / ema.* / adam_m.* / adam_v.*)
// plus a `state` key=value file carrying the model config and counters.
void save_checkpoint(const std::string& dir, const Model& model, const TrainState& st);
struct LoadedCheckpoint {
  Model model;
  TrainState state;
};
LoadedCheckpoint load_checkpoint(const std::string& dir);

// Runs fn with the EMA weights swapped into the model, then restores.
template <class Fn>
auto with_weights(const std::vector<Tensor>& params, const std::vector<Tensor>& weights, Fn&& fn) {
  std::vector<Tensor> saved;
  saved.reserve(params.size());
  for (const auto& p : params) saved.push_back(p.clone());
  for (std::size_t i = 0; i < params.size(); ++i) {
    const_cast<Tensor&>(params[i]).copy_from(weights[i]);
  }
  auto out = fn();
  for (std::size_t i = 0; i < params.size(); ++i) {
    const_cast<Tensor&>(params[i]).copy_from(saved[i]);
  }
  return out;
}

} // namespace engage
