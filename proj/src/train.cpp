// SPDX-License-Identifier: Apache-2.0
#include "engage/train.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <numeric>

#include "engage/tnsr.hpp"

namespace engage {

namespace fs = std::filesystem;

void TrainConfig::validate() const {
  if (lr <= 0.0) throw ConfigError("train: lr must be positive");
  if (weight_decay < 0.0) throw ConfigError("train: weight decay must be >= 0");
  if (batch_windows < 1) throw ConfigError("train: batch_windows must be >= 1");
  if (central < 1) throw ConfigError("train: central must be >= 1");
  if (window < central || (window - central) % 2 != 0) {
    throw ConfigError("train: window must be central + 2*context, got window=" +
                      std::to_string(window) + " central=" + std::to_string(central));
  }
  if (warmup_steps < 0) throw ConfigError("train: warmup_steps must be >= 0");
  if (max_grad_norm <= 0.0) throw ConfigError("train: max_grad_norm must be positive");
  if (ema_decay < 0.0 || ema_decay >= 1.0) throw ConfigError("train: ema_decay must be in [0,1)");
  if (epochs < 1) throw ConfigError("train: epochs must be >= 1");
  if (weights.lambda_ccc <= 0.0) throw ConfigError("train: lambda_ccc must be positive");
  if (weights.lambda_align < 0.0) throw ConfigError("train: lambda_align must be >= 0");
  align.validate();
}

std::vector<Window> make_windows(std::int64_t n, std::int64_t central, std::int64_t context) {
  if (n < 1) throw UsageError("make_windows: empty session");
  std::vector<Window> out;
  for (std::int64_t cs = 0; cs < n; cs += central) {
    Window w;
    w.central_start = cs;
    w.central_valid = std::min(central, n - cs);
    w.win_start = cs - context;
    out.push_back(w);
  }
  return out;
}

double lr_schedule(std::int64_t step, const TrainConfig& cfg, std::int64_t total_steps) {
  const double lr_min = cfg.lr * cfg.lr_min_ratio;
  if (cfg.warmup_steps > 0 && step < cfg.warmup_steps) {
    return cfg.lr * static_cast<double>(step) / static_cast<double>(cfg.warmup_steps);
  }
  if (total_steps <= cfg.warmup_steps) return cfg.lr;
  double t = static_cast<double>(step - cfg.warmup_steps) /
             static_cast<double>(total_steps - cfg.warmup_steps);
  t = std::clamp(t, 0.0, 1.0);
  return lr_min + 0.5 * (cfg.lr - lr_min) * (1.0 + std::cos(3.14159265358979323846 * t));
}

double clip_gradients(const std::vector<Tensor>& params, double max_norm) {
  double sq = 0.0;
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    const auto& g = p.grad_buffer();
    for (double v : g) sq += v * v;
  }
  const double norm = std::sqrt(sq);
  if (norm > max_norm && norm > 0.0) {
    const double s = max_norm / norm;
    for (const auto& p : params) {
      if (!p.has_grad()) continue;
      double* g = const_cast<Tensor&>(p).grad_data();
      for (std::int64_t i = 0; i < p.numel(); ++i) g[i] *= s;
    }
  }
  return norm;
}

bool adamw_step(const std::vector<Tensor>& params, AdamState& state, double lr,
                double weight_decay) {
  constexpr double beta1 = 0.9, beta2 = 0.999, eps = 1e-8;
  if (state.m.empty()) {
    for (const auto& p : params) {
      state.m.push_back(Tensor::zeros(p.shape()));
      state.v.push_back(Tensor::zeros(p.shape()));
    }
  }
  for (const auto& p : params) {
    if (!p.has_grad()) continue;
    for (double v : p.grad_buffer()) {
      if (!std::isfinite(v)) {
        std::cerr << "adamw: non-finite gradient, step rejected\n";
        return false;
      }
    }
  }
  state.t += 1;
  const double bc1 = 1.0 - std::pow(beta1, static_cast<double>(state.t));
  const double bc2 = 1.0 - std::pow(beta2, static_cast<double>(state.t));
  for (std::size_t i = 0; i < params.size(); ++i) {
    Tensor& p = const_cast<Tensor&>(params[i]);
    double* w = p.data();
    double* m = state.m[i].data();
    double* v = state.v[i].data();
    const bool has_g = p.has_grad();
    const double* g = has_g ? p.grad_buffer().data() : nullptr;
    for (std::int64_t j = 0; j < p.numel(); ++j) {
      const double gj = has_g ? g[j] : 0.0;
      m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
      v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
      const double mh = m[j] / bc1;
      const double vh = v[j] / bc2;
      // decay decoupled from the adaptive update
      w[j] -= lr * weight_decay * w[j];
      w[j] -= lr * mh / (std::sqrt(vh) + eps);
    }
  }
  return true;
}

void ema_update(const std::vector<Tensor>& shadow, const std::vector<Tensor>& params,
                double decay) {
  if (shadow.size() != params.size()) throw UsageError("ema_update: size mismatch");
  for (std::size_t i = 0; i < params.size(); ++i) {
    double* s = const_cast<Tensor&>(shadow[i]).data();
    const double* p = params[i].data();
    for (std::int64_t j = 0; j < params[i].numel(); ++j) {
      s[j] = decay * s[j] + (1.0 - decay) * p[j];
    }
  }
}

NamedParams collect_params(const Model& model) {
  NamedParams out;
  model.visit_params([&](const std::string& name, Tensor t) { out.emplace_back(name, t); });
  return out;
}

std::vector<Tensor> param_tensors(const NamedParams& named) {
  std::vector<Tensor> out;
  out.reserve(named.size());
  for (const auto& [name, t] : named) out.push_back(t);
  return out;
}

namespace {

std::string fmt_g(double v) {
  char buf[40];
  std::snprintf(buf, sizeof(buf), "%.10g", v);
  return buf;
}

// Supervised + alignment loss for one training window.
struct WindowLoss {
  Tensor total;
  double ccc_part = 0.0;
  double align_part = 0.0;
};

WindowLoss window_loss(const Model& model, const SessionFrames& full, const Window& w,
                       const TrainConfig& cfg, Rng& rng) {
  const std::int64_t ctx_len = cfg.context();
  SessionFrames sliced = slice_window(full, w.win_start, cfg.window);
  FwdCtx fctx{true, &rng};
  ForwardResult res = model.forward(sliced, w.target, fctx);

  Tensor pred = slice_rows(res.prediction, ctx_len, ctx_len + w.central_valid);
  Tensor lab = slice_rows(slice_cols(sliced.labels, w.target, w.target + 1), ctx_len,
                          ctx_len + w.central_valid);
  Tensor sup = w.central_valid >= 2 ? ccc_loss(pred, lab) : mse_loss(pred, lab);

  WindowLoss out;
  out.ccc_part = sup.value();
  const bool align_on = cfg.weights.lambda_align > 0.0 && model.cfg.modality_fusion;
  if (align_on) {
    // alignment runs on the window frames that exist in the session
    const std::int64_t lo = std::max<std::int64_t>(0, -w.win_start);
    const std::int64_t hi = cfg.window - std::max<std::int64_t>(
        0, w.win_start + cfg.window - full.frames);
    if (hi - lo >= 2) {
      Tensor align = infonce_alignment_loss(model.alignment_pairs(res.embeddings, lo, hi),
                                            cfg.align, rng.next_u64());
      out.align_part = align.value();
      out.total = total_loss(sup, align, cfg.weights);
      return out;
    }
  }
  out.total = scale(sup, cfg.weights.lambda_ccc);
  return out;
}

struct WinRef {
  int session;
  int target;
  Window w;
};

std::vector<WinRef> enumerate_windows(const std::vector<SessionFrames>& sessions,
                                      const TrainConfig& cfg) {
  std::vector<WinRef> out;
  for (std::size_t si = 0; si < sessions.size(); ++si) {
    const auto& s = sessions[si];
    const int m_count = static_cast<int>(s.participants.size());
    for (int target = 0; target < m_count; ++target) {
      for (Window w : make_windows(s.frames, cfg.central, cfg.context())) {
        w.session = static_cast<int>(si);
        w.target = target;
        out.push_back({static_cast<int>(si), target, w});
      }
    }
  }
  return out;
}

void write_model_config_kv(std::vector<std::pair<std::string, std::string>>& kv,
                           const ModelConfig& c) {
  kv.emplace_back("model.d", std::to_string(c.d));
  kv.emplace_back("model.k_audio", std::to_string(c.k_audio));
  kv.emplace_back("model.k_visual", std::to_string(c.k_visual));
  kv.emplace_back("model.layers", std::to_string(c.layers));
  kv.emplace_back("model.ctx_layers", std::to_string(c.ctx_layers));
  kv.emplace_back("model.d_state", std::to_string(c.d_state));
  kv.emplace_back("model.chunk_size", std::to_string(c.chunk_size));
  kv.emplace_back("model.conv_kernel", std::to_string(c.conv_kernel));
  kv.emplace_back("model.heads", std::to_string(c.heads));
  kv.emplace_back("model.ffn_expansion", std::to_string(c.ffn_expansion));
  kv.emplace_back("model.dropout", fmt_g(c.dropout));
  kv.emplace_back("model.selective", c.selective ? "1" : "0");
  kv.emplace_back("model.ctx_identity", c.ctx_identity ? "1" : "0");
  kv.emplace_back("model.modality_fusion", c.modality_fusion ? "1" : "0");
  kv.emplace_back("model.partner_fusion", c.partner_fusion ? "1" : "0");
  kv.emplace_back("model.backend", backend_to_string(c.backend));
  kv.emplace_back("model.bounded_head", c.bounded_head ? "1" : "0");
  kv.emplace_back("model.init_seed", std::to_string(c.init_seed));
}

ModelConfig read_model_config_kv(const std::map<std::string, std::string>& kv) {
  const auto need = [&](const std::string& k) {
    auto it = kv.find(k);
    if (it == kv.end()) throw DataError("checkpoint: missing state key " + k);
    return it->second;
  };
  ModelConfig c;
  c.d = std::stoll(need("model.d"));
  c.k_audio = std::stoll(need("model.k_audio"));
  c.k_visual = std::stoll(need("model.k_visual"));
  c.layers = std::stoll(need("model.layers"));
  c.ctx_layers = std::stoll(need("model.ctx_layers"));
  c.d_state = std::stoll(need("model.d_state"));
  c.chunk_size = std::stoll(need("model.chunk_size"));
  c.conv_kernel = std::stoll(need("model.conv_kernel"));
  c.heads = std::stoi(need("model.heads"));
  c.ffn_expansion = std::stoi(need("model.ffn_expansion"));
  c.dropout = std::stod(need("model.dropout"));
  c.selective = need("model.selective") == "1";
  c.ctx_identity = need("model.ctx_identity") == "1";
  c.modality_fusion = need("model.modality_fusion") == "1";
  c.partner_fusion = need("model.partner_fusion") == "1";
  c.backend = backend_from_string(need("model.backend"));
  c.bounded_head = need("model.bounded_head") == "1";
  c.init_seed = std::stoull(need("model.init_seed"));
  return c;
}

} // namespace

std::vector<double> predict_session(const Model& model, const SessionFrames& s, int target,
                                    std::int64_t window, std::int64_t central) {
  NoGradGuard ng;
  FwdCtx ctx{false, nullptr};
  const std::int64_t context = (window - central) / 2;
  std::vector<double> out(static_cast<std::size_t>(s.frames), 0.0);
  for (const Window& w : make_windows(s.frames, central, context)) {
    SessionFrames sliced = slice_window(s, w.win_start, window);
    ForwardResult res = model.forward(sliced, target, ctx);
    for (std::int64_t i = 0; i < w.central_valid; ++i) {
      out[static_cast<std::size_t>(w.central_start + i)] = res.prediction.at(context + i, 0);
    }
  }
  return out;
}

EvalReport evaluate(const Model& model, const std::vector<SessionFrames>& sessions,
                    std::int64_t window, std::int64_t central) {
  EvalReport rep;
  double session_sum = 0.0;
  for (const auto& s : sessions) {
    if (!s.labels.defined() ||
        s.labels.cols() != static_cast<std::int64_t>(s.participants.size())) {
      throw DataError("evaluate: session " + s.id + " has no usable labels");
    }
    const int m_count = static_cast<int>(s.participants.size());
    double target_sum = 0.0;
    for (int target = 0; target < m_count; ++target) {
      std::vector<double> pred = predict_session(model, s, target, window, central);
      std::vector<double> lab(static_cast<std::size_t>(s.frames));
      for (std::int64_t t = 0; t < s.frames; ++t) {
        lab[static_cast<std::size_t>(t)] = s.labels.at(t, target);
      }
      const double c = ccc_value(pred, lab);
      rep.rows.push_back({s.id, s.participant_ids[static_cast<std::size_t>(target)], c});
      target_sum += c;
    }
    const double sc = target_sum / static_cast<double>(m_count);
    rep.per_session.emplace_back(s.id, sc);
    session_sum += sc;
  }
  rep.macro = sessions.empty() ? 0.0 : session_sum / static_cast<double>(sessions.size());
  return rep;
}

void save_checkpoint(const std::string& dir, const Model& model, const TrainState& st) {
  NamedParams named = collect_params(model);
  std::vector<std::pair<std::string, Tensor>> tensors;
  for (const auto& [name, t] : named) tensors.emplace_back("param." + name, t);
  for (std::size_t i = 0; i < named.size(); ++i) {
    tensors.emplace_back("ema." + named[i].first, st.ema[i]);
  }
  if (!st.adam.m.empty()) {
    for (std::size_t i = 0; i < named.size(); ++i) {
      tensors.emplace_back("adam_m." + named[i].first, st.adam.m[i]);
      tensors.emplace_back("adam_v." + named[i].first, st.adam.v[i]);
    }
  }
  save_tensor_dir(dir, tensors);
  std::vector<std::pair<std::string, std::string>> kv;
  write_model_config_kv(kv, model.cfg);
  kv.emplace_back("step", std::to_string(st.step));
  kv.emplace_back("epoch", std::to_string(st.epoch));
  kv.emplace_back("adam_t", std::to_string(st.adam.t));
  char best[48];
  std::snprintf(best, sizeof(best), "%.17g", st.best_val); // exact double round trip
  kv.emplace_back("best_val", best);
  save_kv(dir + "/state", kv);
}

LoadedCheckpoint load_checkpoint(const std::string& dir) {
  auto kv = load_kv(dir + "/state");
  ModelConfig cfg = read_model_config_kv(kv);
  LoadedCheckpoint out{Model::init(cfg), {}};
  auto tensors = load_tensor_dir(dir);
  std::map<std::string, Tensor> by_name;
  for (auto& [name, t] : tensors) by_name.emplace(name, std::move(t));

  const auto take = [&](const std::string& name) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw DataError("checkpoint: tensor " + name + " missing in " + dir);
    return it->second;
  };

  NamedParams named = collect_params(out.model);
  const bool has_adam = by_name.count("adam_m." + named.front().first) > 0;
  for (auto& [name, t] : named) {
    t.copy_from(take("param." + name));
    out.state.ema.push_back(take("ema." + name).clone());
    if (has_adam) {
      out.state.adam.m.push_back(take("adam_m." + name).clone());
      out.state.adam.v.push_back(take("adam_v." + name).clone());
    }
  }
  out.state.step = std::stoll(kv.at("step"));
  out.state.epoch = std::stoll(kv.at("epoch"));
  out.state.adam.t = std::stoll(kv.at("adam_t"));
  out.state.best_val = std::stod(kv.at("best_val"));
  return out;
}

TrainResult train(Model& model, const std::vector<SessionFrames>& train_sessions,
                  const std::vector<SessionFrames>& val_sessions, const TrainConfig& cfg,
                  const std::string& out_dir, TrainState* resume) {
  cfg.validate();
  if (train_sessions.empty()) throw UsageError("train: no training sessions");
  if (val_sessions.empty()) throw UsageError("train: no held-out sessions");

  fs::create_directories(out_dir);
  NamedParams named = collect_params(model);
  std::vector<Tensor> params = param_tensors(named);

  TrainState st;
  if (resume) {
    st = *resume;
  } else {
    for (const auto& p : params) st.ema.push_back(p.clone());
  }

  std::vector<WinRef> wins = enumerate_windows(train_sessions, cfg);
  const auto steps_per_epoch =
      static_cast<std::int64_t>((wins.size() + static_cast<std::size_t>(cfg.batch_windows) - 1) /
                                static_cast<std::size_t>(cfg.batch_windows));
  const std::int64_t total_steps = cfg.epochs * steps_per_epoch;

  const std::string metrics_path = out_dir + "/metrics.csv";
  std::ofstream csv(metrics_path, resume ? std::ios::app : std::ios::trunc);
  if (!csv) throw DataError("train: cannot open " + metrics_path);
  if (!resume) csv << "step,lr,loss_ccc,loss_align,loss_total,val_ccc\n";

  TrainResult result;
  result.metrics_path = metrics_path;
  result.best_val_ccc = st.best_val;

  for (std::int64_t epoch = st.epoch; epoch < cfg.epochs; ++epoch) {
    std::vector<std::size_t> order(wins.size());
    std::iota(order.begin(), order.end(), 0);
    Rng shuffle_rng(Rng::derive(cfg.seed, 0xE70C0000ull + static_cast<std::uint64_t>(epoch)));
    for (std::size_t i = order.size(); i > 1; --i) {
      std::swap(order[i - 1], order[static_cast<std::size_t>(shuffle_rng.index(
                                 static_cast<std::int64_t>(i)))]);
    }

    std::vector<std::string> epoch_rows;
    for (std::size_t b0 = 0; b0 < order.size(); b0 += static_cast<std::size_t>(cfg.batch_windows)) {
      const std::size_t b1 =
          std::min(order.size(), b0 + static_cast<std::size_t>(cfg.batch_windows));
      const double inv_batch = 1.0 / static_cast<double>(b1 - b0);
      const double lr_t = lr_schedule(st.step, cfg, total_steps);

      for (const auto& p : params) const_cast<Tensor&>(p).zero_grad();
      double ccc_sum = 0.0, align_sum = 0.0, total_sum = 0.0;
      for (std::size_t k = b0; k < b1; ++k) {
        const WinRef& wr = wins[order[k]];
        Rng win_rng(Rng::derive(cfg.seed,
                                (static_cast<std::uint64_t>(st.step) << 20) + (k - b0)));
        WindowLoss wl = window_loss(model, train_sessions[static_cast<std::size_t>(wr.session)],
                                    wr.w, cfg, win_rng);
        ccc_sum += wl.ccc_part;
        align_sum += wl.align_part;
        total_sum += wl.total.value();
        backward(scale(wl.total, inv_batch));
      }
      ccc_sum *= inv_batch;
      align_sum *= inv_batch;
      total_sum *= inv_batch;
      if (!std::isfinite(total_sum)) {
        throw DivergenceError("train: loss diverged at step " + std::to_string(st.step) +
                              "; last good checkpoint is " + out_dir + "/checkpoint_last");
      }

      clip_gradients(params, cfg.max_grad_norm);
      if (!adamw_step(params, st.adam, lr_t, cfg.weight_decay)) {
        std::cerr << "train: step " << st.step << " rejected (bad gradients)\n";
      }
      ema_update(st.ema, params, cfg.ema_decay);

      epoch_rows.push_back(std::to_string(st.step) + "," + fmt_g(lr_t) + "," + fmt_g(ccc_sum) +
                           "," + fmt_g(align_sum) + "," + fmt_g(total_sum) + ",");
      ++st.step;
    }

    const double val_ccc =
        with_weights(params, st.ema, [&] {
          return evaluate(model, val_sessions, cfg.window, cfg.central).macro;
        });
    if (!epoch_rows.empty()) epoch_rows.back() += fmt_g(val_ccc);
    for (const auto& row : epoch_rows) csv << row << "\n";
    csv.flush();

    st.epoch = epoch + 1;
    if (val_ccc > st.best_val) {
      st.best_val = val_ccc;
      result.best_val_ccc = val_ccc;
      save_checkpoint(out_dir + "/checkpoint_best", model, st);
    }
    save_checkpoint(out_dir + "/checkpoint_last", model, st);
  }

  result.steps = st.step;
  result.best_val_ccc = st.best_val;
  if (resume) *resume = st;
  return result;
}

} // namespace engage
