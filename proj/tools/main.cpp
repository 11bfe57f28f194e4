// SPDX-License-Identifier: Apache-2.0
//
// engage — synthetic dialogue engagement modeling toolkit.
// Subcommands: generate | train | eval | bench. Exit codes: 0 ok, 2 usage,
// 3 data, 4 config, 5 divergence.

#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "engage/bench.hpp"
#include "engage/config.hpp"
#include "engage/pipeline.hpp"
#include "engage/train.hpp"

namespace fs = std::filesystem;
using namespace engage;

namespace {

std::vector<std::int64_t> parse_int_list(const std::string& s) {
  std::vector<std::int64_t> out;
  std::stringstream ss(s);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (!item.empty()) out.push_back(std::stoll(item));
  }
  return out;
}

std::vector<SessionFrames> load_sessions(const std::string& dir) {
  if (!fs::is_directory(dir)) throw DataError("no session directory at " + dir);
  std::vector<std::string> session_dirs;
  for (const auto& e : fs::directory_iterator(dir)) {
    if (e.is_directory() && fs::exists(e.path() / "meta")) {
      session_dirs.push_back(e.path().string());
    }
  }
  std::sort(session_dirs.begin(), session_dirs.end());
  if (session_dirs.empty()) throw UsageError("session list under " + dir + " is empty");
  std::vector<SessionFrames> out;
  for (const auto& sd : session_dirs) out.push_back(align_session(load_session(sd)));
  return out;
}

int cmd_generate(std::uint64_t seed, int participants, std::int64_t frames, int sessions,
                 double noise, const std::string& out_dir, bool force) {
  if (fs::exists(out_dir) && !fs::is_empty(out_dir) && !force) {
    throw UsageError("output directory " + out_dir + " is not empty (use --force)");
  }
  fs::create_directories(out_dir);
  for (int i = 0; i < sessions; ++i) {
    SynthConfig cfg;
    cfg.seed = Rng::derive(seed, static_cast<std::uint64_t>(i));
    cfg.participants = participants;
    cfg.frames = frames;
    cfg.noise = noise;
    char name[32];
    std::snprintf(name, sizeof(name), "session_%03d", i);
    SessionBatch s = generate_synthetic_session(cfg, name);
    save_session(out_dir + "/" + name, s);
    double lo = 1.0, hi = 0.0, sum = 0.0;
    for (std::int64_t j = 0; j < s.labels.numel(); ++j) {
      lo = std::min(lo, s.labels.at(j));
      hi = std::max(hi, s.labels.at(j));
      sum += s.labels.at(j);
    }
    std::cout << name << ": M=" << participants << " frames=" << frames
              << " labels mean=" << sum / static_cast<double>(s.labels.numel())
              << " min=" << lo << " max=" << hi << "\n";
  }
  return 0;
}

int cmd_train(const std::string& data_dir, const std::string& out_dir,
              const std::string& config_path, const std::vector<std::string>& overrides,
              const std::string& resume_dir) {
  Config conf;
  if (!config_path.empty()) conf.load_file(config_path);
  for (const auto& o : overrides) conf.apply_override(o);

  auto sessions = load_sessions(data_dir);
  TrainConfig tc = conf.train_config();
  const auto nval = static_cast<std::size_t>(tc.val_sessions);
  if (sessions.size() <= nval) {
    throw UsageError("need more sessions than the held-out count (" +
                     std::to_string(sessions.size()) + " total, " + std::to_string(nval) +
                     " held out)");
  }
  std::vector<SessionFrames> train_set(sessions.begin(), sessions.end() - static_cast<long>(nval));
  std::vector<SessionFrames> val_set(sessions.end() - static_cast<long>(nval), sessions.end());

  TrainResult result;
  if (!resume_dir.empty()) {
    LoadedCheckpoint ck = load_checkpoint(resume_dir);
    result = train(ck.model, train_set, val_set, tc, out_dir, &ck.state);
  } else {
    Model model = Model::init(conf.model_config());
    std::cout << "model parameters: " << model.param_count() << "\n";
    result = train(model, train_set, val_set, tc, out_dir);
  }
  std::cout << "best val CCC: " << result.best_val_ccc << " after " << result.steps
            << " steps\nmetrics: " << result.metrics_path << "\n";
  return 0;
}

int cmd_eval(const std::string& checkpoint_dir, const std::string& data_dir,
             const std::string& out_csv, std::int64_t window, std::int64_t central) {
  auto sessions = load_sessions(data_dir);
  LoadedCheckpoint ck = load_checkpoint(checkpoint_dir);
  NamedParams named = collect_params(ck.model);
  std::vector<Tensor> params = param_tensors(named);
  EvalReport rep = with_weights(params, ck.state.ema, [&] {
    return evaluate(ck.model, sessions, window, central);
  });

  std::ostringstream csv;
  csv << "session,participant,ccc\n";
  for (const auto& r : rep.rows) {
    csv << r.session << "," << r.participant << "," << r.ccc << "\n";
  }
  csv << "macro,," << rep.macro << "\n";
  std::cout << csv.str();
  std::cout << "macro CCC: " << rep.macro << "\n";
  if (!out_csv.empty()) {
    std::ofstream f(out_csv);
    if (!f) throw DataError("cannot open " + out_csv);
    f << csv.str();
  }
  return 0;
}

int cmd_bench(const std::string& mode, const std::string& lengths, std::int64_t width,
              std::int64_t chunk, int repeats, std::size_t cap_bytes,
              const std::string& partners, std::int64_t partner_frames,
              const std::string& out_csv) {
  BenchConfig bc;
  if (!lengths.empty()) bc.lengths = parse_int_list(lengths);
  bc.width = width;
  bc.chunk = chunk;
  bc.repeats = repeats;
  bc.cap_bytes = cap_bytes;
  if (!partners.empty()) {
    bc.partner_counts.clear();
    for (auto v : parse_int_list(partners)) bc.partner_counts.push_back(static_cast<int>(v));
  }
  bc.partner_frames = partner_frames;

  std::vector<BenchRow> rows;
  if (mode == "length") {
    rows = run_scaling_benchmark(bc);
  } else if (mode == "partners") {
    rows = partner_scaling_benchmark(bc);
  } else {
    throw UsageError("bench mode must be length|partners");
  }
  std::ostringstream csv;
  write_bench_csv(csv, rows);
  std::cout << csv.str();
  if (!out_csv.empty()) {
    std::ofstream f(out_csv);
    if (!f) throw DataError("cannot open " + out_csv);
    f << csv.str();
  }
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"dialogue engagement estimation: synthetic data, training, evaluation, scaling benchmarks"};
  app.require_subcommand(1);
  std::ostringstream footer;
  Config::print_help(footer);
  app.footer(footer.str());

  // generate
  auto* gen = app.add_subcommand("generate", "write synthetic dialogue sessions");
  std::uint64_t g_seed = 7;
  int g_participants = 2, g_sessions = 4;
  std::int64_t g_frames = 192;
  double g_noise = 0.25;
  std::string g_out = "sessions";
  bool g_force = false;
  gen->add_option("--seed", g_seed, "generator seed");
  gen->add_option("--participants", g_participants, "participants per session (>= 2)");
  gen->add_option("--frames", g_frames, "high-rate frames per session");
  gen->add_option("--sessions", g_sessions, "number of sessions");
  gen->add_option("--noise", g_noise, "feature noise stdev");
  gen->add_option("--out", g_out, "output directory");
  gen->add_flag("--force", g_force, "write into a non-empty directory");

  // train
  auto* tr = app.add_subcommand("train", "train on a session directory");
  std::string t_data = "sessions", t_out = "run", t_config, t_resume;
  std::vector<std::string> t_overrides;
  tr->add_option("--data", t_data, "session directory");
  tr->add_option("--out", t_out, "output directory (metrics, checkpoints)");
  tr->add_option("--config", t_config, "config file");
  tr->add_option("--override", t_overrides, "config override key=value (repeatable)");
  tr->add_option("--resume", t_resume, "checkpoint directory to resume from");

  // eval
  auto* ev = app.add_subcommand("eval", "evaluate a checkpoint");
  std::string e_ckpt, e_data = "sessions", e_out;
  std::int64_t e_window = 96, e_central = 32;
  ev->add_option("--checkpoint", e_ckpt, "checkpoint directory")->required();
  ev->add_option("--data", e_data, "session directory");
  ev->add_option("--out", e_out, "CSV report path");
  ev->add_option("--window", e_window, "window length");
  ev->add_option("--central", e_central, "central frames per window");

  // bench
  auto* be = app.add_subcommand("bench", "scaling benchmarks");
  std::string b_mode = "length", b_lengths, b_partners, b_out;
  std::int64_t b_width = 32, b_chunk = 32, b_partner_frames = 256;
  int b_repeats = 5;
  std::size_t b_cap = 0;
  be->add_option("--mode", b_mode, "length|partners");
  be->add_option("--lengths", b_lengths, "comma list of sequence lengths");
  be->add_option("--width", b_width, "feature width");
  be->add_option("--chunk", b_chunk, "local attention chunk size");
  be->add_option("--repeats", b_repeats, "timed repeats per row");
  be->add_option("--cap-bytes", b_cap, "tensor allocation cap (0 = none); overruns become OOM rows");
  be->add_option("--partners", b_partners, "comma list of participant counts");
  be->add_option("--partner-frames", b_partner_frames, "frames per participant (partners mode)");
  be->add_option("--out", b_out, "CSV output path");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    return app.exit(e) == 0 ? 0 : 2;
  }

  try {
    if (gen->parsed()) {
      return cmd_generate(g_seed, g_participants, g_frames, g_sessions, g_noise, g_out, g_force);
    }
    if (tr->parsed()) return cmd_train(t_data, t_out, t_config, t_overrides, t_resume);
    if (ev->parsed()) return cmd_eval(e_ckpt, e_data, e_out, e_window, e_central);
    if (be->parsed()) {
      return cmd_bench(b_mode, b_lengths, b_width, b_chunk, b_repeats, b_cap, b_partners,
                       b_partner_frames, b_out);
    }
  } catch (const UsageError& e) {
    std::cerr << "usage error: " << e.what() << "\n";
    return 2;
  } catch (const DataError& e) {
    std::cerr << "data error: " << e.what() << "\n";
    return 3;
  } catch (const ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 4;
  } catch (const DimensionError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 4;
  } catch (const DivergenceError& e) {
    std::cerr << "divergence: " << e.what() << "\n";
    return 5;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
