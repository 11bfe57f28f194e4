// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <cmath>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <set>
#include <sstream>

#include "engage/train.hpp"

using namespace engage;
namespace fs = std::filesystem;

namespace {
ModelConfig tiny_model_cfg() {
  ModelConfig c;
  c.d = 3;
  c.k_audio = 4;
  c.k_visual = 4;
  c.layers = 1;
  c.ctx_layers = 1;
  c.d_state = 2;
  c.chunk_size = 8;
  c.conv_kernel = 2;
  c.dropout = 0.05;
  return c;
}

TrainConfig tiny_train_cfg() {
  TrainConfig t;
  t.lr = 1e-3;
  t.batch_windows = 4;
  t.window = 24;
  t.central = 8;
  t.warmup_steps = 2;
  t.epochs = 2;
  t.ema_decay = 0.9;
  t.seed = 3;
  return t;
}

std::vector<SessionFrames> tiny_sessions(int count, std::int64_t frames, int participants = 2) {
  std::vector<SessionFrames> out;
  for (int i = 0; i < count; ++i) {
    SynthConfig sc;
    sc.seed = 100 + static_cast<std::uint64_t>(i);
    sc.participants = participants;
    sc.frames = frames;
    out.push_back(align_session(generate_synthetic_session(sc, "s" + std::to_string(i))));
  }
  return out;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}
} // namespace

TEST_CASE("window tiling covers every frame exactly once") {
  for (std::int64_t n : {std::int64_t(1), std::int64_t(40), std::int64_t(96), std::int64_t(97),
                         std::int64_t(300)}) {
    auto wins = make_windows(n, 32, 32);
    std::vector<int> hits(static_cast<std::size_t>(n), 0);
    for (const auto& w : wins) {
      for (std::int64_t i = 0; i < w.central_valid; ++i) {
        hits[static_cast<std::size_t>(w.central_start + i)] += 1;
      }
    }
    for (int h : hits) CHECK(h == 1);
  }
  SUBCASE("documented counts") {
    CHECK(make_windows(96, 32, 32).size() == 3);
    CHECK(make_windows(40, 32, 32).size() == 2);
    CHECK(make_windows(1, 32, 32).size() == 1);
    auto w40 = make_windows(40, 32, 32);
    CHECK(w40[1].central_start == 32);
    CHECK(w40[1].central_valid == 8);
  }
}

TEST_CASE("lr schedule endpoints") {
  TrainConfig cfg;
  cfg.lr = 1e-3;
  cfg.warmup_steps = 100;
  cfg.lr_min_ratio = 0.01;
  const std::int64_t total = 1100;
  CHECK(lr_schedule(0, cfg, total) == 0.0);
  CHECK(lr_schedule(100, cfg, total) == doctest::Approx(1e-3).epsilon(1e-12));
  CHECK(lr_schedule(1100, cfg, total) == doctest::Approx(1e-5).epsilon(1e-9));
  // cosine midpoint is the average of the endpoints
  CHECK(lr_schedule(600, cfg, total) == doctest::Approx((1e-3 + 1e-5) / 2.0).epsilon(1e-9));
}

TEST_CASE("gradient clipping") {
  Rng rng(1);
  std::vector<Tensor> params;
  for (int i = 0; i < 3; ++i) params.push_back(Tensor::randn({4}, rng, 1.0, true));
  SUBCASE("within bound untouched") {
    for (auto& p : params) {
      double* g = p.grad_data();
      for (int j = 0; j < 4; ++j) g[j] = 0.1;
    }
    const double before = clip_gradients(params, 5.0);
    CHECK(before == doctest::Approx(std::sqrt(12 * 0.01)));
    CHECK(params[0].grad_buffer()[0] == 0.1);
  }
  SUBCASE("rescaled to the bound") {
    for (auto& p : params) {
      double* g = p.grad_data();
      for (int j = 0; j < 4; ++j) g[j] = 10.0;
    }
    const double before = clip_gradients(params, 5.0);
    double sq = 0.0;
    for (const auto& p : params) {
      for (double v : p.grad_buffer()) sq += v * v;
    }
    CHECK(before > 5.0);
    CHECK(std::sqrt(sq) == doctest::Approx(5.0).epsilon(1e-12));
  }
  SUBCASE("post norm is min(pre, max)") {
    Rng r2(2);
    for (int trial = 0; trial < 5; ++trial) {
      for (auto& p : params) {
        double* g = p.grad_data();
        for (int j = 0; j < 4; ++j) g[j] = r2.normal() * (trial + 1);
      }
      const double before = clip_gradients(params, 5.0);
      double sq = 0.0;
      for (const auto& p : params) {
        for (double v : p.grad_buffer()) sq += v * v;
      }
      CHECK(std::sqrt(sq) == doctest::Approx(std::min(before, 5.0)).epsilon(1e-9));
    }
  }
}

TEST_CASE("adamw") {
  SUBCASE("one step decreases |w| on a quadratic") {
    Tensor w = Tensor::from_data({1}, {1.0}, true);
    w.grad_data()[0] = 2.0; // d/dw w^2 at w=1
    AdamState st;
    CHECK(adamw_step({w}, st, 0.1, 0.0));
    CHECK(std::fabs(w.at(0)) < 1.0);
  }
  SUBCASE("pure decay is exact") {
    Tensor w = Tensor::from_data({1}, {2.0}, true);
    w.grad_data(); // zero gradient
    AdamState st;
    CHECK(adamw_step({w}, st, 0.5, 0.1));
    CHECK(w.at(0) == doctest::Approx(2.0 * (1.0 - 0.5 * 0.1)).epsilon(1e-12));
  }
  SUBCASE("converges on a 2-D quadratic") {
    Tensor w = Tensor::from_data({2}, {3.0, -2.0}, true);
    AdamState st;
    double loss = 0.0;
    for (int i = 0; i < 100; ++i) {
      w.zero_grad();
      double* g = w.grad_data();
      g[0] = 2.0 * w.at(0);
      g[1] = 8.0 * w.at(1);
      CHECK(adamw_step({w}, st, 0.2, 0.0));
      loss = w.at(0) * w.at(0) + 4.0 * w.at(1) * w.at(1);
    }
    CHECK(loss < 1e-3 * (9.0 + 16.0));
  }
  SUBCASE("rejects non-finite gradients") {
    Tensor w = Tensor::from_data({1}, {1.0}, true);
    w.grad_data()[0] = std::numeric_limits<double>::quiet_NaN();
    AdamState st;
    CHECK_FALSE(adamw_step({w}, st, 0.1, 0.0));
    CHECK(w.at(0) == 1.0);
  }
}

TEST_CASE("ema update") {
  SUBCASE("fixed point") {
    Tensor p = Tensor::from_data({2}, {1.0, -1.0});
    Tensor s = p.clone();
    ema_update({s}, {p}, 0.999);
    CHECK(s.at(0) == doctest::Approx(1.0).epsilon(1e-15));
  }
  SUBCASE("single step from zero") {
    Tensor p = Tensor::from_data({1}, {1.0});
    Tensor s = Tensor::zeros({1});
    ema_update({s}, {p}, 0.999);
    CHECK(s.at(0) == doctest::Approx(0.001).epsilon(1e-12));
  }
  SUBCASE("geometric approach to constant parameters") {
    Tensor p = Tensor::from_data({1}, {1.0});
    Tensor s = Tensor::zeros({1});
    const double decay = 0.999;
    for (int i = 0; i < 693; ++i) ema_update({s}, {p}, decay);
    // |shadow - param| halves roughly every ln2/(1-decay) steps
    CHECK(std::fabs(1.0 - s.at(0)) == doctest::Approx(std::pow(decay, 693)).epsilon(1e-9));
    CHECK(std::fabs(1.0 - s.at(0)) < 0.51);
    CHECK(std::fabs(1.0 - s.at(0)) > 0.49);
  }
}

TEST_CASE("training smoke run writes metrics and checkpoints") {
  const std::string out = (fs::temp_directory_path() / "engage_train_smoke").string();
  fs::remove_all(out);
  Model m = Model::init(tiny_model_cfg());
  auto sessions = tiny_sessions(3, 48);
  std::vector<SessionFrames> train_set(sessions.begin(), sessions.end() - 1);
  std::vector<SessionFrames> val_set(sessions.end() - 1, sessions.end());
  TrainResult r = train(m, train_set, val_set, tiny_train_cfg(), out);
  CHECK(r.steps > 0);
  CHECK(fs::exists(out + "/metrics.csv"));
  CHECK(fs::exists(out + "/checkpoint_last/state"));
  const std::string csv = slurp(out + "/metrics.csv");
  CHECK(csv.find("step,lr,loss_ccc,loss_align,loss_total,val_ccc") == 0);
  CHECK(std::count(csv.begin(), csv.end(), '\n') > 2);
  fs::remove_all(out);
}

TEST_CASE("same seed gives byte-identical metrics") {
  const std::string out1 = (fs::temp_directory_path() / "engage_det_1").string();
  const std::string out2 = (fs::temp_directory_path() / "engage_det_2").string();
  fs::remove_all(out1);
  fs::remove_all(out2);
  auto sessions = tiny_sessions(3, 48);
  std::vector<SessionFrames> train_set(sessions.begin(), sessions.end() - 1);
  std::vector<SessionFrames> val_set(sessions.end() - 1, sessions.end());
  {
    Model m = Model::init(tiny_model_cfg());
    train(m, train_set, val_set, tiny_train_cfg(), out1);
  }
  {
    Model m = Model::init(tiny_model_cfg());
    train(m, train_set, val_set, tiny_train_cfg(), out2);
  }
  CHECK(slurp(out1 + "/metrics.csv") == slurp(out2 + "/metrics.csv"));
  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("checkpoint round trip reproduces validation exactly") {
  const std::string out = (fs::temp_directory_path() / "engage_ckpt_rt").string();
  fs::remove_all(out);
  Model m = Model::init(tiny_model_cfg());
  auto sessions = tiny_sessions(3, 48);
  std::vector<SessionFrames> train_set(sessions.begin(), sessions.end() - 1);
  std::vector<SessionFrames> val_set(sessions.end() - 1, sessions.end());
  TrainConfig tc = tiny_train_cfg();
  train(m, train_set, val_set, tc, out);

  LoadedCheckpoint a = load_checkpoint(out + "/checkpoint_last");
  LoadedCheckpoint b = load_checkpoint(out + "/checkpoint_last");
  auto eval_with = [&](LoadedCheckpoint& ck) {
    auto params = param_tensors(collect_params(ck.model));
    return with_weights(params, ck.state.ema,
                        [&] { return evaluate(ck.model, val_set, tc.window, tc.central).macro; });
  };
  const double va = eval_with(a);
  const double vb = eval_with(b);
  CHECK(std::memcmp(&va, &vb, sizeof(double)) == 0);
  fs::remove_all(out);
}

TEST_CASE("resume continues the step counter") {
  const std::string out = (fs::temp_directory_path() / "engage_resume").string();
  fs::remove_all(out);
  auto sessions = tiny_sessions(3, 48);
  std::vector<SessionFrames> train_set(sessions.begin(), sessions.end() - 1);
  std::vector<SessionFrames> val_set(sessions.end() - 1, sessions.end());

  TrainConfig tc = tiny_train_cfg();
  tc.epochs = 1;
  Model m = Model::init(tiny_model_cfg());
  TrainResult first = train(m, train_set, val_set, tc, out);

  LoadedCheckpoint ck = load_checkpoint(out + "/checkpoint_last");
  TrainConfig tc2 = tc;
  tc2.epochs = 2;
  TrainResult second = train(ck.model, train_set, val_set, tc2, out, &ck.state);
  CHECK(second.steps == 2 * first.steps);

  // metrics file contains the continued step numbers, no restart at 0
  const std::string csv = slurp(out + "/metrics.csv");
  std::set<std::string> first_fields;
  std::istringstream lines(csv);
  std::string line;
  std::getline(lines, line); // header
  std::vector<long> steps;
  while (std::getline(lines, line)) {
    if (line.empty()) continue;
    steps.push_back(std::stol(line.substr(0, line.find(','))));
  }
  REQUIRE(static_cast<std::int64_t>(steps.size()) == second.steps);
  for (std::size_t i = 0; i < steps.size(); ++i) CHECK(steps[i] == static_cast<long>(i));
  fs::remove_all(out);
}

TEST_CASE("evaluate: perfect and constant predictors") {
  auto sessions = tiny_sessions(1, 40);
  SessionFrames& s = sessions[0];
  SUBCASE("labels themselves score 1") {
    // up to the 1e-8 denominator regularizer
    std::vector<double> lab(static_cast<std::size_t>(s.frames));
    for (std::int64_t t = 0; t < s.frames; ++t) lab[static_cast<std::size_t>(t)] = s.labels.at(t, 0);
    CHECK(ccc_value(lab, lab) == doctest::Approx(1.0).epsilon(1e-6));
  }
  SUBCASE("a constant predictor scores 0") {
    std::vector<double> lab(static_cast<std::size_t>(s.frames));
    std::vector<double> flat(static_cast<std::size_t>(s.frames), 0.5);
    for (std::int64_t t = 0; t < s.frames; ++t) lab[static_cast<std::size_t>(t)] = s.labels.at(t, 0);
    CHECK(std::fabs(ccc_value(flat, lab)) < 1e-6);
  }
}

TEST_CASE("stitching matches a single pad-free window") {
  // a session exactly one window long: the middle third of the direct
  // forward pass must agree bit-for-bit with the stitched prediction there
  Model m = Model::init(tiny_model_cfg());
  TrainConfig tc = tiny_train_cfg(); // window 24, central 8
  auto sessions = tiny_sessions(1, 24);
  SessionFrames& s = sessions[0];
  std::vector<double> stitched = predict_session(m, s, 0, tc.window, tc.central);
  NoGradGuard ng;
  ForwardResult direct = m.forward(s, 0, {});
  for (std::int64_t t = tc.central; t < 2 * tc.central; ++t) {
    CHECK(stitched[static_cast<std::size_t>(t)] == direct.prediction.at(t, 0));
  }
}

TEST_CASE("disabling the alignment weight changes the run") {
  const std::string out1 = (fs::temp_directory_path() / "engage_abl_a").string();
  const std::string out2 = (fs::temp_directory_path() / "engage_abl_b").string();
  fs::remove_all(out1);
  fs::remove_all(out2);
  auto sessions = tiny_sessions(3, 48);
  std::vector<SessionFrames> train_set(sessions.begin(), sessions.end() - 1);
  std::vector<SessionFrames> val_set(sessions.end() - 1, sessions.end());
  TrainConfig tc = tiny_train_cfg();
  {
    Model m = Model::init(tiny_model_cfg());
    train(m, train_set, val_set, tc, out1);
  }
  TrainConfig tc0 = tc;
  tc0.weights.lambda_align = 0.0; // ablation switch
  {
    Model m = Model::init(tiny_model_cfg());
    train(m, train_set, val_set, tc0, out2);
  }
  const std::string a = slurp(out1 + "/metrics.csv");
  const std::string b = slurp(out2 + "/metrics.csv");
  CHECK(a != b);
  // and the ablated run logs a zero alignment loss
  std::istringstream lines(b);
  std::string line;
  std::getline(lines, line);
  std::getline(lines, line);
  std::vector<std::string> fields;
  std::istringstream fs_line(line);
  std::string field;
  while (std::getline(fs_line, field, ',')) fields.push_back(field);
  REQUIRE(fields.size() >= 5);
  CHECK(fields[3] == "0");
  fs::remove_all(out1);
  fs::remove_all(out2);
}

TEST_CASE("a memorizing model scores higher on its own training session") {
  // single training session, enough epochs to overfit: evaluating on the
  // training data must beat the held-out session
  const std::string out = (fs::temp_directory_path() / "engage_overfit").string();
  fs::remove_all(out);
  auto sessions = tiny_sessions(2, 96);
  std::vector<SessionFrames> train_set(sessions.begin(), sessions.begin() + 1);
  std::vector<SessionFrames> val_set(sessions.begin() + 1, sessions.end());
  ModelConfig mc;
  mc.d = 8;
  mc.k_audio = 16;
  mc.k_visual = 16;
  mc.layers = 2;
  mc.ctx_layers = 1;
  mc.d_state = 4;
  mc.dropout = 0.0;
  Model m = Model::init(mc);
  TrainConfig tc;
  tc.lr = 2e-3;
  tc.batch_windows = 8;
  tc.warmup_steps = 10;
  tc.ema_decay = 0.95;
  tc.epochs = 60;
  tc.seed = 3;
  train(m, train_set, val_set, tc, out);

  LoadedCheckpoint last = load_checkpoint(out + "/checkpoint_last");
  auto params = param_tensors(collect_params(last.model));
  const auto scores = with_weights(params, last.state.ema, [&] {
    return std::pair{evaluate(last.model, train_set, tc.window, tc.central).macro,
                     evaluate(last.model, val_set, tc.window, tc.central).macro};
  });
  CHECK(scores.first > 0.5);          // it really did fit the session
  CHECK(scores.first >= scores.second); // and memorization shows
  fs::remove_all(out);
}

TEST_CASE("config validation") {
  TrainConfig bad = tiny_train_cfg();
  bad.window = 25; // not central + 2*context
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_train_cfg();
  bad.lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = tiny_train_cfg();
  bad.ema_decay = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
}
