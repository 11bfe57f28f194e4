// SPDX-License-Identifier: Apache-2.0
#include <doctest.h>

#include <filesystem>
#include <fstream>
#include <sstream>

#include "engage/config.hpp"

using namespace engage;
namespace fs = std::filesystem;

TEST_CASE("defaults load and map to configs") {
  Config c;
  CHECK(c.get_double("train.lr") == doctest::Approx(5e-5));
  CHECK(c.get_int("train.batch_windows") == 128);
  CHECK(c.get_int("train.window") == 96);
  CHECK(c.get_int("train.central") == 32);
  CHECK(c.get_int("train.warmup_steps") == 500);
  CHECK(c.get_double("train.max_grad_norm") == doctest::Approx(5.0));
  CHECK(c.get_double("train.ema_decay") == doctest::Approx(0.999));
  CHECK(c.get_double("loss.lambda_ccc") == doctest::Approx(1.0));
  CHECK(c.get_double("loss.lambda_align") == doctest::Approx(0.4));
  CHECK(c.get_int("model.layers") == 4);
  CHECK(c.get_int("model.d_state") == 16);
  CHECK(c.get_int("model.chunk_size") == 32);
  CHECK(c.get_int("model.conv_kernel") == 4);
  CHECK(c.get_int("model.ffn_expansion") == 2);

  ModelConfig mc = c.model_config();
  CHECK(mc.layers == 4);
  CHECK(mc.backend == Backend::hybrid);
  TrainConfig tc = c.train_config();
  CHECK(tc.window == 96);
  CHECK_NOTHROW(tc.validate());
}

TEST_CASE("file parsing with comments and overrides") {
  const auto path = (fs::temp_directory_path() / "engage_cfg_test.cfg").string();
  {
    std::ofstream f(path);
    f << "# desk-scale setup\n";
    f << "model.d = 8\n";
    f << "train.lr = 1e-3  # higher for tiny runs\n";
    f << "\n";
    f << "model.selective = true\n";
  }
  Config c;
  c.load_file(path);
  CHECK(c.get_int("model.d") == 8);
  CHECK(c.get_double("train.lr") == doctest::Approx(1e-3));
  CHECK(c.get_bool("model.selective"));
  c.apply_override("model.d=12");
  CHECK(c.get_int("model.d") == 12);
  fs::remove(path);
}

TEST_CASE("unknown keys and bad types rejected") {
  Config c;
  CHECK_THROWS_AS(c.apply_override("model.nope=1"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("model.d=abc"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("model.selective=maybe"), ConfigError);
  CHECK_THROWS_AS(c.apply_override("no_equals_sign"), ConfigError);
  CHECK_NOTHROW(c.apply_override("loss.lambda_align=0"));
}

TEST_CASE("help lists every schema key with its default") {
  std::ostringstream os;
  Config::print_help(os);
  const std::string help = os.str();
  for (const auto& e : Config::schema()) {
    CHECK(help.find(e.key) != std::string::npos);
    CHECK(help.find("default " + e.def) != std::string::npos);
  }
}
