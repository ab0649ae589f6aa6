#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include "doctest.h"

#include <cmath>
#include <filesystem>
#include <vector>

#include "sosuq/checkpoint.hpp"
#include "sosuq/errors.hpp"
#include "sosuq/forward_model.hpp"
#include "sosuq/geometry.hpp"
#include "sosuq/grid.hpp"
#include "sosuq/phantom.hpp"
#include "sosuq/train.hpp"
#include "sosuq/varnet.hpp"

using namespace sosuq;

namespace {

struct Bench {
  GridSpec grid;
  ForwardModel model;
  std::vector<TrainSample> data;
};

Bench make_bench(int n_samples = 4) {
  Bench b;
  b.grid = make_grid(10, 8, 3e-4, 3e-4);
  AcquisitionGeometry geom = default_geometry(b.grid, 4, 1, 22.0, 4, 3);
  b.model = build_operator(b.grid, geom, 1540.0);
  PhantomConfig pc;
  for (int i = 0; i < n_samples; ++i) {
    auto [truth, mask] = sample_phantom(100 + static_cast<uint64_t>(i), pc, b.grid);
    TrainSample s;
    s.x_star = to_slowness(truth);
    s.d = simulate_measurements(b.model, s.x_star, 1e-9, 100 + static_cast<uint64_t>(i));
    b.data.push_back(std::move(s));
  }
  return b;
}

TrainConfig tiny_config(TrainMode mode) {
  TrainConfig cfg;
  cfg.batch_size = 2;
  cfg.iterations = 30;
  cfg.adam_lr = 1e-3;
  cfg.seed = 9;
  cfg.n_layers = 2;
  cfg.n_filters = 2;
  cfg.kernel_size = 3;
  cfg.n_knots = 7;
  cfg.lambda_r = 1e-2;
  cfg.log_every = 10;
  cfg.checkpoint_every = 1000;
  if (mode == TrainMode::mcd) cfg.dropout_p = 0.25;
  return cfg;
}

std::vector<double> flat_of(const VnParams& p) {
  std::vector<double> f;
  flatten(p, f);
  return f;
}

} // namespace

TEST_CASE("training configuration validation") {
  TrainConfig c;
  CHECK_NOTHROW(c.validate());
  TrainConfig bad = c;
  bad.batch_size = 0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.adam_lr = 0.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.dropout_p = 1.0;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.bvi_d_init_lo = 1.2;
  bad.bvi_d_init_hi = 1.1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);
  bad = c;
  bad.n_knots = 1;
  CHECK_THROWS_AS(bad.validate(), ConfigError);

  CHECK(train_mode_name(TrainMode::bvi) == "bvi");
  CHECK(parse_train_mode("mcd") == TrainMode::mcd);
  CHECK_THROWS_AS(parse_train_mode("sgd"), ConfigError);
}

TEST_CASE("the loss falls on a small overfit problem in every mode") {
  Bench b = make_bench();
  for (TrainMode mode : {TrainMode::vn, TrainMode::mcd, TrainMode::bvi}) {
    CAPTURE(train_mode_name(mode));
    TrainConfig cfg = tiny_config(mode);
    TrainResult r = train(b.data, b.model, cfg, mode);
    CHECK(!r.diverged);
    REQUIRE(r.loss_log.size() >= 2);
    CHECK(r.loss_log.front().first == 1);
    CHECK(r.loss_log.back().first == 30);
    CHECK(r.loss_log.back().second < r.loss_log.front().second);
    CHECK(r.snap.iteration == 30);
    CHECK(r.snap.params.train_iterations == 30);
    CHECK(r.snap.params.train_seed == cfg.seed);
    if (mode == TrainMode::bvi) {
      CHECK(r.snap.posterior.n_blocks == 4);
      CHECK_NOTHROW(r.snap.posterior.validate());
    }
  }
}

TEST_CASE("reruns are bit-identical and thread-count independent") {
  Bench b = make_bench();
  for (TrainMode mode : {TrainMode::vn, TrainMode::mcd, TrainMode::bvi}) {
    CAPTURE(train_mode_name(mode));
    TrainConfig cfg = tiny_config(mode);
    cfg.iterations = 12;
    TrainResult r1 = train(b.data, b.model, cfg, mode, 1);
    TrainResult r2 = train(b.data, b.model, cfg, mode, 1);
    TrainResult r4 = train(b.data, b.model, cfg, mode, 4);
    CHECK(flat_of(r1.snap.params) == flat_of(r2.snap.params));
    CHECK(flat_of(r1.snap.params) == flat_of(r4.snap.params));
    CHECK(r1.snap.adam_m == r4.snap.adam_m);
    CHECK(r1.snap.adam_v == r4.snap.adam_v);
    CHECK(r1.loss_log == r2.loss_log);
    CHECK(r1.loss_log == r4.loss_log);
    if (mode == TrainMode::bvi)
      CHECK(r1.snap.posterior.d_blocks == r4.snap.posterior.d_blocks);
  }
}

TEST_CASE("a split run resumed from its checkpoint matches a straight run") {
  Bench b = make_bench();
  for (TrainMode mode : {TrainMode::vn, TrainMode::bvi}) {
    CAPTURE(train_mode_name(mode));
    TrainConfig cfg = tiny_config(mode);
    cfg.iterations = 20;
    TrainResult straight = train(b.data, b.model, cfg, mode, 2);

    TrainConfig half = cfg;
    half.iterations = 8;
    TrainResult first = train(b.data, b.model, half, mode, 2);
    CHECK(first.snap.iteration == 8);

    TrainResult second = train(b.data, b.model, cfg, mode, 2, {}, &first.snap);
    CHECK(second.snap.iteration == 20);
    CHECK(flat_of(second.snap.params) == flat_of(straight.snap.params));
    CHECK(second.snap.adam_m == straight.snap.adam_m);
    CHECK(second.snap.adam_v == straight.snap.adam_v);
    if (mode == TrainMode::bvi)
      CHECK(second.snap.posterior.d_blocks == straight.snap.posterior.d_blocks);
    REQUIRE(!second.loss_log.empty());
    CHECK(second.loss_log.front().first == 9);
  }

  // Wrong-mode resume is rejected.
  TrainConfig cfg = tiny_config(TrainMode::vn);
  cfg.iterations = 4;
  TrainResult r = train(b.data, b.model, cfg, TrainMode::vn, 1);
  CHECK_THROWS_AS(train(b.data, b.model, cfg, TrainMode::mcd, 1, {}, &r.snap),
                  ConfigError);
}

TEST_CASE("checkpoint callback fires on the configured cadence") {
  Bench b = make_bench();
  TrainConfig cfg = tiny_config(TrainMode::vn);
  cfg.iterations = 10;
  cfg.checkpoint_every = 4;
  std::vector<int64_t> seen;
  train(b.data, b.model, cfg, TrainMode::vn, 1,
        [&](const TrainSnapshot& s) { seen.push_back(s.iteration); });
  CHECK(seen == std::vector<int64_t>{4, 8, 10});
}

TEST_CASE("an exploding step trips the divergence guard and keeps the last good state") {
  Bench b = make_bench();
  TrainConfig cfg = tiny_config(TrainMode::vn);
  cfg.iterations = 40;
  cfg.adam_lr = 1e200;
  cfg.checkpoint_every = 1;
  TrainResult r = train(b.data, b.model, cfg, TrainMode::vn, 1);
  CHECK(r.diverged);
  CHECK(r.snap.iteration < 40);
  REQUIRE(!r.loss_log.empty());
  CHECK(!std::isfinite(r.loss_log.back().second));
  // The returned snapshot is finite and usable.
  for (double v : flat_of(r.snap.params)) CHECK(std::isfinite(v));
}

TEST_CASE("training rejects empty datasets") {
  Bench b = make_bench();
  std::vector<TrainSample> none;
  TrainConfig cfg = tiny_config(TrainMode::vn);
  CHECK_THROWS_AS(train(none, b.model, cfg, TrainMode::vn), ConfigError);
}

TEST_CASE("checkpoints round-trip every field bit for bit") {
  Bench b = make_bench();
  const std::filesystem::path dir =
      std::filesystem::temp_directory_path() / "sosuq_ckpt_test";
  std::filesystem::create_directories(dir);

  for (TrainMode mode : {TrainMode::vn, TrainMode::mcd, TrainMode::bvi}) {
    CAPTURE(train_mode_name(mode));
    TrainConfig cfg = tiny_config(mode);
    cfg.iterations = 6;
    TrainResult r = train(b.data, b.model, cfg, mode, 1);
    r.snap.config_echo = "alpha = 1\nbeta = two\n";

    const std::filesystem::path file = dir / (train_mode_name(mode) + ".ckpt");
    save_checkpoint(file, r.snap);
    TrainSnapshot back = load_checkpoint(file);

    CHECK(back.mode == r.snap.mode);
    CHECK(back.iteration == r.snap.iteration);
    CHECK(back.seed == r.snap.seed);
    CHECK(back.config_echo == r.snap.config_echo);
    CHECK(flat_of(back.params) == flat_of(r.snap.params));
    CHECK(back.params.grid == r.snap.params.grid);
    CHECK(back.params.n_layers == r.snap.params.n_layers);
    CHECK(back.params.slowness_scale == r.snap.params.slowness_scale);
    CHECK(back.params.delay_scale == r.snap.params.delay_scale);
    CHECK(back.params.train_seed == r.snap.params.train_seed);
    CHECK(back.params.train_iterations == r.snap.params.train_iterations);
    CHECK(back.adam_m == r.snap.adam_m);
    CHECK(back.adam_v == r.snap.adam_v);
    if (mode == TrainMode::bvi) {
      CHECK(back.posterior.block_dim == r.snap.posterior.block_dim);
      CHECK(back.posterior.d_blocks == r.snap.posterior.d_blocks);
      CHECK(flat_of(back.posterior.params) == flat_of(r.snap.posterior.params));
    }

    // A resumed run from the reloaded snapshot behaves identically to one
    // resumed from the in-memory snapshot.
    TrainConfig more = cfg;
    more.iterations = 10;
    TrainResult from_mem = train(b.data, b.model, more, mode, 1, {}, &r.snap);
    TrainResult from_disk = train(b.data, b.model, more, mode, 1, {}, &back);
    CHECK(flat_of(from_mem.snap.params) == flat_of(from_disk.snap.params));
    CHECK(from_mem.snap.adam_v == from_disk.snap.adam_v);
  }

  CHECK_THROWS_AS(load_checkpoint(dir / "missing.ckpt"), IoError);
  std::filesystem::remove_all(dir);
}
