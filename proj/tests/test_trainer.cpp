#include <catch2/catch_amalgamated.hpp>

#include <cmath>

#include "dlth/trainer.hpp"
#include "support.hpp"

using namespace dlth;

namespace {

DatasetHandle small_data(int count = 48) {
  DatasetSpec s;
  s.count = count;
  return open_dataset(s);
}

RunConfig base_config(TrainPath path) {
  RunConfig c;
  c.path = path;
  c.epochs = 3;
  c.selector.stage_depths = {1, 2, 3};
  c.selector.keep_rate = 0.8;
  c.seed = 17;
  c.optim.batch_size = 16;
  c.checkpoint_every = 1;
  return c;
}

struct Fixture {
  ModelState model = build_model(test::tiny_vit(4, 16, 2, 8), 21);
  DatasetHandle data = small_data();
  TicketSelector selector{model, base_config(TrainPath::lt).selector, data.stats};
  TicketStore store;
  Fixture() { materialize(store, selector, data); }
};

}  // namespace

TEST_CASE("sparsity warmup endpoints, midpoint and monotonicity") {
  for (double target : {0.143, 0.488, 0.9}) {
    for (int tw : {1, 4, 10}) {
      CHECK(warmup_sparsity(0.0, tw, target) == 0.0);
      CHECK(warmup_sparsity(tw, tw, target) == target);
      CHECK(warmup_sparsity(tw + 3.5, tw, target) == target);
      CHECK(std::abs(warmup_sparsity(tw / 2.0, tw, target) - target / 2.0) <= 1e-12);
      double prev = -1.0;
      for (int i = 0; i <= 10000; ++i) {
        const double s = warmup_sparsity(tw * i / 10000.0, tw, target);
        CHECK(s >= prev);
        prev = s;
      }
    }
    CHECK(warmup_sparsity(0.0, 0, target) == target);
  }
}

TEST_CASE("per-stage keep rate inverts the sparsity") {
  for (int stages : {1, 3, 5})
    for (double s : {0.0, 0.25, 0.488}) CHECK(std::pow(effective_keep_rate(s, stages), stages) == Catch::Approx(1.0 - s));
  CHECK_THROWS_AS(effective_keep_rate(1.0, 3), Error);
  CHECK_THROWS_AS(effective_keep_rate(0.2, 0), Error);
}

TEST_CASE("kept count per epoch") {
  auto c = base_config(TrainPath::lt);
  const int target = stage_keep_counts(196, 0.8, 3).back();
  CHECK(epoch_keep_count(c, 196, 0) == target);
  c.warmup_epochs = 4;
  CHECK(epoch_keep_count(c, 196, 0) == 196);
  int prev = 196;
  for (int e = 1; e < 4; ++e) {
    const int k = epoch_keep_count(c, 196, e);
    CHECK(k <= prev);
    CHECK(k >= target);
    prev = k;
  }
  CHECK(epoch_keep_count(c, 196, 4) == target);
  c.path = TrainPath::full;
  CHECK(epoch_keep_count(c, 196, 2) == 196);
}

TEST_CASE("LT and RC see the same images and token counts") {
  Fixture f;
  std::vector<StepRecord> lt_steps, rc_steps;
  TrainContext lt_ctx;
  lt_ctx.store = &f.store;
  lt_ctx.selector_fingerprint = f.selector.fingerprint();
  lt_ctx.observer = [&](const StepRecord& r) { lt_steps.push_back(r); };
  TrainContext rc_ctx;
  rc_ctx.store = &f.store;
  rc_ctx.observer = [&](const StepRecord& r) { rc_steps.push_back(r); };

  auto lt_cfg = base_config(TrainPath::lt);
  lt_cfg.epochs = 2;
  auto rc_cfg = lt_cfg;
  rc_cfg.path = TrainPath::rc;
  const auto lt = train(f.model, f.data, lt_cfg, lt_ctx);
  const auto rc = train(f.model, f.data, rc_cfg, rc_ctx);
  REQUIRE(lt_steps.size() == rc_steps.size());
  REQUIRE(lt_steps.size() == 6);
  const int target = stage_keep_counts(16, 0.8, 3).back();
  for (std::size_t i = 0; i < lt_steps.size(); ++i) {
    CHECK(lt_steps[i].indices == rc_steps[i].indices);
    CHECK(lt_steps[i].kept_counts == rc_steps[i].kept_counts);
    for (int k : lt_steps[i].kept_counts) CHECK(k == target);
  }
  CHECK(lt.second.epochs.back().sparsity == Catch::Approx(1.0 - target / 16.0));
  CHECK(lt.first.digest() != rc.first.digest());
}

TEST_CASE("LT warmup feeds ranking prefixes") {
  Fixture f;
  auto cfg = base_config(TrainPath::lt);
  cfg.warmup_epochs = 2;
  std::vector<int> first_epoch_counts;
  TrainContext ctx;
  ctx.store = &f.store;
  ctx.selector_fingerprint = f.selector.fingerprint();
  ctx.observer = [&](const StepRecord& r) {
    if (r.epoch == 1) first_epoch_counts.insert(first_epoch_counts.end(), r.kept_counts.begin(), r.kept_counts.end());
  };
  const auto [model, history] = train(f.model, f.data, cfg, ctx);
  REQUIRE(history.epochs.size() == 3);
  CHECK(history.epochs[0].sparsity == 0.0);
  for (int k : first_epoch_counts) CHECK(k == epoch_keep_count(cfg, 16, 1));
  CHECK(history.epochs[2].sparsity == Catch::Approx(1.0 - stage_keep_counts(16, 0.8, 3).back() / 16.0));
}

TEST_CASE("resuming from a checkpoint matches an uninterrupted run") {
  Fixture f;
  test::TempDir dir("resume");
  auto cfg = base_config(TrainPath::full);
  cfg.run_dir = (dir.path / "whole").string();
  const auto whole = train(f.model, f.data, cfg);

  cfg.run_dir = (dir.path / "cut").string();
  TrainContext stop;
  stop.on_epoch = [](const EpochRecord& r) {
    if (r.epoch == 2) throw std::runtime_error("interrupted");
  };
  CHECK_THROWS_AS(train(f.model, f.data, cfg, stop), std::runtime_error);
  TrainContext resume;
  resume.resume = true;
  const auto resumed = train(f.model, f.data, cfg, resume);
  CHECK(resumed.first.digest() == whole.first.digest());
  REQUIRE(resumed.second.epochs.size() == 3);
  for (std::size_t i = 0; i < 3; ++i) {
    CHECK(resumed.second.epochs[i].digest == whole.second.epochs[i].digest);
    CHECK(resumed.second.epochs[i].loss == whole.second.epochs[i].loss);
  }
}

TEST_CASE("LT training refuses a missing or foreign store") {
  Fixture f;
  auto cfg = base_config(TrainPath::lt);
  cfg.epochs = 1;
  try {
    train(f.model, f.data, cfg);
    FAIL("LT trained without a store");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::configuration);
  }
  TrainContext ctx;
  ctx.store = &f.store;
  ctx.selector_fingerprint = std::string(64, 'f');
  try {
    train(f.model, f.data, cfg, ctx);
    FAIL("LT trained with a foreign store");
  } catch (const Error& e) {
    CHECK(e.kind() == ErrorKind::provenance);
  }
  ctx.selector_fingerprint = f.selector.fingerprint();
  cfg.selector.keep_rate = 0.7;
  CHECK_THROWS_AS(train(f.model, f.data, cfg, ctx), Error);
}

TEST_CASE("occlusion mode keeps the dense sequence and works for CNNs") {
  DatasetHandle data = small_data(16);
  ModelConfig c = preset("cnn-desk");
  c.depth = 8;
  c.embed_dim = 4;
  auto cfg = base_config(TrainPath::rc);
  cfg.epochs = 1;
  cfg.input_mode = InputMode::occlude;
  std::vector<int> counts;
  TrainContext ctx;
  ctx.observer = [&](const StepRecord& r) { counts.insert(counts.end(), r.kept_counts.begin(), r.kept_counts.end()); };
  const auto [model, history] = train(build_model(c, 3), data, cfg, ctx);
  CHECK(counts.size() == 16);
  CHECK(std::isfinite(history.epochs[0].loss));
  cfg.input_mode = InputMode::remove;
  CHECK_THROWS_AS(train(build_model(c, 3), data, cfg), Error);
}
