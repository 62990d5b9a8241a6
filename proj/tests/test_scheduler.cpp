#include <doctest.h>

#include <cmath>

#include "tandem/scheduler.hpp"

using namespace tandem;

namespace {

ModelConfig rollout_model() {
  ModelConfig mc;
  mc.width = 32;
  mc.layers = 2;
  mc.heads = 2;
  mc.tokens_per_frame = 4;
  mc.prompt_len = 4;
  mc.reasoning_len = 4;
  mc.refiner.blocks = 1;
  mc.refiner.cond_hidden = 32;
  mc.refiner.trunc_steps = 4;
  return mc;
}

RenderConfig rollout_render(const ModelConfig& mc) {
  RenderConfig rc;
  rc.tokens_per_frame = mc.tokens_per_frame;
  rc.width = mc.width;
  return rc;
}

Scenario test_scenario(std::uint32_t id = 1) {
  return build_scenario(id, 0xfeedULL + id, ScenarioParams{});
}

}  // namespace

TEST_CASE("clock config validation") {
  ClockConfig c;
  CHECK_NOTHROW(c.validate());
  c.ue_period = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.ue_period = 1;
  c.tick_s = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
  c.tick_s = 0.5;
  c.ue_compute_scale = 0;
  CHECK_THROWS_AS(c.validate(), ConfigError);
}

TEST_CASE("stale epoch staircase") {
  // P=3 over 9 ticks: 0,0,0,3,3,3,6,6,6.
  const std::int64_t want[9] = {0, 0, 0, 3, 3, 3, 6, 6, 6};
  for (std::int64_t t = 0; t < 9; ++t) CHECK(stale_epoch(t, 3) == want[t]);
  for (std::int64_t t = 0; t < 40; ++t) {
    CHECK(stale_epoch(t, 1) == t);
    CHECK(stale_epoch(t, 8) == 8 * (t / 8));
    CHECK(stale_epoch(t, 8) <= t);
    CHECK(t - stale_epoch(t, 8) <= 7);
  }
}

TEST_CASE("playback env frames and protocol fields") {
  const ModelConfig mc = rollout_model();
  const Scenario sc = test_scenario();
  PlaybackEnv env(sc, rollout_render(mc), mc.history_frames);

  const int fps = static_cast<int>(sc.params.rate_hz + 0.5);
  CHECK(env.max_ticks() == sc.frame_count() - kHorizons * fps);
  CHECK(env.max_ticks() >= 40);

  const Mat scene = env.ue_scene(6);
  CHECK(scene.rows() == mc.history_frames * mc.tokens_per_frame);
  CHECK(scene.cols() == mc.width);

  SUBCASE("steady state matches the dataset window layout") {
    const SyncSample smp = env.sample_at(8, 6);
    CHECK(smp.scenario_id == sc.id);
    CHECK(smp.anchor == 3);  // window 3..6 ends at the epoch
    CHECK(smp.k == 5);       // live frame sits 5 frames past the anchor
    CHECK(smp.rgb.rows() == (mc.history_frames + 1) * mc.tokens_per_frame);
    CHECK(smp.bev.rows() == mc.tokens_per_frame);
    const EgoState& live = sc.frames[8];
    CHECK(smp.ego[0] == live.v);
    CHECK(smp.ego[1] == live.theta);
    CHECK(smp.ego[2] == live.a);
    for (int f = 0; f < mc.history_frames; ++f)
      CHECK(smp.ego_hist(f, 0) == sc.frames[static_cast<std::size_t>(3 + f)].v);
    CHECK(smp.labels.tokens == label_decisions(sc, 8).tokens);
    const TrajectorySet gt = ground_truth(sc, 8);
    for (int i = 0; i < gt.temporal.rows(); ++i) {
      CHECK(smp.gt.temporal(i, 0) == gt.temporal(i, 0));
      CHECK(smp.gt.temporal(i, 1) == gt.temporal(i, 1));
    }
    // History rows are exactly what the scene window at that epoch encodes.
    const Mat scene6 = env.ue_scene(6);
    for (int r = 0; r < scene6.rows(); ++r)
      for (int c = 0; c < scene6.cols(); ++c) CHECK(smp.rgb(r, c) == scene6(r, c));
  }

  SUBCASE("start of scenario left-clamps the window") {
    const SyncSample smp = env.sample_at(0, 0);
    CHECK(smp.anchor == 0);
    CHECK(smp.k == 0);
    // All history slots replay frame 0.
    for (int f = 1; f < mc.history_frames; ++f)
      for (int c = 0; c < 3; ++c) CHECK(smp.ego_hist(f, c) == smp.ego_hist(0, c));
  }

  SUBCASE("invalid requests are rejected") {
    CHECK_THROWS_AS(env.sample_at(4, 6), CacheError);   // snapshot from the future
    CHECK_THROWS_AS(env.sample_at(4, -1), CacheError);  // no snapshot at all
    CHECK_THROWS_AS(env.sample_at(env.max_ticks(), env.max_ticks()), DataError);
  }
}

TEST_CASE("deterministic rollout follows the staircase") {
  const ModelConfig mc = rollout_model();
  Policy policy;
  policy.init(mc);
  const Scenario sc = test_scenario();

  ClockConfig clock;
  clock.mode = ClockMode::decoupled;
  clock.ue_period = 3;
  const RolloutResult res = run_rollout(sc, policy, clock, 9, rollout_render(mc));

  REQUIRE(res.reports.size() == 9);
  REQUIRE(res.decisions.size() == 9);
  REQUIRE(res.trajectories.size() == 9);
  const std::int64_t want[9] = {0, 0, 0, 3, 3, 3, 6, 6, 6};
  for (std::size_t i = 0; i < 9; ++i) {
    const TickReport& rep = res.reports[i];
    CHECK(rep.t == static_cast<std::int64_t>(i));
    CHECK(rep.epoch == want[i]);
    CHECK(rep.staleness == rep.t - rep.epoch);
    CHECK(rep.staleness >= 0);
    CHECK(rep.staleness <= clock.ue_period - 1);
    CHECK((rep.ue_s > 0) == (i % 3 == 0));  // encode exactly at period boundaries
    CHECK(rep.ae_s > 0);
    CHECK(res.trajectories[i].temporal.rows() == mc.temporal_points);
    CHECK(res.trajectories[i].spatial.rows() == mc.spatial_points);
  }
  CHECK(res.mean_ue_s > 0);

  // Bit-for-bit replayable.
  const RolloutResult res2 = run_rollout(sc, policy, clock, 9, rollout_render(mc));
  CHECK(res.digest == res2.digest);
  for (std::size_t i = 0; i < 9; ++i)
    CHECK(res.reports[i].out_digest == res2.reports[i].out_digest);
}

TEST_CASE("coupled mode has zero staleness and encodes every tick") {
  const ModelConfig mc = rollout_model();
  Policy policy;
  policy.init(mc);
  const Scenario sc = test_scenario();

  ClockConfig clock;
  clock.mode = ClockMode::coupled;
  clock.ue_period = 5;  // ignored in coupled mode
  const RolloutResult res = run_rollout(sc, policy, clock, 7, rollout_render(mc));
  for (const TickReport& rep : res.reports) {
    CHECK(rep.epoch == rep.t);
    CHECK(rep.staleness == 0);
    CHECK(rep.ue_s > 0);
  }
}

TEST_CASE("decoupled at period one is bit-identical to coupled") {
  const ModelConfig mc = rollout_model();
  Policy policy;
  policy.init(mc);
  const Scenario sc = test_scenario(3);

  ClockConfig coupled;
  coupled.mode = ClockMode::coupled;
  ClockConfig decoupled;
  decoupled.mode = ClockMode::decoupled;
  decoupled.ue_period = 1;

  const RolloutResult a = run_rollout(sc, policy, coupled, 10, rollout_render(mc));
  const RolloutResult b = run_rollout(sc, policy, decoupled, 10, rollout_render(mc));
  REQUIRE(a.reports.size() == b.reports.size());
  for (std::size_t i = 0; i < a.reports.size(); ++i) {
    CHECK(a.reports[i].out_digest == b.reports[i].out_digest);
    CHECK(a.reports[i].epoch == b.reports[i].epoch);
  }
  CHECK(a.digest == b.digest);
}

TEST_CASE("compute scale burns time without changing outputs") {
  const ModelConfig mc = rollout_model();
  Policy policy;
  policy.init(mc);
  const Scenario sc = test_scenario();

  ClockConfig base;
  base.ue_period = 2;
  ClockConfig scaled = base;
  scaled.ue_compute_scale = 3;

  const RolloutResult a = run_rollout(sc, policy, base, 6, rollout_render(mc));
  const RolloutResult b = run_rollout(sc, policy, scaled, 6, rollout_render(mc));
  CHECK(a.digest == b.digest);
  CHECK(b.mean_ue_s > a.mean_ue_s);
}

TEST_CASE("refiner flag reshapes trajectories but never decisions") {
  const ModelConfig mc = rollout_model();
  Policy policy;
  policy.init(mc);
  const Scenario sc = test_scenario(5);

  ClockConfig clock;
  clock.ue_period = 2;
  const RolloutResult with = run_rollout(sc, policy, clock, 6, rollout_render(mc), true);
  const RolloutResult without = run_rollout(sc, policy, clock, 6, rollout_render(mc), false);
  REQUIRE(with.decisions.size() == without.decisions.size());
  bool traj_diff = false;
  for (std::size_t i = 0; i < with.decisions.size(); ++i) {
    CHECK(with.decisions[i].tokens == without.decisions[i].tokens);
    const Mat& a = with.trajectories[i].temporal;
    const Mat& b = without.trajectories[i].temporal;
    for (int r = 0; r < a.rows(); ++r)
      for (int c = 0; c < a.cols(); ++c)
        if (a(r, c) != b(r, c)) traj_diff = true;
  }
  CHECK(traj_diff);  // untrained refiner noise actually touches the output
}

TEST_CASE("benchmark mode keeps the fast clock free of encode stalls") {
  const ModelConfig mc = rollout_model();
  Policy policy;
  policy.init(mc);
  const Scenario sc = test_scenario();

  ClockConfig clock;
  clock.mode = ClockMode::decoupled;
  clock.ue_period = 3;
  clock.deterministic = false;
  const RolloutResult res = run_rollout(sc, policy, clock, 8, rollout_render(mc));
  REQUIRE(res.reports.size() == 8);
  CHECK(res.reports[0].ue_s > 0);  // forced warm-up encode charged to tick 0
  for (const TickReport& rep : res.reports) {
    CHECK(rep.epoch >= 0);
    CHECK(rep.epoch <= rep.t);
    CHECK(rep.staleness == rep.t - rep.epoch);
    if (rep.t > 0) CHECK(rep.ue_s == 0);  // cache hits: worker pays the encodes
    CHECK(rep.ae_s > 0);
  }
  CHECK(res.mean_ue_s > 0);
}

TEST_CASE("rollout rejects broken setups") {
  const ModelConfig mc = rollout_model();
  Policy policy;
  policy.init(mc);
  const Scenario sc = test_scenario();
  ClockConfig clock;

  CHECK_THROWS_AS(run_rollout(sc, policy, clock, 0, rollout_render(mc)), ConfigError);
  CHECK_THROWS_AS(run_rollout(sc, policy, clock, 100000, rollout_render(mc)), DataError);
  RenderConfig wrong = rollout_render(mc);
  wrong.width = mc.width + 1;
  CHECK_THROWS_AS(run_rollout(sc, policy, clock, 4, wrong), ConfigError);
}
