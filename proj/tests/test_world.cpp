#include <doctest.h>

#include <cmath>
#include <cstdio>
#include <set>

#include "tandem/dataset.hpp"
#include "tandem/render.hpp"
#include "tandem/scenario.hpp"

using namespace tandem;

namespace {
SynthParams small_params() {
  SynthParams p;
  p.scenario_count = 8;
  p.samples_per_scenario = 6;
  p.render.tokens_per_frame = 4;
  p.render.width = 16;
  p.seed = 555;
  return p;
}
}  // namespace

TEST_CASE("scenario simulation is deterministic and physically sane") {
  ScenarioParams params;
  const Scenario a = build_scenario(3, 1234, params);
  const Scenario b = build_scenario(3, 1234, params);
  REQUIRE(a.frame_count() == b.frame_count());
  for (int i = 0; i < a.frame_count(); ++i) {
    CHECK(a.frames[static_cast<std::size_t>(i)].x == b.frames[static_cast<std::size_t>(i)].x);
    CHECK(a.frames[static_cast<std::size_t>(i)].v == b.frames[static_cast<std::size_t>(i)].v);
  }
  // 2 Hz trace over duration + margin
  CHECK(a.frame_count() == static_cast<int>((params.duration_s + params.margin_s) * 2) + 1);
  for (const auto& s : a.frames) {
    CHECK(s.v >= 0.0);
    CHECK(s.v <= 20.0);
    CHECK(std::isfinite(s.x));
    CHECK(std::isfinite(s.y));
  }
  // frame trace subsamples the fine trace exactly
  const int per = a.fine_per_frame();
  for (int i = 0; i < a.frame_count(); ++i) {
    CHECK(a.frames[static_cast<std::size_t>(i)].x ==
          a.fine[static_cast<std::size_t>(i * per)].x);
  }
}

TEST_CASE("labels react to scripted maneuvers as thresholds dictate") {
  // Hand-built scenario: constant strong braking from 10 m/s.
  ScenarioParams params;
  Scenario sc;
  sc.params = params;
  const double dt = 1.0 / params.sim_hz;
  EgoState s;
  s.v = 10.0;
  const double brake = -2.0;
  const int steps = static_cast<int>(26 * params.sim_hz);
  for (int i = 0; i <= steps; ++i) {
    s.a = brake;
    sc.fine.push_back(s);
    if (i % sc.fine_per_frame() == 0) sc.frames.push_back(s);
    s.x += s.v * dt;
    s.v = std::max(0.0, s.v + brake * dt);
  }
  // At frame 0 (v=10): in 1 s v=8 -> slow; still moving. By 5 s it has
  // stopped; a frame late enough sees "stop" at every horizon.
  const MetaActionSequence early = label_decisions(sc, 0);
  CHECK(early.longitudinal(0) == static_cast<int>(Longitudinal::slow));
  CHECK(early.lateral(0) == static_cast<int>(Lateral::straight));
  const MetaActionSequence late = label_decisions(sc, 12);  // t = 6 s, stopped
  for (int h = 0; h < kHorizons; ++h)
    CHECK(late.longitudinal(h) == static_cast<int>(Longitudinal::stop));

  // Ground truth is ego-frame: straight-line braking means y == 0, x >= 0.
  const TrajectorySet gt = ground_truth(sc, 0);
  for (int i = 0; i < gt.temporal.rows(); ++i) {
    CHECK(gt.temporal(i, 0) >= 0.0);
    CHECK(std::abs(gt.temporal(i, 1)) <= 1e-9);
  }
  // spatial points are evenly spaced along the path
  for (int p = 1; p < gt.spatial.rows(); ++p) {
    const double d0 = gt.spatial(p, 0) - gt.spatial(p - 1, 0);
    const double d1 = gt.spatial(1, 0) - gt.spatial(0, 0);
    CHECK(std::abs(d0 - d1) <= 1e-6);
  }
}

TEST_CASE("turn labels use the per-second heading-rate bands") {
  ScenarioParams params;
  Scenario sc;
  sc.params = params;
  const double dt = 1.0 / params.sim_hz;
  EgoState s;
  s.v = 8.0;
  const double yaw_rate = 5.0 * M_PI / 180.0;  // 5 deg/s -> slight band
  const double kappa = yaw_rate / s.v;
  const int steps = static_cast<int>(26 * params.sim_hz);
  for (int i = 0; i <= steps; ++i) {
    s.kappa = kappa;
    sc.fine.push_back(s);
    if (i % sc.fine_per_frame() == 0) sc.frames.push_back(s);
    s.x += s.v * std::cos(s.theta) * dt;
    s.y += s.v * std::sin(s.theta) * dt;
    s.theta += s.v * kappa * dt;
  }
  const MetaActionSequence seq = label_decisions(sc, 0);
  for (int h = 0; h < kHorizons; ++h) {
    CHECK(seq.lateral(h) == static_cast<int>(Lateral::slight_left));
    CHECK(seq.longitudinal(h) == static_cast<int>(Longitudinal::keep));
  }
}

TEST_CASE("renderer tokens are deterministic and shaped as configured") {
  ScenarioParams sp;
  const Scenario sc = build_scenario(1, 99, sp);
  RenderConfig rc;
  rc.tokens_per_frame = 8;
  rc.width = 32;
  const Renderer r1(rc), r2(rc);
  const Mat t1 = r1.rgb_tokens(sc, 5);
  const Mat t2 = r2.rgb_tokens(sc, 5);
  CHECK(t1.rows() == 8);
  CHECK(t1.cols() == 32);
  REQUIRE(t1.size() == t2.size());
  for (std::size_t i = 0; i < t1.size(); ++i) CHECK(t1.data()[i] == t2.data()[i]);

  // different frames produce different tokens
  const Mat t3 = r1.rgb_tokens(sc, 20);
  bool differs = false;
  for (std::size_t i = 0; i < t1.size(); ++i) differs = differs || t1.data()[i] != t3.data()[i];
  CHECK(differs);

  const Mat b = r1.bev_tokens(sc, 5);
  CHECK(b.rows() == 8);
  CHECK(b.cols() == 32);
}

TEST_CASE("synthesis follows the offset protocol") {
  SynthParams p = small_params();
  p.scenario_count = 40;
  p.samples_per_scenario = 25;  // 1000 samples
  p.async_fraction = 0.5;
  const auto samples = synth_samples(p);
  REQUIRE(samples.size() == 1000);

  int n3 = 0, n4 = 0, n5 = 0;
  for (const auto& s : samples) {
    REQUIRE(s.k >= 3);
    REQUIRE(s.k <= 5);
    if (s.k == 3) ++n3;
    if (s.k == 4) ++n4;
    if (s.k == 5) ++n5;
    s.labels.validate();
    CHECK(s.rgb.rows() == (p.history_frames + 1) * p.render.tokens_per_frame);
    CHECK(s.gt.temporal.rows() == kTemporalPoints);
    CHECK(s.gt.spatial.rows() == kSpatialPoints);
  }
  // async fraction and the 4/5 split are both binomial; 3 sigma bands
  const double n = static_cast<double>(samples.size());
  CHECK(std::abs(n4 + n5 - 0.5 * n) <= 3.0 * std::sqrt(n * 0.25));
  const double na = static_cast<double>(n4 + n5);
  CHECK(std::abs(n4 - 0.5 * na) <= 3.0 * std::sqrt(na * 0.25));

  // sync samples duplicate the last history frame as the live frame
  const int tpf = p.render.tokens_per_frame;
  for (const auto& s : samples) {
    if (s.k != 3) continue;
    const Mat last_hist = slice_rows(s.rgb, (p.history_frames - 1) * tpf, tpf);
    const Mat live = slice_rows(s.rgb, p.history_frames * tpf, tpf);
    for (std::size_t i = 0; i < live.size(); ++i)
      CHECK(last_hist.data()[i] == live.data()[i]);
    break;
  }
}

TEST_CASE("forced offsets pin k without disturbing anchors") {
  SynthParams p = small_params();
  auto base = synth_samples(p);
  p.force_k = 5;
  auto forced = synth_samples(p);
  REQUIRE(base.size() == forced.size());
  for (std::size_t i = 0; i < base.size(); ++i) {
    CHECK(forced[i].k == 5);
    CHECK(base[i].anchor == forced[i].anchor);
    CHECK(base[i].scenario_id == forced[i].scenario_id);
  }
}

TEST_CASE("dataset files are byte-identical across regenerations") {
  const SynthParams p = small_params();
  const auto samples = synth_samples(p);
  write_dataset("ds_a.bin", samples, p);
  write_dataset("ds_b.bin", synth_samples(p), p);
  CHECK(file_digest("ds_a.bin") == file_digest("ds_b.bin"));

  DatasetHeader h;
  const auto loaded = load_dataset("ds_a.bin", &h);
  REQUIRE(loaded.size() == samples.size());
  CHECK(h.width == p.render.width);
  CHECK(h.tokens_per_frame == p.render.tokens_per_frame);
  CHECK(h.rate_hz == p.scenario.rate_hz);
  for (std::size_t i = 0; i < loaded.size(); ++i) {
    CHECK(loaded[i].k == samples[i].k);
    CHECK(loaded[i].anchor == samples[i].anchor);
    CHECK(loaded[i].labels == samples[i].labels);
    // tokens round-trip through f32 storage; ground truth through f64
    for (std::size_t e = 0; e < loaded[i].gt.temporal.size(); ++e)
      CHECK(loaded[i].gt.temporal.data()[e] == samples[i].gt.temporal.data()[e]);
    for (std::size_t e = 0; e < loaded[i].rgb.size(); ++e)
      CHECK(loaded[i].rgb.data()[e] ==
            static_cast<double>(static_cast<float>(samples[i].rgb.data()[e])));
  }
  std::remove("ds_a.bin");
  std::remove("ds_a.bin.manifest");
  std::remove("ds_b.bin");
  std::remove("ds_b.bin.manifest");
}

TEST_CASE("every meta-action symbol appears in a big enough corpus") {
  SynthParams p = small_params();
  p.scenario_count = 60;
  p.samples_per_scenario = 10;
  const auto samples = synth_samples(p);
  std::set<int> lat, lon;
  for (const auto& s : samples)
    for (int h = 0; h < kHorizons; ++h) {
      lat.insert(s.labels.lateral(h));
      lon.insert(s.labels.longitudinal(h));
    }
  CHECK(lat.size() == 5);
  CHECK(lon.size() == 4);
}
