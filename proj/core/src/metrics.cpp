#include "tandem/metrics.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <iomanip>
#include <limits>
#include <memory>
#include <sstream>

#include "tandem/error.hpp"
#include "tandem/kv_cache.hpp"

namespace tandem {

namespace {

double mean3(const std::array<double, kHorizons>& a) {
  return (a[0] + a[1] + a[2]) / 3.0;
}

double mean2(const std::array<double, 2>& a) { return (a[0] + a[1]) / 2.0; }

void check_close(double got, double want, const char* what) {
  if (std::abs(got - want) > 1e-9)
    throw DataError(std::string("report: ") + what + " average drifted from its entries");
}

void check_rate(double r, const char* what) {
  if (!(r >= 0.0 && r <= 100.0))
    throw DataError(std::string("report: ") + what + " outside [0, 100]");
}

}  // namespace

void OpenLoopReport::validate() const {
  if (samples <= 0) throw DataError("report: no samples");
  check_close(l2_avg, mean3(l2), "L2");
  check_close(collision_avg, mean3(collision), "collision");
  check_close(lateral_avg, mean2(lateral_acc), "lateral accuracy");
  check_close(longitudinal_avg, mean2(longitudinal_acc), "longitudinal accuracy");
  check_close(joint_avg, mean2(joint_acc), "joint accuracy");
  for (double c : collision) check_rate(c, "collision");
  for (int h = 0; h < 2; ++h) {
    check_rate(lateral_acc[h], "lateral accuracy");
    check_rate(longitudinal_acc[h], "longitudinal accuracy");
    check_rate(joint_acc[h], "joint accuracy");
    if (joint_acc[h] > std::min(lateral_acc[h], longitudinal_acc[h]) + 1e-12)
      throw DataError("report: joint accuracy exceeds a single-head accuracy");
  }
  for (double d : l2)
    if (!(d >= 0) || !std::isfinite(d)) throw DataError("report: bad L2 entry");
}

const Scenario& ScenarioBank::get(std::uint32_t scenario_id) {
  auto it = cache_.find(scenario_id);
  if (it == cache_.end())
    it = cache_.emplace(scenario_id, sample_scenario(params_, scenario_id)).first;
  return it->second;
}

OpenLoopReport eval_open_loop_fn(const PlanFn& plan, const std::vector<SyncSample>& samples,
                                 ScenarioBank& bank, const EvalParams& params) {
  if (samples.empty()) throw DataError("eval: empty dataset");
  if (params.ego_radius < 0) throw ConfigError("eval: negative ego radius");

  std::array<double, kHorizons> l2_sum{};
  std::array<std::int64_t, kHorizons> hits{};
  std::array<std::int64_t, 2> lat_ok{}, lon_ok{}, joint_ok{};

  for (const SyncSample& smp : samples) {
    const PolicyOutput po = plan(smp);
    const Mat& pred = po.refined.temporal;
    if (pred.rows() < 2 * kHorizons || pred.cols() != 2)
      throw ShapeError("eval: predicted temporal trajectory " + pred.shape_str() +
                       ", need at least " + std::to_string(2 * kHorizons) + "x2");

    for (int h = 1; h <= kHorizons; ++h) {
      const int w = 2 * h - 1;  // waypoint nearest h seconds at 2 Hz
      const double dx = pred(w, 0) - smp.gt.temporal(w, 0);
      const double dy = pred(w, 1) - smp.gt.temporal(w, 1);
      l2_sum[h - 1] += std::hypot(dx, dy);
    }

    // Collision proxy: inflated obstacle discs in the live frame's ego
    // coordinates against the predicted waypoints up to each horizon.
    const Scenario& sc = bank.get(smp.scenario_id);
    const int live = smp.anchor + smp.k;
    if (live >= sc.frame_count())
      throw DataError("eval: sample live frame " + std::to_string(live) +
                      " outside scenario " + std::to_string(smp.scenario_id));
    const EgoState& pose = sc.frames[static_cast<std::size_t>(live)];
    std::vector<std::array<double, 3>> discs;  // ego x, ego y, inflated radius
    discs.reserve(sc.obstacles.size());
    for (const Obstacle& ob : sc.obstacles) {
      double ex, ey;
      world_to_ego(pose, ob.x, ob.y, &ex, &ey);
      discs.push_back({ex, ey, ob.radius + params.ego_radius});
    }
    bool hit = false;
    for (int h = 1; h <= kHorizons; ++h) {
      for (int w = 2 * (h - 1); w < 2 * h && !hit; ++w)
        for (const auto& d : discs)
          if (std::hypot(pred(w, 0) - d[0], pred(w, 1) - d[1]) < d[2]) {
            hit = true;
            break;
          }
      if (hit) ++hits[h - 1];  // cumulative: a hit by h seconds counts from h on
    }

    for (int h = 0; h < 2; ++h) {
      const bool lat = po.decisions.lateral(h) == smp.labels.lateral(h);
      const bool lon = po.decisions.longitudinal(h) == smp.labels.longitudinal(h);
      lat_ok[h] += lat;
      lon_ok[h] += lon;
      joint_ok[h] += lat && lon;
    }
  }

  const double n = static_cast<double>(samples.size());
  OpenLoopReport rep;
  rep.samples = static_cast<int>(samples.size());
  for (int h = 0; h < kHorizons; ++h) {
    rep.l2[h] = l2_sum[h] / n;
    rep.collision[h] = 100.0 * static_cast<double>(hits[h]) / n;
  }
  for (int h = 0; h < 2; ++h) {
    rep.lateral_acc[h] = 100.0 * static_cast<double>(lat_ok[h]) / n;
    rep.longitudinal_acc[h] = 100.0 * static_cast<double>(lon_ok[h]) / n;
    rep.joint_acc[h] = 100.0 * static_cast<double>(joint_ok[h]) / n;
  }
  rep.l2_avg = mean3(rep.l2);
  rep.collision_avg = mean3(rep.collision);
  rep.lateral_avg = mean2(rep.lateral_acc);
  rep.longitudinal_avg = mean2(rep.longitudinal_acc);
  rep.joint_avg = mean2(rep.joint_acc);
  rep.validate();
  return rep;
}

OpenLoopReport eval_open_loop(Policy& policy, const std::vector<SyncSample>& samples,
                              ScenarioBank& bank, const EvalParams& params) {
  // Samples sharing a history window share the understanding-expert snapshot.
  std::map<std::pair<std::uint32_t, std::uint16_t>,
           std::shared_ptr<const LayerKVCache>>
      snaps;
  const PlanFn plan = [&](const SyncSample& smp) {
    const auto key = std::make_pair(smp.scenario_id, smp.anchor);
    auto it = snaps.find(key);
    if (it == snaps.end())
      it = snaps.emplace(key, std::make_shared<const LayerKVCache>(policy.encode_sample(smp)))
               .first;
    return policy.infer(smp, *it->second, params.use_refiner);
  };
  return eval_open_loop_fn(plan, samples, bank, params);
}

std::vector<SweepRow> staleness_sweep(Policy& policy, const SynthParams& base,
                                      const std::vector<int>& offsets,
                                      const EvalParams& params) {
  if (offsets.empty()) throw ConfigError("sweep: no offsets");
  std::vector<SweepRow> rows;
  rows.reserve(offsets.size());
  for (int off : offsets) {
    if (off < 0 || off > 2)
      throw ConfigError("sweep: offset " + std::to_string(off) +
                        " outside the protocol range [0, 2]");
    SynthParams p = base;
    p.force_k = 3 + off;
    const std::vector<SyncSample> samples = synth_samples(p);
    ScenarioBank bank(p);
    SweepRow row;
    row.offset = off;
    row.report = eval_open_loop(policy, samples, bank, params);
    rows.push_back(std::move(row));
  }
  return rows;
}

// ---------------------------------------------------------------------------
// Closed loop
// ---------------------------------------------------------------------------

namespace {

// Arc-length progress along the scripted fine trace up to the goal vertex.
class RouteProgress {
 public:
  RouteProgress(const Scenario& sc, std::size_t goal_fine) : sc_(&sc), goal_(goal_fine) {
    cum_.resize(goal_fine + 1, 0.0);
    for (std::size_t i = 1; i <= goal_fine; ++i) {
      const double dx = sc.fine[i].x - sc.fine[i - 1].x;
      const double dy = sc.fine[i].y - sc.fine[i - 1].y;
      cum_[i] = cum_[i - 1] + std::hypot(dx, dy);
    }
  }

  double total() const { return cum_.back(); }

  // Fraction of route arc length at the fine vertex nearest (x, y).
  double fraction(double x, double y) const {
    std::size_t best = 0;
    double best_d = std::numeric_limits<double>::infinity();
    for (std::size_t i = 0; i <= goal_; ++i) {
      const double d = std::hypot(sc_->fine[i].x - x, sc_->fine[i].y - y);
      if (d < best_d) {
        best_d = d;
        best = i;
      }
    }
    return total() > 1e-9 ? cum_[best] / total() : 0.0;
  }

 private:
  const Scenario* sc_;
  std::size_t goal_;
  std::vector<double> cum_;
};

int route_frame(const Scenario& sc, std::int64_t t) {
  return static_cast<int>(std::min<std::int64_t>(t, sc.frame_count() - 1));
}

ClosedLoopRun run_one(const Controller& controller, const Scenario& sc,
                      const ClosedLoopParams& params, int temporal_points) {
  const int goal_frame =
      static_cast<int>(std::lround(sc.params.duration_s * sc.params.rate_hz));
  if (goal_frame >= sc.frame_count()) throw DataError("closed loop: scenario too short");
  const double gx = sc.frames[static_cast<std::size_t>(goal_frame)].x;
  const double gy = sc.frames[static_cast<std::size_t>(goal_frame)].y;
  const std::size_t goal_fine =
      static_cast<std::size_t>(goal_frame) * static_cast<std::size_t>(sc.fine_per_frame());
  const RouteProgress route(sc, goal_fine);

  const int sub = static_cast<int>(std::lround(params.clock.tick_s * sc.params.sim_hz));
  if (sub <= 0) throw ConfigError("closed loop: tick shorter than the simulation step");
  const double dt = params.clock.tick_s / sub;

  ClosedLoopRun run;
  run.scenario_id = sc.id;
  std::vector<EgoState> sim{sc.frames[0]};
  sim.reserve(static_cast<std::size_t>(params.max_ticks) + 1);

  bool done = false;
  for (std::int64_t t = 0; t < params.max_ticks && !done; ++t) {
    SimView view;
    view.scenario = &sc;
    view.sim_frames = &sim;
    view.t = t;
    view.epoch = params.clock.mode == ClockMode::coupled
                     ? t
                     : stale_epoch(t, params.clock.ue_period);

    const Mat plan = controller(view);
    if (plan.rows() < 1 || plan.cols() != 2 || plan.rows() < temporal_points)
      throw ShapeError("closed loop: plan " + plan.shape_str() + ", expected " +
                       std::to_string(temporal_points) + "x2");

    // Track the first waypoint (0.5 s ahead): pure-pursuit arc through it,
    // speed chosen to arrive in one tick. A waypoint behind the vehicle or on
    // top of it is a brake request.
    EgoState s = sim.back();
    const double px = plan(0, 0), py = plan(0, 1);
    const double d2 = px * px + py * py;
    double kappa = d2 > 1e-9 ? 2.0 * py / d2 : 0.0;
    kappa = std::clamp(kappa, -params.kappa_max, params.kappa_max);
    const double v_target = px > 0 ? std::hypot(px, py) / params.clock.tick_s : 0.0;
    const double accel =
        std::clamp((v_target - s.v) / params.clock.tick_s, params.accel_min, params.accel_max);
    s.a = accel;
    s.kappa = kappa;

    for (int i = 0; i < sub && !done; ++i) {
      s.x += s.v * std::cos(s.theta) * dt;
      s.y += s.v * std::sin(s.theta) * dt;
      s.theta += s.v * s.kappa * dt;
      s.v = std::min(20.0, std::max(0.0, s.v + s.a * dt));
      for (const Obstacle& ob : sc.obstacles) {
        if (std::hypot(s.x - ob.x, s.y - ob.y) < ob.radius + params.ego_radius) {
          run.collided = true;
          done = true;
          break;
        }
      }
      if (!done && std::hypot(s.x - gx, s.y - gy) <= params.goal_radius) {
        run.success = true;
        done = true;
      }
    }
    sim.push_back(s);
    run.ticks = static_cast<int>(t) + 1;
    run.completion = std::max(run.completion, route.fraction(s.x, s.y));
  }
  if (run.success) run.completion = 1.0;
  run.trace = std::move(sim);
  return run;
}

}  // namespace

ClosedLoopReport rollout_closed_loop_fn(const Controller& controller,
                                        const std::vector<Scenario>& scenarios,
                                        const ClosedLoopParams& params, int temporal_points) {
  params.clock.validate();
  if (scenarios.empty()) throw DataError("closed loop: no scenarios");
  if (params.max_ticks < 1) throw ConfigError("closed loop: non-positive time budget");
  if (params.goal_radius <= 0 || params.ego_radius < 0 || params.kappa_max <= 0 ||
      params.accel_max <= 0 || params.accel_min >= 0)
    throw ConfigError("closed loop: implausible actuation limits");

  ClosedLoopReport rep;
  rep.runs.reserve(scenarios.size());
  double succ = 0, coll = 0, comp = 0;
  for (const Scenario& sc : scenarios) {
    rep.runs.push_back(run_one(controller, sc, params, temporal_points));
    const ClosedLoopRun& run = rep.runs.back();
    succ += run.success ? 1.0 : 0.0;
    coll += run.collided ? 1.0 : 0.0;
    comp += run.completion;
  }
  const double n = static_cast<double>(scenarios.size());
  rep.success_pct = 100.0 * succ / n;
  rep.collision_pct = 100.0 * coll / n;
  rep.completion_mean = comp / n;
  return rep;
}

Mat route_follower_plan(const SimView& view, int temporal_points) {
  const Scenario& sc = *view.scenario;
  const EgoState& pose = view.sim_frames->back();
  Mat plan(temporal_points, 2);
  for (int i = 0; i < temporal_points; ++i) {
    const int f = route_frame(sc, view.t + 1 + i);
    double ex, ey;
    world_to_ego(pose, sc.frames[static_cast<std::size_t>(f)].x,
                 sc.frames[static_cast<std::size_t>(f)].y, &ex, &ey);
    plan(i, 0) = ex;
    plan(i, 1) = ey;
  }
  return plan;
}

ClosedLoopReport rollout_closed_loop(Policy& policy, const std::vector<Scenario>& scenarios,
                                     const ClosedLoopParams& params) {
  const ModelConfig& mc = policy.config();
  if (params.render.width != mc.width || params.render.tokens_per_frame != mc.tokens_per_frame)
    throw ConfigError("closed loop: renderer emits " +
                      std::to_string(params.render.tokens_per_frame) + "x" +
                      std::to_string(params.render.width) + " tokens, model expects " +
                      std::to_string(mc.tokens_per_frame) + "x" + std::to_string(mc.width));
  const Renderer renderer(params.render);
  const int history = mc.history_frames;

  // Scene snapshots are re-encoded from the simulated trace on the slow
  // clock's schedule; one cache entry per (scenario, epoch).
  std::map<std::pair<std::uint32_t, std::int64_t>,
           std::shared_ptr<const LayerKVCache>>
      snaps;

  const Controller controller = [&, history](const SimView& view) -> Mat {
    const Scenario& sc = *view.scenario;
    const std::vector<EgoState>& sim = *view.sim_frames;
    const auto hist_idx = [&](int slot) {
      return static_cast<std::size_t>(
          std::max<std::int64_t>(0, view.epoch - (history - 1) + slot));
    };

    const auto key = std::make_pair(sc.id, view.epoch);
    auto it = snaps.find(key);
    if (it == snaps.end()) {
      std::vector<Mat> frames;
      frames.reserve(static_cast<std::size_t>(history));
      for (int f = 0; f < history; ++f) {
        const std::size_t idx = hist_idx(f);
        frames.push_back(renderer.rgb_tokens(
            sc, route_frame(sc, static_cast<std::int64_t>(idx)), sim[idx]));
      }
      std::vector<const Mat*> parts;
      for (const Mat& m : frames) parts.push_back(&m);
      auto snap = std::make_shared<const LayerKVCache>(
          policy.understanding().encode(concat_rows(parts), view.epoch));
      it = snaps.emplace(key, std::move(snap)).first;
    }

    SyncSample smp;
    smp.scenario_id = sc.id;
    const std::int64_t anchor = static_cast<std::int64_t>(hist_idx(0));
    smp.anchor = static_cast<std::uint16_t>(anchor);
    smp.k = static_cast<std::uint8_t>(std::min<std::int64_t>(view.t - anchor, 255));

    std::vector<Mat> frames;
    frames.reserve(static_cast<std::size_t>(history) + 1);
    for (int f = 0; f < history; ++f) {
      const std::size_t idx = hist_idx(f);
      frames.push_back(renderer.rgb_tokens(
          sc, route_frame(sc, static_cast<std::int64_t>(idx)), sim[idx]));
    }
    const std::size_t live = static_cast<std::size_t>(view.t);
    frames.push_back(renderer.rgb_tokens(sc, route_frame(sc, view.t), sim[live]));
    std::vector<const Mat*> parts;
    for (const Mat& m : frames) parts.push_back(&m);
    smp.rgb = concat_rows(parts);
    smp.bev = renderer.bev_tokens(sc, route_frame(sc, view.t), sim[live]);
    smp.ego = {sim[live].v, sim[live].theta, sim[live].a};
    smp.ego_hist = Mat(history, 3);
    for (int f = 0; f < history; ++f) {
      const EgoState& hs = sim[hist_idx(f)];
      smp.ego_hist(f, 0) = hs.v;
      smp.ego_hist(f, 1) = hs.theta;
      smp.ego_hist(f, 2) = hs.a;
    }
    for (int h = 0; h < kHorizons; ++h)
      smp.labels.set(h, Lateral::straight, Longitudinal::keep);  // placeholders, unused

    const PolicyOutput po = policy.infer(smp, *it->second, params.use_refiner);
    return po.refined.temporal;
  };

  return rollout_closed_loop_fn(controller, scenarios, params, mc.temporal_points);
}

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

namespace {

std::string fmt(double v) {
  std::ostringstream os;
  os << std::setprecision(9) << v;
  return os.str();
}

}  // namespace

std::string open_loop_csv(const OpenLoopReport& r) {
  std::ostringstream os;
  os << "metric,at_1s,at_2s,at_3s,avg\n";
  os << "l2_m," << fmt(r.l2[0]) << "," << fmt(r.l2[1]) << "," << fmt(r.l2[2]) << ","
     << fmt(r.l2_avg) << "\n";
  os << "collision_proxy_pct," << fmt(r.collision[0]) << "," << fmt(r.collision[1]) << ","
     << fmt(r.collision[2]) << "," << fmt(r.collision_avg) << "\n";
  os << "lateral_acc_pct," << fmt(r.lateral_acc[0]) << "," << fmt(r.lateral_acc[1]) << ",,"
     << fmt(r.lateral_avg) << "\n";
  os << "longitudinal_acc_pct," << fmt(r.longitudinal_acc[0]) << ","
     << fmt(r.longitudinal_acc[1]) << ",," << fmt(r.longitudinal_avg) << "\n";
  os << "joint_acc_pct," << fmt(r.joint_acc[0]) << "," << fmt(r.joint_acc[1]) << ",,"
     << fmt(r.joint_avg) << "\n";
  os << "samples," << r.samples << ",,,\n";
  return os.str();
}

std::string open_loop_summary(const OpenLoopReport& r) {
  std::ostringstream os;
  os << "open-loop over " << r.samples << " samples\n";
  os << "  L2 (m)            1s " << fmt(r.l2[0]) << " | 2s " << fmt(r.l2[1]) << " | 3s "
     << fmt(r.l2[2]) << " | avg " << fmt(r.l2_avg) << "\n";
  os << "  collision proxy % 1s " << fmt(r.collision[0]) << " | 2s " << fmt(r.collision[1])
     << " | 3s " << fmt(r.collision[2]) << " | avg " << fmt(r.collision_avg) << "\n";
  os << "  lateral acc %     1s " << fmt(r.lateral_acc[0]) << " | 2s " << fmt(r.lateral_acc[1])
     << " | avg " << fmt(r.lateral_avg) << "\n";
  os << "  longitudinal acc %  1s " << fmt(r.longitudinal_acc[0]) << " | 2s "
     << fmt(r.longitudinal_acc[1]) << " | avg " << fmt(r.longitudinal_avg) << "\n";
  os << "  joint acc %       1s " << fmt(r.joint_acc[0]) << " | 2s " << fmt(r.joint_acc[1])
     << " | avg " << fmt(r.joint_avg) << "\n";
  return os.str();
}

std::string sweep_csv(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "offset,l2_avg_m,collision_proxy_avg_pct,lateral_avg_pct,longitudinal_avg_pct,"
        "joint_avg_pct,joint_1s_pct,joint_2s_pct\n";
  for (const SweepRow& row : rows) {
    const OpenLoopReport& r = row.report;
    os << row.offset << "," << fmt(r.l2_avg) << "," << fmt(r.collision_avg) << ","
       << fmt(r.lateral_avg) << "," << fmt(r.longitudinal_avg) << "," << fmt(r.joint_avg)
       << "," << fmt(r.joint_acc[0]) << "," << fmt(r.joint_acc[1]) << "\n";
  }
  return os.str();
}

std::string sweep_summary(const std::vector<SweepRow>& rows) {
  std::ostringstream os;
  os << "staleness sweep (offset frames of extra scene age)\n";
  for (const SweepRow& row : rows)
    os << "  offset " << row.offset << ": L2_avg " << fmt(row.report.l2_avg) << " m, joint acc "
       << fmt(row.report.joint_avg) << " %, collision proxy " << fmt(row.report.collision_avg)
       << " %\n";
  return os.str();
}

std::string closed_loop_csv(const ClosedLoopReport& r) {
  std::ostringstream os;
  os << "scenario,success,collided,ticks,completion\n";
  for (const ClosedLoopRun& run : r.runs)
    os << run.scenario_id << "," << (run.success ? 1 : 0) << "," << (run.collided ? 1 : 0)
       << "," << run.ticks << "," << fmt(run.completion) << "\n";
  return os.str();
}

std::string closed_loop_summary(const ClosedLoopReport& r) {
  std::ostringstream os;
  os << "closed-loop over " << r.runs.size() << " scenarios: success " << fmt(r.success_pct)
     << " %, mean completion " << fmt(r.completion_mean) << ", collisions "
     << fmt(r.collision_pct) << " %\n";
  return os.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream os(path, std::ios::trunc);
  if (!os) throw DataError("cannot open for write: " + path);
  os << content;
  if (!os.good()) throw DataError("write failed: " + path);
}

}  // namespace tandem
