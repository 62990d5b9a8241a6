#include "tandem/scenario.hpp"

#include <cmath>

#include "tandem/error.hpp"

namespace tandem {

namespace {
constexpr double kDegToRad = M_PI / 180.0;
}

double wrap_angle(double rad) {
  return std::atan2(std::sin(rad), std::cos(rad));
}

void world_to_ego(const EgoState& ref, double wx, double wy, double* ex, double* ey) {
  const double dx = wx - ref.x;
  const double dy = wy - ref.y;
  const double c = std::cos(ref.theta);
  const double s = std::sin(ref.theta);
  *ex = c * dx + s * dy;   // forward
  *ey = -s * dx + c * dy;  // left
}

int Scenario::last_anchor_frame(int max_k) const {
  const int horizon_frames = 2 * kHorizons;  // 3 s at 2 Hz
  return frame_count() - 1 - max_k - horizon_frames;
}

namespace {

// Draw one command segment. The mix keeps all nine meta-action symbols
// reachable: cruising, speed changes, braking to a standstill, and the two
// turn-rate bands on both sides.
ManeuverSegment draw_segment(Rng& rng, double v_now) {
  ManeuverSegment seg;
  seg.duration_s = rng.uniform(2.0, 4.0);
  const double pick = rng.uniform();
  double yaw_deg_per_s = 0;
  if (pick < 0.22) {
    // cruise straight
  } else if (pick < 0.37) {
    seg.accel = rng.uniform(0.8, 2.0);
  } else if (pick < 0.52) {
    seg.accel = rng.uniform(-2.5, -1.2);
  } else if (pick < 0.62) {
    seg.accel = -3.0;  // brake to a stop and hold
    seg.duration_s = rng.uniform(4.0, 6.0);
  } else if (pick < 0.82) {
    yaw_deg_per_s = rng.uniform(3.0, 8.0) * (rng.bernoulli(0.5) ? 1 : -1);
  } else {
    yaw_deg_per_s = rng.uniform(14.0, 25.0) * (rng.bernoulli(0.5) ? 1 : -1);
    seg.duration_s = rng.uniform(2.0, 3.0);
  }
  if (yaw_deg_per_s != 0.0) {
    const double v_ref = std::max(v_now, 2.0);
    seg.kappa = yaw_deg_per_s * kDegToRad / v_ref;
  }
  return seg;
}

}  // namespace

Scenario build_scenario(std::uint32_t id, std::uint64_t seed, const ScenarioParams& params) {
  if (params.rate_hz <= 0 || params.sim_hz < params.rate_hz)
    throw ConfigError("scenario: bad rates");
  Scenario sc;
  sc.id = id;
  sc.params = params;
  Rng rng(seed);

  EgoState s;
  s.x = 0;
  s.y = 0;
  s.theta = rng.uniform(-M_PI, M_PI);
  s.v = rng.uniform(3.0, 12.0);

  const double total_s = params.duration_s + params.margin_s;
  double scripted = 0;
  double v_plan = s.v;
  while (scripted < total_s + 1.0) {
    ManeuverSegment seg = draw_segment(rng, v_plan);
    v_plan = std::max(0.0, v_plan + seg.accel * seg.duration_s);
    scripted += seg.duration_s;
    sc.script.push_back(seg);
  }

  const double dt = 1.0 / params.sim_hz;
  const int steps = static_cast<int>(std::lround(total_s * params.sim_hz));
  const int per_frame = sc.fine_per_frame();

  sc.fine.reserve(static_cast<std::size_t>(steps) + 1);
  std::size_t seg_idx = 0;
  double seg_left = sc.script[0].duration_s;
  for (int i = 0; i <= steps; ++i) {
    s.a = sc.script[seg_idx].accel;
    s.kappa = sc.script[seg_idx].kappa;
    sc.fine.push_back(s);
    if (i % per_frame == 0) sc.frames.push_back(s);
    // Euler step
    s.x += s.v * std::cos(s.theta) * dt;
    s.y += s.v * std::sin(s.theta) * dt;
    s.theta += s.v * s.kappa * dt;
    s.v = std::min(20.0, std::max(0.0, s.v + s.a * dt));
    seg_left -= dt;
    if (seg_left <= 0 && seg_idx + 1 < sc.script.size()) {
      ++seg_idx;
      seg_left = sc.script[seg_idx].duration_s;
    }
  }

  // Obstacles sit beside the driven path: near it (so proximity features are
  // informative) but offset enough that the scripted drive never clips them.
  for (int o = 0; o < params.obstacles; ++o) {
    const auto& ref =
        sc.fine[static_cast<std::size_t>(rng.below(sc.fine.size()))];
    const double side = rng.bernoulli(0.5) ? 1.0 : -1.0;
    const double lateral = side * rng.uniform(3.5, 6.0);
    const double ahead = rng.uniform(-2.0, 2.0);
    Obstacle ob;
    ob.x = ref.x + std::cos(ref.theta) * ahead - std::sin(ref.theta) * lateral;
    ob.y = ref.y + std::sin(ref.theta) * ahead + std::cos(ref.theta) * lateral;
    ob.radius = rng.uniform(0.5, 1.5);
    sc.obstacles.push_back(ob);
  }
  return sc;
}

MetaActionSequence label_decisions(const Scenario& sc, int frame) {
  const int frames_per_s = static_cast<int>(sc.params.rate_hz + 0.5);
  const int need = frame + kHorizons * frames_per_s;
  if (frame < 0 || need >= sc.frame_count())
    throw DataError("label_decisions: frame " + std::to_string(frame) +
                    " lacks a full future in " + std::to_string(sc.frame_count()) + " frames");
  const EgoState& now = sc.frames[static_cast<std::size_t>(frame)];
  MetaActionSequence seq;
  for (int h = 1; h <= kHorizons; ++h) {
    const EgoState& fut = sc.frames[static_cast<std::size_t>(frame + h * frames_per_s)];

    Longitudinal lon;
    const double dv = fut.v - now.v;
    if (fut.v < sc.params.stop_speed)
      lon = Longitudinal::stop;
    else if (dv > sc.params.accel_delta)
      lon = Longitudinal::accelerate;
    else if (dv < sc.params.slow_delta)
      lon = Longitudinal::slow;
    else
      lon = Longitudinal::keep;

    Lateral lat;
    const double rate_deg = wrap_angle(fut.theta - now.theta) / kDegToRad / h;
    const double mag = std::abs(rate_deg);
    if (mag < sc.params.slight_deg_per_s)
      lat = Lateral::straight;
    else if (mag < sc.params.turn_deg_per_s)
      lat = rate_deg > 0 ? Lateral::slight_left : Lateral::slight_right;
    else
      lat = rate_deg > 0 ? Lateral::turn_left : Lateral::turn_right;

    seq.set(h - 1, lat, lon);
  }
  seq.validate();
  return seq;
}

TrajectorySet ground_truth(const Scenario& sc, int frame) {
  const int frames_per_s = static_cast<int>(sc.params.rate_hz + 0.5);
  const int horizon_frames = kHorizons * frames_per_s;  // = kTemporalPoints
  if (frame < 0 || frame + horizon_frames >= sc.frame_count())
    throw DataError("ground_truth: frame " + std::to_string(frame) + " lacks a full future");
  const EgoState& now = sc.frames[static_cast<std::size_t>(frame)];

  TrajectorySet out;
  out.temporal = Mat(kTemporalPoints, 2);
  for (int i = 1; i <= kTemporalPoints; ++i) {
    const EgoState& fut = sc.frames[static_cast<std::size_t>(frame + i)];
    double ex, ey;
    world_to_ego(now, fut.x, fut.y, &ex, &ey);
    out.temporal(i - 1, 0) = ex;
    out.temporal(i - 1, 1) = ey;
  }

  // Arc-length-even resampling of the fine trace across the same window.
  const int per_frame = sc.fine_per_frame();
  const std::size_t f0 = static_cast<std::size_t>(frame) * per_frame;
  const std::size_t f1 = static_cast<std::size_t>(frame + horizon_frames) * per_frame;
  std::vector<double> cum(f1 - f0 + 1, 0.0);
  for (std::size_t i = f0 + 1; i <= f1; ++i) {
    const double dx = sc.fine[i].x - sc.fine[i - 1].x;
    const double dy = sc.fine[i].y - sc.fine[i - 1].y;
    cum[i - f0] = cum[i - f0 - 1] + std::hypot(dx, dy);
  }
  const double total = cum.back();
  out.spatial = Mat(kSpatialPoints, 2);
  std::size_t seg = 0;
  for (int p = 0; p < kSpatialPoints; ++p) {
    const double want = total * (p + 1) / kSpatialPoints;
    while (seg + 1 < cum.size() && cum[seg + 1] < want) ++seg;
    double wx, wy;
    if (seg + 1 >= cum.size() || total <= 1e-9) {
      wx = sc.fine[f1].x;
      wy = sc.fine[f1].y;
    } else {
      const double span = cum[seg + 1] - cum[seg];
      const double t = span > 1e-12 ? (want - cum[seg]) / span : 0.0;
      wx = sc.fine[f0 + seg].x + t * (sc.fine[f0 + seg + 1].x - sc.fine[f0 + seg].x);
      wy = sc.fine[f0 + seg].y + t * (sc.fine[f0 + seg + 1].y - sc.fine[f0 + seg].y);
    }
    double ex, ey;
    world_to_ego(now, wx, wy, &ex, &ey);
    out.spatial(p, 0) = ex;
    out.spatial(p, 1) = ey;
  }
  return out;
}

}  // namespace tandem
