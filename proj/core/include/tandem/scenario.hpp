#pragma once

#include <cstdint>
#include <vector>

#include "tandem/actions.hpp"
#include "tandem/mat.hpp"
#include "tandem/rng.hpp"

namespace tandem {

// World state of the ego vehicle under a kinematic bicycle model driven by
// (acceleration, curvature) commands:
//   x' = v cos(theta), y' = v sin(theta), theta' = v * kappa, v' = a.
struct EgoState {
  double x = 0, y = 0;
  double theta = 0;  // world heading, rad, CCW positive (left turn increases)
  double v = 0;      // m/s, clamped non-negative
  double a = 0;      // commanded acceleration active at this instant
  double kappa = 0;  // commanded curvature active at this instant
};

struct Obstacle {
  double x = 0, y = 0, radius = 0.5;  // static disc, world frame
};

// One scripted command piece.
struct ManeuverSegment {
  double duration_s = 2;
  double accel = 0;
  double kappa = 0;
};

struct ScenarioParams {
  double duration_s = 20;    // anchor-eligible span
  double margin_s = 6;       // extra simulated tail so labels always have future
  double rate_hz = 2;        // frame rate of the sampled trace
  double sim_hz = 100;       // Euler integration rate
  int obstacles = 3;
  // label thresholds
  double stop_speed = 0.2;        // m/s
  double accel_delta = 0.5;       // m/s gained over the horizon
  double slow_delta = -0.5;       // m/s lost over the horizon
  double slight_deg_per_s = 2.0;  // heading-rate band edges
  double turn_deg_per_s = 10.0;
};

// A fully simulated scripted drive. frames = the 2 Hz trace the protocol
// works in; fine = the integration-rate trace used for arc-length resampling
// and collision geometry. Deterministic in (seed, params).
struct Scenario {
  std::uint32_t id = 0;
  ScenarioParams params;
  std::vector<ManeuverSegment> script;
  std::vector<EgoState> frames;  // (duration+margin) * rate + 1 states
  std::vector<EgoState> fine;    // (duration+margin) * sim_hz + 1 states
  std::vector<Obstacle> obstacles;

  int frame_count() const { return static_cast<int>(frames.size()); }
  // last frame index that still has a full label/ground-truth future
  int last_anchor_frame(int max_k) const;
  int fine_per_frame() const {
    return static_cast<int>(params.sim_hz / params.rate_hz + 0.5);
  }
};

Scenario build_scenario(std::uint32_t id, std::uint64_t seed, const ScenarioParams& params);

// Meta-action labels at a decision frame: horizon h compares the state at
// frame + 2h (1-second steps at 2 Hz) against the decision frame.
MetaActionSequence label_decisions(const Scenario& sc, int frame);

// Ego-frame ground truth at a decision frame: temporal waypoints at every
// following frame up to 3 s, and spatial route points evenly spaced by arc
// length along the same window.
TrajectorySet ground_truth(const Scenario& sc, int frame);

// Ego-frame transform of an arbitrary world point relative to a state.
void world_to_ego(const EgoState& ref, double wx, double wy, double* ex, double* ey);

double wrap_angle(double rad);  // to (-pi, pi]

}  // namespace tandem
