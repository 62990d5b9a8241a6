#pragma once

#include <array>
#include <cstdint>
#include <functional>
#include <map>
#include <string>
#include <vector>

#include "tandem/dataset.hpp"
#include "tandem/policy.hpp"
#include "tandem/scheduler.hpp"

namespace tandem {

// ---------------------------------------------------------------------------
// Open-loop evaluation
// ---------------------------------------------------------------------------

struct EvalParams {
  double ego_radius = 1.0;  // inflation added to obstacle radii for the proxy
  bool use_refiner = true;
};

// Displacement, collision-proxy and decision metrics over a dataset.
// L2 at horizon h is the mean Euclidean error at the temporal waypoint
// nearest h seconds (index 2h-1 at 2 Hz). The collision proxy at horizon h is
// the fraction of samples whose predicted waypoints up to h seconds enter any
// obstacle circle inflated by the ego radius — a stand-in for an occupancy
// protocol, not a real collision rate, and labeled a proxy wherever printed.
// Decision accuracy is reported at the 1 s and 2 s horizons.
struct OpenLoopReport {
  std::array<double, kHorizons> l2{};         // m, at 1/2/3 s
  double l2_avg = 0;
  std::array<double, kHorizons> collision{};  // proxy %, at 1/2/3 s
  double collision_avg = 0;
  std::array<double, 2> lateral_acc{};        // %, at 1/2 s
  std::array<double, 2> longitudinal_acc{};
  std::array<double, 2> joint_acc{};
  double lateral_avg = 0;
  double longitudinal_avg = 0;
  double joint_avg = 0;
  int samples = 0;

  // Internal-consistency gate: averages recompute from their entries to 1e-9,
  // rates stay in [0, 100], joint accuracy never exceeds either head's.
  void validate() const;
};

// Rebuilds scenarios on demand so evaluation can recover world geometry
// (obstacles, frame poses) for the samples of a dataset generated with the
// same parameters. Cached per id; deterministic by construction.
class ScenarioBank {
 public:
  explicit ScenarioBank(const SynthParams& params) : params_(params) {}
  const Scenario& get(std::uint32_t scenario_id);
  // Preload or override an entry, e.g. for handcrafted scenario suites.
  void put(Scenario sc) { cache_[sc.id] = std::move(sc); }

 private:
  SynthParams params_;
  std::map<std::uint32_t, Scenario> cache_;
};

// A planning function under evaluation: full policy output for one sample.
using PlanFn = std::function<PolicyOutput(const SyncSample&)>;

// Evaluate an arbitrary planner (oracle baselines, ablations, ...).
OpenLoopReport eval_open_loop_fn(const PlanFn& plan, const std::vector<SyncSample>& samples,
                                 ScenarioBank& bank, const EvalParams& params = {});

// Evaluate the policy, sharing understanding-expert snapshots across samples
// with the same (scenario, anchor) window.
OpenLoopReport eval_open_loop(Policy& policy, const std::vector<SyncSample>& samples,
                              ScenarioBank& bank, const EvalParams& params = {});

// ---------------------------------------------------------------------------
// Staleness sweep
// ---------------------------------------------------------------------------

struct SweepRow {
  int offset = 0;  // extra frames of scene staleness beyond the sync window
  OpenLoopReport report;
};

// Regenerates the dataset with every sample forced to offset k = 3 + offset
// (0 = synchronized live frame, 1..2 = asynchronous) and evaluates the policy
// at each point. Offsets beyond the protocol's k = 5 are rejected upstream.
std::vector<SweepRow> staleness_sweep(Policy& policy, const SynthParams& base,
                                      const std::vector<int>& offsets,
                                      const EvalParams& params = {});

// ---------------------------------------------------------------------------
// Closed-loop rollout
// ---------------------------------------------------------------------------

struct ClosedLoopParams {
  ClockConfig clock;          // staleness protocol during execution
  RenderConfig render;        // must match the policy's token geometry
  int max_ticks = 56;         // time budget (0.5 s each)
  double goal_radius = 3.0;   // m around the scripted route end
  double ego_radius = 1.0;    // collision inflation, as in the open-loop proxy
  double accel_min = -4.0;    // actuation clamps
  double accel_max = 3.0;
  double kappa_max = 0.4;
  bool use_refiner = true;
};

struct ClosedLoopRun {
  std::uint32_t scenario_id = 0;
  bool success = false;
  bool collided = false;
  int ticks = 0;             // control steps consumed
  double completion = 0;     // fraction of route arc length covered, [0, 1]
  std::vector<EgoState> trace;  // simulated 2 Hz states, start included
};

struct ClosedLoopReport {
  double success_pct = 0;
  double collision_pct = 0;
  double completion_mean = 0;
  std::vector<ClosedLoopRun> runs;
};

// What a controller sees each tick: the scripted scenario (the route plan),
// the simulated trace so far, the current tick and the slow-clock epoch its
// scene snapshot was taken at.
struct SimView {
  const Scenario* scenario = nullptr;
  const std::vector<EgoState>* sim_frames = nullptr;  // indices 0..t
  std::int64_t t = 0;
  std::int64_t epoch = 0;
};

// Returns the temporal waypoints (temporal_points x 2, ego frame of the
// current simulated pose) the vehicle should track next.
using Controller = std::function<Mat(const SimView&)>;

// Executes the first 0.5 s of the controller's plan each tick under the
// kinematic bicycle model: curvature from a pure-pursuit arc through the
// first waypoint, acceleration from the speed needed to reach it in one tick.
// A run succeeds when the vehicle enters the goal circle at the scripted
// route's end without touching an inflated obstacle circle first.
ClosedLoopReport rollout_closed_loop_fn(const Controller& controller,
                                        const std::vector<Scenario>& scenarios,
                                        const ClosedLoopParams& params,
                                        int temporal_points);

// The policy as controller: scene snapshots are re-encoded from the simulated
// trace on the slow clock's schedule, observations rendered from the
// simulated pose with the scripted frames as route guidance.
ClosedLoopReport rollout_closed_loop(Policy& policy, const std::vector<Scenario>& scenarios,
                                     const ClosedLoopParams& params);

// The scripted route itself as controller (upper baseline for tests): waypoint
// i is the scripted pose at tick t + 1 + i relative to the simulated pose.
Mat route_follower_plan(const SimView& view, int temporal_points);

// ---------------------------------------------------------------------------
// Report emission
// ---------------------------------------------------------------------------

std::string open_loop_csv(const OpenLoopReport& r);
std::string open_loop_summary(const OpenLoopReport& r);
std::string sweep_csv(const std::vector<SweepRow>& rows);
std::string sweep_summary(const std::vector<SweepRow>& rows);
std::string closed_loop_csv(const ClosedLoopReport& r);
std::string closed_loop_summary(const ClosedLoopReport& r);

void write_text_file(const std::string& path, const std::string& content);

}  // namespace tandem
