#pragma once

#include <cstdint>
#include <vector>

#include "tandem/actions.hpp"
#include "tandem/dataset.hpp"
#include "tandem/policy.hpp"
#include "tandem/render.hpp"
#include "tandem/scenario.hpp"

namespace tandem {

// The two-clock orchestrator. The understanding expert is the slow clock: it
// re-encodes the scene every `ue_period` ticks and publishes a KV snapshot.
// The action expert is the fast clock: it runs every tick against whichever
// snapshot is current. Coupled mode collapses the two clocks (inline encode
// every tick), which is the latency-expensive baseline the decoupled mode is
// measured against.
enum class ClockMode { coupled, decoupled };

struct ClockConfig {
  ClockMode mode = ClockMode::decoupled;
  int ue_period = 1;    // P: ticks between slow-clock encodes
  double tick_s = 0.5;  // virtual tick duration; matches the 2 Hz frame rate
  // Deterministic mode models UE compute delay as zero: the snapshot for tick
  // t is always the one encoded at P*floor(t/P), and everything is replayable
  // bit-for-bit on one thread. Benchmark mode runs the slow clock on its own
  // worker and publishes become visible whenever they actually complete.
  bool deterministic = true;
  // Repeats each understanding encode to model a slow-clock expert that
  // dwarfs the action expert, the way the full-size system pairs a large
  // reasoning model with a small actor. Purely a cost knob: the published
  // snapshot is the last (identical) encode.
  int ue_compute_scale = 1;

  void validate() const;
};

// tau(t): the encode tick a deterministic decoupled consumer sees at tick t.
inline std::int64_t stale_epoch(std::int64_t t, int period) {
  return period * (t / period);
}

struct TickReport {
  std::int64_t t = 0;
  std::int64_t epoch = 0;      // encode tick of the snapshot consumed
  std::int64_t staleness = 0;  // t - epoch
  double ae_s = 0;             // fast-path wall time for this tick
  double ue_s = 0;             // encode wall time paid inside this tick; 0 on a cache hit
  std::uint64_t out_digest = 0;  // digest of decisions + logits + trajectories
};

struct RolloutResult {
  std::vector<TickReport> reports;
  std::vector<MetaActionSequence> decisions;  // per tick
  std::vector<TrajectorySet> trajectories;    // refined trajectories per tick
  std::uint64_t digest = 0;  // fold of every per-tick output digest, in order
  double mean_tick_s = 0;    // mean ae_s + ue_s: the latency the control loop feels
  double mean_ae_s = 0;
  double mean_ue_s = 0;  // mean cost per encode actually performed
};

// Replays a scripted scenario as the live feed the two experts would see:
// one frame per tick, scene windows for the slow clock, full observations
// (with labels and ground truth, for metrics) for the fast clock.
class PlaybackEnv {
 public:
  PlaybackEnv(const Scenario& sc, const RenderConfig& render, int history_frames);

  const Scenario& scenario() const { return *sc_; }
  const Renderer& renderer() const { return renderer_; }

  // Last tick count for which every live frame still has full labels.
  int max_ticks() const;

  // Scene window ending at frame `epoch`, left-clamped at the scenario start:
  // history_frames x tokens_per_frame rows of rendered scene tokens.
  Mat ue_scene(std::int64_t epoch) const;

  // Observation at live tick t whose history window ends at `epoch`. The
  // history rows are exactly the ones ue_scene(epoch) encodes, so the fast
  // clock and the snapshot it attends into describe the same frames.
  SyncSample sample_at(std::int64_t t, std::int64_t epoch) const;

 private:
  int history_index(std::int64_t epoch, int slot) const;

  const Scenario* sc_ = nullptr;
  Renderer renderer_;
  int history_ = 0;
};

// Drives `ticks` control steps of the policy over the scenario under the
// given clock. Every tick produces decisions and trajectories; reports record
// the snapshot epoch, staleness and per-side latency. The cold cache at t=0
// is prevented by a forced synchronous encode before the first action step.
RolloutResult run_rollout(const Scenario& sc, Policy& policy, const ClockConfig& clock,
                          int ticks, const RenderConfig& render = RenderConfig{},
                          bool use_refiner = true);

}  // namespace tandem
