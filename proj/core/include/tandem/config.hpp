#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "tandem/dataset.hpp"
#include "tandem/policy.hpp"
#include "tandem/scheduler.hpp"

namespace tandem {

// Optimizer settings for the training driver: plain gradient descent with
// momentum. When the diffusion head is selected, training runs a second
// phase of `refiner_steps` on the refiner with the action expert frozen.
struct TrainConfig {
  int steps = 400;
  int refiner_steps = 400;
  int batch = 32;
  double lr = 1e-3;
  double momentum = 0.9;
  std::uint64_t seed = 31;
  int log_every = 25;  // CSV row cadence; step 0 and the last step always log

  void validate() const;
};

// Evaluation-protocol knobs shared by the open- and closed-loop reports.
struct EvalConfig {
  double ego_radius = 1.0;
  bool use_refiner = true;
  double goal_radius = 3.0;
  int max_ticks = 56;
  double kappa_max = 0.4;
  double accel_min = -4.0;
  double accel_max = 3.0;

  void validate() const;
};

// The one experiment document. Serialized as line-oriented `key = value`
// text (comments start with '#'); parsing rejects unknown keys so a typo
// can never silently fall back to a default. Render token geometry and the
// observation history length always follow the model section — they are
// derived, not independent keys, so the network and its input pipeline
// cannot drift apart.
struct RunConfig {
  ModelConfig model;        // model.* / loss.* / refiner.* keys
  ScenarioParams scenario;  // scenario.* keys
  // data.* keys
  int scenario_count = 96;
  int samples_per_scenario = 16;
  double async_fraction = 0.5;
  int force_k = -1;
  std::uint64_t data_seed = 2024;
  std::uint64_t render_seed = 7;
  TrainConfig train;  // train.* keys
  ClockConfig clock;  // clock.* keys
  EvalConfig eval;    // eval.* keys

  RenderConfig render() const;
  SynthParams synth() const;

  // Compatibility digest stored in checkpoints. It covers exactly the keys
  // that fix what a trained parameter table means: the model./loss./refiner.
  // sections (shapes, seeds, objective weights), render.seed (feature
  // projections) and scenario.* (trace dynamics and label thresholds).
  // data./train./clock./eval. keys pick a dataset, an optimizer schedule or
  // a runtime protocol and may legitimately differ between a checkpoint's
  // training run and a later evaluation, so they stay outside the digest.
  std::uint64_t digest() const;
  std::string digest_text() const;  // the exact bytes the digest hashes

  void validate() const;
};

// Known keys with their one-line documentation, in document order.
const std::vector<std::pair<std::string, std::string>>& config_key_docs();

// Parse a full document on top of the defaults. Last assignment wins when a
// key repeats. Unknown keys and unparsable values throw ConfigError.
RunConfig parse_config(const std::string& text);

// Apply one `key=value` assignment (a CLI --set argument).
void apply_override(RunConfig& rc, const std::string& assignment);

// Canonical serialization: every key, every default documented. Parsing the
// output reproduces the input config exactly.
std::string config_text(const RunConfig& rc);
std::string default_config_text();

RunConfig load_config_file(const std::string& path);

}  // namespace tandem
