#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "tandem/actions.hpp"
#include "tandem/render.hpp"
#include "tandem/scenario.hpp"

namespace tandem {

// One supervised example. The observation window is four consecutive history
// frames starting at the anchor plus the live frame at anchor + k; k = 3
// lands exactly on the last history frame (the synchronous case, where the
// live frame duplicates it), k in {4, 5} leaves the history 0.5-1.0 s stale.
// Labels and trajectories live in the ego frame of the live frame.
struct SyncSample {
  std::uint32_t scenario_id = 0;
  std::uint16_t anchor = 0;
  std::uint8_t k = 3;
  Mat rgb;                       // (history+1)*tokens_per_frame x width
  Mat bev;                       // tokens_per_frame x width
  std::array<double, 3> ego{};   // speed, heading, acceleration at the live frame
  Mat ego_hist;                  // history x 3, same triplet per history frame
  MetaActionSequence labels;
  TrajectorySet gt;
};

struct SynthParams {
  ScenarioParams scenario;
  RenderConfig render;
  int scenario_count = 96;
  int samples_per_scenario = 16;
  int history_frames = 4;
  double async_fraction = 0.5;  // probability of k in {4, 5} instead of 3
  int force_k = -1;             // >= 3 pins every sample's offset (sweep tooling)
  std::uint64_t seed = 2024;

  void validate() const;
};

struct DatasetHeader {
  std::uint32_t version = 1;
  std::int32_t width = 0;
  std::int32_t tokens_per_frame = 0;
  std::int32_t history_frames = 0;
  std::int32_t temporal_points = 0;
  std::int32_t spatial_points = 0;
  std::int32_t horizons = 0;
  std::int32_t decision_tokens = 0;
  double rate_hz = 0;
  std::int64_t count = 0;
};

// Deterministic in params: same params, byte-identical file.
std::vector<SyncSample> synth_samples(const SynthParams& params);

// Rebuild the scenario a sample came from (closed-loop eval needs geometry).
Scenario sample_scenario(const SynthParams& params, std::uint32_t scenario_id);

void write_dataset(const std::string& path, const std::vector<SyncSample>& samples,
                   const SynthParams& params,
                   const std::vector<std::pair<std::string, std::string>>& manifest_extra = {});

std::vector<SyncSample> load_dataset(const std::string& path,
                                     DatasetHeader* header_out = nullptr);

std::uint64_t file_digest(const std::string& path);

}  // namespace tandem
