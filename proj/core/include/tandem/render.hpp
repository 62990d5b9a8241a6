#pragma once

#include <cstdint>

#include "tandem/mat.hpp"
#include "tandem/scenario.hpp"

namespace tandem {

// Stand-in for camera / BEV encoders: a per-frame feature vector pushed
// through a fixed seeded random projection into tokens_per_frame tokens of
// model width. Deterministic in (seed, scenario, frame); the projection is
// the "sensor" and never trains.
struct RenderConfig {
  int tokens_per_frame = 16;
  int width = 64;
  std::uint64_t seed = 7;
};

// Raw per-frame descriptors, normalized to O(1) ranges.
Mat rgb_features(const Scenario& sc, int frame);  // 1 x kRgbFeatures
Mat bev_features(const Scenario& sc, int frame);  // 1 x kBevFeatures

// Same descriptors rendered from an explicit camera pose instead of the
// scripted state at `frame`. The scripted future frames keep their role as
// the route plan, so the relative targets (waypoints, heading/speed deltas,
// obstacles) are expressed against wherever the vehicle actually is — the
// view a closed-loop executor needs once it drifts off the script. With
// ref == sc.frames[frame] these reduce exactly to the one-pose overloads.
Mat rgb_features(const Scenario& sc, int frame, const EgoState& ref);
Mat bev_features(const Scenario& sc, int frame, const EgoState& ref);

class Renderer {
 public:
  static constexpr int kRgbFeatures = 18;
  static constexpr int kBevFeatures = 20;

  Renderer() = default;
  explicit Renderer(const RenderConfig& cfg);

  const RenderConfig& config() const { return cfg_; }

  Mat rgb_tokens(const Scenario& sc, int frame) const;  // tokens_per_frame x width
  Mat bev_tokens(const Scenario& sc, int frame) const;  // tokens_per_frame x width
  Mat rgb_tokens(const Scenario& sc, int frame, const EgoState& ref) const;
  Mat bev_tokens(const Scenario& sc, int frame, const EgoState& ref) const;

 private:
  RenderConfig cfg_;
  Mat w_rgb_, b_rgb_;  // features -> (tokens * width), plus fixed offset
  Mat w_bev_, b_bev_;
};

}  // namespace tandem
