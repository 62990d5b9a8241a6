#include "tandem/render.hpp"

#include <algorithm>
#include <cmath>

#include "tandem/error.hpp"

namespace tandem {

namespace {

int clamp_frame(const Scenario& sc, int frame) {
  return std::min(frame, sc.frame_count() - 1);
}

// Indices of obstacles sorted by distance from the frame position,
// index-order tie-break for determinism.
std::vector<std::size_t> nearest_obstacles(const Scenario& sc, const EgoState& ref) {
  std::vector<std::size_t> idx(sc.obstacles.size());
  for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
  std::stable_sort(idx.begin(), idx.end(), [&](std::size_t a, std::size_t b) {
    const auto da = std::hypot(sc.obstacles[a].x - ref.x, sc.obstacles[a].y - ref.y);
    const auto db = std::hypot(sc.obstacles[b].x - ref.x, sc.obstacles[b].y - ref.y);
    return da < db;
  });
  return idx;
}

}  // namespace

Mat rgb_features(const Scenario& sc, int frame) {
  if (frame < 0 || frame >= sc.frame_count())
    throw DataError("rgb_features: frame " + std::to_string(frame) + " out of range");
  return rgb_features(sc, frame, sc.frames[static_cast<std::size_t>(frame)]);
}

Mat rgb_features(const Scenario& sc, int frame, const EgoState& s) {
  if (frame < 0 || frame >= sc.frame_count())
    throw DataError("rgb_features: frame " + std::to_string(frame) + " out of range");
  const int fps = static_cast<int>(sc.params.rate_hz + 0.5);

  Mat f(1, Renderer::kRgbFeatures);
  int c = 0;
  f(0, c++) = s.v / 10.0;
  f(0, c++) = s.a / 3.0;
  f(0, c++) = s.kappa * 20.0;
  f(0, c++) = std::sin(s.theta);
  f(0, c++) = std::cos(s.theta);
  for (int h = 1; h <= kHorizons; ++h) {
    const EgoState& fut = sc.frames[static_cast<std::size_t>(clamp_frame(sc, frame + h * fps))];
    f(0, c++) = fut.v / 10.0;
  }
  for (int h = 1; h <= kHorizons; ++h) {
    const EgoState& fut = sc.frames[static_cast<std::size_t>(clamp_frame(sc, frame + h * fps))];
    f(0, c++) = wrap_angle(fut.theta - s.theta) / M_PI;
  }
  for (int h = 1; h <= kHorizons; ++h) {
    const EgoState& fut = sc.frames[static_cast<std::size_t>(clamp_frame(sc, frame + h * fps))];
    f(0, c++) = (fut.v - s.v) / 3.0;
  }
  if (!sc.obstacles.empty()) {
    const auto order = nearest_obstacles(sc, s);
    const Obstacle& ob = sc.obstacles[order[0]];
    double ex, ey;
    world_to_ego(s, ob.x, ob.y, &ex, &ey);
    f(0, c++) = ex / 20.0;
    f(0, c++) = ey / 20.0;
    f(0, c++) = std::hypot(ex, ey) / 20.0;
    f(0, c++) = ob.radius;
  } else {
    c += 4;
  }
  if (c != Renderer::kRgbFeatures)
    throw DataError("rgb_features: wrote " + std::to_string(c) + " of " +
                    std::to_string(Renderer::kRgbFeatures) + " descriptors");
  return f;
}

Mat bev_features(const Scenario& sc, int frame) {
  if (frame < 0 || frame >= sc.frame_count())
    throw DataError("bev_features: frame " + std::to_string(frame) + " out of range");
  return bev_features(sc, frame, sc.frames[static_cast<std::size_t>(frame)]);
}

Mat bev_features(const Scenario& sc, int frame, const EgoState& s) {
  if (frame < 0 || frame >= sc.frame_count())
    throw DataError("bev_features: frame " + std::to_string(frame) + " out of range");
  const int fps = static_cast<int>(sc.params.rate_hz + 0.5);

  Mat f(1, Renderer::kBevFeatures);
  int c = 0;
  for (int h = 1; h <= kHorizons; ++h) {
    const EgoState& fut = sc.frames[static_cast<std::size_t>(clamp_frame(sc, frame + h * fps))];
    double ex, ey;
    world_to_ego(s, fut.x, fut.y, &ex, &ey);
    f(0, c++) = ex / 20.0;
    f(0, c++) = ey / 20.0;
  }
  const auto order = nearest_obstacles(sc, s);
  for (std::size_t o = 0; o < 3; ++o) {
    if (o < order.size()) {
      const Obstacle& ob = sc.obstacles[order[o]];
      double ex, ey;
      world_to_ego(s, ob.x, ob.y, &ex, &ey);
      f(0, c++) = ex / 20.0;
      f(0, c++) = ey / 20.0;
      f(0, c++) = ob.radius;
    } else {
      c += 3;
    }
  }
  // arc length the ego covers over the label horizon
  {
    const int per_frame = sc.fine_per_frame();
    const std::size_t f0 = static_cast<std::size_t>(frame) * per_frame;
    const std::size_t f1 = std::min(
        sc.fine.size() - 1,
        static_cast<std::size_t>(clamp_frame(sc, frame + kHorizons * fps)) *
            static_cast<std::size_t>(per_frame));
    double dist = 0;
    for (std::size_t i = f0 + 1; i <= f1; ++i)
      dist += std::hypot(sc.fine[i].x - sc.fine[i - 1].x, sc.fine[i].y - sc.fine[i - 1].y);
    f(0, c++) = dist / 20.0;
  }
  f(0, c++) = s.v / 10.0;
  f(0, c++) = s.v < sc.params.stop_speed ? 1.0 : 0.0;
  f(0, c++) = std::sin(s.theta);
  f(0, c++) = std::cos(s.theta);
  if (c != Renderer::kBevFeatures)
    throw DataError("bev_features: wrote " + std::to_string(c) + " of " +
                    std::to_string(Renderer::kBevFeatures) + " descriptors");
  return f;
}

Renderer::Renderer(const RenderConfig& cfg) : cfg_(cfg) {
  if (cfg.tokens_per_frame <= 0 || cfg.width <= 0)
    throw ConfigError("renderer: non-positive dims");
  const int out = cfg.tokens_per_frame * cfg.width;
  Rng rng(derive_seed(cfg.seed, 17));
  const double ws_rgb = 1.0 / std::sqrt(static_cast<double>(kRgbFeatures));
  w_rgb_ = Mat(kRgbFeatures, out);
  for (std::size_t i = 0; i < w_rgb_.size(); ++i) w_rgb_.data()[i] = rng.gaussian(0, ws_rgb);
  b_rgb_ = Mat(1, out);
  for (std::size_t i = 0; i < b_rgb_.size(); ++i) b_rgb_.data()[i] = rng.gaussian(0, 0.1);

  Rng rng2(derive_seed(cfg.seed, 23));
  const double ws_bev = 1.0 / std::sqrt(static_cast<double>(kBevFeatures));
  w_bev_ = Mat(kBevFeatures, out);
  for (std::size_t i = 0; i < w_bev_.size(); ++i) w_bev_.data()[i] = rng2.gaussian(0, ws_bev);
  b_bev_ = Mat(1, out);
  for (std::size_t i = 0; i < b_bev_.size(); ++i) b_bev_.data()[i] = rng2.gaussian(0, 0.1);
}

namespace {
Mat project_tokens(const Mat& features, const Mat& w, const Mat& b, int tokens, int width) {
  const Mat flat = add_rowvec(matmul(features, w), b);  // 1 x tokens*width
  Mat out(tokens, width);
  std::memcpy(out.data(), flat.data(), flat.size() * sizeof(double));
  return out;
}
}  // namespace

Mat Renderer::rgb_tokens(const Scenario& sc, int frame) const {
  return project_tokens(rgb_features(sc, frame), w_rgb_, b_rgb_,
                        cfg_.tokens_per_frame, cfg_.width);
}

Mat Renderer::bev_tokens(const Scenario& sc, int frame) const {
  return project_tokens(bev_features(sc, frame), w_bev_, b_bev_,
                        cfg_.tokens_per_frame, cfg_.width);
}

Mat Renderer::rgb_tokens(const Scenario& sc, int frame, const EgoState& ref) const {
  return project_tokens(rgb_features(sc, frame, ref), w_rgb_, b_rgb_,
                        cfg_.tokens_per_frame, cfg_.width);
}

Mat Renderer::bev_tokens(const Scenario& sc, int frame, const EgoState& ref) const {
  return project_tokens(bev_features(sc, frame, ref), w_bev_, b_bev_,
                        cfg_.tokens_per_frame, cfg_.width);
}

}  // namespace tandem
