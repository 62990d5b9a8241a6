#pragma once

#include <array>
#include <string>

#include "tandem/error.hpp"
#include "tandem/mat.hpp"

namespace tandem {

// Shared 9-symbol meta-action vocabulary. Lateral symbols occupy indices
// 0..4, longitudinal 5..8; every decision token predicts over the full
// vocabulary and decodes by argmax.
inline constexpr int kVocab = 9;
inline constexpr int kHorizons = 3;            // 1 s, 2 s, 3 s
inline constexpr int kDecisionTokens = 6;      // (lateral, longitudinal) per horizon

enum class Lateral : int {
  turn_left = 0,
  slight_left = 1,
  straight = 2,
  slight_right = 3,
  turn_right = 4,
};

enum class Longitudinal : int {
  accelerate = 5,
  slow = 6,
  keep = 7,
  stop = 8,
};

const char* action_name(int vocab_index);

/// Token order: [lat@1s, lon@1s, lat@2s, lon@2s, lat@3s, lon@3s].
struct MetaActionSequence {
  std::array<int, kDecisionTokens> tokens{};

  int lateral(int horizon) const { return tokens[static_cast<std::size_t>(2 * horizon)]; }
  int longitudinal(int horizon) const {
    return tokens[static_cast<std::size_t>(2 * horizon + 1)];
  }
  void set(int horizon, Lateral lat, Longitudinal lon) {
    tokens[static_cast<std::size_t>(2 * horizon)] = static_cast<int>(lat);
    tokens[static_cast<std::size_t>(2 * horizon + 1)] = static_cast<int>(lon);
  }

  // Labels must use the right half of the vocabulary per position.
  void validate() const {
    for (int h = 0; h < kHorizons; ++h) {
      const int lat = lateral(h);
      const int lon = longitudinal(h);
      if (lat < 0 || lat > 4)
        throw DataError("meta-action: lateral token " + std::to_string(lat) +
                        " at horizon " + std::to_string(h));
      if (lon < 5 || lon > 8)
        throw DataError("meta-action: longitudinal token " + std::to_string(lon) +
                        " at horizon " + std::to_string(h));
    }
  }

  bool operator==(const MetaActionSequence& o) const { return tokens == o.tokens; }

  std::string str() const;
};

// Ground-truth / predicted trajectories in the ego frame of the decision
// timestamp: temporal waypoints at 0.5 s spacing and evenly spaced spatial
// route points, both (x forward, y left) in meters.
template <class S>
struct TrajectorySetT {
  MatT<S> temporal;  // M x 2
  MatT<S> spatial;   // N x 2
};

using TrajectorySet = TrajectorySetT<double>;

inline constexpr int kTemporalPoints = 6;   // 3 s at 2 Hz
inline constexpr int kSpatialPoints = 20;

}  // namespace tandem
