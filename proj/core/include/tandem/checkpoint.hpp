#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "tandem/mat.hpp"
#include "tandem/policy.hpp"

namespace tandem {

// Momentum buffers saved beside the weights so a resumed run continues the
// exact optimizer trajectory. `names` records which parameter each velocity
// belongs to; resuming re-attaches by name and refuses a mismatched set.
struct OptimizerState {
  std::int64_t step = 0;
  std::vector<std::string> names;
  std::vector<Mat> velocity;

  bool empty() const { return names.empty() && step == 0; }
};

struct CheckpointMeta {
  std::uint32_t version = 1;
  std::uint64_t config_digest = 0;
  std::uint8_t dtype = 8;  // bytes per stored scalar: 4 or 8
  bool has_optimizer = false;
};

// Named-parameter table with shapes, preceded by the config digest. dtype 4
// stores rounded 32-bit payloads (compact interchange); dtype 8 keeps full
// 64-bit precision, which bit-exact resume requires. The optimizer trailer
// is always stored at full precision.
void save_checkpoint(const std::string& path, Policy& policy, std::uint64_t config_digest,
                     int dtype_bytes = 8, const OptimizerState* opt = nullptr);

// Loads weights into an initialized policy of the matching geometry. The
// stored digest must equal expect_digest (ConfigError otherwise); any name
// or shape drift in the table is a DataError.
CheckpointMeta load_checkpoint(const std::string& path, Policy& policy,
                               std::uint64_t expect_digest,
                               OptimizerState* opt_out = nullptr);

// Header fields only; no policy needed.
CheckpointMeta peek_checkpoint(const std::string& path);

}  // namespace tandem
