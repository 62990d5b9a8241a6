#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "tandem/checkpoint.hpp"
#include "tandem/config.hpp"
#include "tandem/dataset.hpp"
#include "tandem/policy.hpp"

namespace tandem {

// Which trajectory head the run optimizes. `mlp` trains the action expert's
// direct regression heads only; `diffusion` adds a second phase that trains
// the refiner on corrupted priors with the action expert frozen.
enum class TrainHead { mlp, diffusion };

TrainHead parse_head(const std::string& s);
const char* head_name(TrainHead head);

// One emitted loss-curve row. During the refiner phase the decision NLL is
// not optimized and reads 0; l_temporal/l_spatial are the refiner's
// denoising L1 terms there.
struct LossRow {
  std::int64_t step = 0;
  char phase = 'a';  // 'a' action expert, 'r' refiner
  double nll = 0;
  double l_temporal = 0;
  double l_spatial = 0;
  double total = 0;
};

struct TrainResult {
  std::vector<LossRow> curve;     // every step, in order
  std::int64_t steps_run = 0;
  std::uint64_t ue_digest_before = 0;
  std::uint64_t ue_digest_after = 0;
};

// Called after every optimizer step; return false to stop early (the result
// still carries everything up to and including that step).
using StepHook = std::function<bool(const LossRow&)>;

// Gradient descent with momentum over batch-mean losses. Batch membership
// at step i depends only on (train.seed, i), so a resumed run draws the
// same batches it would have seen uninterrupted; pass the optimizer state
// loaded from a checkpoint through opt_io to continue bit-exactly. Frozen
// scene-encoder snapshots are memoized per (scenario, anchor) — at default
// geometry each holds a few hundred KB, so budget roughly snapshot-count x
// 0.4 MB of memory for large datasets. A non-finite batch loss aborts with
// the step index in the message.
TrainResult train(Policy& policy, const std::vector<SyncSample>& samples,
                  const RunConfig& cfg, TrainHead head, OptimizerState* opt_io = nullptr,
                  const StepHook& hook = nullptr);

// CSV emission: step, phase, each loss term.
std::string loss_csv(const std::vector<LossRow>& curve, int log_every = 1);

}  // namespace tandem
