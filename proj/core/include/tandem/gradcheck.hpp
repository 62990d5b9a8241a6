#pragma once

#include <cstdint>
#include <string>

namespace tandem {

// Central-difference validation of the reverse-mode gradients on a randomly
// constructed small instance: random weights, random synthetic sample, all
// derived from `seed`. Each parameter tensor is probed at `entries_per_param`
// randomly chosen entries. An entry passes when the relative error against
// the analytic gradient is at most `tolerance`, or the absolute difference
// is within the 1e-7 floor (both sides numerically zero).
struct GradCheckConfig {
  std::uint64_t seed = 1;
  int entries_per_param = 2;
  double step = 1e-5;
  double tolerance = 1e-4;
};

struct GradCheckReport {
  int tensors = 0;
  int entries = 0;
  int failures = 0;
  double max_rel = 0;   // over entries outside the absolute floor (0 if none)
  double max_abs = 0;   // largest |analytic - central difference| anywhere
  std::string worst;    // "name[index]" of the dominant discrepancy
  bool pass() const { return failures == 0 && entries > 0; }
};

// Joint decision + trajectory loss differentiated against every trainable
// action-expert parameter (the scene-encoder snapshot is a constant input).
GradCheckReport grad_check_action(const GradCheckConfig& cfg = {});

// Denoising L1 differentiated against every parameter of a one-block
// refiner, gates nudged open so the cross-attention paths carry gradient.
GradCheckReport grad_check_refiner(const GradCheckConfig& cfg = {});

}  // namespace tandem
