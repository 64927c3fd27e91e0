#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "luna/grad_check.hpp"

namespace luna {

struct SelfCheckOptions {
  int d = 16;
  int coords_per_param = 6;  // sampled coordinates per parameter per loss
  uint64_t seed = 11;
  bool soft = false;      // drop the argmax-margin widening, mix turns instead
  double step = 1e-5;     // finite-difference probe
  bool sabotage = false;  // test hook: makes the loss inconsistent on purpose
};

struct LossGradResult {
  std::string loss;  // "order", "align", "value", "joint"
  GradCheckReport report;
};

// Builds a fixed two-turn, three-slot shopping dialogue, instantiates the
// tracker at the requested width, and verifies reverse-mode gradients of all
// four losses against central finite differences. The turn-score weights are
// widened before checking so the hard argmax sits away from any selection
// boundary; schema caches are dropped on every probe evaluation.
std::vector<LossGradResult> alignment_grad_checks(const SelfCheckOptions& opts);

}  // namespace luna
