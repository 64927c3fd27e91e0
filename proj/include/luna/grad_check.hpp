#pragma once

#include <cstdint>
#include <functional>
#include <string>
#include <vector>

#include "luna/nn.hpp"

namespace luna {

struct CoordCheck {
  std::string param;
  Index row = 0;
  Index col = 0;
  double analytic = 0.0;
  double numeric = 0.0;
  double rel_err = 0.0;
};

struct GradCheckReport {
  double max_rel_err = 0.0;
  CoordCheck worst;
  int64_t coords_checked = 0;
  int64_t coords_skipped_nonfinite = 0;

  bool pass(double tol = 1e-3) const {
    return coords_checked > 0 && max_rel_err < tol;
  }
};

// Rebuilds the loss graph from the parameters' current values.
using LossFn = std::function<Tensor()>;

// Compares reverse-mode gradients against central finite differences
// (f(θ+h) − f(θ−h)) / 2h on up to `max_coords_per_param` coordinates of each
// listed parameter (sampled deterministically from `seed` when the tensor is
// larger). Relative error is |a − n| / max(|a| + |n|, 1e-3). Coordinates where
// a perturbed evaluation goes non-finite are skipped and counted.
GradCheckReport finite_diff_check(const LossFn& f, std::vector<Parameter*> params,
                                  double step = 1e-5,
                                  int max_coords_per_param = 200,
                                  uint64_t seed = 0);

}  // namespace luna
