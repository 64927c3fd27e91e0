#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "luna/nn.hpp"

namespace luna {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

// One peak learning rate per name-prefix group; first matching prefix wins,
// so put the catch-all ("") group last.
struct LrGroup {
  std::string prefix;
  double peak_lr = 0.0;
};

// Linear warmup from 0 over the first ceil(warmup_proportion * total) steps,
// then linear decay back to 0 at `total_steps`. Position 0 yields 0.
double scheduled_lr(double peak, int64_t position, int64_t total_steps,
                    double warmup_proportion);

// Adam with bias correction and the warmup/decay schedule above. Frozen
// parameters are skipped entirely; moment buffers are created lazily.
class Adam {
 public:
  struct Slot {
    Mat m, v;
  };

  Adam(ParamStore& store, std::vector<LrGroup> groups, int64_t total_steps,
       double warmup_proportion = 0.1, AdamConfig cfg = {});

  // Applies one update from the gradients currently held by the trainable
  // parameters, then bumps the store version.
  void step();

  int64_t steps_taken() const { return step_; }
  int64_t total_steps() const { return total_steps_; }
  const AdamConfig& config() const { return cfg_; }

  double group_peak(const std::string& param_name) const;
  // Learning rate the next step() call would apply to this parameter.
  double next_lr(const std::string& param_name) const;

  const std::map<std::string, Slot>& state() const { return state_; }
  void restore(std::map<std::string, Slot> state, int64_t steps_taken);

 private:
  ParamStore* store_;
  std::vector<LrGroup> groups_;
  int64_t total_steps_;
  double warmup_;
  AdamConfig cfg_;
  int64_t step_ = 0;
  std::map<std::string, Slot> state_;
};

}  // namespace luna
