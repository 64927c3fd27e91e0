#include "luna/optim.hpp"

#include <cmath>

namespace luna {

double scheduled_lr(double peak, int64_t position, int64_t total_steps,
                    double warmup_proportion) {
  if (total_steps <= 0)
    throw ContractError("scheduled_lr: total_steps must be positive");
  if (position < 0) throw ContractError("scheduled_lr: negative position");
  if (warmup_proportion < 0.0 || warmup_proportion >= 1.0)
    throw ConfigError("scheduled_lr: warmup_proportion must lie in [0, 1)");
  if (position >= total_steps) return 0.0;
  const auto warm = static_cast<int64_t>(
      std::ceil(warmup_proportion * static_cast<double>(total_steps)));
  if (position < warm)
    return peak * static_cast<double>(position) / static_cast<double>(warm);
  if (total_steps == warm) return peak;
  return peak * static_cast<double>(total_steps - position) /
         static_cast<double>(total_steps - warm);
}

Adam::Adam(ParamStore& store, std::vector<LrGroup> groups, int64_t total_steps,
           double warmup_proportion, AdamConfig cfg)
    : store_(&store),
      groups_(std::move(groups)),
      total_steps_(total_steps),
      warmup_(warmup_proportion),
      cfg_(cfg) {
  if (groups_.empty()) throw ConfigError("Adam: no learning-rate groups");
  if (groups_.back().prefix != "")
    throw ConfigError("Adam: last learning-rate group must be the catch-all");
  for (const auto& g : groups_)
    if (g.peak_lr <= 0.0)
      throw ConfigError("Adam: peak learning rate must be positive for group '" +
                        g.prefix + "'");
  if (total_steps_ <= 0) throw ConfigError("Adam: total_steps must be positive");
}

double Adam::group_peak(const std::string& param_name) const {
  for (const auto& g : groups_)
    if (param_name.rfind(g.prefix, 0) == 0) return g.peak_lr;
  throw ContractError("Adam: no learning-rate group matches '" + param_name + "'");
}

double Adam::next_lr(const std::string& param_name) const {
  return scheduled_lr(group_peak(param_name), step_, total_steps_, warmup_);
}

void Adam::step() {
  const int64_t position = step_;
  ++step_;
  const double bc1 = 1.0 - std::pow(cfg_.beta1, static_cast<double>(step_));
  const double bc2 = 1.0 - std::pow(cfg_.beta2, static_cast<double>(step_));
  for (Parameter* p : store_->trainable()) {
    auto& slot = state_[p->name()];
    Mat& value = p->mutable_value();
    if (slot.m.size() == 0) {
      slot.m = Mat::Zero(value.rows(), value.cols());
      slot.v = Mat::Zero(value.rows(), value.cols());
    }
    const Mat& g = p->grad();
    if (g.size() != 0) {
      if (g.rows() != value.rows() || g.cols() != value.cols())
        throw ShapeError("Adam: gradient shape " + shape_str(g) +
                         " does not match parameter '" + p->name() + "' " +
                         shape_str(value));
      slot.m = cfg_.beta1 * slot.m + (1.0 - cfg_.beta1) * g;
      slot.v = cfg_.beta2 * slot.v + (1.0 - cfg_.beta2) * g.cwiseProduct(g);
    } else {
      slot.m *= cfg_.beta1;
      slot.v *= cfg_.beta2;
    }
    const double lr =
        scheduled_lr(group_peak(p->name()), position, total_steps_, warmup_);
    if (lr == 0.0) continue;
    value.array() -=
        lr * (slot.m.array() / bc1) / ((slot.v.array() / bc2).sqrt() + cfg_.eps);
  }
  store_->bump_version();
}

void Adam::restore(std::map<std::string, Slot> state, int64_t steps_taken) {
  if (steps_taken < 0) throw ContractError("Adam: negative restored step count");
  state_ = std::move(state);
  step_ = steps_taken;
}

}  // namespace luna
