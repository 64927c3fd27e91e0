#include "luna/grad_check.hpp"

#include <algorithm>
#include <cmath>
#include <limits>
#include <random>

namespace luna {

namespace {

std::vector<Index> sample_coords(Index total, int max_coords, std::mt19937_64& rng) {
  std::vector<Index> coords(static_cast<size_t>(total));
  for (Index i = 0; i < total; ++i) coords[static_cast<size_t>(i)] = i;
  if (total <= max_coords) return coords;
  std::shuffle(coords.begin(), coords.end(), rng);
  coords.resize(static_cast<size_t>(max_coords));
  std::sort(coords.begin(), coords.end());
  return coords;
}

}  // namespace

GradCheckReport finite_diff_check(const LossFn& f, std::vector<Parameter*> params,
                                  double step, int max_coords_per_param,
                                  uint64_t seed) {
  if (step <= 0.0) throw ContractError("finite_diff_check: step must be positive");
  if (max_coords_per_param <= 0)
    throw ContractError("finite_diff_check: max_coords_per_param must be positive");

  for (Parameter* p : params) p->zero_grad();
  Tensor loss = f();
  if (loss.rows() != 1 || loss.cols() != 1)
    throw ContractError("finite_diff_check: loss must be scalar, got " +
                        shape_str(loss.value()));
  loss.backward();

  std::vector<Mat> analytic;
  analytic.reserve(params.size());
  for (Parameter* p : params) {
    const Mat& g = p->grad();
    analytic.push_back(g.size() != 0
                           ? g
                           : Mat::Zero(p->value().rows(), p->value().cols()));
  }

  std::mt19937_64 rng(seed);
  GradCheckReport report;

  for (size_t pi = 0; pi < params.size(); ++pi) {
    Parameter* p = params[pi];
    Mat& theta = p->mutable_value();
    const Index cols = theta.cols();
    const auto coords = sample_coords(theta.size(), max_coords_per_param, rng);
    for (Index flat : coords) {
      const Index r = flat / cols;
      const Index c = flat % cols;
      const double saved = theta(r, c);

      double plus = std::numeric_limits<double>::quiet_NaN();
      double minus = std::numeric_limits<double>::quiet_NaN();
      {
        NoGradGuard guard;
        try {
          theta(r, c) = saved + step;
          plus = f().item();
          theta(r, c) = saved - step;
          minus = f().item();
        } catch (const NumericError&) {
          // perturbation pushed the forward pass out of its domain
        }
        theta(r, c) = saved;
      }
      if (!std::isfinite(plus) || !std::isfinite(minus)) {
        ++report.coords_skipped_nonfinite;
        continue;
      }

      const double numeric = (plus - minus) / (2.0 * step);
      const double a = analytic[pi](r, c);
      const double rel =
          std::abs(a - numeric) / std::max(std::abs(a) + std::abs(numeric), 1e-3);
      ++report.coords_checked;
      if (rel > report.max_rel_err || report.coords_checked == 1) {
        report.max_rel_err = rel;
        report.worst = CoordCheck{p->name(), r, c, a, numeric, rel};
      }
    }
  }
  return report;
}

}  // namespace luna
