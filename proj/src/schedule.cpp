#include "pcdiff/schedule.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

namespace pcdiff {

VarianceSchedule VarianceSchedule::linear(double beta_start, double beta_end, std::size_t num_steps) {
  if (!(beta_start > 0.0 && beta_start <= beta_end && beta_end < 1.0)) {
    throw std::invalid_argument("schedule needs 0 < beta_start <= beta_end < 1");
  }
  if (num_steps < 1) throw std::invalid_argument("schedule needs at least one step");

  VarianceSchedule s;
  s.params_ = {beta_start, beta_end, num_steps};
  s.betas_.assign(num_steps + 1, 0.0);
  s.alphas_.assign(num_steps + 1, 1.0);
  s.alpha_bars_.assign(num_steps + 1, 1.0);
  for (std::size_t t = 1; t <= num_steps; ++t) {
    double beta = beta_start;
    if (t == num_steps && num_steps > 1) {
      beta = beta_end;
    } else if (num_steps > 1) {
      const double frac = static_cast<double>(t - 1) / static_cast<double>(num_steps - 1);
      beta = beta_start + (beta_end - beta_start) * frac;
    }
    s.betas_[t] = beta;
    s.alphas_[t] = 1.0 - beta;
    s.alpha_bars_[t] = s.alpha_bars_[t - 1] * s.alphas_[t];
  }
  return s;
}

DiffusionCoefficients VarianceSchedule::coefficients(std::size_t t) const {
  if (t < 1 || t > steps()) {
    throw std::out_of_range("timestep " + std::to_string(t) + " outside 1.." + std::to_string(steps()));
  }
  const double ab = alpha_bars_[t];
  return {std::sqrt(ab), std::sqrt(1.0 - ab), betas_[t]};
}

}  // namespace pcdiff
