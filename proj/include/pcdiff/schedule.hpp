#pragma once

#include <cstddef>
#include <vector>

namespace pcdiff {

struct ScheduleParams {
  double beta_start = 1e-4;
  double beta_end = 0.05;
  std::size_t num_steps = 200;

  friend bool operator==(const ScheduleParams&, const ScheduleParams&) = default;
};

struct DiffusionCoefficients {
  double signal;  // sqrt(alpha_bar_t)
  double noise;   // sqrt(1 - alpha_bar_t)
  double beta;
};

/// Linear variance schedule. Tables are indexed by t in 1..T; index 0 holds
/// the t=0 convention (beta 0, alpha_bar 1).
class VarianceSchedule {
 public:
  static VarianceSchedule linear(double beta_start, double beta_end, std::size_t num_steps);
  static VarianceSchedule linear(const ScheduleParams& p) {
    return linear(p.beta_start, p.beta_end, p.num_steps);
  }

  std::size_t steps() const { return betas_.size() - 1; }
  const ScheduleParams& params() const { return params_; }

  double beta(std::size_t t) const { return betas_.at(t); }
  double alpha(std::size_t t) const { return alphas_.at(t); }
  double alpha_bar(std::size_t t) const { return alpha_bars_.at(t); }

  /// Throws std::out_of_range unless 1 <= t <= T.
  DiffusionCoefficients coefficients(std::size_t t) const;

 private:
  ScheduleParams params_;
  std::vector<double> betas_;
  std::vector<double> alphas_;
  std::vector<double> alpha_bars_;
};

}  // namespace pcdiff
