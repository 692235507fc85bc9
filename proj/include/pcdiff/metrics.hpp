#pragma once

#include <span>
#include <string>
#include <vector>

#include "pcdiff/pointcloud.hpp"

namespace pcdiff {

using Cloud = std::vector<Vec3>;

std::vector<Cloud> clouds_of(std::span<const LabeledPointCloud> shapes);

/// Jensen-Shannon divergence of two discrete distributions, natural log.
double jsd_distributions(std::span<const double> p, std::span<const double> q);

/// Pooled occupancy over an R^3 grid on [-1, 1]^3. Points outside the cube
/// land in the nearest boundary cell.
std::vector<double> occupancy(std::span<const Cloud> set, std::size_t resolution);

double jsd(std::span<const Cloud> gen, std::span<const Cloud> ref, std::size_t resolution = 28);

/// Worker count for pairwise distance matrices: PCDIFF_THREADS when set,
/// otherwise the hardware concurrency.
std::size_t worker_count();

/// Row-major |a| x |b| matrix of global_cd.
std::vector<double> cd_matrix(std::span<const Cloud> a, std::span<const Cloud> b);

double mmd_cd(std::span<const Cloud> gen, std::span<const Cloud> ref);
double coverage(std::span<const Cloud> gen, std::span<const Cloud> ref);
double one_nna(std::span<const Cloud> gen, std::span<const Cloud> ref);

struct ReportConfig {
  std::size_t jsd_resolution = 28;
};

struct MetricsReport {
  double jsd = 0.0;
  double mmd = 0.0;
  double cov = 0.0;
  double one_nna = 0.0;

  double jsd_scaled() const { return jsd * 1e2; }
  double mmd_scaled() const { return mmd * 1e3; }
  double cov_scaled() const { return cov * 1e2; }
  double one_nna_scaled() const { return one_nna * 1e2; }

  std::string to_text() const;
  std::string to_kv() const;
};

MetricsReport build_report(std::span<const Cloud> gen, std::span<const Cloud> ref, const ReportConfig& config = {});

/// Round half to even at `decimals` places.
double round_half_even(double value, int decimals = 2);
/// Fixed two-decimal rendering of round_half_even(value).
std::string format_2dp(double value);

}  // namespace pcdiff
