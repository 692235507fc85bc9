#pragma once

#include <span>
#include <vector>

#include "pcdiff/grad.hpp"
#include "pcdiff/pointcloud.hpp"

namespace pcdiff {

struct LossBreakdown {
  double spatial_mse = 0.0;
  double label_mse = 0.0;
  double per_class_cd = 0.0;
  double kl = 0.0;
  double total = 0.0;
};

struct GuidedMse {
  double spatial = 0.0;
  double label = 0.0;
};

/// e_theta is n x 4, e_rand n x 3 (or n x 4, label column ignored).
/// spatial = 1/n sum |e_xyz - e_rand|^2, label = 1/n sum e_c^2.
GuidedMse guided_mse(const grad::Tensor& e_theta, const grad::Tensor& e_rand);

/// Symmetric Chamfer distance with squared distances, each direction
/// averaged over its own point count.
double global_cd(std::span<const Vec3> p, std::span<const Vec3> q);

struct ClassInventory {
  std::vector<Label> shared;
  std::vector<Label> only_first;
  std::vector<Label> only_second;
};

ClassInventory class_inventory(std::span<const Label> p_labels, std::span<const Label> q_labels);

/// Mean over classes present in both clouds of the Chamfer distance between
/// the same-class subsets. Classes present in only one cloud are skipped and
/// listed in `inventory` when given. Throws std::invalid_argument when no
/// class is shared.
double per_class_cd(std::span<const Vec3> p, std::span<const Label> p_labels, std::span<const Vec3> q,
                    std::span<const Label> q_labels, ClassInventory* inventory = nullptr);
double per_class_cd(const LabeledPointCloud& p, const LabeledPointCloud& q,
                    ClassInventory* inventory = nullptr);

/// total = spatial + label + cd + lambda_kl * kl
LossBreakdown guided_total(double spatial_mse, double label_mse, double per_class_cd, double kl,
                           double lambda_kl);

/// Full guided objective from raw tensors: reconstructs xyz as
/// noised_xyz - e_theta_xyz and compares it, carrying the original labels,
/// against x0 with the per-class Chamfer distance.
LossBreakdown guided_total(const grad::Tensor& e_theta, const grad::Tensor& e_rand,
                           const grad::Tensor& noised, const grad::Tensor& x0,
                           std::span<const Label> labels, double kl, double lambda_kl);

/// 4-channel MSE plus lambda_kl * kl; per_class_cd stays 0.
LossBreakdown unguided_total(const grad::Tensor& e_theta, const grad::Tensor& e_rand, double kl,
                             double lambda_kl);

// --- differentiable forms ----------------------------------------------------

struct GuidedMseVars {
  grad::Var spatial;
  grad::Var label;
};

GuidedMseVars guided_mse(grad::Var e_theta, const grad::Tensor& e_rand);
grad::Var unguided_mse(grad::Var e_theta, const grad::Tensor& e_rand);
/// First `cols` columns of x (selection by constant matmul).
grad::Var take_columns(grad::Var x, std::size_t first, std::size_t count);
/// Per-class Chamfer between a differentiable n x 3 cloud and constant targets.
grad::Var per_class_cd(grad::Var p, std::span<const Label> p_labels, std::span<const Vec3> q,
                       std::span<const Label> q_labels);

std::vector<Vec3> xyz_of(const grad::Tensor& state);

}  // namespace pcdiff
