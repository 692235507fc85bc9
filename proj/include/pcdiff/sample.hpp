#pragma once

#include <cstdint>
#include <optional>
#include <vector>

#include "pcdiff/grad.hpp"
#include "pcdiff/networks.hpp"
#include "pcdiff/pointcloud.hpp"

namespace pcdiff {

enum class SamplerVariant {
  PaperDirect,  // x_{t-1} = x_t - e_theta
  Ancestral,    // posterior mean (1/sqrt(a_t))(x_t - b_t/sqrt(1-abar_t) e_theta) + sqrt(b_t) z
};

std::optional<SamplerVariant> parse_sampler(const std::string& name);
std::string sampler_name(SamplerVariant variant);

struct SamplerConfig {
  SamplerVariant variant = SamplerVariant::PaperDirect;
  std::uint64_t seed = 0;
  bool trace = false;
  std::size_t steps = 0;  // 0: take T from the model; otherwise must match it
};

/// Requested labels: an explicit per-point list or per-class ratios.
struct LabelSpec {
  std::vector<Label> labels;
  std::vector<double> ratios;

  static LabelSpec explicit_labels(std::vector<Label> labels) { return {std::move(labels), {}}; }
  static LabelSpec from_ratios(std::vector<double> ratios) { return {{}, std::move(ratios)}; }

  /// Ratios become counts by largest remainder, then a seeded shuffle.
  std::vector<Label> realize(std::size_t n, std::uint32_t num_classes, std::uint64_t seed) const;
};

struct SampleResult {
  LabeledPointCloud cloud;
  /// With trace on: T+1 states (n x 4) for t = T, T-1, ..., 0.
  std::vector<grad::Tensor> trace;
};

grad::Tensor sample_prior_latent(std::size_t dim, std::uint64_t seed);

/// Denoises the spatial channels from N(0, I) with the label channel pinned
/// to the requested labels throughout.
SampleResult sample_guided(const Model& model, const grad::Tensor& z, std::size_t n, const LabelSpec& labels,
                           const SamplerConfig& config);

/// Denoises all four channels jointly and decodes the final label channel.
SampleResult sample_unguided(const Model& model, const grad::Tensor& z, std::size_t n,
                             const SamplerConfig& config);

/// Encodes the cloud (z = mu) and samples n points back out. Guided models
/// reuse the cloud's labels.
SampleResult reconstruct(const Model& model, const LabeledPointCloud& cloud, const SamplerConfig& config);

}  // namespace pcdiff
