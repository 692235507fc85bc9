#pragma once

#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include "pcdiff/grad.hpp"
#include "pcdiff/pointcloud.hpp"
#include "pcdiff/rng.hpp"
#include "pcdiff/schedule.hpp"

namespace pcdiff {

/// Guided keeps the label channel fixed; unguided diffuses all four channels.
enum class DiffusionMode : std::uint8_t { Guided = 0, Unguided = 1 };

/// How integer labels become the fourth (float) channel.
enum class LabelEncoding : std::uint8_t {
  Centered = 0,  // affine map onto [-1, 1]
  Raw = 1,       // the label value itself
};

std::string mode_name(DiffusionMode mode);
std::string encoding_name(LabelEncoding encoding);

inline constexpr std::size_t kStateChannels = 4;
inline constexpr std::size_t kLabelChannel = 3;

double encode_label(Label label, std::uint32_t num_classes, LabelEncoding encoding = LabelEncoding::Centered);
/// Inverse of encode_label, rounded to the nearest label and clamped to [0, K-1].
Label decode_label(double value, std::uint32_t num_classes, LabelEncoding encoding = LabelEncoding::Centered);
std::vector<double> encode_labels(std::span<const Label> labels, std::uint32_t num_classes,
                                  LabelEncoding encoding = LabelEncoding::Centered);

/// n x 4 state: xyz followed by the encoded label.
grad::Tensor to_state(const LabeledPointCloud& cloud, LabelEncoding encoding = LabelEncoding::Centered);
/// Inverse of to_state; the label channel is decoded with rounding.
LabeledPointCloud from_state(const grad::Tensor& state, std::uint32_t num_classes,
                             LabelEncoding encoding = LabelEncoding::Centered);

/// n x 4 noise. In guided mode the label column is identically zero.
struct NoiseField {
  grad::Tensor values;
};

NoiseField sample_noise(std::size_t n, DiffusionMode mode, Rng& rng);

struct DiffusedCloud {
  grad::Tensor state;  // n x 4
  std::size_t t = 0;
  DiffusionMode mode = DiffusionMode::Guided;
};

/// x_t = sqrt(abar_t) x_0 + sqrt(1 - abar_t) eps on the spatial channels; the
/// label channel is copied bit for bit. Rejects noise with a nonzero label
/// column. t = 0 is the identity.
DiffusedCloud noise_guided(const grad::Tensor& x0, const VarianceSchedule& schedule, std::size_t t,
                           const NoiseField& noise);

/// Same kernel applied to all four channels.
DiffusedCloud noise_unguided(const grad::Tensor& x0, const VarianceSchedule& schedule, std::size_t t,
                             const NoiseField& noise);

/// One step of q(x_t | x_{t-1}) = N(sqrt(1 - beta_t) x_{t-1}, beta_t I) on the
/// channels the mode diffuses.
grad::Tensor forward_step(const grad::Tensor& prev, const VarianceSchedule& schedule, std::size_t t,
                          DiffusionMode mode, Rng& rng);

}  // namespace pcdiff
