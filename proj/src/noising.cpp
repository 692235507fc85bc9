#include "pcdiff/noising.hpp"

#include <algorithm>
#include <cmath>
#include <stdexcept>

#include "pcdiff/error.hpp"

namespace pcdiff {

std::string mode_name(DiffusionMode mode) {
  return mode == DiffusionMode::Guided ? "guided" : "unguided";
}

std::string encoding_name(LabelEncoding encoding) {
  return encoding == LabelEncoding::Centered ? "centered" : "raw";
}

double encode_label(Label label, std::uint32_t num_classes, LabelEncoding encoding) {
  if (encoding == LabelEncoding::Raw) return static_cast<double>(label);
  const double half = (static_cast<double>(num_classes) - 1.0) / 2.0;
  const double step = 2.0 / std::max(static_cast<double>(num_classes) - 1.0, 1.0);
  return (static_cast<double>(label) - half) * step;
}

Label decode_label(double value, std::uint32_t num_classes, LabelEncoding encoding) {
  double raw = value;
  if (encoding == LabelEncoding::Centered) {
    const double half = (static_cast<double>(num_classes) - 1.0) / 2.0;
    const double step = 2.0 / std::max(static_cast<double>(num_classes) - 1.0, 1.0);
    raw = value / step + half;
  }
  if (!std::isfinite(raw)) raw = 0.0;
  const double top = static_cast<double>(num_classes) - 1.0;
  return static_cast<Label>(std::clamp(std::round(raw), 0.0, top));
}

std::vector<double> encode_labels(std::span<const Label> labels, std::uint32_t num_classes,
                                  LabelEncoding encoding) {
  std::vector<double> out;
  out.reserve(labels.size());
  for (Label l : labels) out.push_back(encode_label(l, num_classes, encoding));
  return out;
}

grad::Tensor to_state(const LabeledPointCloud& cloud, LabelEncoding encoding) {
  grad::Tensor s(cloud.size(), kStateChannels);
  for (std::size_t i = 0; i < cloud.size(); ++i) {
    for (std::size_t d = 0; d < 3; ++d) s(i, d) = cloud.points[i][d];
    s(i, kLabelChannel) = encode_label(cloud.labels[i], cloud.num_classes, encoding);
  }
  return s;
}

LabeledPointCloud from_state(const grad::Tensor& state, std::uint32_t num_classes, LabelEncoding encoding) {
  if (state.cols() != kStateChannels) throw ShapeError("state must be n x 4, got " + state.shape_str());
  LabeledPointCloud cloud;
  cloud.num_classes = num_classes;
  cloud.points.resize(state.rows());
  cloud.labels.resize(state.rows());
  for (std::size_t i = 0; i < state.rows(); ++i) {
    for (std::size_t d = 0; d < 3; ++d) cloud.points[i][d] = state(i, d);
    cloud.labels[i] = decode_label(state(i, kLabelChannel), num_classes, encoding);
  }
  return cloud;
}

NoiseField sample_noise(std::size_t n, DiffusionMode mode, Rng& rng) {
  NoiseField f{grad::Tensor(n, kStateChannels)};
  const std::size_t channels = mode == DiffusionMode::Guided ? 3 : kStateChannels;
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < channels; ++c) f.values(i, c) = rng.normal();
  }
  return f;
}

namespace {

void check_shapes(const grad::Tensor& x0, const NoiseField& noise) {
  if (x0.cols() != kStateChannels) throw ShapeError("state must be n x 4, got " + x0.shape_str());
  if (noise.values.shape() != x0.shape()) {
    throw ShapeError("noise " + noise.values.shape_str() + " does not match state " + x0.shape_str());
  }
}

std::pair<double, double> mix(const VarianceSchedule& schedule, std::size_t t) {
  if (t == 0) return {1.0, 0.0};
  const auto c = schedule.coefficients(t);
  return {c.signal, c.noise};
}

}  // namespace

DiffusedCloud noise_guided(const grad::Tensor& x0, const VarianceSchedule& schedule, std::size_t t,
                           const NoiseField& noise) {
  check_shapes(x0, noise);
  for (std::size_t i = 0; i < x0.rows(); ++i) {
    if (noise.values(i, kLabelChannel) != 0.0) {
      throw std::invalid_argument("guided noise must leave the label channel at zero (row " +
                                  std::to_string(i) + ")");
    }
  }
  const auto [c0, c1] = mix(schedule, t);
  DiffusedCloud out{x0, t, DiffusionMode::Guided};
  for (std::size_t i = 0; i < x0.rows(); ++i) {
    for (std::size_t d = 0; d < 3; ++d) out.state(i, d) = c0 * x0(i, d) + c1 * noise.values(i, d);
  }
  return out;
}

DiffusedCloud noise_unguided(const grad::Tensor& x0, const VarianceSchedule& schedule, std::size_t t,
                             const NoiseField& noise) {
  check_shapes(x0, noise);
  const auto [c0, c1] = mix(schedule, t);
  DiffusedCloud out{x0, t, DiffusionMode::Unguided};
  for (std::size_t i = 0; i < x0.size(); ++i) out.state[i] = c0 * x0[i] + c1 * noise.values[i];
  return out;
}

grad::Tensor forward_step(const grad::Tensor& prev, const VarianceSchedule& schedule, std::size_t t,
                          DiffusionMode mode, Rng& rng) {
  if (t < 1 || t > schedule.steps()) throw std::out_of_range("forward_step: t out of range");
  const double keep = std::sqrt(1.0 - schedule.beta(t));
  const double spread = std::sqrt(schedule.beta(t));
  const std::size_t channels = mode == DiffusionMode::Guided ? 3 : kStateChannels;
  grad::Tensor next = prev;
  for (std::size_t i = 0; i < prev.rows(); ++i) {
    for (std::size_t c = 0; c < channels; ++c) next(i, c) = keep * prev(i, c) + spread * rng.normal();
  }
  return next;
}

}  // namespace pcdiff
