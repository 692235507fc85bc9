#pragma once

// PointNet-style latent encoder and the conditional noise predictor
// e = D(z, t, x_t).

#include <cstdint>
#include <vector>

#include "pcdiff/grad.hpp"
#include "pcdiff/noising.hpp"
#include "pcdiff/rng.hpp"
#include "pcdiff/schedule.hpp"

namespace pcdiff {

struct ModelConfig {
  DiffusionMode mode = DiffusionMode::Guided;
  LabelEncoding label_encoding = LabelEncoding::Centered;
  bool beta_only = false;  // time embedding carries beta_t only
  std::uint32_t num_classes = 2;
  std::uint32_t latent_dim = 128;                       // d_z
  std::uint32_t time_dim = 32;                          // d_t, even
  std::vector<std::uint32_t> encoder_widths{128, 256, 512};  // per-point MLP after the 4 inputs
  std::vector<std::uint32_t> decoder_widths{256, 256, 128};  // hidden layers before the 4 outputs
  ScheduleParams schedule;

  /// Throws std::invalid_argument on unusable dimensions.
  void validate() const;
  friend bool operator==(const ModelConfig&, const ModelConfig&) = default;
};

struct Linear {
  grad::Tensor weight;  // in x out
  grad::Tensor bias;    // 1 x out
};

struct EncoderParams {
  std::vector<Linear> point_layers;
  Linear mu_head;
  Linear logvar_head;
};

struct DecoderParams {
  std::vector<Linear> layers;
};

struct Model {
  ModelConfig config;
  EncoderParams encoder;
  DecoderParams decoder;

  /// Uniform(+-1/sqrt(fan_in)) initialization, deterministic in seed.
  static Model init(const ModelConfig& config, std::uint64_t seed);

  /// Canonical parameter order: encoder point layers, mu head, logvar head,
  /// decoder layers; weight before bias in each.
  std::vector<grad::Tensor*> parameters();
  std::vector<const grad::Tensor*> parameters() const;
  std::size_t parameter_count() const;
};

// --- tape-level forward ------------------------------------------------------

struct LinearVars {
  grad::Var weight;
  grad::Var bias;
};

struct ModelVars {
  std::vector<LinearVars> encoder_layers;
  LinearVars mu_head;
  LinearVars logvar_head;
  std::vector<LinearVars> decoder_layers;
  std::vector<grad::Var> all;  // canonical order, matches Model::parameters()
};

/// Records every parameter as a leaf on the tape.
ModelVars bind(grad::Tape& tape, const Model& model, bool requires_grad);

struct LatentVars {
  grad::Var mu;      // 1 x d_z
  grad::Var logvar;  // 1 x d_z
};

LatentVars encode(const ModelVars& params, grad::Var state);
/// z = mu + exp(logvar / 2) * eps, with eps given (1 x d_z, already truncated).
grad::Var reparameterize(const LatentVars& latent, const grad::Tensor& eps);
/// 1/2 sum(exp(logvar) + mu^2 - 1 - logvar).
grad::Var kl_to_prior(const LatentVars& latent);
/// Per-point noise prediction, n x 4.
grad::Var decode(const ModelVars& params, grad::Var state, const grad::Tensor& time_embedding,
                 grad::Var z);

// --- value-level convenience -------------------------------------------------

inline constexpr double kEpsClamp = 6.0;

struct LatentCode {
  grad::Tensor mu;
  grad::Tensor logvar;
  grad::Tensor z;
};

/// Standard-normal draws clamped to +-6.
grad::Tensor sample_eps(std::size_t dim, Rng& rng);

/// Without an rng, z = mu.
LatentCode encode(const Model& model, const grad::Tensor& state, Rng* rng = nullptr);
grad::Tensor decode(const Model& model, const grad::Tensor& state, std::size_t t,
                    const VarianceSchedule& schedule, const grad::Tensor& z);
double kl_to_prior(const LatentCode& latent);

/// [beta_t, t/T, sin(w_k t), cos(w_k t) for k < d_t/2 - 1]; with beta_only
/// every entry but the first is zero.
grad::Tensor time_embedding(std::size_t t, const VarianceSchedule& schedule, std::size_t dim,
                            bool beta_only = false);

}  // namespace pcdiff
