#include "pcdiff/sample.hpp"

#include <cmath>
#include <stdexcept>
#include <string>

#include "pcdiff/noising.hpp"
#include "pcdiff/rng.hpp"

namespace pcdiff {

using grad::Tensor;

std::optional<SamplerVariant> parse_sampler(const std::string& name) {
  if (name == "paper-direct" || name == "direct") return SamplerVariant::PaperDirect;
  if (name == "ancestral") return SamplerVariant::Ancestral;
  return std::nullopt;
}

std::string sampler_name(SamplerVariant variant) {
  return variant == SamplerVariant::PaperDirect ? "paper-direct" : "ancestral";
}

std::vector<Label> LabelSpec::realize(std::size_t n, std::uint32_t num_classes, std::uint64_t seed) const {
  if (!labels.empty()) {
    if (labels.size() != n) {
      throw std::invalid_argument("label list has " + std::to_string(labels.size()) + " entries for " +
                                  std::to_string(n) + " points");
    }
    for (Label l : labels) {
      if (l >= num_classes) {
        throw std::invalid_argument("label " + std::to_string(l) + " not below K=" + std::to_string(num_classes));
      }
    }
    return labels;
  }
  if (ratios.size() != num_classes) {
    throw std::invalid_argument("got " + std::to_string(ratios.size()) + " label ratios for K=" +
                                std::to_string(num_classes));
  }
  double total = 0.0;
  for (double r : ratios) {
    if (!(r >= 0.0)) throw std::invalid_argument("label ratios must be non-negative");
    total += r;
  }
  if (std::abs(total - 1.0) > 1e-9) throw std::invalid_argument("label ratios must sum to 1");

  const auto counts = apportion(ratios, n);
  std::vector<Label> out;
  out.reserve(n);
  for (std::size_t k = 0; k < counts.size(); ++k) out.insert(out.end(), counts[k], static_cast<Label>(k));
  Rng rng(seed, {0x1abe1});
  rng.shuffle(out);
  return out;
}

Tensor sample_prior_latent(std::size_t dim, std::uint64_t seed) {
  Rng rng(seed, {0x2a7e});
  Tensor z(1, dim);
  for (double& v : z.data()) v = rng.normal();
  return z;
}

namespace {

SampleResult run_reverse(const Model& model, const Tensor& z, Tensor state, DiffusionMode mode,
                         const SamplerConfig& config) {
  const VarianceSchedule schedule = VarianceSchedule::linear(model.config.schedule);
  const std::size_t steps = schedule.steps();
  if (config.steps != 0 && config.steps != steps) {
    throw std::invalid_argument("sampler asks for T=" + std::to_string(config.steps) + " but the model uses T=" +
                                std::to_string(steps));
  }
  if (z.size() != model.config.latent_dim) {
    throw std::invalid_argument("latent has " + std::to_string(z.size()) + " entries, model expects " +
                                std::to_string(model.config.latent_dim));
  }
  const std::size_t channels = mode == DiffusionMode::Guided ? 3 : kStateChannels;
  Rng rng(config.seed, {0x5a3, 1});

  SampleResult result;
  if (config.trace) result.trace.push_back(state);
  for (std::size_t t = steps; t >= 1; --t) {
    const Tensor e = decode(model, state, t, schedule, z);
    if (config.variant == SamplerVariant::PaperDirect) {
      for (std::size_t i = 0; i < state.rows(); ++i) {
        for (std::size_t c = 0; c < channels; ++c) state(i, c) -= e(i, c);
      }
    } else {
      const double beta = schedule.beta(t);
      const double inv_sqrt_alpha = 1.0 / std::sqrt(schedule.alpha(t));
      const double eps_coef = beta / std::sqrt(1.0 - schedule.alpha_bar(t));
      const double sigma = t > 1 ? std::sqrt(beta) : 0.0;
      for (std::size_t i = 0; i < state.rows(); ++i) {
        for (std::size_t c = 0; c < channels; ++c) {
          const double noise = t > 1 ? rng.normal() : 0.0;
          state(i, c) = inv_sqrt_alpha * (state(i, c) - eps_coef * e(i, c)) + sigma * noise;
        }
      }
    }
    if (config.trace) result.trace.push_back(state);
  }
  result.cloud = from_state(state, model.config.num_classes, model.config.label_encoding);
  return result;
}

Tensor initial_state(std::size_t n, std::size_t channels, std::uint64_t seed) {
  if (n == 0) throw std::invalid_argument("cannot sample an empty cloud");
  Rng rng(seed, {0x5a3, 0});
  Tensor s(n, kStateChannels);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t c = 0; c < channels; ++c) s(i, c) = rng.normal();
  }
  return s;
}

}  // namespace

SampleResult sample_guided(const Model& model, const Tensor& z, std::size_t n, const LabelSpec& labels,
                           const SamplerConfig& config) {
  if (model.config.mode != DiffusionMode::Guided) {
    throw std::invalid_argument("sample_guided needs a guided model");
  }
  const std::vector<Label> realized = labels.realize(n, model.config.num_classes, config.seed);
  Tensor state = initial_state(n, 3, config.seed);
  for (std::size_t i = 0; i < n; ++i) {
    state(i, kLabelChannel) = encode_label(realized[i], model.config.num_classes, model.config.label_encoding);
  }
  SampleResult r = run_reverse(model, z, std::move(state), DiffusionMode::Guided, config);
  r.cloud.labels = realized;
  return r;
}

SampleResult sample_unguided(const Model& model, const Tensor& z, std::size_t n, const SamplerConfig& config) {
  if (model.config.mode != DiffusionMode::Unguided) {
    throw std::invalid_argument("sample_unguided needs an unguided model");
  }
  return run_reverse(model, z, initial_state(n, kStateChannels, config.seed), DiffusionMode::Unguided, config);
}

SampleResult reconstruct(const Model& model, const LabeledPointCloud& cloud, const SamplerConfig& config) {
  cloud.validate();
  const LatentCode latent = encode(model, to_state(cloud, model.config.label_encoding));
  if (model.config.mode == DiffusionMode::Guided) {
    return sample_guided(model, latent.mu, cloud.size(), LabelSpec::explicit_labels(cloud.labels), config);
  }
  return sample_unguided(model, latent.mu, cloud.size(), config);
}

}  // namespace pcdiff
