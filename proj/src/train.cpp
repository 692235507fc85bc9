#include "pcdiff/train.hpp"

#include <cassert>
#include <cmath>
#include <bit>
#include <sstream>
#include <stdexcept>

#include "pcdiff/error.hpp"
#include "pcdiff/noising.hpp"
#include "pcdiff/rng.hpp"

namespace pcdiff {

using grad::Tape;
using grad::Tensor;
using grad::Var;

void optimizer_update(std::span<Tensor* const> params, std::span<const Tensor> grads, AdamState& state,
                      double learning_rate, const AdamConfig& config) {
  if (params.size() != grads.size()) throw ShapeError("optimizer_update: parameter/gradient count mismatch");
  if (state.m.empty()) {
    for (const Tensor* p : params) {
      state.m.emplace_back(p->rows(), p->cols());
      state.v.emplace_back(p->rows(), p->cols());
    }
  }
  if (state.m.size() != params.size()) throw ShapeError("optimizer_update: moment count mismatch");

  ++state.step;
  const double t = static_cast<double>(state.step);
  const double correct1 = 1.0 - std::pow(config.beta1, t);
  const double correct2 = 1.0 - std::pow(config.beta2, t);
  for (std::size_t k = 0; k < params.size(); ++k) {
    Tensor& p = *params[k];
    const Tensor& g = grads[k];
    Tensor& m = state.m[k];
    Tensor& v = state.v[k];
    if (g.shape() != p.shape() || m.shape() != p.shape()) {
      throw ShapeError("optimizer_update: shape mismatch at parameter " + std::to_string(k));
    }
    for (std::size_t i = 0; i < p.size(); ++i) {
      m[i] = config.beta1 * m[i] + (1.0 - config.beta1) * g[i];
      v[i] = config.beta2 * v[i] + (1.0 - config.beta2) * g[i] * g[i];
      const double m_hat = m[i] / correct1;
      const double v_hat = v[i] / correct2;
      p[i] -= learning_rate * m_hat / (std::sqrt(v_hat) + config.eps);
    }
  }
}

TrainState TrainState::fresh(const ModelConfig& config, std::uint64_t seed) {
  TrainState s;
  s.model = Model::init(config, seed);
  return s;
}

std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch_size,
                                       std::uint64_t step, std::uint64_t seed) {
  if (dataset_size == 0) throw std::invalid_argument("empty training set");
  if (batch_size == 0) throw std::invalid_argument("batch_size must be >= 1");
  std::vector<std::size_t> out;
  out.reserve(batch_size);
  std::uint64_t cached_epoch = ~0ULL;
  std::vector<std::size_t> perm(dataset_size);
  for (std::size_t b = 0; b < batch_size; ++b) {
    const std::uint64_t position = step * batch_size + b;
    const std::uint64_t epoch = position / dataset_size;
    if (epoch != cached_epoch) {
      for (std::size_t i = 0; i < dataset_size; ++i) perm[i] = i;
      Rng rng(seed, {0xba7c4, epoch});
      rng.shuffle(perm);
      cached_epoch = epoch;
    }
    out.push_back(perm[position % dataset_size]);
  }
  return out;
}

namespace {

struct ItemDraws {
  std::size_t t;
  NoiseField noise;
  Tensor eps;
};

ItemDraws draw(const TrainState& state, const TrainConfig& config, std::size_t item, std::size_t n) {
  const ModelConfig& mc = state.model.config;
  Rng rng(config.seed, {0x7a1, state.step, item});
  ItemDraws d;
  d.t = static_cast<std::size_t>(rng.integer(1, static_cast<std::int64_t>(mc.schedule.num_steps)));
  d.noise = sample_noise(n, mc.mode, rng);
  d.eps = sample_eps(mc.latent_dim, rng);
  return d;
}

struct ItemVars {
  Var total;
  LossBreakdown values;
};

ItemVars guided_item(const ModelVars& params, const TrainState& state, const TrainConfig& config,
                     const VarianceSchedule& schedule, const LabeledPointCloud& cloud, std::size_t item) {
  Tape& tape = *params.all.front().tape;
  const ModelConfig& mc = state.model.config;
  const Tensor x0 = to_state(cloud, mc.label_encoding);
  const ItemDraws d = draw(state, config, item, cloud.size());

  const LatentVars latent = encode(params, tape.constant(x0));
  const Var z = reparameterize(latent, d.eps);
  const Var kl = kl_to_prior(latent);

  const DiffusedCloud noised = noise_guided(x0, schedule, d.t, d.noise);
#ifndef NDEBUG
  for (std::size_t i = 0; i < x0.rows(); ++i) {
    assert(std::bit_cast<std::uint64_t>(noised.state(i, kLabelChannel)) ==
           std::bit_cast<std::uint64_t>(x0(i, kLabelChannel)));
  }
#endif
  const Tensor emb = time_embedding(d.t, schedule, mc.time_dim, mc.beta_only);
  const Var noised_var = tape.constant(noised.state);
  const Var e_theta = decode(params, noised_var, emb, z);

  const GuidedMseVars mse = guided_mse(e_theta, d.noise.values);
  const Var recon = grad::sub(take_columns(noised_var, 0, 3), take_columns(e_theta, 0, 3));
  const std::vector<Vec3> target = xyz_of(x0);
  const Var cd = per_class_cd(recon, cloud.labels, target, cloud.labels);

  Var total = grad::add(grad::add(mse.spatial, mse.label), cd);
  total = grad::add(total, grad::scale(kl, config.lambda_kl));
  return {total, guided_total(tape.value(mse.spatial).item(), tape.value(mse.label).item(),
                              tape.value(cd).item(), tape.value(kl).item(), config.lambda_kl)};
}

ItemVars unguided_item(const ModelVars& params, const TrainState& state, const TrainConfig& config,
                       const VarianceSchedule& schedule, const LabeledPointCloud& cloud, std::size_t item) {
  Tape& tape = *params.all.front().tape;
  const ModelConfig& mc = state.model.config;
  const Tensor x0 = to_state(cloud, mc.label_encoding);
  const ItemDraws d = draw(state, config, item, cloud.size());

  const LatentVars latent = encode(params, tape.constant(x0));
  const Var z = reparameterize(latent, d.eps);
  const Var kl = kl_to_prior(latent);

  const DiffusedCloud noised = noise_unguided(x0, schedule, d.t, d.noise);
  const Tensor emb = time_embedding(d.t, schedule, mc.time_dim, mc.beta_only);
  const Var e_theta = decode(params, tape.constant(noised.state), emb, z);
  const Var mse = unguided_mse(e_theta, d.noise.values);
  const Var total = grad::add(mse, grad::scale(kl, config.lambda_kl));

  LossBreakdown b;
  b.spatial_mse = tape.value(mse).item();
  b.kl = tape.value(kl).item();
  b.total = b.spatial_mse + config.lambda_kl * b.kl;
  return {total, b};
}

struct BatchResult {
  LossBreakdown mean;
  std::vector<Tensor> grads;
};

BatchResult run_batch(const TrainState& state, const TrainConfig& config,
                      std::span<const LabeledPointCloud> batch, bool with_grads) {
  if (batch.empty()) throw std::invalid_argument("empty batch");
  const ModelConfig& mc = state.model.config;
  const VarianceSchedule schedule = VarianceSchedule::linear(mc.schedule);

  Tape tape;
  const ModelVars params = bind(tape, state.model, with_grads);
  Var sum_total;
  LossBreakdown acc;
  for (std::size_t b = 0; b < batch.size(); ++b) {
    if (batch[b].num_classes != mc.num_classes) {
      throw std::invalid_argument("batch shape has K=" + std::to_string(batch[b].num_classes) +
                                  ", model expects " + std::to_string(mc.num_classes));
    }
    const ItemVars item = mc.mode == DiffusionMode::Guided
                              ? guided_item(params, state, config, schedule, batch[b], b)
                              : unguided_item(params, state, config, schedule, batch[b], b);
    sum_total = b == 0 ? item.total : grad::add(sum_total, item.total);
    acc.spatial_mse += item.values.spatial_mse;
    acc.label_mse += item.values.label_mse;
    acc.per_class_cd += item.values.per_class_cd;
    acc.kl += item.values.kl;
    acc.total += item.values.total;
  }
  const double inv_b = 1.0 / static_cast<double>(batch.size());
  acc.spatial_mse *= inv_b;
  acc.label_mse *= inv_b;
  acc.per_class_cd *= inv_b;
  acc.kl *= inv_b;
  acc.total *= inv_b;

  BatchResult result{acc, {}};
  if (!std::isfinite(acc.total)) {
    std::ostringstream os;
    os << "non-finite loss at step " << state.step << ": spatial_mse=" << acc.spatial_mse
       << " label_mse=" << acc.label_mse << " per_class_cd=" << acc.per_class_cd << " kl=" << acc.kl
       << " total=" << acc.total;
    throw NumericalError(os.str());
  }
  if (with_grads) {
    const Var loss = grad::scale(sum_total, inv_b);
    tape.backward(loss);
    for (Var p : params.all) result.grads.push_back(tape.grad(p));
  }
  return result;
}

LossBreakdown apply_step(TrainState& state, const TrainConfig& config,
                         std::span<const LabeledPointCloud> batch) {
  if (config.learning_rate < 0.0) throw std::invalid_argument("learning_rate must be >= 0");
  BatchResult r = run_batch(state, config, batch, true);
  auto params = state.model.parameters();
  optimizer_update(params, r.grads, state.optimizer, config.learning_rate);
  constexpr double kDecay = 1.0 - 1.0 / 100.0;
  state.loss_ema = state.step == 0 ? r.mean.total : kDecay * state.loss_ema + (1.0 - kDecay) * r.mean.total;
  ++state.step;
  return r.mean;
}

void require_mode(const TrainState& state, DiffusionMode mode) {
  if (state.model.config.mode != mode) {
    throw std::invalid_argument("model was built for " + mode_name(state.model.config.mode) +
                                " diffusion, not " + mode_name(mode));
  }
}

}  // namespace

LossBreakdown train_step_guided(TrainState& state, const TrainConfig& config,
                                std::span<const LabeledPointCloud> batch) {
  require_mode(state, DiffusionMode::Guided);
  return apply_step(state, config, batch);
}

LossBreakdown train_step_unguided(TrainState& state, const TrainConfig& config,
                                  std::span<const LabeledPointCloud> batch) {
  require_mode(state, DiffusionMode::Unguided);
  return apply_step(state, config, batch);
}

LossBreakdown train_step(TrainState& state, const TrainConfig& config,
                         std::span<const LabeledPointCloud> batch) {
  return apply_step(state, config, batch);
}

LossBreakdown evaluate_batch(const TrainState& state, const TrainConfig& config,
                             std::span<const LabeledPointCloud> batch) {
  return run_batch(state, config, batch, false).mean;
}

void train(TrainState& state, const TrainConfig& config, std::span<const LabeledPointCloud> shapes,
           const StepCallback& on_step) {
  std::vector<LabeledPointCloud> batch;
  while (state.step < config.max_steps) {
    batch.clear();
    for (std::size_t i : batch_indices(shapes.size(), config.batch_size, state.step, config.seed)) {
      batch.push_back(shapes[i]);
    }
    const LossBreakdown loss = train_step(state, config, batch);
    if (on_step) on_step(state, loss);
  }
}

}  // namespace pcdiff
