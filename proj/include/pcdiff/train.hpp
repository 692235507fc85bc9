#pragma once

#include <cstdint>
#include <functional>
#include <span>
#include <vector>

#include "pcdiff/grad.hpp"
#include "pcdiff/losses.hpp"
#include "pcdiff/networks.hpp"
#include "pcdiff/pointcloud.hpp"

namespace pcdiff {

struct AdamConfig {
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

/// First/second moment estimates, shaped like the parameters.
struct AdamState {
  std::uint64_t step = 0;
  std::vector<grad::Tensor> m;
  std::vector<grad::Tensor> v;

  friend bool operator==(const AdamState&, const AdamState&) = default;
};

/// One bias-corrected adaptive-moment update in place. Moments are created
/// on first use.
void optimizer_update(std::span<grad::Tensor* const> params, std::span<const grad::Tensor> grads,
                      AdamState& state, double learning_rate, const AdamConfig& config = {});

struct TrainConfig {
  std::size_t batch_size = 16;
  std::size_t max_steps = 2000;
  double learning_rate = 1e-3;
  double lambda_kl = 1e-3;
  std::uint64_t seed = 0;
  std::size_t checkpoint_every = 0;  // 0: only the final checkpoint
};

struct TrainState {
  Model model;
  AdamState optimizer;
  std::uint64_t step = 0;
  double loss_ema = 0.0;  // exponential average of the total, window 100

  static TrainState fresh(const ModelConfig& config, std::uint64_t seed);
};

/// Shape indices for a step: epoch-wise seeded permutations of the dataset,
/// consumed batch_size at a time.
std::vector<std::size_t> batch_indices(std::size_t dataset_size, std::size_t batch_size,
                                       std::uint64_t step, std::uint64_t seed);

/// One guided update (labels held fixed; spatial MSE, label MSE, per-class
/// Chamfer of the one-shot reconstruction, KL). Batch clouds must be
/// normalized. Returns the batch-mean breakdown.
LossBreakdown train_step_guided(TrainState& state, const TrainConfig& config,
                                std::span<const LabeledPointCloud> batch);

/// One unguided update (all four channels noised; MSE plus KL).
LossBreakdown train_step_unguided(TrainState& state, const TrainConfig& config,
                                  std::span<const LabeledPointCloud> batch);

/// Dispatches on state.model.config.mode.
LossBreakdown train_step(TrainState& state, const TrainConfig& config,
                         std::span<const LabeledPointCloud> batch);

/// Loss of one batch without updating anything; the same draws train_step
/// would use at state.step.
LossBreakdown evaluate_batch(const TrainState& state, const TrainConfig& config,
                             std::span<const LabeledPointCloud> batch);

using StepCallback = std::function<void(const TrainState&, const LossBreakdown&)>;

/// Runs until state.step == config.max_steps, calling on_step after each update.
void train(TrainState& state, const TrainConfig& config, std::span<const LabeledPointCloud> shapes,
           const StepCallback& on_step = {});

}  // namespace pcdiff
