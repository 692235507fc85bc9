#include <algorithm>
#include <bit>
#include <cmath>
#include <set>

#include <gtest/gtest.h>

#include "pcdiff/losses.hpp"
#include "pcdiff/noising.hpp"
#include "pcdiff/sample.hpp"
#include "pcdiff/train.hpp"

using namespace pcdiff;
using grad::Tensor;

namespace {

ModelConfig desk(DiffusionMode mode) {
  ModelConfig c;
  c.mode = mode;
  c.num_classes = 2;
  c.latent_dim = 16;
  c.time_dim = 16;
  c.encoder_widths = {32, 64, 128};
  c.decoder_widths = {128, 128, 64};
  return c;
}

ModelConfig tiny(DiffusionMode mode, std::uint32_t k = 2) {
  ModelConfig c = desk(mode);
  c.num_classes = k;
  c.encoder_widths = {8};
  c.decoder_widths = {8};
  c.latent_dim = 4;
  c.time_dim = 4;
  c.schedule.num_steps = 30;
  return c;
}

LabeledPointCloud barbell(std::uint64_t seed, std::size_t n = 64) {
  return normalize(generate_synthetic({ShapeFamily::Barbell}, n, seed)).cloud;
}

std::size_t count(const std::vector<Label>& v, Label l) {
  return static_cast<std::size_t>(std::count(v.begin(), v.end(), l));
}

// One guided and one unguided model overfit on a single barbell, shared by
// the trained-model examples below.
class Trained : public ::testing::Test {
 protected:
  static void SetUpTestSuite() {
    shape_ = new LabeledPointCloud(barbell(100));
    for (auto mode : {DiffusionMode::Guided, DiffusionMode::Unguided}) {
      TrainState st = TrainState::fresh(desk(mode), 1);
      untrained_[static_cast<int>(mode)] = new Model(st.model);
      TrainConfig cfg;
      cfg.batch_size = 8;
      cfg.max_steps = 1000;
      cfg.seed = 2;
      train(st, cfg, std::vector<LabeledPointCloud>{*shape_});
      trained_[static_cast<int>(mode)] = new Model(st.model);
    }
  }
  static void TearDownTestSuite() {
    delete shape_;
    for (int i = 0; i < 2; ++i) {
      delete trained_[i];
      delete untrained_[i];
    }
  }
  static const Model& trained(DiffusionMode m) { return *trained_[static_cast<int>(m)]; }
  static const Model& untrained(DiffusionMode m) { return *untrained_[static_cast<int>(m)]; }

  static inline LabeledPointCloud* shape_ = nullptr;
  static inline Model* trained_[2] = {};
  static inline Model* untrained_[2] = {};
};

}  // namespace

TEST(label_spec, ratios_realize_exact_counts) {
  const auto labels = LabelSpec::from_ratios({0.5, 0.5}).realize(10, 2, 3);
  EXPECT_EQ(count(labels, 0), 5u);
  EXPECT_EQ(count(labels, 1), 5u);
  const auto three = LabelSpec::from_ratios({0.2, 0.3, 0.5}).realize(7, 3, 1);
  EXPECT_EQ(count(three, 0) + count(three, 1) + count(three, 2), 7u);
  EXPECT_EQ(LabelSpec::from_ratios({0.2, 0.3, 0.5}).realize(7, 3, 1), three);
}

TEST(label_spec, invalid_specs_rejected) {
  EXPECT_THROW(LabelSpec::from_ratios({0.5, 0.6}).realize(10, 2, 0), std::invalid_argument);
  EXPECT_THROW(LabelSpec::from_ratios({1.0}).realize(10, 2, 0), std::invalid_argument);
  EXPECT_THROW(LabelSpec::explicit_labels({0, 1}).realize(3, 2, 0), std::invalid_argument);
  EXPECT_THROW(LabelSpec::explicit_labels({0, 2}).realize(2, 2, 0), std::invalid_argument);
}

TEST(sample_guided, labels_fixed_through_trajectory) {
  const Model m = Model::init(tiny(DiffusionMode::Guided, 3), 1);
  SamplerConfig sc;
  sc.trace = true;
  sc.seed = 4;
  const auto spec = LabelSpec::from_ratios({0.25, 0.25, 0.5});
  const SampleResult r = sample_guided(m, sample_prior_latent(4, 1), 40, spec, sc);
  const auto expect = spec.realize(40, 3, 4);
  EXPECT_EQ(r.cloud.labels, expect);
  EXPECT_EQ(count(r.cloud.labels, 2), 20u);
  ASSERT_EQ(r.trace.size(), 31u);
  const auto enc = encode_labels(expect, 3);
  for (const Tensor& s : r.trace) {
    for (std::size_t i = 0; i < 40; ++i) {
      ASSERT_EQ(std::bit_cast<std::uint64_t>(s(i, kLabelChannel)), std::bit_cast<std::uint64_t>(enc[i]));
    }
  }
}

TEST(sample_guided, mode_and_step_mismatch_rejected) {
  const Model g = Model::init(tiny(DiffusionMode::Guided), 1);
  const Model u = Model::init(tiny(DiffusionMode::Unguided), 1);
  const Tensor z = sample_prior_latent(4, 1);
  EXPECT_THROW(sample_unguided(g, z, 8, {}), std::invalid_argument);
  EXPECT_THROW(sample_guided(u, z, 8, LabelSpec::from_ratios({0.5, 0.5}), {}), std::invalid_argument);
  SamplerConfig sc;
  sc.steps = 31;
  EXPECT_THROW(sample_guided(g, z, 8, LabelSpec::from_ratios({0.5, 0.5}), sc), std::invalid_argument);
}

TEST(sample_unguided, labels_valid_and_deterministic) {
  const Model m = Model::init(tiny(DiffusionMode::Unguided, 4), 2);
  for (auto v : {SamplerVariant::PaperDirect, SamplerVariant::Ancestral}) {
    SamplerConfig sc;
    sc.variant = v;
    sc.seed = 7;
    const SampleResult a = sample_unguided(m, sample_prior_latent(4, 3), 50, sc);
    for (Label l : a.cloud.labels) EXPECT_LT(l, 4);
    EXPECT_EQ(a.cloud, sample_unguided(m, sample_prior_latent(4, 3), 50, sc).cloud);
  }
}

TEST(trace, first_state_is_standard_normal) {
  const Model m = Model::init(tiny(DiffusionMode::Unguided), 3);
  SamplerConfig sc;
  sc.trace = true;
  const std::size_t n = 4096;
  const SampleResult r = sample_unguided(m, sample_prior_latent(4, 2), n, sc);
  ASSERT_EQ(r.trace.size(), m.config.schedule.num_steps + 1);
  const Tensor& first = r.trace.front();
  for (std::size_t c = 0; c < 4; ++c) {
    double mean = 0, var = 0;
    for (std::size_t i = 0; i < n; ++i) mean += first(i, c);
    mean /= n;
    for (std::size_t i = 0; i < n; ++i) var += (first(i, c) - mean) * (first(i, c) - mean);
    var /= n - 1;
    EXPECT_LT(std::abs(mean), 4.0 / std::sqrt(static_cast<double>(n)));
    EXPECT_NEAR(var, 1.0, 4.0 * std::sqrt(2.0 / n));
  }
  EXPECT_EQ(from_state(r.trace.back(), 2), r.cloud);
}

TEST(reconstruct, guided_keeps_input_labels) {
  const Model m = Model::init(tiny(DiffusionMode::Guided), 4);
  const LabeledPointCloud c = barbell(5, 30);
  EXPECT_EQ(reconstruct(m, c, {}).cloud.labels, c.labels);
}

TEST_F(Trained, guided_reconstruction_improves_tenfold_over_init) {
  for (auto v : {SamplerVariant::PaperDirect, SamplerVariant::Ancestral}) {
    SamplerConfig sc;
    sc.variant = v;
    sc.seed = 5;
    const double before = per_class_cd(reconstruct(untrained(DiffusionMode::Guided), *shape_, sc).cloud, *shape_);
    const double after = per_class_cd(reconstruct(trained(DiffusionMode::Guided), *shape_, sc).cloud, *shape_);
    EXPECT_LE(after * 10.0, before) << sampler_name(v) << " before " << before << " after " << after;
  }
}

TEST_F(Trained, guided_sample_from_training_latent_beats_baseline_fivefold) {
  SamplerConfig sc;
  sc.seed = 6;
  const auto labels = LabelSpec::explicit_labels(shape_->labels);
  const auto run = [&](const Model& m) {
    const Tensor z = encode(m, to_state(*shape_)).mu;
    return per_class_cd(sample_guided(m, z, shape_->size(), labels, sc).cloud, *shape_);
  };
  const double base = run(untrained(DiffusionMode::Guided));
  const double trained_cd = run(trained(DiffusionMode::Guided));
  EXPECT_LE(trained_cd * 5.0, base) << base << " vs " << trained_cd;
}

TEST_F(Trained, ancestral_guided_reconstruction_global_cd_small) {
  SamplerConfig sc;
  sc.variant = SamplerVariant::Ancestral;
  sc.seed = 8;
  const LabeledPointCloud r = reconstruct(trained(DiffusionMode::Guided), *shape_, sc).cloud;
  EXPECT_LT(global_cd(r.points, shape_->points), 0.1);
}

TEST_F(Trained, unguided_ancestral_samples_cover_both_labels) {
  std::size_t both = 0;
  for (std::uint64_t k = 0; k < 100; ++k) {
    SamplerConfig sc;
    sc.variant = SamplerVariant::Ancestral;
    sc.seed = k;
    const auto r = sample_unguided(trained(DiffusionMode::Unguided), sample_prior_latent(16, 1000 + k), 64, sc);
    both += std::set<Label>(r.cloud.labels.begin(), r.cloud.labels.end()).size() == 2;
  }
  EXPECT_GE(both, 90u);
}
