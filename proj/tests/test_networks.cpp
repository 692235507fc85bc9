#include <cmath>
#include <random>

#include <gtest/gtest.h>

#include "pcdiff/losses.hpp"
#include "pcdiff/networks.hpp"
#include "pcdiff/noising.hpp"

using namespace pcdiff;
using grad::Tape;
using grad::Tensor;
using grad::Var;

namespace {

ModelConfig small_config(DiffusionMode mode = DiffusionMode::Guided) {
  ModelConfig c;
  c.mode = mode;
  c.num_classes = 2;
  c.latent_dim = 4;
  c.time_dim = 6;
  c.encoder_widths = {6, 8};
  c.decoder_widths = {8, 6};
  c.schedule.num_steps = 20;
  return c;
}

Tensor cloud_state(std::uint64_t seed, std::size_t n) {
  return to_state(normalize(generate_synthetic({ShapeFamily::Barbell}, n, seed)).cloud);
}

Tensor permute_rows(const Tensor& x, const std::vector<std::size_t>& perm) {
  Tensor out(x.rows(), x.cols());
  for (std::size_t i = 0; i < x.rows(); ++i) {
    for (std::size_t c = 0; c < x.cols(); ++c) out(i, c) = x(perm[i], c);
  }
  return out;
}

}  // namespace

TEST(model, default_shapes_and_budget) {
  const Model m = Model::init(ModelConfig{}, 1);
  EXPECT_EQ(m.encoder.point_layers.size(), 3u);
  EXPECT_EQ(m.encoder.point_layers[0].weight.shape(), (std::vector<std::size_t>{4, 128}));
  EXPECT_EQ(m.encoder.mu_head.weight.shape(), (std::vector<std::size_t>{512, 128}));
  EXPECT_EQ(m.decoder.layers.front().weight.shape(), (std::vector<std::size_t>{4 + 32 + 128, 256}));
  EXPECT_EQ(m.decoder.layers.back().weight.shape(), (std::vector<std::size_t>{128, 4}));
  EXPECT_LT(m.parameter_count(), 1000000u);
  for (const Tensor* p : m.parameters()) EXPECT_TRUE(p->all_finite());
}

TEST(encoder, permutation_invariant_and_duplicate_invariant) {
  const Model m = Model::init(small_config(), 3);
  const Tensor x = cloud_state(1, 12);
  std::vector<std::size_t> perm(12);
  for (std::size_t i = 0; i < 12; ++i) perm[i] = (i * 5 + 3) % 12;
  const LatentCode a = encode(m, x);
  const LatentCode b = encode(m, permute_rows(x, perm));
  EXPECT_EQ(a.mu, b.mu);
  EXPECT_EQ(a.logvar, b.logvar);

  Tensor doubled(24, 4);
  for (std::size_t i = 0; i < 24; ++i) {
    for (std::size_t c = 0; c < 4; ++c) doubled(i, c) = x(i % 12, c);
  }
  EXPECT_EQ(encode(m, doubled).mu, a.mu);
}

TEST(encoder, distinct_shapes_give_distinct_latents) {
  const Model m = Model::init(ModelConfig{}, 3);
  const Tensor a = to_state(normalize(generate_synthetic({ShapeFamily::Barbell}, 64, 1)).cloud);
  const Tensor b = to_state(normalize(generate_synthetic({ShapeFamily::Ring, 2}, 64, 2)).cloud);
  EXPECT_NE(encode(m, a).mu, encode(m, b).mu);
}

TEST(encoder, z_within_eps_clamp) {
  const Model m = Model::init(small_config(), 4);
  Rng rng(1);
  const LatentCode l = encode(m, cloud_state(2, 10), &rng);
  for (std::size_t d = 0; d < l.mu.size(); ++d) {
    EXPECT_LE(std::abs(l.z[d] - l.mu[d]), 6.0 * std::exp(l.logvar[d] / 2.0) + 1e-12);
  }
}

TEST(decoder, permutation_equivariant_with_n_by_4_output) {
  const Model m = Model::init(small_config(), 5);
  const auto s = VarianceSchedule::linear(m.config.schedule);
  const Tensor x = cloud_state(3, 9);
  const Tensor z = encode(m, x).mu;
  const std::vector<std::size_t> perm = {8, 2, 0, 5, 1, 7, 3, 6, 4};
  const Tensor e = decode(m, x, 7, s, z);
  const Tensor ep = decode(m, permute_rows(x, perm), 7, s, z);
  EXPECT_EQ(e.rows(), 9u);
  EXPECT_EQ(e.cols(), 4u);
  EXPECT_EQ(ep, permute_rows(e, perm));
  EXPECT_EQ(decode(m, cloud_state(3, 3), 7, s, z).rows(), 3u);
}

TEST(decoder, gradient_of_sum_matches_finite_differences) {
  const Model m = Model::init(small_config(), 6);
  const auto s = VarianceSchedule::linear(m.config.schedule);
  const Tensor x = cloud_state(4, 5);
  const Tensor emb = time_embedding(3, s, m.config.time_dim);
  Rng rng(2);
  const Tensor z = sample_eps(m.config.latent_dim, rng);

  std::vector<Tensor> inputs;
  for (const Tensor* p : m.parameters()) inputs.push_back(*p);
  const auto prog = [&](Tape& tape, std::span<const Var> params) {
    Model shell = m;
    ModelVars mv = bind(tape, shell, false);
    // Rebind decoder layers to the program's leaves, in canonical order.
    const std::size_t first_dec = 2 * (m.encoder.point_layers.size() + 2);
    for (std::size_t l = 0; l < mv.decoder_layers.size(); ++l) {
      mv.decoder_layers[l] = {params[first_dec + 2 * l], params[first_dec + 2 * l + 1]};
    }
    return grad::sum(decode(mv, tape.constant(x), emb, tape.constant(z)));
  };
  EXPECT_LT(grad::finite_diff_check(prog, inputs).max_rel_error, 1e-4);
}

TEST(kl, hand_values) {
  LatentCode l;
  l.mu = Tensor(1, 3);
  l.logvar = Tensor(1, 3);
  EXPECT_EQ(kl_to_prior(l), 0.0);
  l.mu = Tensor::from_rows({{1}});
  l.logvar = Tensor::from_rows({{0}});
  EXPECT_EQ(kl_to_prior(l), 0.5);
}

TEST(kl, monte_carlo_oracle) {
  std::mt19937_64 gen(77);
  std::normal_distribution<double> nd;
  LatentCode l;
  l.mu = Tensor::from_rows({{0.3, -0.8, 1.1}});
  l.logvar = Tensor::from_rows({{-0.4, 0.2, 0.5}});
  // E_q[log q(z) - log p(z)] per dimension
  const std::size_t samples = 1000000;
  double sum = 0.0, sum_sq = 0.0;
  for (std::size_t k = 0; k < samples; ++k) {
    double v = 0.0;
    for (std::size_t d = 0; d < 3; ++d) {
      const double sd = std::exp(l.logvar[d] / 2);
      const double e = nd(gen);
      const double z = l.mu[d] + sd * e;
      v += -0.5 * e * e - std::log(sd) + 0.5 * z * z;
    }
    sum += v;
    sum_sq += v * v;
  }
  const double mean = sum / samples;
  const double se = std::sqrt((sum_sq / samples - mean * mean) / samples);
  EXPECT_NEAR(kl_to_prior(l), mean, 3 * se);
}

TEST(kl, non_negative_for_random_latents) {
  std::mt19937_64 gen(3);
  std::normal_distribution<double> nd(0.0, 2.0);
  for (int trial = 0; trial < 100; ++trial) {
    LatentCode l;
    l.mu = Tensor(1, 5);
    l.logvar = Tensor(1, 5);
    for (double& v : l.mu.data()) v = nd(gen);
    for (double& v : l.logvar.data()) v = nd(gen);
    EXPECT_GE(kl_to_prior(l), 0.0);
  }
}

TEST(time_embedding, injective_first_entry_beta_and_bounded) {
  const auto s = VarianceSchedule::linear(ScheduleParams{});
  std::vector<Tensor> all;
  for (std::size_t t = 1; t <= s.steps(); ++t) {
    const Tensor e = time_embedding(t, s, 32);
    EXPECT_EQ(e.cols(), 32u);
    EXPECT_EQ(e[0], s.beta(t));
    double norm = 0.0;
    for (double v : e.data()) norm += v * v;
    EXPECT_LE(std::sqrt(norm), std::sqrt(32.0) + 1.0);
    all.push_back(e);
  }
  for (std::size_t a = 0; a < all.size(); ++a) {
    for (std::size_t b = a + 1; b < all.size(); ++b) EXPECT_NE(all[a], all[b]);
  }
  EXPECT_THROW(time_embedding(0, s, 32), std::out_of_range);
  EXPECT_THROW(time_embedding(s.steps() + 1, s, 32), std::out_of_range);

  const Tensor bo = time_embedding(5, s, 32, true);
  EXPECT_EQ(bo[0], s.beta(5));
  for (std::size_t i = 1; i < 32; ++i) EXPECT_EQ(bo[i], 0.0);
}

TEST(model, init_deterministic_in_seed) {
  const Model a = Model::init(small_config(), 9);
  const Model b = Model::init(small_config(), 9);
  const Model c = Model::init(small_config(), 10);
  const auto pa = a.parameters(), pb = b.parameters(), pc = c.parameters();
  for (std::size_t i = 0; i < pa.size(); ++i) EXPECT_EQ(*pa[i], *pb[i]);
  EXPECT_NE(*pa[0], *pc[0]);
}
