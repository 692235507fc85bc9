#include <cmath>
#include <bit>
#include <random>

#include <gtest/gtest.h>

#include "pcdiff/noising.hpp"

using namespace pcdiff;
using grad::Tensor;

namespace {

Tensor random_state(std::mt19937_64& gen, std::size_t n, std::uint32_t k) {
  std::normal_distribution<double> nd;
  std::uniform_int_distribution<int> lab(0, static_cast<int>(k) - 1);
  Tensor s(n, 4);
  for (std::size_t i = 0; i < n; ++i) {
    for (int c = 0; c < 3; ++c) s(i, c) = nd(gen);
    s(i, 3) = encode_label(static_cast<Label>(lab(gen)), k);
  }
  return s;
}

// Schedule whose alpha_bar at t=1 is exactly 0.25.
VarianceSchedule quarter_schedule() { return VarianceSchedule::linear(0.75, 0.75, 1); }

}  // namespace

TEST(labels, endpoints_and_center) {
  EXPECT_EQ(encode_label(0, 2), -1.0);
  EXPECT_EQ(encode_label(1, 2), 1.0);
  EXPECT_EQ(encode_label(1, 3), 0.0);
  EXPECT_EQ(encode_label(0, 1), 0.0);
  EXPECT_EQ(encode_label(4, 5, LabelEncoding::Raw), 4.0);
}

TEST(labels, decode_tolerates_sub_half_step_offsets) {
  for (std::uint32_t k = 2; k <= 6; ++k) {
    const double step = 2.0 / (k - 1);
    for (Label c = 0; c < k; ++c) {
      for (double frac : {-0.49, -0.25, 0.0, 0.25, 0.49}) {
        EXPECT_EQ(decode_label(encode_label(c, k) + frac * step, k), c) << k << " " << c << " " << frac;
      }
    }
  }
  EXPECT_EQ(decode_label(-50.0, 3), 0);
  EXPECT_EQ(decode_label(50.0, 3), 2);
  EXPECT_EQ(decode_label(2.4, 4, LabelEncoding::Raw), 2);
}

TEST(noise_guided, hand_example) {
  const auto s = quarter_schedule();
  EXPECT_DOUBLE_EQ(s.alpha_bar(1), 0.25);
  const Tensor x0 = Tensor::from_rows({{1, 0, 0, -1}});
  const NoiseField noise{Tensor::from_rows({{1, 1, 1, 0}})};
  const DiffusedCloud d = noise_guided(x0, s, 1, noise);
  const double c1 = std::sqrt(0.75);
  EXPECT_NEAR(d.state(0, 0), 0.5 + c1, 1e-15);
  EXPECT_NEAR(d.state(0, 1), c1, 1e-15);
  EXPECT_NEAR(d.state(0, 2), c1, 1e-15);
  EXPECT_EQ(d.state(0, 3), -1.0);
}

TEST(noise_guided, rejects_label_noise) {
  const auto s = quarter_schedule();
  const Tensor x0 = Tensor::from_rows({{1, 0, 0, -1}});
  EXPECT_THROW(noise_guided(x0, s, 1, NoiseField{Tensor::from_rows({{0, 0, 0, 0.1}})}), std::invalid_argument);
}

TEST(noise_guided, label_channel_bit_identical_for_every_t) {
  std::mt19937_64 gen(5);
  const auto s = VarianceSchedule::linear(ScheduleParams{});
  const Tensor x0 = random_state(gen, 64, 3);
  Rng rng(5);
  for (std::size_t t = 0; t <= s.steps(); ++t) {
    const NoiseField n = sample_noise(64, DiffusionMode::Guided, rng);
    const DiffusedCloud d = noise_guided(x0, s, t, n);
    for (std::size_t i = 0; i < 64; ++i) {
      EXPECT_EQ(std::bit_cast<std::uint64_t>(d.state(i, 3)), std::bit_cast<std::uint64_t>(x0(i, 3)));
    }
  }
}

TEST(noise_guided, tiny_beta_stays_close) {
  const auto s = VarianceSchedule::linear(1e-8, 1e-8, 1);
  std::mt19937_64 gen(1);
  const Tensor x0 = random_state(gen, 10, 2);
  Rng rng(1);
  const NoiseField n = sample_noise(10, DiffusionMode::Guided, rng);
  const DiffusedCloud d = noise_guided(x0, s, 1, n);
  const double c1 = s.coefficients(1).noise;
  for (std::size_t i = 0; i < 10; ++i) {
    for (int c = 0; c < 3; ++c) EXPECT_LE(std::abs(d.state(i, c) - x0(i, c)), c1 * std::abs(n.values(i, c)) + 1e-7);
  }
}

TEST(noise_unguided, zero_noise_scales_all_channels) {
  std::mt19937_64 gen(2);
  const auto s = VarianceSchedule::linear(ScheduleParams{});
  const Tensor x0 = random_state(gen, 8, 3);
  const DiffusedCloud d = noise_unguided(x0, s, 50, NoiseField{Tensor(8, 4)});
  const double c0 = s.coefficients(50).signal;
  for (std::size_t i = 0; i < x0.size(); ++i) EXPECT_EQ(d.state[i], c0 * x0[i]);
}

TEST(noise_unguided, t_zero_identity_and_elementwise_oracle) {
  std::mt19937_64 gen(3);
  const auto s = VarianceSchedule::linear(ScheduleParams{});
  const Tensor x0 = random_state(gen, 16, 4);
  Rng rng(3);
  const NoiseField n = sample_noise(16, DiffusionMode::Unguided, rng);
  EXPECT_EQ(noise_unguided(x0, s, 0, n).state, x0);
  const std::size_t t = 123;
  const DiffusedCloud d = noise_unguided(x0, s, t, n);
  const double ab = s.alpha_bar(t);
  for (std::size_t i = 0; i < x0.size(); ++i) {
    EXPECT_NEAR(d.state[i], std::sqrt(ab) * x0[i] + std::sqrt(1.0 - ab) * n.values[i], 1e-14);
  }
}

TEST(sample_noise, guided_label_column_zero_and_moments) {
  Rng rng(12);
  const NoiseField g = sample_noise(50000, DiffusionMode::Guided, rng);
  const NoiseField u = sample_noise(50000, DiffusionMode::Unguided, rng);
  double m[4] = {}, v[4] = {};
  for (std::size_t i = 0; i < 50000; ++i) {
    EXPECT_EQ(g.values(i, 3), 0.0);
    for (int c = 0; c < 4; ++c) {
      m[c] += u.values(i, c);
      v[c] += u.values(i, c) * u.values(i, c);
    }
  }
  for (int c = 0; c < 4; ++c) {
    EXPECT_NEAR(m[c] / 50000, 0.0, 0.02);
    EXPECT_NEAR(v[c] / 50000, 1.0, 0.03);
  }
}

TEST(forward_step, composition_matches_closed_form_marginal) {
  const auto s = VarianceSchedule::linear(1e-4, 0.05, 20);
  const std::size_t t_star = 20;
  const std::size_t draws = 100000;
  Tensor x0(draws, 4);
  for (std::size_t i = 0; i < draws; ++i) {
    x0(i, 0) = 1.0;
    x0(i, 1) = -0.5;
    x0(i, 2) = 0.25;
    x0(i, 3) = 1.0;
  }
  Rng rng(99);
  Tensor x = x0;
  for (std::size_t t = 1; t <= t_star; ++t) x = forward_step(x, s, t, DiffusionMode::Guided, rng);
  const auto c = s.coefficients(t_star);
  for (int ch = 0; ch < 3; ++ch) {
    double m = 0, v = 0;
    for (std::size_t i = 0; i < draws; ++i) m += x(i, ch);
    m /= draws;
    for (std::size_t i = 0; i < draws; ++i) v += (x(i, ch) - m) * (x(i, ch) - m);
    v /= draws - 1;
    const double var = c.noise * c.noise;
    const double se_mean = std::sqrt(var / draws);
    const double se_var = var * std::sqrt(2.0 / (draws - 1));
    EXPECT_NEAR(m, c.signal * x0(0, ch), 3 * se_mean) << ch;
    EXPECT_NEAR(v, var, 3 * se_var) << ch;
  }
  for (std::size_t i = 0; i < draws; ++i) ASSERT_EQ(x(i, 3), 1.0);
}

TEST(state, round_trip) {
  LabeledPointCloud c;
  c.num_classes = 3;
  c.points = {{0.1, 0.2, 0.3}, {-1, 0, 1}};
  c.labels = {2, 0};
  const Tensor s = to_state(c);
  EXPECT_EQ(s(0, 3), 1.0);
  EXPECT_EQ(s(1, 3), -1.0);
  EXPECT_EQ(from_state(s, 3), c);
}
