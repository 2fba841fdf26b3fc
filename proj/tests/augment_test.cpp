#include <cmath>
#include <numbers>

#include <gtest/gtest.h>

#include "frera/augment.hpp"
#include "frera/properties.hpp"
#include "oracles.hpp"

using namespace frera;

namespace {

ImportanceVector make_s(std::vector<double> v) {
  ImportanceVector s;
  s.s = std::move(v);
  return s;
}

TimeSeries cosine(std::size_t L, std::size_t bin) {
  TimeSeries x = TimeSeries::zeros(L, 1);
  for (std::size_t n = 0; n < L; ++n) x.at(n, 0) = std::cos(2.0 * std::numbers::pi * double(bin * n) / double(L));
  return x;
}

CritMask fixed_mask(std::vector<double> w) {
  CritMask m;
  m.noise.assign(w.size(), 0.5);
  m.w = std::move(w);
  m.tau_w = 1.0;
  return m;
}

} // namespace

TEST(CritMask, ZeroScoreAndHalfNoiseGivesHalf) {
  for (double tau : {0.01, 0.1, 1.0, 5.0}) EXPECT_DOUBLE_EQ(crit_weight(0.0, 0.5, tau), 0.5);
}

TEST(CritMask, SaturatedValue) {
  const double w = crit_weight(2.0, 0.5, 0.1);
  // sigma(20) = 1 / (1 + e^-20)
  const double expected = 1.0 / (1.0 + std::exp(-20.0));
  EXPECT_NEAR(w, expected, 1e-15);
  EXPECT_NEAR(1.0 - w, 2.06e-9, 0.01e-9);
}

TEST(CritMask, LiteralAndSimplifiedFormsAgree) {
  Rng rng(3);
  std::uniform_real_distribution<double> us(-6.0, 6.0);
  for (int i = 0; i < 20000; ++i) {
    const double s = us(rng), eps = uniform_open(rng);
    for (double tau : {0.05, 0.1, 1.0})
      ASSERT_NEAR(crit_weight_literal(s, eps, tau), crit_weight(s, eps, tau), 1e-12) << s << " " << eps << " " << tau;
  }
}

TEST(CritMask, EntriesStrictlyInsideUnitInterval) {
  Rng rng(4);
  const auto s = ImportanceVector::random(33, rng, 3.0);
  for (int trial = 0; trial < 100; ++trial) {
    const auto m = sample_crit_mask(s, 0.1, rng);
    for (double w : m.w) {
      EXPECT_GT(w, 0.0);
      EXPECT_LT(w, 1.0);
    }
  }
}

TEST(CritMask, HardThresholdFollowsBernoulli) {
  for (double si : {-2.0, 0.0, 1.0}) {
    Rng rng(derive_rng(17, static_cast<std::uint64_t>(si + 10)));
    const auto s = make_s({si});
    int hits = 0;
    const int draws = 100000;
    for (int d = 0; d < draws; ++d) hits += sample_crit_mask(s, 0.01, rng).w[0] > 0.5;
    EXPECT_NEAR(double(hits) / draws, sigmoid(si), 0.01) << "s=" << si;
  }
}

TEST(CritMask, DerivativeMatchesFiniteDifference) {
  const std::vector<double> noise{0.2, 0.5, 0.9};
  const auto s = make_s({-0.3, 0.1, 0.4});
  const double tau = 0.7;
  const auto m = crit_mask_from_noise(s, noise, tau);
  const auto dw = m.derivative();
  for (std::size_t i = 0; i < 3; ++i) {
    const double h = 1e-6;
    const double fd = (crit_weight(s.s[i] + h, noise[i], tau) - crit_weight(s.s[i] - h, noise[i], tau)) / (2 * h);
    EXPECT_NEAR(dw[i], fd, 1e-8);
  }
}

TEST(CritMask, RejectsNonPositiveTemperature) {
  Rng rng(1);
  const auto s = make_s({0.0, 1.0});
  EXPECT_THROW(sample_crit_mask(s, 0.0, rng), UsageError);
  EXPECT_THROW(sample_crit_mask(s, -1.0, rng), UsageError);
}

TEST(CritMask, HardenedThresholdsAtHalf) {
  const auto h = fixed_mask({0.2, 0.5, 0.51, 0.9}).hardened();
  EXPECT_EQ(h.w, (std::vector<double>{0.0, 0.0, 1.0, 1.0}));
}

TEST(Distortion, WorkedExample) {
  const auto d = compute_distortion(make_s({1.0, -2.0, -4.0, 3.0}), ThresholdMode::mean);
  EXPECT_DOUBLE_EQ(d.threshold, -0.5);
  EXPECT_EQ(d.unimportant, (std::vector<std::size_t>{1, 2}));
  EXPECT_EQ(d.w[0], 0.0);
  EXPECT_DOUBLE_EQ(d.w[1], 2.0 / 3.0);
  EXPECT_DOUBLE_EQ(d.w[2], 4.0 / 3.0);
  EXPECT_EQ(d.w[3], 0.0);
}

TEST(Distortion, AllPositiveGivesZero) {
  for (auto mode : {ThresholdMode::mean, ThresholdMode::median, ThresholdMode::mean_plus_std}) {
    const auto d = compute_distortion(make_s({0.5, 1.0, 2.0}), mode);
    EXPECT_TRUE(d.unimportant.empty());
    for (double w : d.w) EXPECT_EQ(w, 0.0);
  }
}

TEST(Distortion, AllEqualNegativeGivesEmptySet) {
  const auto d = compute_distortion(make_s({-1.0, -1.0, -1.0, -1.0}), ThresholdMode::mean);
  EXPECT_DOUBLE_EQ(d.threshold, -1.0);
  EXPECT_TRUE(d.unimportant.empty());
  for (double w : d.w) EXPECT_EQ(w, 0.0);
}

TEST(Distortion, MedianAndMeanPlusStdThresholds) {
  const auto s = make_s({1.0, -2.0, -4.0, 3.0, -1.0});
  const auto med = compute_distortion(s, ThresholdMode::median);
  EXPECT_DOUBLE_EQ(med.threshold, -1.0);
  EXPECT_EQ(med.unimportant, (std::vector<std::size_t>{1, 2}));
  const auto mps = compute_distortion(s, ThresholdMode::mean_plus_std);
  // mean -0.6, population std sqrt(31.0/5 - 0.36) = sqrt(5.84) > 0.6, so t = 0
  EXPECT_DOUBLE_EQ(mps.threshold, 0.0);
  EXPECT_EQ(mps.unimportant, (std::vector<std::size_t>{1, 2, 4}));
  EXPECT_NEAR(mps.w[4], 1.0 / (7.0 / 3.0), 1e-15);
}

TEST(Distortion, NormalizationInvariantOnRandomScores) {
  Rng rng(31);
  for (int trial = 0; trial < 1000; ++trial) {
    const auto s = ImportanceVector::random(3 + trial % 70, rng, 2.0);
    for (auto mode : {ThresholdMode::mean, ThresholdMode::median, ThresholdMode::mean_plus_std}) {
      const auto d = compute_distortion(s, mode);
      double sum = 0.0;
      std::size_t count = 0;
      for (std::size_t i = 0; i < s.size(); ++i) {
        if (s.s[i] < d.threshold) {
          sum += d.w[i];
          ++count;
        } else {
          ASSERT_EQ(d.w[i], 0.0);
        }
        ASSERT_GE(d.w[i], 0.0);
      }
      ASSERT_EQ(count, d.unimportant.size());
      if (count) ASSERT_NEAR(sum / double(count), 1.0, 1e-12);
    }
  }
}

TEST(Distortion, ParseThresholdMode) {
  EXPECT_EQ(parse_threshold_mode("median"), ThresholdMode::median);
  EXPECT_EQ(parse_threshold_mode("mean_plus_std"), ThresholdMode::mean_plus_std);
  EXPECT_THROW(parse_threshold_mode("max"), UsageError);
}

TEST(Augment, AllOnesMaskIsIdentity) {
  Rng rng(5);
  const TimeSeries x = random_series(20, 2, rng);
  const auto y = augment(x, fixed_mask(std::vector<double>(11, 1.0)), DistortionVector::zeros(11));
  for (std::size_t i = 0; i < x.values().size(); ++i) EXPECT_NEAR(y.values()[i], x.values()[i], 1e-9);
}

TEST(Augment, ZeroMaskAnnihilates) {
  Rng rng(6);
  const TimeSeries x = random_series(17, 1, rng);
  const auto y = augment(x, fixed_mask(std::vector<double>(9, 0.0)), DistortionVector::zeros(9));
  for (double v : y.values()) EXPECT_NEAR(v, 0.0, 1e-12);
}

TEST(Augment, SingleBinBookkeeping) {
  const TimeSeries x = cosine(16, 3);
  std::vector<double> keep3(9, 0.0), keep2(9, 0.0);
  keep3[3] = 1.0;
  keep2[2] = 1.0;
  const auto y3 = augment(x, fixed_mask(keep3), DistortionVector::zeros(9));
  const auto y2 = augment(x, fixed_mask(keep2), DistortionVector::zeros(9));
  for (std::size_t n = 0; n < 16; ++n) {
    EXPECT_NEAR(y3.at(n, 0), x.at(n, 0), 1e-9);
    EXPECT_NEAR(y2.at(n, 0), 0.0, 1e-9);
  }
}

TEST(Augment, CritAndDistAdd) {
  Rng rng(8);
  const TimeSeries x = random_series(12, 2, rng);
  const auto crit = fixed_mask({0.1, 0.9, 0.3, 0.4, 0.8, 0.2, 0.6});
  const auto dist = compute_distortion(make_s({1.0, -2.0, -4.0, 3.0, -0.5, 2.0, -3.0}), ThresholdMode::mean);
  const auto y = augment(x, crit, dist);
  std::vector<cplx> half(7);
  for (std::size_t c = 0; c < 2; ++c) {
    const auto ch = x.channel(c);
    const auto X = oracle::dft(std::vector<double>(ch.begin(), ch.end()));
    for (std::size_t m = 0; m < 7; ++m) half[m] = (crit.w[m] + dist.w[m]) * X[m];
    const auto ref = oracle::idft_from_half(half, 12);
    for (std::size_t n = 0; n < 12; ++n) EXPECT_NEAR(y.at(n, c), ref[n], 1e-9);
  }
}

TEST(Augment, RejectsLengthMismatch) {
  Rng rng(9);
  const TimeSeries x = random_series(16, 1, rng);
  EXPECT_THROW(augment(x, fixed_mask(std::vector<double>(8, 1.0)), DistortionVector::zeros(8)), DataError);
}

TEST(Augment, MaskingEqualsCircularConvolution) {
  Rng rng(10);
  for (std::size_t L : {8u, 15u, 64u}) {
    const TimeSeries x = random_series(L, 2, rng);
    const auto s = ImportanceVector::random(spectrum_size(L), rng, 2.0);
    const auto mask = sample_crit_mask(s, 0.2, rng);
    const auto y = augment(x, mask, DistortionVector::zeros(mask.size()));
    const auto kernel = mask_kernel(mask.w, L);
    for (std::size_t c = 0; c < 2; ++c) {
      const auto ch = x.channel(c);
      const auto ref = oracle::circular_convolution(kernel, std::vector<double>(ch.begin(), ch.end()));
      for (std::size_t n = 0; n < L; ++n) EXPECT_NEAR(y.at(n, c), ref[n], 1e-8);
    }
  }
}

TEST(AugmentBackward, ZeroUpstreamGivesZero) {
  Rng rng(11);
  const TimeSeries x = random_series(16, 2, rng);
  const auto mask = sample_crit_mask(ImportanceVector::random(9, rng, 1.0), 0.5, rng);
  for (double g : augment_backward(TimeSeries::zeros(16, 2), x, mask)) EXPECT_EQ(g, 0.0);
}

TEST(AugmentBackward, MatchesFiniteDifferenceOfHalfSquaredNorm) {
  for (std::size_t L : {16u, 15u}) {
    Rng rng(12 + L);
    const std::size_t F = spectrum_size(L);
    const TimeSeries x = random_series(L, 2, rng);
    auto s = ImportanceVector::random(F, rng, 1.0);
    std::vector<double> noise(F);
    for (auto& e : noise) e = uniform_open(rng);
    const double tau = 0.5;
    const auto dist = compute_distortion(s, ThresholdMode::mean);  // held fixed

    auto objective = [&] {
      const auto y = augment(x, crit_mask_from_noise(s, noise, tau), dist);
      double acc = 0.0;
      for (double v : y.values()) acc += 0.5 * v * v;
      return acc;
    };
    const auto mask = crit_mask_from_noise(s, noise, tau);
    const auto y = augment(x, mask, dist);
    const auto grad = augment_backward(y, x, mask);  // d(0.5|y|^2)/dy = y
    for (std::size_t i = 0; i < F; ++i) {
      const double fd = oracle::central_difference(objective, &s.s[i], 1e-5);
      EXPECT_LT(oracle::relative_error(grad[i], fd), 1e-5) << "L=" << L << " i=" << i;
    }
  }
}

TEST(AugmentBackward, DistortionPathCarriesNoGradient) {
  // Finite differences that recompute w_dist disagree with the analytic
  // gradient on unimportant components; holding w_dist fixed they agree.
  const std::size_t L = 16, F = 9;
  Rng rng(40);
  const TimeSeries x = random_series(L, 1, rng);
  auto s = make_s({2.0, -1.0, -3.0, 1.5, -2.5, 0.5, -0.7, 3.0, -1.8});
  std::vector<double> noise(F);
  for (auto& e : noise) e = uniform_open(rng);
  const double tau = 1.0;
  const auto frozen = compute_distortion(s, ThresholdMode::mean);
  const auto mask = crit_mask_from_noise(s, noise, tau);
  const auto y = augment(x, mask, frozen);
  const auto grad = augment_backward(y, x, mask);

  auto energy = [&](bool recompute) {
    return [&, recompute] {
      const auto d = recompute ? compute_distortion(s, ThresholdMode::mean) : frozen;
      double acc = 0.0;
      for (double v : augment(x, crit_mask_from_noise(s, noise, tau), d).values()) acc += 0.5 * v * v;
      return acc;
    };
  };
  bool some_differ = false;
  for (std::size_t i : frozen.unimportant) {
    const double fd_frozen = oracle::central_difference(energy(false), &s.s[i], 1e-6);
    const double fd_live = oracle::central_difference(energy(true), &s.s[i], 1e-6);
    EXPECT_LT(oracle::relative_error(grad[i], fd_frozen), 1e-5);
    if (oracle::relative_error(grad[i], fd_live) > 1e-3) some_differ = true;
  }
  EXPECT_TRUE(some_differ);
}

TEST(AugmentationProperties, SuitePasses) {
  for (const auto& r : augmentation_properties())
    EXPECT_TRUE(r.passed) << r.name << " L=" << r.length << " err=" << r.error;
}
