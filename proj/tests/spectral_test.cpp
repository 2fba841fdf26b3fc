#include <cmath>
#include <numbers>
#include <thread>

#include <gtest/gtest.h>

#include "frera/properties.hpp"
#include "frera/spectral.hpp"
#include "oracles.hpp"

using namespace frera;

namespace {

TimeSeries random_ts(std::size_t L, std::size_t D, std::uint64_t seed) {
  Rng rng(seed);
  return random_series(L, D, rng);
}

TimeSeries cosine(std::size_t L, std::size_t bin) {
  TimeSeries x = TimeSeries::zeros(L, 1);
  for (std::size_t n = 0; n < L; ++n) x.at(n, 0) = std::cos(2.0 * std::numbers::pi * double(bin * n) / double(L));
  return x;
}

} // namespace

TEST(ForwardRdft, ConstantSignalHasOnlyDc) {
  const double c = 1.75;
  TimeSeries x(8, 1, std::vector<double>(8, c));
  const Spectrum X = forward_rdft(x);
  ASSERT_EQ(X.size(), 5u);
  EXPECT_NEAR(X.at(0, 0).real(), 8 * c, 1e-12);
  for (std::size_t m = 1; m < X.size(); ++m) EXPECT_NEAR(std::abs(X.at(m, 0)), 0.0, 1e-12);
}

TEST(ForwardRdft, CosineAtFirstBin) {
  const TimeSeries x = cosine(16, 1);
  // Brute-force sum gives X(1) = L/2 = 8, real.
  const auto ref = oracle::dft(x.values());
  ASSERT_NEAR(ref[1].real(), 8.0, 1e-12);
  const Spectrum X = forward_rdft(x);
  EXPECT_NEAR(X.at(1, 0).real(), 8.0, 1e-9);
  EXPECT_NEAR(X.at(1, 0).imag(), 0.0, 1e-9);
  for (std::size_t m = 0; m < X.size(); ++m)
    if (m != 1) EXPECT_NEAR(std::abs(X.at(m, 0)), 0.0, 1e-9) << "m=" << m;
}

TEST(ForwardRdft, MatchesNaiveDftOddLengthMultichannel) {
  const TimeSeries x = random_ts(37, 3, 1);
  const Spectrum X = forward_rdft(x);
  ASSERT_EQ(X.size(), 19u);
  for (std::size_t c = 0; c < 3; ++c) {
    const auto ch = x.channel(c);
    const auto ref = oracle::dft(std::vector<double>(ch.begin(), ch.end()));
    for (std::size_t m = 0; m < X.size(); ++m) EXPECT_LT(std::abs(X.at(m, c) - ref[m]), 1e-9);
  }
}

TEST(ForwardRdft, DcAndNyquistAreReal) {
  for (std::size_t L : {8u, 9u, 64u}) {
    const Spectrum X = forward_rdft(random_ts(L, 2, L));
    for (std::size_t c = 0; c < 2; ++c) {
      EXPECT_EQ(X.at(0, c).imag(), 0.0);
      if (L % 2 == 0) EXPECT_EQ(X.at(X.size() - 1, c).imag(), 0.0);
    }
  }
}

TEST(ForwardRdft, RejectsNonFiniteAndShortInput) {
  TimeSeries x = random_ts(8, 1, 3);
  x.at(4, 0) = std::nan("");
  EXPECT_THROW(forward_rdft(x), DataError);
  EXPECT_THROW(forward_rdft(TimeSeries::zeros(1, 1)), DataError);
}

TEST(InverseRdft, RoundTripEvenAndOdd) {
  for (std::size_t L : {8u, 37u, 128u}) {
    const TimeSeries x = random_ts(L, 2, 10 + L);
    const TimeSeries back = inverse_rdft(forward_rdft(x));
    for (std::size_t i = 0; i < x.values().size(); ++i) EXPECT_NEAR(back.values()[i], x.values()[i], 1e-9);
  }
}

TEST(InverseRdft, DcOnlyGivesConstant) {
  const double c = -0.5;
  std::vector<cplx> half(5, 0.0);
  half[0] = 8 * c;
  const TimeSeries x = inverse_rdft(Spectrum(8, 1, half));
  for (double v : x.values()) EXPECT_NEAR(v, c, 1e-12);
}

TEST(InverseRdft, MaskedSpectrumMatchesNaiveInverse) {
  for (std::size_t L : {12u, 15u}) {
    const TimeSeries x = random_ts(L, 1, 99 + L);
    Spectrum X = forward_rdft(x);
    Rng rng(5);
    std::vector<cplx> masked(X.size());
    for (std::size_t m = 0; m < X.size(); ++m) {
      X.at(m, 0) *= uniform_open(rng);
      masked[m] = X.at(m, 0);
    }
    const auto ref = oracle::idft_from_half(masked, L);
    const TimeSeries y = inverse_rdft(X);
    for (std::size_t n = 0; n < L; ++n) EXPECT_NEAR(y.at(n, 0), ref[n], 1e-9);
  }
}

TEST(InverseRdft, RejectsInconsistentOriginLength) {
  EXPECT_THROW(Spectrum(8, 1, std::vector<cplx>(4)), DataError);
  EXPECT_THROW(conjugate_extend(std::vector<cplx>(4), 8), DataError);
}

TEST(EnergySpectrum, ImpulseSatisfiesParseval) {
  TimeSeries x = TimeSeries::zeros(8, 1);
  x.at(0, 0) = 1.0;
  const auto e = energy_spectrum(forward_rdft(x));
  double total = 0.0;
  for (double v : e) total += v;
  EXPECT_NEAR(total, 1.0, 1e-12);
}

TEST(EnergySpectrum, ZeroSignal) {
  for (double v : energy_spectrum(forward_rdft(TimeSeries::zeros(16, 2)))) EXPECT_EQ(v, 0.0);
}

TEST(EnergySpectrum, PureCosineConcentrates) {
  const auto e = energy_spectrum(forward_rdft(cosine(64, 2)));
  // time-domain energy of cos over 64 samples is 32
  EXPECT_NEAR(e[2], 32.0, 1e-9);
  for (std::size_t m = 0; m < e.size(); ++m)
    if (m != 2) EXPECT_LT(e[m], 1e-12);
}

TEST(EnergySpectrum, TotalMatchesTimeDomainEnergy) {
  for (std::size_t L : {8u, 37u, 128u}) {
    const TimeSeries x = random_ts(L, 3, L);
    double time = 0.0;
    for (double v : x.values()) time += v * v;
    double freq = 0.0;
    for (double v : energy_spectrum(forward_rdft(x))) freq += v;
    EXPECT_NEAR(freq / time, 1.0, 1e-9);
  }
}

TEST(BasisInnerProduct, KnownValues) {
  EXPECT_NEAR(std::abs(basis_inner_product(3, 3, 16) - cplx(16, 0)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(basis_inner_product(1, 3, 16)), 0.0, 1e-12);
  EXPECT_NEAR(std::abs(basis_inner_product(0, 0, 5) - cplx(5, 0)), 0.0, 1e-12);
  EXPECT_THROW(basis_inner_product(16, 0, 16), DataError);
}

TEST(BasisInnerProduct, GeometricSeriesOracle) {
  // sum_n r^n with r = exp(2 pi i (m - q) / L) is (1 - r^L) / (1 - r) = 0 for m != q.
  for (std::size_t L : {8u, 37u}) {
    for (std::size_t m = 0; m < L; m += 3)
      for (std::size_t q = 0; q < L; q += 2) {
        const auto ip = basis_inner_product(m, q, L);
        if (m == q) continue;
        const cplx r = std::exp(cplx(0.0, 2.0 * std::numbers::pi * (double(m) - double(q)) / double(L)));
        const cplx closed = (1.0 - std::pow(r, double(L))) / (1.0 - r);
        EXPECT_LT(std::abs(ip - closed), 1e-9);
      }
  }
}

TEST(CircularConvolve, ImpulseIsIdentity) {
  const TimeSeries x = random_ts(10, 2, 4);
  std::vector<double> a(10, 0.0);
  a[0] = 1.0;
  EXPECT_EQ(circular_convolve(a, x).values(), x.values());
}

TEST(CircularConvolve, OnesKernelGivesChannelSum) {
  const TimeSeries x = random_ts(9, 2, 8);
  const TimeSeries y = circular_convolve(std::vector<double>(9, 1.0), x);
  for (std::size_t c = 0; c < 2; ++c) {
    double sum = 0.0;
    for (double v : x.channel(c)) sum += v;
    for (double v : y.channel(c)) EXPECT_NEAR(v, sum, 1e-12);
  }
}

TEST(CircularConvolve, ConvolutionTheorem) {
  const std::size_t L = 12;
  Rng rng(21);
  const TimeSeries x = random_series(L, 1, rng);
  std::vector<double> a(L);
  for (auto& v : a) v = normal(rng);
  const TimeSeries y = circular_convolve(a, x);
  const auto ref = oracle::circular_convolution(a, x.values());
  for (std::size_t n = 0; n < L; ++n) EXPECT_NEAR(y.at(n, 0), ref[n], 1e-12);
  const auto Y = oracle::dft(y.values()), A = oracle::dft(a), X = oracle::dft(x.values());
  for (std::size_t m = 0; m < L; ++m) EXPECT_LT(std::abs(Y[m] - A[m] * X[m]), 1e-9);
  EXPECT_THROW(circular_convolve(std::vector<double>(L - 1), x), DataError);
}

TEST(SpectralProperties, ReferenceSuitePasses) {
  for (const auto& r : spectral_properties(reference_transforms()))
    EXPECT_TRUE(r.passed) << r.name << " L=" << r.length << " D=" << r.channels << " err=" << r.error;
}

TEST(SpectralProperties, SignMutationBreaksParseval) {
  bool parseval_failed = false;
  for (const auto& r : spectral_properties(sign_mutated_transforms()))
    if (r.name == "parseval" && !r.passed) parseval_failed = true;
  EXPECT_TRUE(parseval_failed);
}

TEST(SpectralProperties, ThreadSafePureFunctions) {
  // Same input from several threads gives identical output.
  const TimeSeries x = random_ts(64, 2, 77);
  const auto expected = forward_rdft(x).values();
  std::vector<std::vector<cplx>> results(4);
  std::vector<std::thread> threads;
  for (int i = 0; i < 4; ++i) threads.emplace_back([&, i] { results[i] = forward_rdft(x).values(); });
  for (auto& t : threads) t.join();
  for (const auto& r : results) EXPECT_EQ(r, expected);
}
