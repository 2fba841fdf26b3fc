#pragma once

// Executable property suite for the transform core and the augmentation:
// round trip, Parseval, conjugate symmetry, basis orthogonality, linearity,
// mask range, logit identity, distortion normalization, and equivalence of
// spectral masking with circular convolution.

#include <algorithm>
#include <cmath>
#include <functional>
#include <numbers>
#include <sstream>
#include <string>
#include <vector>

#include "frera/augment.hpp"
#include "frera/random.hpp"
#include "frera/spectral.hpp"

namespace frera {

struct PropertyResult {
  std::string name;
  std::size_t length = 0;
  std::size_t channels = 0;
  bool passed = false;
  double error = 0.0;
  double tolerance = 0.0;
  std::string detail;
};

/// The transform pair under test; swappable so the suite can be pointed at a
/// deliberately broken implementation.
struct TransformPair {
  std::function<Spectrum(const TimeSeries&)> forward;
  std::function<TimeSeries(const Spectrum&)> inverse;
  std::string label;
};

inline TransformPair reference_transforms() {
  return {[](const TimeSeries& x) { return forward_rdft(x); }, [](const Spectrum& X) { return inverse_rdft(X); },
          "reference"};
}

/// Inverse that mirrors the half spectrum without conjugation, i.e. with
/// the sign of every mirrored imaginary part flipped.
inline TransformPair sign_mutated_transforms() {
  auto inverse = [](const Spectrum& X) {
    const std::size_t L = X.origin_length();
    TimeSeries out = TimeSeries::zeros(L, X.channels());
    for (std::size_t c = 0; c < X.channels(); ++c) {
      auto half = X.channel(c);
      std::vector<cplx> full(L);
      for (std::size_t m = 0; m < L; ++m) full[m] = m < half.size() ? half[m] : half[L - m];
      auto t = detail::complex_transform(full, +1.0);
      for (std::size_t n = 0; n < L; ++n) out.at(n, c) = t[n].real() / static_cast<double>(L);
    }
    return out;
  };
  return {[](const TimeSeries& x) { return forward_rdft(x); }, inverse, "sign-mutated inverse"};
}

/// Direct evaluation of the full length-L DFT sum; reference for the suite.
inline std::vector<cplx> direct_full_dft(std::span<const double> x) {
  const std::size_t L = x.size();
  std::vector<cplx> out(L);
  for (std::size_t m = 0; m < L; ++m) {
    cplx acc{0.0, 0.0};
    for (std::size_t n = 0; n < L; ++n) {
      const double angle = -2.0 * std::numbers::pi * static_cast<double>((m * n) % L) / static_cast<double>(L);
      acc += x[n] * cplx(std::cos(angle), std::sin(angle));
    }
    out[m] = acc;
  }
  return out;
}

inline TimeSeries random_series(std::size_t L, std::size_t D, Rng& rng) {
  TimeSeries x = TimeSeries::zeros(L, D);
  for (auto& v : x.values()) v = normal(rng);
  return x;
}

struct PropertyOptions {
  std::vector<std::size_t> sizes{8, 37, 128};
  std::vector<std::size_t> channels{1, 3};
  std::size_t trials = 5;
  std::uint64_t seed = 7;
};

inline std::vector<PropertyResult> spectral_properties(const TransformPair& tp, const PropertyOptions& opt = {}) {
  std::vector<PropertyResult> out;
  Rng rng = derive_rng(opt.seed, 11);
  constexpr double tol = 1e-9;
  for (std::size_t L : opt.sizes) {
    for (std::size_t D : opt.channels) {
      double rt = 0.0, pars = 0.0, conj = 0.0, lin = 0.0;
      for (std::size_t trial = 0; trial < opt.trials; ++trial) {
        const TimeSeries x = random_series(L, D, rng);
        const TimeSeries z = random_series(L, D, rng);
        const Spectrum X = tp.forward(x);
        const TimeSeries back = tp.inverse(X);
        for (std::size_t i = 0; i < x.values().size(); ++i)
          rt = std::max(rt, std::abs(back.values()[i] - x.values()[i]));

        for (std::size_t c = 0; c < D; ++c) {
          const auto full = conjugate_extend(X.channel(c), L);
          double time_energy = 0.0, synth_energy = 0.0, freq_energy = 0.0;
          for (double v : x.channel(c)) time_energy += v * v;
          for (double v : back.channel(c)) synth_energy += v * v;
          for (const auto& f : full) freq_energy += std::norm(f);
          freq_energy /= static_cast<double>(L);
          pars = std::max({pars, std::abs(time_energy - freq_energy) / time_energy,
                           std::abs(synth_energy - freq_energy) / time_energy});

          const auto direct = direct_full_dft(x.channel(c));
          for (std::size_t m = 0; m < L; ++m) conj = std::max(conj, std::abs(full[m] - direct[m]));
          for (std::size_t m = 1; m < L; ++m) conj = std::max(conj, std::abs(full[L - m] - std::conj(full[m])));
        }

        const double alpha = normal(rng), beta = normal(rng);
        TimeSeries mix = x;
        for (std::size_t i = 0; i < mix.values().size(); ++i)
          mix.values()[i] = alpha * x.values()[i] + beta * z.values()[i];
        const Spectrum M = tp.forward(mix), Z = tp.forward(z);
        for (std::size_t i = 0; i < M.values().size(); ++i)
          lin = std::max(lin, std::abs(M.values()[i] - (alpha * X.values()[i] + beta * Z.values()[i])));
      }
      out.push_back({"round_trip", L, D, rt < tol, rt, tol, "max |inverse(forward(x)) - x|"});
      out.push_back({"parseval", L, D, pars < tol, pars, tol,
                     "relative gap between time-domain energy and (1/L) sum |X(m)|^2"});
      out.push_back({"conjugate_symmetry", L, D, conj < tol, conj, tol,
                     "X(L-m) = conj(X(m)) and agreement with the direct full DFT"});
      out.push_back({"linearity", L, D, lin < tol, lin, tol, "forward(a x + b z) - a forward(x) - b forward(z)"});
    }
    double orth = 0.0, diag = 0.0;
    for (std::size_t m = 0; m < L; ++m)
      for (std::size_t q = 0; q < L; ++q) {
        const cplx ip = basis_inner_product(m, q, L);
        if (m == q)
          diag = std::max(diag, std::abs(ip - cplx(static_cast<double>(L), 0.0)));
        else
          orth = std::max(orth, std::abs(ip));
      }
    const double err = std::max(orth, diag) / static_cast<double>(L);
    out.push_back({"orthogonality", L, 0, err < tol, err, tol, "|<u_m,u_q>|/L for m != q and |<u_m,u_m> - L|/L"});
  }
  return out;
}

inline std::vector<PropertyResult> augmentation_properties(const PropertyOptions& opt = {}) {
  std::vector<PropertyResult> out;
  Rng rng = derive_rng(opt.seed, 13);
  std::uniform_real_distribution<double> us(-5.0, 5.0);

  // mask range
  {
    bool ok = true;
    double worst = 1.0;
    for (double tau_w : {0.1, 0.2, 1.0}) {
      for (int trial = 0; trial < 200; ++trial) {
        ImportanceVector s;
        s.s.resize(33);
        for (auto& v : s.s) v = us(rng);
        const auto m = sample_crit_mask(s, tau_w, rng);
        for (double w : m.w) {
          ok = ok && w > 0.0 && w < 1.0;
          worst = std::min({worst, w, 1.0 - w});
        }
      }
    }
    out.push_back({"mask_range", 33, 0, ok, worst, 0.0, "every w_crit strictly inside (0, 1); error = closest approach"});
  }
  // logit identity
  {
    double err = 0.0;
    for (int trial = 0; trial < 10000; ++trial) {
      const double s = us(rng), eps = uniform_open(rng);
      for (double tau_w : {0.1, 0.2}) err = std::max(err, std::abs(crit_weight_literal(s, eps, tau_w) - crit_weight(s, eps, tau_w)));
    }
    out.push_back({"logit_identity", 0, 0, err < 1e-12, err, 1e-12, "sigmoid/logit form of the relaxation equals the literal form"});
  }
  // distortion normalization
  {
    double err = 0.0;
    bool outside_zero = true;
    for (int trial = 0; trial < 1000; ++trial) {
      ImportanceVector s;
      s.s.resize(5 + trial % 60);
      for (auto& v : s.s) v = normal(rng, 0.0, 2.0);
      for (auto mode : {ThresholdMode::mean, ThresholdMode::median, ThresholdMode::mean_plus_std}) {
        const auto d = compute_distortion(s, mode);
        std::vector<bool> inD(s.size(), false);
        for (auto i : d.unimportant) inD[i] = true;
        for (std::size_t i = 0; i < s.size(); ++i) outside_zero = outside_zero && (inD[i] || d.w[i] == 0.0);
        if (d.unimportant.empty()) continue;
        double mean = 0.0;
        for (auto i : d.unimportant) mean += d.w[i];
        err = std::max(err, std::abs(mean / static_cast<double>(d.unimportant.size()) - 1.0));
      }
    }
    out.push_back({"distortion_normalization", 0, 0, err < 1e-12 && outside_zero, err, 1e-12,
                   "mean of w_dist over the unimportant set is 1; zero elsewhere"});
  }
  // masking == circular convolution
  for (std::size_t L : opt.sizes) {
    double err = 0.0;
    for (std::size_t trial = 0; trial < opt.trials; ++trial) {
      const TimeSeries x = random_series(L, 2, rng);
      ImportanceVector s;
      s.s.resize(spectrum_size(L));
      for (auto& v : s.s) v = us(rng);
      const auto mask = sample_crit_mask(s, 0.2, rng);
      const auto masked = augment(x, mask, DistortionVector::zeros(mask.size()));
      const auto conv = circular_convolve(mask_kernel(mask.w, L), x);
      for (std::size_t i = 0; i < x.values().size(); ++i)
        err = std::max(err, std::abs(masked.values()[i] - conv.values()[i]));
    }
    out.push_back({"mask_convolution_equivalence", L, 2, err < 1e-8, err, 1e-8,
                   "spectral masking equals circular convolution with the mask's kernel"});
  }
  return out;
}

inline std::string format_property_table(const std::vector<PropertyResult>& results) {
  std::ostringstream os;
  os << "property                       L     D   error        tol      status\n";
  for (const auto& r : results) {
    char line[200];
    std::snprintf(line, sizeof(line), "%-28s %5zu %3zu   %-11.3e  %-7.0e  %s\n", r.name.c_str(), r.length, r.channels,
                  r.error, r.tolerance, r.passed ? "PASS" : "FAIL");
    os << line;
  }
  return os.str();
}

} // namespace frera
