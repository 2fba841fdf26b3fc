#pragma once

// Frequency-refined augmentation: a single importance vector s of length F
// drives a relaxed-Bernoulli keep mask on critical components and a
// detached, self-normalized distortion on unimportant ones. The view is
//   A_s(x) = F^-1((w_crit + w_dist) * F(x)),
// with the multiplier shared across channels.

#include <algorithm>
#include <cmath>
#include <limits>
#include <numeric>
#include <span>
#include <string>
#include <string_view>
#include <vector>

#include "frera/error.hpp"
#include "frera/random.hpp"
#include "frera/spectral.hpp"

namespace frera {

inline double sigmoid(double z) {
  if (z >= 0.0) return 1.0 / (1.0 + std::exp(-z));
  const double e = std::exp(z);
  return e / (1.0 + e);
}

inline double logit(double p) { return std::log(p) - std::log1p(-p); }

/// Trainable per-component importance scores.
struct ImportanceVector {
  std::vector<double> s;

  std::size_t size() const noexcept { return s.size(); }

  /// i.i.d. N(0, stddev^2) initialization.
  static ImportanceVector random(std::size_t components, Rng& rng, double stddev = 0.01) {
    ImportanceVector v;
    v.s.resize(components);
    for (auto& x : v.s) x = normal(rng, 0.0, stddev);
    return v;
  }

  void validate(std::size_t expected) const {
    if (s.size() != expected)
      throw DataError("ImportanceVector: length " + std::to_string(s.size()) + " != F=" +
                      std::to_string(expected));
    for (double v : s)
      if (!std::isfinite(v)) throw NumericalError("ImportanceVector: non-finite score");
  }
};

/// Relaxed Bernoulli samples in (0, 1) together with the noise that produced them.
struct CritMask {
  std::vector<double> w;
  std::vector<double> noise;
  double tau_w = 1.0;

  std::size_t size() const noexcept { return w.size(); }

  /// d w_i / d s_i = w_i (1 - w_i) / tau_w.
  std::vector<double> derivative() const {
    std::vector<double> d(w.size());
    for (std::size_t i = 0; i < w.size(); ++i) d[i] = w[i] * (1.0 - w[i]) / tau_w;
    return d;
  }

  /// Hard 0/1 mask thresholded at 0.5; inspection only.
  CritMask hardened() const {
    CritMask out = *this;
    for (auto& v : out.w) v = v > 0.5 ? 1.0 : 0.0;
    return out;
  }
};

enum class ThresholdMode { mean, median, mean_plus_std };

inline std::string_view to_string(ThresholdMode mode) {
  switch (mode) {
  case ThresholdMode::mean: return "mean";
  case ThresholdMode::median: return "median";
  case ThresholdMode::mean_plus_std: return "mean_plus_std";
  }
  return "mean";
}

inline ThresholdMode parse_threshold_mode(std::string_view name) {
  if (name == "mean") return ThresholdMode::mean;
  if (name == "median") return ThresholdMode::median;
  if (name == "mean_plus_std" || name == "mean+std") return ThresholdMode::mean_plus_std;
  throw UsageError("unknown threshold mode '" + std::string(name) + "'");
}

/// Non-negative distortion weights; zero outside the unimportant set.
/// Never carries gradient back to s.
struct DistortionVector {
  std::vector<double> w;
  std::vector<std::size_t> unimportant;
  ThresholdMode mode = ThresholdMode::mean;
  double threshold = 0.0;

  std::size_t size() const noexcept { return w.size(); }

  static DistortionVector zeros(std::size_t components) {
    DistortionVector d;
    d.w.assign(components, 0.0);
    return d;
  }
};

/// Gumbel-Softmax relaxation with explicit noise, written exactly as
/// sigma((log eps - log(1 - eps) + log(p / (1 - p))) / tau_w), p = sigma(s).
inline double crit_weight_literal(double s, double eps, double tau_w) {
  const double p = sigmoid(s);
  return sigmoid((std::log(eps) - std::log(1.0 - eps) + std::log(p / (1.0 - p))) / tau_w);
}

/// Same quantity using log(p / (1 - p)) = s, kept inside the open unit
/// interval where the sigmoid would round to 0 or 1.
inline double crit_weight(double s, double eps, double tau_w) {
  constexpr double lo = std::numeric_limits<double>::min();
  constexpr double hi = 1.0 - std::numeric_limits<double>::epsilon() / 2.0;
  return std::clamp(sigmoid((logit(eps) + s) / tau_w), lo, hi);
}

inline CritMask crit_mask_from_noise(const ImportanceVector& s, std::span<const double> noise,
                                     double tau_w) {
  if (!(tau_w > 0.0)) throw UsageError("tau_w must be positive");
  if (noise.size() != s.size()) throw DataError("crit mask: noise length mismatch");
  CritMask mask;
  mask.tau_w = tau_w;
  mask.noise.assign(noise.begin(), noise.end());
  mask.w.resize(s.size());
  for (std::size_t i = 0; i < s.size(); ++i) mask.w[i] = crit_weight(s.s[i], noise[i], tau_w);
  return mask;
}

/// Fresh eps ~ Uniform(0, 1) per component.
inline CritMask sample_crit_mask(const ImportanceVector& s, double tau_w, Rng& rng) {
  if (!(tau_w > 0.0)) throw UsageError("tau_w must be positive");
  std::vector<double> noise(s.size());
  for (auto& e : noise) e = uniform_open(rng);
  return crit_mask_from_noise(s, noise, tau_w);
}

namespace detail {

inline double median_of(std::vector<double> v) {
  std::sort(v.begin(), v.end());
  const std::size_t n = v.size();
  return n % 2 ? v[n / 2] : 0.5 * (v[n / 2 - 1] + v[n / 2]);
}

} // namespace detail

/// Threshold t = min(0, stat(s)); D = {i : s_i < t}; w_i = |s_i| / mean_{D}|s|.
inline DistortionVector compute_distortion(const ImportanceVector& s,
                                           ThresholdMode mode = ThresholdMode::mean) {
  const std::size_t F = s.size();
  DistortionVector out = DistortionVector::zeros(F);
  out.mode = mode;
  if (F == 0) return out;

  const double mean = std::accumulate(s.s.begin(), s.s.end(), 0.0) / static_cast<double>(F);
  double stat = mean;
  if (mode == ThresholdMode::median) {
    stat = detail::median_of(s.s);
  } else if (mode == ThresholdMode::mean_plus_std) {
    double var = 0.0;
    for (double v : s.s) var += (v - mean) * (v - mean);
    stat = mean + std::sqrt(var / static_cast<double>(F));
  }
  out.threshold = std::min(0.0, stat);

  double abs_sum = 0.0;
  for (std::size_t i = 0; i < F; ++i) {
    if (s.s[i] < out.threshold) {
      out.unimportant.push_back(i);
      abs_sum += std::abs(s.s[i]);
    }
  }
  if (out.unimportant.empty()) return out;
  const double delta = abs_sum / static_cast<double>(out.unimportant.size());
  for (std::size_t i : out.unimportant) out.w[i] = std::abs(s.s[i]) / delta;
  return out;
}

/// Elementwise spectral multiplier shared by every channel.
inline TimeSeries apply_spectral_multiplier(const TimeSeries& x, std::span<const double> mult) {
  Spectrum X = forward_rdft(x);
  if (mult.size() != X.size())
    throw DataError("spectral multiplier has " + std::to_string(mult.size()) +
                    " entries, series needs F=" + std::to_string(X.size()));
  for (std::size_t c = 0; c < X.channels(); ++c)
    for (std::size_t m = 0; m < X.size(); ++m) X.at(m, c) *= mult[m];
  TimeSeries out = inverse_rdft(X);
  out.set_label(x.label());
  return out;
}

inline TimeSeries augment(const TimeSeries& x, const CritMask& crit, const DistortionVector& dist) {
  const std::size_t F = spectrum_size(x.length());
  if (crit.size() != F || dist.size() != F)
    throw DataError("augment: mask length does not match F=" + std::to_string(F));
  std::vector<double> mult(F);
  for (std::size_t i = 0; i < F; ++i) mult[i] = crit.w[i] + dist.w[i];
  return apply_spectral_multiplier(x, mult);
}

/// Gradient of a loss with respect to the real spectral multiplier c, given
/// dLoss/dview. Uses the adjoint of the inverse transform:
///   dL/dc_m = (a_m / L) Re(X(m) conj(G(m))),  G = DFT(upstream),
/// summed over channels, with a_m the conjugate-pair multiplicity.
inline std::vector<double> multiplier_gradient(const TimeSeries& upstream, const Spectrum& X) {
  if (upstream.length() != X.origin_length() || upstream.channels() != X.channels())
    throw DataError("multiplier_gradient: upstream shape mismatch");
  const Spectrum G = forward_rdft(upstream);
  const double scale = 1.0 / static_cast<double>(X.origin_length());
  std::vector<double> grad(X.size(), 0.0);
  for (std::size_t c = 0; c < X.channels(); ++c)
    for (std::size_t m = 0; m < X.size(); ++m)
      grad[m] += X.pair_weight(m) * scale * (X.at(m, c) * std::conj(G.at(m, c))).real();
  return grad;
}

/// dLoss/ds through the critical-mask path only. The distortion path is
/// detached, so w_dist never appears here.
inline std::vector<double> augment_backward(const TimeSeries& upstream, const TimeSeries& x,
                                            const CritMask& crit) {
  const Spectrum X = forward_rdft(x);
  if (crit.size() != X.size()) throw DataError("augment_backward: mask length mismatch");
  auto grad = multiplier_gradient(upstream, X);
  const auto dw = crit.derivative();
  for (std::size_t i = 0; i < grad.size(); ++i) grad[i] *= dw[i];
  return grad;
}

/// Time-domain kernel whose circular convolution equals masking by `mask`.
inline std::vector<double> mask_kernel(std::span<const double> mask, std::size_t length) {
  if (mask.size() != spectrum_size(length)) throw DataError("mask_kernel: length mismatch");
  std::vector<cplx> half(mask.begin(), mask.end());
  Spectrum W(length, 1, std::move(half));
  return inverse_rdft(W).values();
}

} // namespace frera
