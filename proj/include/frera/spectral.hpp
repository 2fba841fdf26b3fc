#pragma once

// Real-input discrete Fourier transform on fixed-length multichannel series.
//
// Conventions: the forward transform is unnormalized,
//   X(m) = sum_n x(n) exp(-2 pi i m n / L),
// and the inverse carries the 1/L factor. Only the F = floor(L/2) + 1
// non-redundant components are stored; the rest follow from conjugate
// symmetry X(L - m) = conj(X(m)).

#include <cmath>
#include <complex>
#include <cstddef>
#include <numbers>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "frera/error.hpp"

namespace frera {

using cplx = std::complex<double>;

inline std::size_t spectrum_size(std::size_t length) { return length / 2 + 1; }

/// L x D real samples stored channel-major, with an optional class label.
class TimeSeries {
public:
  TimeSeries() = default;

  TimeSeries(std::size_t length, std::size_t channels, std::vector<double> values,
             std::optional<int> label = std::nullopt)
      : length_(length), channels_(channels), values_(std::move(values)), label_(label) {
    if (values_.size() != length_ * channels_)
      throw DataError("TimeSeries: expected " + std::to_string(length_ * channels_) +
                      " values, got " + std::to_string(values_.size()));
    if (label_ && *label_ < 0) throw DataError("TimeSeries: negative label");
  }

  static TimeSeries zeros(std::size_t length, std::size_t channels,
                          std::optional<int> label = std::nullopt) {
    return TimeSeries(length, channels, std::vector<double>(length * channels, 0.0), label);
  }

  std::size_t length() const noexcept { return length_; }
  std::size_t channels() const noexcept { return channels_; }

  double& at(std::size_t t, std::size_t c) { return values_[c * length_ + t]; }
  double at(std::size_t t, std::size_t c) const { return values_[c * length_ + t]; }

  std::span<double> channel(std::size_t c) { return {values_.data() + c * length_, length_}; }
  std::span<const double> channel(std::size_t c) const {
    return {values_.data() + c * length_, length_};
  }

  const std::vector<double>& values() const& noexcept { return values_; }
  std::vector<double>& values() & noexcept { return values_; }
  std::vector<double> values() && noexcept { return std::move(values_); }

  const std::optional<int>& label() const noexcept { return label_; }
  void set_label(std::optional<int> label) { label_ = label; }

  /// Throws DataError unless L >= 2, D >= 1 and every value is finite.
  void validate() const {
    if (length_ < 2) throw DataError("TimeSeries: length must be >= 2");
    if (channels_ < 1) throw DataError("TimeSeries: at least one channel required");
    for (std::size_t i = 0; i < values_.size(); ++i) {
      if (!std::isfinite(values_[i]))
        throw DataError("TimeSeries: non-finite value at t=" + std::to_string(i % length_) +
                        " channel=" + std::to_string(i / length_));
    }
  }

  friend bool operator==(const TimeSeries&, const TimeSeries&) = default;

private:
  std::size_t length_ = 0;
  std::size_t channels_ = 0;
  std::vector<double> values_;
  std::optional<int> label_;
};

/// F x D half-spectrum of a length-L real series, channel-major.
class Spectrum {
public:
  Spectrum() = default;

  Spectrum(std::size_t origin_length, std::size_t channels)
      : origin_length_(origin_length), channels_(channels),
        values_(spectrum_size(origin_length) * channels) {}

  Spectrum(std::size_t origin_length, std::size_t channels, std::vector<cplx> values)
      : origin_length_(origin_length), channels_(channels), values_(std::move(values)) {
    if (values_.size() != size() * channels_)
      throw DataError("Spectrum: component count inconsistent with origin length " +
                      std::to_string(origin_length_));
  }

  std::size_t origin_length() const noexcept { return origin_length_; }
  std::size_t size() const noexcept { return spectrum_size(origin_length_); }
  std::size_t channels() const noexcept { return channels_; }

  cplx& at(std::size_t m, std::size_t c) { return values_[c * size() + m]; }
  const cplx& at(std::size_t m, std::size_t c) const { return values_[c * size() + m]; }

  std::span<cplx> channel(std::size_t c) { return {values_.data() + c * size(), size()}; }
  std::span<const cplx> channel(std::size_t c) const {
    return {values_.data() + c * size(), size()};
  }

  const std::vector<cplx>& values() const& noexcept { return values_; }
  std::vector<cplx>& values() & noexcept { return values_; }
  std::vector<cplx> values() && noexcept { return std::move(values_); }

  /// True when m is the Nyquist component (only exists for even L).
  bool is_nyquist(std::size_t m) const noexcept {
    return origin_length_ % 2 == 0 && m == size() - 1;
  }

  /// Multiplicity of component m in the full length-L spectrum (1 or 2).
  double pair_weight(std::size_t m) const noexcept {
    return (m == 0 || is_nyquist(m)) ? 1.0 : 2.0;
  }

private:
  std::size_t origin_length_ = 0;
  std::size_t channels_ = 0;
  std::vector<cplx> values_;
};

namespace detail {

inline bool is_power_of_two(std::size_t n) { return n != 0 && (n & (n - 1)) == 0; }

/// exp(sign * 2 pi i k / n) with k reduced mod n so large products stay exact.
inline cplx twiddle(std::size_t k, std::size_t n, double sign) {
  const double angle = sign * 2.0 * std::numbers::pi * static_cast<double>(k % n) /
                       static_cast<double>(n);
  return {std::cos(angle), std::sin(angle)};
}

/// In-place iterative radix-2 transform, unscaled. sign = -1 forward, +1 inverse.
inline void fft_radix2(std::vector<cplx>& a, double sign) {
  const std::size_t n = a.size();
  for (std::size_t i = 1, j = 0; i < n; ++i) {
    std::size_t bit = n >> 1;
    for (; j & bit; bit >>= 1) j ^= bit;
    j ^= bit;
    if (i < j) std::swap(a[i], a[j]);
  }
  for (std::size_t len = 2; len <= n; len <<= 1) {
    const std::size_t half = len / 2;
    std::vector<cplx> w(half);
    for (std::size_t k = 0; k < half; ++k) w[k] = twiddle(k, len, sign);
    for (std::size_t i = 0; i < n; i += len) {
      for (std::size_t k = 0; k < half; ++k) {
        const cplx u = a[i + k];
        const cplx v = a[i + k + half] * w[k];
        a[i + k] = u + v;
        a[i + k + half] = u - v;
      }
    }
  }
}

/// Direct O(n^2) transform for lengths that are not powers of two.
inline std::vector<cplx> dft_direct(const std::vector<cplx>& a, double sign) {
  const std::size_t n = a.size();
  std::vector<cplx> table(n);
  for (std::size_t k = 0; k < n; ++k) table[k] = twiddle(k, n, sign);
  std::vector<cplx> out(n);
  for (std::size_t m = 0; m < n; ++m) {
    cplx acc{0.0, 0.0};
    for (std::size_t t = 0; t < n; ++t) acc += a[t] * table[(m * t) % n];
    out[m] = acc;
  }
  return out;
}

inline std::vector<cplx> complex_transform(std::vector<cplx> a, double sign) {
  if (is_power_of_two(a.size())) {
    fft_radix2(a, sign);
    return a;
  }
  return dft_direct(a, sign);
}

} // namespace detail

/// First F components of the unnormalized DFT of each channel.
inline Spectrum forward_rdft(const TimeSeries& x) {
  x.validate();
  const std::size_t L = x.length();
  Spectrum out(L, x.channels());
  const std::size_t F = out.size();
  std::vector<cplx> buf(L);
  for (std::size_t c = 0; c < x.channels(); ++c) {
    auto ch = x.channel(c);
    for (std::size_t t = 0; t < L; ++t) buf[t] = {ch[t], 0.0};
    auto spec = detail::complex_transform(buf, -1.0);
    for (std::size_t m = 0; m < F; ++m) out.at(m, c) = spec[m];
    out.at(0, c).imag(0.0);
    if (L % 2 == 0) out.at(F - 1, c).imag(0.0);
  }
  return out;
}

/// Full length-L spectrum of one channel via X(L - m) = conj(X(m)).
inline std::vector<cplx> conjugate_extend(std::span<const cplx> half, std::size_t length) {
  if (half.size() != spectrum_size(length))
    throw DataError("conjugate_extend: " + std::to_string(half.size()) +
                    " components inconsistent with length " + std::to_string(length));
  std::vector<cplx> full(length);
  for (std::size_t m = 0; m < length; ++m)
    full[m] = m < half.size() ? half[m] : std::conj(half[length - m]);
  return full;
}

/// Real length-L reconstruction; applies the 1/L normalization.
inline TimeSeries inverse_rdft(const Spectrum& X) {
  const std::size_t L = X.origin_length();
  if (L < 2) throw DataError("inverse_rdft: origin length must be >= 2");
  if (X.values().size() != X.size() * X.channels())
    throw DataError("inverse_rdft: spectrum storage inconsistent with origin length");
  TimeSeries out = TimeSeries::zeros(L, X.channels());
  const double scale = 1.0 / static_cast<double>(L);
  for (std::size_t c = 0; c < X.channels(); ++c) {
    auto full = detail::complex_transform(conjugate_extend(X.channel(c), L), +1.0);
    auto dst = out.channel(c);
    for (std::size_t t = 0; t < L; ++t) dst[t] = full[t].real() * scale;
  }
  return out;
}

/// Per-component energy summed over channels, including the mirrored half,
/// so that the total equals (1/L) sum_{m<L} |X(m)|^2.
inline std::vector<double> energy_spectrum(const Spectrum& X) {
  std::vector<double> e(X.size(), 0.0);
  const double scale = 1.0 / static_cast<double>(X.origin_length());
  for (std::size_t c = 0; c < X.channels(); ++c)
    for (std::size_t m = 0; m < X.size(); ++m)
      e[m] += X.pair_weight(m) * std::norm(X.at(m, c)) * scale;
  return e;
}

/// Hermitian inner product <u_m, u_q> = u_m^T conj(u_q) of Fourier basis vectors.
inline cplx basis_inner_product(std::size_t m, std::size_t q, std::size_t length) {
  if (m >= length || q >= length)
    throw DataError("basis_inner_product: index out of range for length " +
                    std::to_string(length));
  cplx acc{0.0, 0.0};
  for (std::size_t n = 0; n < length; ++n)
    acc += detail::twiddle(m * n, length, 1.0) * std::conj(detail::twiddle(q * n, length, 1.0));
  return acc;
}

/// y(n) = sum_k a(k) x((n - k) mod L), per channel.
inline TimeSeries circular_convolve(std::span<const double> kernel, const TimeSeries& x) {
  const std::size_t L = x.length();
  if (kernel.size() != L)
    throw DataError("circular_convolve: kernel length " + std::to_string(kernel.size()) +
                    " != series length " + std::to_string(L));
  TimeSeries out = TimeSeries::zeros(L, x.channels(), x.label());
  for (std::size_t c = 0; c < x.channels(); ++c) {
    auto src = x.channel(c);
    auto dst = out.channel(c);
    for (std::size_t n = 0; n < L; ++n) {
      double acc = 0.0;
      for (std::size_t k = 0; k < L; ++k) acc += kernel[k] * src[(n + L - k) % L];
      dst[n] = acc;
    }
  }
  return out;
}

} // namespace frera
