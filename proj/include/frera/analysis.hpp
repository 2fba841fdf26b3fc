#pragma once

// Mutual-information diagnostics, energy profiles, synthetic datasets with
// known label-carrying frequency bins, and handcrafted baseline augmentations.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <numbers>
#include <numeric>
#include <set>
#include <span>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include <nlohmann/json.hpp>

#include "frera/dataset.hpp"
#include "frera/error.hpp"
#include "frera/random.hpp"
#include "frera/spectral.hpp"

namespace frera {

// ---------------------------------------------------------------------------
// Mutual information

struct MICurve {
  std::vector<double> values;  ///< nats, clipped at 0
  int bins = 16;
  std::size_t samples = 0;
};

/// Plug-in MI (nats) between a d-dimensional variable and a discrete label,
/// using an equal-width histogram with `bins` cells per dimension spanning
/// the observed range. `values` is row-major N x d.
inline double mi_histogram(std::span<const double> values, std::size_t dims, std::span<const int> labels,
                           int bins = 16) {
  if (dims < 1 || dims > 8) throw UsageError("mi_histogram: dimension must be in [1, 8]");
  if (bins < 2) throw UsageError("mi_histogram: need at least 2 bins");
  const std::size_t n = labels.size();
  if (values.size() != n * dims) throw DataError("mi_histogram: values/labels size mismatch");
  const std::size_t required = 50 * static_cast<std::size_t>(bins);
  if (n < required)
    throw DataError("mi_histogram: " + std::to_string(n) + " samples is too few for " + std::to_string(bins) +
                    " bins (need N >= " + std::to_string(required) + ")");

  std::vector<double> lo(dims, INFINITY), hi(dims, -INFINITY);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t d = 0; d < dims; ++d) {
      lo[d] = std::min(lo[d], values[i * dims + d]);
      hi[d] = std::max(hi[d], values[i * dims + d]);
    }

  std::vector<std::uint64_t> cell(n, 0);
  for (std::size_t i = 0; i < n; ++i) {
    std::uint64_t key = 0;
    for (std::size_t d = 0; d < dims; ++d) {
      std::uint64_t b = 0;
      const double width = hi[d] - lo[d];
      if (width > 0.0) {
        const double pos = (values[i * dims + d] - lo[d]) / width * bins;
        b = std::min<std::uint64_t>(static_cast<std::uint64_t>(std::max(pos, 0.0)), bins - 1);
      }
      key = key * static_cast<std::uint64_t>(bins) + b;
    }
    cell[i] = key;
  }

  std::map<int, std::size_t> label_count;
  std::unordered_map<std::uint64_t, std::size_t> cell_count;
  std::map<std::pair<std::uint64_t, int>, std::size_t> joint;
  for (std::size_t i = 0; i < n; ++i) {
    ++label_count[labels[i]];
    ++cell_count[cell[i]];
    ++joint[{cell[i], labels[i]}];
  }
  const double N = static_cast<double>(n);
  double mi = 0.0;
  for (const auto& [key, count] : joint) {
    const double pxy = static_cast<double>(count) / N;
    const double px = static_cast<double>(cell_count[key.first]) / N;
    const double py = static_cast<double>(label_count[key.second]) / N;
    mi += pxy * std::log(pxy / (px * py));
  }
  return std::max(mi, 0.0);
}

inline std::vector<int> dataset_labels(const Dataset& d) {
  std::vector<int> labels;
  labels.reserve(d.size());
  for (const auto& s : d.samples) {
    if (!s.label()) throw DataError("mutual information needs a labeled dataset");
    labels.push_back(*s.label());
  }
  return labels;
}

using ViewFn = std::function<TimeSeries(const TimeSeries&)>;

/// MI between the D channel values at each timestamp of view_fn(x) and the label.
inline MICurve mi_timestamp_curve(const Dataset& data, const ViewFn& view_fn, int bins = 16) {
  const auto labels = dataset_labels(data);
  std::vector<TimeSeries> views;
  views.reserve(data.size());
  for (const auto& s : data.samples) views.push_back(view_fn ? view_fn(s) : s);
  const std::size_t D = data.channels;
  MICurve curve{std::vector<double>(data.length), bins, data.size()};
  std::vector<double> buf(data.size() * D);
  for (std::size_t t = 0; t < data.length; ++t) {
    for (std::size_t i = 0; i < views.size(); ++i)
      for (std::size_t c = 0; c < D; ++c) buf[i * D + c] = views[i].at(t, c);
    curve.values[t] = mi_histogram(buf, D, labels, bins);
  }
  return curve;
}

/// MI between each frequency component and the label. Magnitude per channel
/// by default; (Re, Im) per channel when use_complex is set.
inline MICurve mi_frequency_profile(const Dataset& data, int bins = 16, bool use_complex = false) {
  const auto labels = dataset_labels(data);
  std::vector<Spectrum> spectra;
  spectra.reserve(data.size());
  for (const auto& s : data.samples) spectra.push_back(forward_rdft(s));
  const std::size_t F = spectrum_size(data.length);
  const std::size_t D = data.channels;
  const std::size_t dims = use_complex ? 2 * D : D;
  MICurve curve{std::vector<double>(F), bins, data.size()};
  std::vector<double> buf(data.size() * dims);
  for (std::size_t m = 0; m < F; ++m) {
    for (std::size_t i = 0; i < spectra.size(); ++i)
      for (std::size_t c = 0; c < D; ++c) {
        const cplx z = spectra[i].at(m, c);
        if (use_complex) {
          buf[i * dims + 2 * c] = z.real();
          buf[i * dims + 2 * c + 1] = z.imag();
        } else {
          buf[i * dims + c] = std::abs(z);
        }
      }
    curve.values[m] = mi_histogram(buf, dims, labels, bins);
  }
  return curve;
}

/// Mean per-component energy across the dataset.
inline std::vector<double> mean_energy_profile(const Dataset& data) {
  std::vector<double> acc(spectrum_size(data.length), 0.0);
  for (const auto& s : data.samples) {
    const auto e = energy_spectrum(forward_rdft(s));
    for (std::size_t m = 0; m < acc.size(); ++m) acc[m] += e[m];
  }
  for (auto& v : acc) v /= static_cast<double>(std::max<std::size_t>(1, data.size()));
  return acc;
}

/// Fraction of total energy carried by the k largest entries.
inline double top_k_energy_fraction(std::vector<double> profile, std::size_t k) {
  const double total = std::accumulate(profile.begin(), profile.end(), 0.0);
  if (total <= 0.0) return 0.0;
  std::sort(profile.begin(), profile.end(), std::greater<>());
  k = std::min(k, profile.size());
  return std::accumulate(profile.begin(), profile.begin() + static_cast<std::ptrdiff_t>(k), 0.0) / total;
}

/// Indices of the k largest values, largest first.
inline std::vector<std::size_t> top_k_indices(std::span<const double> values, std::size_t k) {
  std::vector<std::size_t> idx(values.size());
  std::iota(idx.begin(), idx.end(), 0);
  k = std::min(k, idx.size());
  std::partial_sort(idx.begin(), idx.begin() + static_cast<std::ptrdiff_t>(k), idx.end(),
                    [&](std::size_t a, std::size_t b) { return values[a] > values[b] || (values[a] == values[b] && a < b); });
  idx.resize(k);
  return idx;
}

inline void write_curve_csv(const fs::path& path, std::span<const double> values) {
  std::ofstream out(path);
  if (!out) throw DataError("cannot write '" + path.string() + "'");
  out << "index,value\n";
  for (std::size_t i = 0; i < values.size(); ++i) out << i << ',' << detail::format_double(values[i]) << '\n';
}

// ---------------------------------------------------------------------------
// Synthetic data

struct SyntheticClass {
  std::vector<std::size_t> bins;
  double amplitude = 1.0;
  double phase = 0.0;
};

/// Class k = sum over its bins of a cos(2 pi m n / L + phi), phi = phase + U(-spread, spread),
/// plus class-independent nuisance components with
/// U(nuisance_amplitude_min, nuisance_amplitude)
/// amplitudes and uniform phases, present in a sample with probability
/// nuisance_rate, plus N(0, noise^2).
struct SyntheticSpec {
  std::size_t length = 64;
  std::size_t channels = 1;
  std::size_t samples_per_class = 300;
  std::vector<SyntheticClass> classes;
  std::vector<std::size_t> nuisance_bins;
  double nuisance_amplitude = 1.0;
  double nuisance_amplitude_min = 0.0;
  double nuisance_rate = 1.0;  ///< probability that a sample carries the nuisance components
  double noise = 0.1;
  double phase_spread = std::numbers::pi;
  double amplitude_jitter = 0.0;  ///< relative, a * (1 + U(-j, j))
  std::uint64_t seed = 0;

  void validate() const {
    const std::size_t F = spectrum_size(length);
    if (length < 2 || channels < 1) throw DataError("synthetic spec: length >= 2 and channels >= 1 required");
    if (classes.empty()) throw DataError("synthetic spec: at least one class required");
    if (!(nuisance_amplitude_min >= 0.0 && nuisance_amplitude_min <= nuisance_amplitude))
      throw DataError("synthetic spec: need 0 <= nuisance_amplitude_min <= nuisance_amplitude");
    if (!(nuisance_rate >= 0.0 && nuisance_rate <= 1.0)) throw DataError("synthetic spec: nuisance_rate must be in [0, 1]");
    std::set<std::vector<std::size_t>> seen;
    for (const auto& c : classes) {
      for (auto b : c.bins)
        if (b >= F) throw DataError("synthetic spec: class bin " + std::to_string(b) + " outside [0, " + std::to_string(F) + ")");
      auto sorted = c.bins;
      std::sort(sorted.begin(), sorted.end());
      if (!seen.insert(sorted).second) throw DataError("synthetic spec: class bin sets must be pairwise distinct");
    }
    for (auto b : nuisance_bins)
      if (b >= F) throw DataError("synthetic spec: nuisance bin " + std::to_string(b) + " outside [0, " + std::to_string(F) + ")");
  }

  std::vector<std::size_t> class_bins() const {
    std::set<std::size_t> all;
    for (const auto& c : classes) all.insert(c.bins.begin(), c.bins.end());
    return {all.begin(), all.end()};
  }
};

inline void to_json(nlohmann::json& j, const SyntheticClass& c) {
  j = {{"bins", c.bins}, {"amplitude", c.amplitude}, {"phase", c.phase}};
}

inline void from_json(const nlohmann::json& j, SyntheticClass& c) {
  c.bins = j.at("bins").get<std::vector<std::size_t>>();
  c.amplitude = j.value("amplitude", 1.0);
  c.phase = j.value("phase", 0.0);
}

inline void to_json(nlohmann::json& j, const SyntheticSpec& s) {
  j = {{"length", s.length},
       {"channels", s.channels},
       {"samples_per_class", s.samples_per_class},
       {"classes", s.classes},
       {"nuisance_bins", s.nuisance_bins},
       {"nuisance_amplitude", s.nuisance_amplitude},
       {"nuisance_amplitude_min", s.nuisance_amplitude_min},
       {"nuisance_rate", s.nuisance_rate},
       {"noise", s.noise},
       {"phase_spread", s.phase_spread},
       {"amplitude_jitter", s.amplitude_jitter},
       {"seed", s.seed}};
}

inline void from_json(const nlohmann::json& j, SyntheticSpec& s) {
  SyntheticSpec d;
  s.length = j.value("length", d.length);
  s.channels = j.value("channels", d.channels);
  s.samples_per_class = j.value("samples_per_class", d.samples_per_class);
  s.classes = j.at("classes").get<std::vector<SyntheticClass>>();
  s.nuisance_bins = j.value("nuisance_bins", std::vector<std::size_t>{});
  s.nuisance_amplitude = j.value("nuisance_amplitude", d.nuisance_amplitude);
  s.nuisance_amplitude_min = j.value("nuisance_amplitude_min", d.nuisance_amplitude_min);
  s.nuisance_rate = j.value("nuisance_rate", d.nuisance_rate);
  s.noise = j.value("noise", d.noise);
  s.phase_spread = j.value("phase_spread", d.phase_spread);
  s.amplitude_jitter = j.value("amplitude_jitter", d.amplitude_jitter);
  s.seed = j.value("seed", d.seed);
}

/// Balanced labeled dataset, samples ordered by class.
inline Dataset generate_synthetic(const SyntheticSpec& spec, Rng& rng) {
  spec.validate();
  Dataset d;
  d.length = spec.length;
  d.channels = spec.channels;
  d.classes = spec.classes.size();
  d.split = "all";
  const double L = static_cast<double>(spec.length);
  std::uniform_real_distribution<double> unit(-1.0, 1.0);
  std::uniform_real_distribution<double> uphase(-std::numbers::pi, std::numbers::pi);
  std::uniform_real_distribution<double> unuis(spec.nuisance_amplitude_min, spec.nuisance_amplitude);
  for (std::size_t k = 0; k < spec.classes.size(); ++k) {
    const auto& cls = spec.classes[k];
    for (std::size_t i = 0; i < spec.samples_per_class; ++i) {
      TimeSeries x = TimeSeries::zeros(spec.length, spec.channels, static_cast<int>(k));
      for (std::size_t c = 0; c < spec.channels; ++c) {
        auto ch = x.channel(c);
        for (auto m : cls.bins) {
          const double a = cls.amplitude * (1.0 + spec.amplitude_jitter * unit(rng));
          const double phi = cls.phase + spec.phase_spread * unit(rng);
          for (std::size_t n = 0; n < spec.length; ++n)
            ch[n] += a * std::cos(2.0 * std::numbers::pi * static_cast<double>(m * n % spec.length) / L + phi);
        }
        const bool nuisance_on = spec.nuisance_rate >= 1.0 || uniform_open(rng) < spec.nuisance_rate;
        for (auto m : spec.nuisance_bins) {
          const double a = nuisance_on ? unuis(rng) : 0.0;
          const double phi = uphase(rng);
          for (std::size_t n = 0; n < spec.length; ++n)
            ch[n] += a * std::cos(2.0 * std::numbers::pi * static_cast<double>(m * n % spec.length) / L + phi);
        }
        for (std::size_t n = 0; n < spec.length; ++n) ch[n] += normal(rng, 0.0, spec.noise);
      }
      d.samples.push_back(std::move(x));
    }
  }
  return d;
}

/// Generate and split 64/16/20 stratified.
inline DatasetSplits generate_synthetic_splits(const SyntheticSpec& spec) {
  Rng rng = derive_rng(spec.seed, 0x5e7a);
  Dataset all = generate_synthetic(spec, rng);
  Rng split_rng = derive_rng(spec.seed, 0x5c1);
  DatasetSplits out = stratified_split(all, 0.64, 0.16, split_rng);
  for (std::size_t k = 0; k < spec.classes.size(); ++k) out.label_names.push_back(std::to_string(k));
  return out;
}

// ---------------------------------------------------------------------------
// Baseline augmentations

enum class BaselineKind { jitter, scaling, permutation, lowpass, highpass, phase_shift };

inline BaselineKind parse_baseline_kind(std::string_view name) {
  if (name == "jitter") return BaselineKind::jitter;
  if (name == "scaling") return BaselineKind::scaling;
  if (name == "permutation") return BaselineKind::permutation;
  if (name == "lowpass" || name == "low_pass") return BaselineKind::lowpass;
  if (name == "highpass" || name == "high_pass") return BaselineKind::highpass;
  if (name == "phase_shift" || name == "phase") return BaselineKind::phase_shift;
  throw UsageError("unknown baseline augmentation '" + std::string(name) + "'");
}

inline std::string_view to_string(BaselineKind kind) {
  switch (kind) {
  case BaselineKind::jitter: return "jitter";
  case BaselineKind::scaling: return "scaling";
  case BaselineKind::permutation: return "permutation";
  case BaselineKind::lowpass: return "lowpass";
  case BaselineKind::highpass: return "highpass";
  case BaselineKind::phase_shift: return "phase_shift";
  }
  return "jitter";
}

struct BaselineParams {
  double jitter_sigma = 0.8;   ///< relative to each channel's standard deviation
  double scaling_sigma = 0.1;
  std::size_t segments = 4;
  double cutoff = 0.25;        ///< fraction of F
};

inline TimeSeries baseline_augment(const TimeSeries& x, BaselineKind kind, const BaselineParams& p, Rng& rng) {
  const std::size_t L = x.length();
  TimeSeries out = x;
  switch (kind) {
  case BaselineKind::jitter:
    for (std::size_t c = 0; c < x.channels(); ++c) {
      auto ch = out.channel(c);
      const double mean = std::accumulate(ch.begin(), ch.end(), 0.0) / static_cast<double>(L);
      double var = 0.0;
      for (double v : ch) var += (v - mean) * (v - mean);
      const double sd = p.jitter_sigma * std::sqrt(var / static_cast<double>(L));
      for (double& v : ch) v += sd * normal(rng);
    }
    return out;
  case BaselineKind::scaling:
    for (std::size_t c = 0; c < x.channels(); ++c) {
      const double f = normal(rng, 1.0, p.scaling_sigma);
      for (double& v : out.channel(c)) v *= f;
    }
    return out;
  case BaselineKind::permutation: {
    const std::size_t k = std::clamp<std::size_t>(p.segments, 1, L);
    std::vector<std::size_t> order(k);
    std::iota(order.begin(), order.end(), 0);
    std::shuffle(order.begin(), order.end(), rng);
    const std::size_t seg = L / k;
    auto seg_begin = [&](std::size_t i) { return i * seg; };
    auto seg_end = [&](std::size_t i) { return i + 1 == k ? L : (i + 1) * seg; };
    for (std::size_t c = 0; c < x.channels(); ++c) {
      auto src = x.channel(c);
      auto dst = out.channel(c);
      std::size_t pos = 0;
      for (std::size_t i : order)
        for (std::size_t t = seg_begin(i); t < seg_end(i); ++t) dst[pos++] = src[t];
    }
    return out;
  }
  case BaselineKind::lowpass:
  case BaselineKind::highpass: {
    Spectrum X = forward_rdft(x);
    const double limit = p.cutoff * static_cast<double>(X.size());
    for (std::size_t m = 0; m < X.size(); ++m) {
      const bool low = static_cast<double>(m) < limit;
      if ((kind == BaselineKind::lowpass) != low)
        for (std::size_t c = 0; c < X.channels(); ++c) X.at(m, c) = 0.0;
    }
    out = inverse_rdft(X);
    out.set_label(x.label());
    return out;
  }
  case BaselineKind::phase_shift: {
    // DC and Nyquist stay real so the rotation is exactly energy preserving.
    Spectrum X = forward_rdft(x);
    std::uniform_real_distribution<double> angle(-std::numbers::pi, std::numbers::pi);
    const cplx rot = std::polar(1.0, angle(rng));
    for (std::size_t m = 1; m < X.size(); ++m) {
      if (X.is_nyquist(m)) continue;
      for (std::size_t c = 0; c < X.channels(); ++c) X.at(m, c) *= rot;
    }
    out = inverse_rdft(X);
    out.set_label(x.label());
    return out;
  }
  }
  return out;
}

} // namespace frera
