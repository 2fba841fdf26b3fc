#pragma once

// Dataset ingestion (UCR tsv, csv directory), splitting, normalization and
// batch sampling.

#include <algorithm>
#include <charconv>
#include <cmath>
#include <filesystem>
#include <fstream>
#include <map>
#include <numeric>
#include <optional>
#include <sstream>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

#include "frera/error.hpp"
#include "frera/random.hpp"
#include "frera/spectral.hpp"

namespace frera {

namespace fs = std::filesystem;

struct Dataset {
  std::vector<TimeSeries> samples;
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t classes = 0;
  std::string split;

  std::size_t size() const noexcept { return samples.size(); }
  bool empty() const noexcept { return samples.empty(); }

  bool labeled() const {
    return !samples.empty() &&
           std::all_of(samples.begin(), samples.end(), [](const auto& s) { return s.label().has_value(); });
  }

  std::vector<std::size_t> class_counts() const {
    std::vector<std::size_t> counts(classes, 0);
    for (const auto& s : samples)
      if (s.label() && static_cast<std::size_t>(*s.label()) < classes) ++counts[*s.label()];
    return counts;
  }

  void validate() const {
    for (std::size_t i = 0; i < samples.size(); ++i) {
      const auto& s = samples[i];
      if (s.length() != length || s.channels() != channels)
        throw DataError("dataset '" + split + "': sample " + std::to_string(i) + " has shape " +
                        std::to_string(s.length()) + "x" + std::to_string(s.channels()) + ", expected " +
                        std::to_string(length) + "x" + std::to_string(channels));
      if (s.label() && static_cast<std::size_t>(*s.label()) >= classes)
        throw DataError("dataset '" + split + "': sample " + std::to_string(i) + " label " +
                        std::to_string(*s.label()) + " outside [0, " + std::to_string(classes) + ")");
    }
  }

  Dataset without_labels() const {
    Dataset out = *this;
    for (auto& s : out.samples) s.set_label(std::nullopt);
    return out;
  }
};

struct DatasetSplits {
  Dataset train;
  Dataset val;
  Dataset test;
  /// Original label text for each encoded class id.
  std::vector<std::string> label_names;
};

enum class DataFormat { ucr_tsv, csv_dir };

inline DataFormat parse_data_format(std::string_view name) {
  if (name == "ucr_tsv" || name == "ucr") return DataFormat::ucr_tsv;
  if (name == "csv_dir" || name == "csv") return DataFormat::csv_dir;
  throw UsageError("unknown data format '" + std::string(name) + "' (expected ucr_tsv|csv_dir)");
}

namespace detail {

inline std::string_view trim(std::string_view s) {
  while (!s.empty() && (s.front() == ' ' || s.front() == '\r' || s.front() == '\n')) s.remove_prefix(1);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\r' || s.back() == '\n')) s.remove_suffix(1);
  return s;
}

inline std::vector<std::string_view> split_fields(std::string_view line, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    const auto pos = line.find(sep, start);
    out.push_back(trim(line.substr(start, pos == std::string_view::npos ? std::string_view::npos : pos - start)));
    if (pos == std::string_view::npos) break;
    start = pos + 1;
  }
  return out;
}

inline double parse_double(std::string_view field, const std::string& where) {
  double v = 0.0;
  const auto* first = field.data();
  const auto* last = field.data() + field.size();
  if (!field.empty() && *first == '+') ++first;
  auto [ptr, ec] = std::from_chars(first, last, v);
  if (ec != std::errc() || ptr != last || field.empty())
    throw DataError(where + ": non-numeric field '" + std::string(field) + "'");
  return v;
}

inline std::string format_double(double v) {
  char buf[64];
  auto [ptr, ec] = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, ptr);
}

inline std::vector<std::string> read_lines(const fs::path& path) {
  std::ifstream in(path);
  if (!in) throw DataError("cannot open '" + path.string() + "'");
  std::vector<std::string> lines;
  std::string line;
  while (std::getline(in, line)) lines.push_back(line);
  return lines;
}

} // namespace detail

struct UcrRow {
  std::string label;
  std::vector<double> values;
};

/// One UCR line: label, then values separated by tabs (commas also accepted).
/// Trailing NaN fields mark a shorter series and are dropped.
inline UcrRow parse_ucr_line(std::string_view line, std::size_t line_no) {
  const std::string where = "line " + std::to_string(line_no);
  const char sep = line.find('\t') != std::string_view::npos ? '\t' : ',';
  auto fields = detail::split_fields(line, sep);
  if (fields.size() < 2) throw DataError(where + ": expected a label and at least one value");
  UcrRow row;
  row.label = std::string(fields[0]);
  detail::parse_double(fields[0], where);
  for (std::size_t i = 1; i < fields.size(); ++i) row.values.push_back(detail::parse_double(fields[i], where));
  while (!row.values.empty() && std::isnan(row.values.back())) row.values.pop_back();
  for (double v : row.values)
    if (!std::isfinite(v)) throw DataError(where + ": non-finite value inside the series");
  return row;
}

inline std::vector<UcrRow> read_ucr_file(const fs::path& path) {
  std::vector<UcrRow> rows;
  std::optional<std::size_t> fields;
  const auto lines = detail::read_lines(path);
  for (std::size_t i = 0; i < lines.size(); ++i) {
    if (detail::trim(lines[i]).empty()) continue;
    const std::string_view line = lines[i];
    const char sep = line.find('\t') != std::string_view::npos ? '\t' : ',';
    const std::size_t count = detail::split_fields(line, sep).size();
    if (fields && *fields != count)
      throw DataError(path.string() + " line " + std::to_string(i + 1) + ": ragged row with " +
                      std::to_string(count) + " fields, expected " + std::to_string(*fields));
    fields = count;
    rows.push_back(parse_ucr_line(line, i + 1));
  }
  if (rows.empty()) throw DataError(path.string() + ": empty split");
  return rows;
}

/// Stratified split into fractions (train, val, test) by shuffling within each class.
inline DatasetSplits stratified_split(const Dataset& all, double train_frac, double val_frac, Rng& rng) {
  DatasetSplits out;
  for (Dataset* d : {&out.train, &out.val, &out.test}) {
    d->length = all.length;
    d->channels = all.channels;
    d->classes = all.classes;
  }
  out.train.split = "train";
  out.val.split = "val";
  out.test.split = "test";
  std::map<int, std::vector<std::size_t>> by_class;
  for (std::size_t i = 0; i < all.size(); ++i) by_class[all.samples[i].label().value_or(-1)].push_back(i);
  for (auto& [label, idx] : by_class) {
    std::shuffle(idx.begin(), idx.end(), rng);
    const auto n = idx.size();
    const auto n_train = static_cast<std::size_t>(std::llround(train_frac * static_cast<double>(n)));
    const auto n_val = std::min(n - n_train, static_cast<std::size_t>(std::llround(val_frac * static_cast<double>(n))));
    for (std::size_t k = 0; k < n; ++k) {
      Dataset& dst = k < n_train ? out.train : (k < n_train + n_val ? out.val : out.test);
      dst.samples.push_back(all.samples[idx[k]]);
    }
  }
  return out;
}

/// Right-pad every sample with zeros to the longest length.
inline void pad_to_common_length(std::vector<std::vector<double>>& rows) {
  std::size_t longest = 0;
  for (const auto& r : rows) longest = std::max(longest, r.size());
  for (auto& r : rows) r.resize(longest, 0.0);
}

struct ChannelStats {
  std::vector<double> mean;
  std::vector<double> stddev;
};

inline constexpr double kVarianceFloor = 1e-8;

inline ChannelStats channel_stats(const Dataset& d) {
  ChannelStats st;
  st.mean.assign(d.channels, 0.0);
  st.stddev.assign(d.channels, 1.0);
  if (d.empty()) return st;
  for (std::size_t c = 0; c < d.channels; ++c) {
    double sum = 0.0, sq = 0.0;
    std::size_t n = 0;
    for (const auto& s : d.samples)
      for (double v : s.channel(c)) {
        sum += v;
        ++n;
      }
    const double mean = sum / static_cast<double>(n);
    for (const auto& s : d.samples)
      for (double v : s.channel(c)) sq += (v - mean) * (v - mean);
    st.mean[c] = mean;
    st.stddev[c] = std::sqrt(std::max(sq / static_cast<double>(n), kVarianceFloor));
  }
  return st;
}

inline void apply_normalization(Dataset& d, const ChannelStats& st) {
  for (auto& s : d.samples)
    for (std::size_t c = 0; c < d.channels; ++c)
      for (double& v : s.channel(c)) v = (v - st.mean[c]) / st.stddev[c];
}

/// Per-channel z-score using training-split statistics.
inline ChannelStats normalize_splits(DatasetSplits& splits) {
  const ChannelStats st = channel_stats(splits.train);
  apply_normalization(splits.train, st);
  apply_normalization(splits.val, st);
  apply_normalization(splits.test, st);
  return st;
}

struct LoadOptions {
  bool normalize = true;
  std::uint64_t split_seed = 0;
};

namespace detail {

inline std::vector<std::string> encode_labels(const std::vector<std::vector<UcrRow>*>& groups,
                                              std::vector<std::vector<int>>& encoded) {
  std::vector<std::pair<double, std::string>> uniq;
  for (const auto* g : groups)
    for (const auto& r : *g) uniq.emplace_back(parse_double(r.label, "label"), r.label);
  std::sort(uniq.begin(), uniq.end());
  uniq.erase(std::unique(uniq.begin(), uniq.end(),
                         [](const auto& a, const auto& b) { return a.first == b.first; }),
             uniq.end());
  std::vector<std::string> names;
  for (const auto& u : uniq) names.push_back(u.second);
  encoded.clear();
  for (const auto* g : groups) {
    std::vector<int> ids;
    for (const auto& r : *g) {
      const double v = parse_double(r.label, "label");
      auto it = std::lower_bound(uniq.begin(), uniq.end(), v, [](const auto& a, double x) { return a.first < x; });
      ids.push_back(static_cast<int>(it - uniq.begin()));
    }
    encoded.push_back(std::move(ids));
  }
  return names;
}

inline Dataset rows_to_dataset(const std::vector<UcrRow>& rows, const std::vector<int>& labels, std::size_t length,
                               std::size_t classes, std::string split) {
  Dataset d;
  d.length = length;
  d.channels = 1;
  d.classes = classes;
  d.split = std::move(split);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    std::vector<double> v = rows[i].values;
    v.resize(length, 0.0);
    d.samples.emplace_back(length, 1, std::move(v), labels[i]);
  }
  return d;
}

} // namespace detail

/// UCR tsv: either a single file (split 64/16/20 stratified) or a directory
/// holding *_TRAIN.tsv and *_TEST.tsv (validation carved from train, 20%).
inline DatasetSplits load_ucr_tsv(const fs::path& path, const LoadOptions& opt = {}) {
  DatasetSplits out;
  Rng rng = derive_rng(opt.split_seed, 0x5c1u);
  if (fs::is_directory(path)) {
    fs::path train_file, test_file;
    for (const auto& e : fs::directory_iterator(path)) {
      const auto name = e.path().filename().string();
      if (name.ends_with("_TRAIN.tsv")) train_file = e.path();
      if (name.ends_with("_TEST.tsv")) test_file = e.path();
    }
    if (train_file.empty() || test_file.empty())
      throw DataError(path.string() + ": expected *_TRAIN.tsv and *_TEST.tsv");
    auto train_rows = read_ucr_file(train_file);
    auto test_rows = read_ucr_file(test_file);
    std::size_t length = 0;
    for (const auto* g : {&train_rows, &test_rows})
      for (const auto& r : *g) length = std::max(length, r.values.size());
    std::vector<std::vector<int>> enc;
    out.label_names = detail::encode_labels({&train_rows, &test_rows}, enc);
    const auto K = out.label_names.size();
    Dataset train_all = detail::rows_to_dataset(train_rows, enc[0], length, K, "train");
    auto carved = stratified_split(train_all, 0.8, 0.2, rng);
    out.train = std::move(carved.train);
    out.val = std::move(carved.val);
    out.test = detail::rows_to_dataset(test_rows, enc[1], length, K, "test");
  } else {
    auto rows = read_ucr_file(path);
    std::size_t length = 0;
    for (const auto& r : rows) length = std::max(length, r.values.size());
    std::vector<std::vector<int>> enc;
    out.label_names = detail::encode_labels({&rows}, enc);
    Dataset all = detail::rows_to_dataset(rows, enc[0], length, out.label_names.size(), "all");
    auto names = std::move(out.label_names);
    out = stratified_split(all, 0.64, 0.16, rng);
    out.label_names = std::move(names);
  }
  for (const Dataset* d : {&out.train, &out.test})
    if (d->empty()) throw DataError(path.string() + ": split '" + d->split + "' is empty");
  if (out.train.length < 2) throw DataError(path.string() + ": series must have at least 2 values");
  if (opt.normalize) normalize_splits(out);
  return out;
}

namespace detail {

inline Dataset read_csv_split(const fs::path& file, std::size_t L, std::size_t D, std::size_t K,
                              const std::string& split) {
  const auto lines = read_lines(file);
  if (lines.empty()) throw DataError(file.string() + ": missing header");
  const auto header = split_fields(lines[0], ',');
  if (header.size() != 1 + L * D || header[0] != "label")
    throw DataError(file.string() + " line 1: header must be 'label' followed by " + std::to_string(L * D) +
                    " value columns");
  Dataset d;
  d.length = L;
  d.channels = D;
  d.classes = K;
  d.split = split;
  for (std::size_t i = 1; i < lines.size(); ++i) {
    if (trim(lines[i]).empty()) continue;
    const std::string where = file.string() + " line " + std::to_string(i + 1);
    const auto fields = split_fields(lines[i], ',');
    if (fields.size() != header.size())
      throw DataError(where + ": ragged row with " + std::to_string(fields.size()) + " fields, expected " +
                      std::to_string(header.size()));
    std::optional<int> label;
    if (!fields[0].empty()) {
      const double lv = parse_double(fields[0], where);
      if (lv < 0 || lv != std::floor(lv) || static_cast<std::size_t>(lv) >= K)
        throw DataError(where + ": label '" + std::string(fields[0]) + "' outside [0, " + std::to_string(K) + ")");
      label = static_cast<int>(lv);
    }
    std::vector<double> v(L * D);
    for (std::size_t k = 0; k < L * D; ++k) {
      v[k] = parse_double(fields[k + 1], where);
      if (!std::isfinite(v[k])) throw DataError(where + ": non-finite value");
    }
    d.samples.emplace_back(L, D, std::move(v), label);
  }
  if (d.empty()) throw DataError(file.string() + ": empty split");
  return d;
}

} // namespace detail

/// Directory with manifest.json declaring length, channels, classes and one CSV per split.
inline DatasetSplits load_csv_dir(const fs::path& dir, const LoadOptions& opt = {}) {
  const fs::path manifest_path = dir / "manifest.json";
  std::ifstream in(manifest_path);
  if (!in) throw DataError("cannot open '" + manifest_path.string() + "'");
  nlohmann::json m;
  try {
    m = nlohmann::json::parse(in);
  } catch (const nlohmann::json::exception& e) {
    throw DataError(manifest_path.string() + ": " + e.what());
  }
  const auto L = m.value("length", std::size_t{0});
  const auto D = m.value("channels", std::size_t{0});
  const auto K = m.value("classes", std::size_t{0});
  if (L < 2 || D < 1) throw DataError(manifest_path.string() + ": length >= 2 and channels >= 1 required");
  DatasetSplits out;
  if (m.contains("label_names")) out.label_names = m["label_names"].get<std::vector<std::string>>();
  const auto splits = m.value("splits", nlohmann::json::object());
  if (splits.contains("train")) {
    out.train = detail::read_csv_split(dir / splits["train"].get<std::string>(), L, D, K, "train");
    out.val = splits.contains("val")
                  ? detail::read_csv_split(dir / splits["val"].get<std::string>(), L, D, K, "val")
                  : Dataset{{}, L, D, K, "val"};
    if (!splits.contains("test")) throw DataError(manifest_path.string() + ": missing test split");
    out.test = detail::read_csv_split(dir / splits["test"].get<std::string>(), L, D, K, "test");
  } else if (splits.contains("all")) {
    Rng rng = derive_rng(opt.split_seed, 0x5c1u);
    auto names = std::move(out.label_names);
    out = stratified_split(detail::read_csv_split(dir / splits["all"].get<std::string>(), L, D, K, "all"), 0.64,
                           0.16, rng);
    out.label_names = std::move(names);
  } else {
    throw DataError(manifest_path.string() + ": 'splits' must name train/test files or 'all'");
  }
  if (opt.normalize) normalize_splits(out);
  return out;
}

inline void write_csv_split(const Dataset& d, const fs::path& file) {
  std::ofstream out(file);
  if (!out) throw DataError("cannot write '" + file.string() + "'");
  out << "label";
  for (std::size_t c = 0; c < d.channels; ++c)
    for (std::size_t t = 0; t < d.length; ++t) out << ",c" << c << "_t" << t;
  out << '\n';
  for (const auto& s : d.samples) {
    if (s.label()) out << *s.label();
    for (double v : s.values()) out << ',' << detail::format_double(v);
    out << '\n';
  }
}

inline void write_csv_dir(const DatasetSplits& splits, const fs::path& dir) {
  fs::create_directories(dir);
  const Dataset& ref = splits.train;
  nlohmann::json m;
  m["format"] = "frera-csv";
  m["version"] = 1;
  m["length"] = ref.length;
  m["channels"] = ref.channels;
  m["classes"] = ref.classes;
  if (!splits.label_names.empty()) m["label_names"] = splits.label_names;
  m["splits"] = {{"train", "train.csv"}, {"val", "val.csv"}, {"test", "test.csv"}};
  write_csv_split(splits.train, dir / "train.csv");
  write_csv_split(splits.val, dir / "val.csv");
  write_csv_split(splits.test, dir / "test.csv");
  std::ofstream(dir / "manifest.json") << m.dump(2) << '\n';
}

inline DatasetSplits load_dataset(const fs::path& path, DataFormat format, const LoadOptions& opt = {}) {
  return format == DataFormat::ucr_tsv ? load_ucr_tsv(path, opt) : load_csv_dir(path, opt);
}

/// Guess the format from the path: a directory with manifest.json is csv_dir.
inline DataFormat detect_format(const fs::path& path) {
  return fs::is_directory(path) && fs::exists(path / "manifest.json") ? DataFormat::csv_dir : DataFormat::ucr_tsv;
}

/// Draws batches of indices. Balanced mode samples with replacement with
/// probability proportional to 1 / count(class); otherwise each epoch is a
/// fresh permutation cut into full batches.
class BatchSampler {
public:
  BatchSampler(const Dataset& data, std::size_t batch_size, bool balanced)
      : size_(data.size()), batch_(std::min(batch_size, data.size())) {
    if (batch_ < 1) throw DataError("BatchSampler: empty dataset");
    if (balanced && data.labeled()) {
      const auto counts = data.class_counts();
      weights_.reserve(size_);
      for (const auto& s : data.samples) weights_.push_back(1.0 / static_cast<double>(counts[*s.label()]));
    }
  }

  bool balanced() const noexcept { return !weights_.empty(); }
  std::size_t batch_size() const noexcept { return batch_; }
  std::size_t steps_per_epoch() const noexcept { return std::max<std::size_t>(1, size_ / batch_); }

  /// Single index draw (used for the stream form and for testing).
  std::size_t draw(Rng& rng) const {
    if (balanced()) {
      std::discrete_distribution<std::size_t> dist(weights_.begin(), weights_.end());
      return dist(rng);
    }
    std::uniform_int_distribution<std::size_t> dist(0, size_ - 1);
    return dist(rng);
  }

  std::vector<std::vector<std::size_t>> epoch(Rng& rng) const {
    std::vector<std::vector<std::size_t>> batches(steps_per_epoch());
    if (balanced()) {
      std::discrete_distribution<std::size_t> dist(weights_.begin(), weights_.end());
      for (auto& b : batches) {
        b.resize(batch_);
        for (auto& i : b) i = dist(rng);
      }
      return batches;
    }
    std::vector<std::size_t> perm(size_);
    std::iota(perm.begin(), perm.end(), 0);
    std::shuffle(perm.begin(), perm.end(), rng);
    for (std::size_t k = 0; k < batches.size(); ++k)
      batches[k].assign(perm.begin() + static_cast<std::ptrdiff_t>(k * batch_),
                        perm.begin() + static_cast<std::ptrdiff_t>((k + 1) * batch_));
    return batches;
  }

private:
  std::size_t size_;
  std::size_t batch_;
  std::vector<double> weights_;
};

} // namespace frera
