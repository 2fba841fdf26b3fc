// Command-line entry point: property checks, synthetic data, pretraining,
// linear evaluation, diagnostics and view export.

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <nlohmann/json.hpp>
#include <openssl/evp.h>

#include "frera/frera.hpp"

using namespace frera;
using nlohmann::json;

namespace {

// ---------------------------------------------------------------------------
// Run manifests

std::string to_hex(const unsigned char* data, unsigned int n) {
  static const char* digits = "0123456789abcdef";
  std::string out;
  out.reserve(2 * n);
  for (unsigned int i = 0; i < n; ++i) {
    out += digits[data[i] >> 4];
    out += digits[data[i] & 15];
  }
  return out;
}

std::string sha1_hex(const std::string& bytes) {
  unsigned char md[EVP_MAX_MD_SIZE];
  unsigned int n = 0;
  EVP_Digest(bytes.data(), bytes.size(), md, &n, EVP_sha1(), nullptr);
  return to_hex(md, n);
}

std::string read_bytes(const fs::path& p) {
  std::ifstream in(p, std::ios::binary);
  if (!in) throw DataError("cannot read '" + p.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

/// Git object id of a file (blob) or directory (sorted listing of child ids).
std::string content_hash(const fs::path& p) {
  if (fs::is_directory(p)) {
    std::vector<std::string> entries;
    for (const auto& e : fs::directory_iterator(p))
      entries.push_back(e.path().filename().string() + " " + content_hash(e.path()));
    std::sort(entries.begin(), entries.end());
    std::string listing;
    for (const auto& e : entries) listing += e + "\n";
    return sha1_hex("tree " + std::to_string(listing.size()) + '\0' + listing);
  }
  const std::string body = read_bytes(p);
  return sha1_hex("blob " + std::to_string(body.size()) + '\0' + body);
}

struct RunContext {
  std::string command;
  std::vector<std::string> argv;
};

RunContext g_run;

void write_manifest(const fs::path& where, const json& config, std::optional<std::uint64_t> seed,
                    const std::vector<fs::path>& inputs, const json& outputs) {
  json m;
  m["format"] = "frera-run";
  m["command"] = g_run.command;
  m["argv"] = g_run.argv;
  m["config"] = config;
  m["seed"] = seed ? json(*seed) : json(nullptr);
  json in = json::object();
  for (const auto& p : inputs) in[p.string()] = content_hash(p);
  m["inputs"] = in;
  m["outputs"] = outputs;
  if (where.has_parent_path()) fs::create_directories(where.parent_path());
  std::ofstream out(where);
  if (!out) throw DataError("cannot write run manifest '" + where.string() + "'");
  out << m.dump(2) << '\n';
}

fs::path manifest_beside(const fs::path& file) { return fs::path(file.string() + ".manifest.json"); }

// ---------------------------------------------------------------------------
// Shared helpers

json read_json_file(const fs::path& p) {
  std::ifstream in(p);
  if (!in) throw DataError("cannot open '" + p.string() + "'");
  try {
    return json::parse(in);
  } catch (const json::exception& e) {
    throw DataError(p.string() + ": " + e.what());
  }
}

std::vector<std::size_t> parse_size_list(const std::string& text) {
  std::vector<std::size_t> out;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    try {
      std::size_t pos = 0;
      const long long v = std::stoll(item, &pos);
      if (pos != item.size() || v <= 0) throw std::invalid_argument(item);
      out.push_back(static_cast<std::size_t>(v));
    } catch (const std::exception&) {
      throw UsageError("expected a comma-separated list of positive integers, got '" + text + "'");
    }
  }
  if (out.empty()) throw UsageError("empty list '" + text + "'");
  return out;
}

struct DataArgs {
  std::string path;
  std::string format = "auto";
  std::uint64_t split_seed = 0;
};

void add_data_options(CLI::App* cmd, DataArgs& d, bool required = true) {
  auto* opt = cmd->add_option("--data", d.path, "dataset: UCR .tsv file/directory or csv_dir");
  if (required) opt->required();
  cmd->add_option("--format", d.format, "ucr_tsv | csv_dir | auto")->capture_default_str();
  cmd->add_option("--split-seed", d.split_seed, "seed for 64/16/20 splitting of unsplit data")->capture_default_str();
}

DatasetSplits load_data(const DataArgs& d) {
  const fs::path path(d.path);
  if (!fs::exists(path)) throw DataError("dataset path '" + d.path + "' does not exist");
  const DataFormat fmt = d.format == "auto" ? detect_format(path) : parse_data_format(d.format);
  return load_dataset(path, fmt, {.normalize = true, .split_seed = d.split_seed});
}

Dataset pick_split(const DatasetSplits& s, const std::string& name) {
  if (name == "train") return s.train;
  if (name == "val") return s.val;
  if (name == "test") return s.test;
  if (name == "all") {
    Dataset all = s.train;
    all.split = "all";
    for (const Dataset* part : {&s.val, &s.test}) all.samples.insert(all.samples.end(), part->samples.begin(), part->samples.end());
    return all;
  }
  throw UsageError("unknown split '" + name + "' (train, val, test, all)");
}

void require_shape(const Checkpoint& ck, const DatasetSplits& data) {
  if (data.train.length != ck.length || data.train.channels != ck.channels)
    throw DataError("dataset shape " + std::to_string(data.train.length) + "x" + std::to_string(data.train.channels) +
                    " does not match checkpoint " + std::to_string(ck.length) + "x" + std::to_string(ck.channels));
}

// ---------------------------------------------------------------------------
// properties

struct PropertiesArgs {
  std::string sizes = "8,37,128";
  std::string channels = "1,3";
  std::size_t trials = 5;
  std::uint64_t seed = 7;
  std::string mutate = "none";
};

int cmd_properties(const PropertiesArgs& a) {
  PropertyOptions opt;
  opt.sizes = parse_size_list(a.sizes);
  opt.channels = parse_size_list(a.channels);
  opt.trials = a.trials;
  opt.seed = a.seed;
  for (auto L : opt.sizes)
    if (L < 2) throw UsageError("sizes must be >= 2");
  TransformPair tp;
  if (a.mutate == "none") tp = reference_transforms();
  else if (a.mutate == "sign") tp = sign_mutated_transforms();
  else throw UsageError("unknown mutation '" + a.mutate + "' (none, sign)");

  auto results = spectral_properties(tp, opt);
  for (auto& r : augmentation_properties(opt)) results.push_back(std::move(r));
  std::cout << "transforms: " << tp.label << "\n" << format_property_table(results);
  std::size_t failed = 0;
  for (const auto& r : results) {
    if (r.passed) continue;
    ++failed;
    std::cout << "FAILED " << r.name << " (L=" << r.length << ", D=" << r.channels << ", seed=" << opt.seed
              << ", trials=" << opt.trials << "): " << r.detail << "; error " << r.error << " exceeds " << r.tolerance
              << "\n";
  }
  std::cout << (failed ? std::to_string(failed) + " properties failed\n" : "all properties passed\n");
  return failed ? static_cast<int>(ErrorKind::numerical) : 0;
}

// ---------------------------------------------------------------------------
// synth

struct SynthArgs {
  std::string spec;
  std::string out;
  std::optional<std::uint64_t> seed;
};

int cmd_synth(const SynthArgs& a) {
  SyntheticSpec spec;
  try {
    spec = read_json_file(a.spec).get<SyntheticSpec>();
  } catch (const json::exception& e) {
    throw DataError(a.spec + ": " + e.what());
  }
  if (a.seed) spec.seed = *a.seed;
  spec.validate();
  const fs::path out(a.out);
  write_manifest(out / "run_manifest.json", spec, spec.seed, {a.spec}, {{"dataset", out.string()}});
  const auto splits = generate_synthetic_splits(spec);
  write_csv_dir(splits, out);
  std::cout << json{{"event", "synth"},
                    {"out", out.string()},
                    {"train", splits.train.size()},
                    {"val", splits.val.size()},
                    {"test", splits.test.size()},
                    {"class_bins", spec.class_bins()}}
                   .dump()
            << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// train

struct TrainArgs {
  std::string config;
  DataArgs data;
  std::string out;
  std::optional<double> lambda, tau_w, tau, lr_model, lr_s;
  std::optional<std::uint64_t> seed;
  std::optional<std::size_t> epochs, batch_size, probe_every;
  std::optional<std::string> profile, threshold, baseline, variant;
  bool no_balanced = false;
  bool quiet = false;
};

TrainConfig resolve_config(const TrainArgs& a) {
  TrainConfig cfg;
  if (!a.config.empty()) {
    try {
      cfg = read_json_file(a.config).get<TrainConfig>();
    } catch (const json::exception& e) {
      throw UsageError(a.config + ": " + e.what());
    }
  }
  if (a.lambda) cfg.lambda = *a.lambda;
  if (a.tau_w) cfg.tau_w = *a.tau_w;
  if (a.tau) cfg.tau = *a.tau;
  if (a.lr_model) cfg.lr_model = *a.lr_model;
  if (a.lr_s) cfg.lr_s = *a.lr_s;
  if (a.seed) cfg.seed = *a.seed;
  if (a.epochs) cfg.epochs = *a.epochs;
  if (a.batch_size) cfg.batch_size = *a.batch_size;
  if (a.probe_every) cfg.probe_every = *a.probe_every;
  if (a.profile) cfg.profile = *a.profile;
  if (a.threshold) cfg.threshold = parse_threshold_mode(*a.threshold);
  if (a.baseline) {
    if (*a.baseline == "none") cfg.baseline.reset();
    else cfg.baseline = parse_baseline_kind(*a.baseline);
  }
  if (a.variant) cfg.variant = parse_variant(*a.variant);
  if (a.no_balanced) cfg.balanced_sampling = false;
  cfg.validate();
  return cfg;
}

int cmd_train(const TrainArgs& a) {
  const TrainConfig cfg = resolve_config(a);
  const fs::path out(a.out);
  const fs::path log_path = out / "train_log.jsonl", ckpt_path = out / "checkpoint";
  std::vector<fs::path> inputs{a.data.path};
  if (!a.config.empty()) inputs.emplace_back(a.config);
  write_manifest(out / "run_manifest.json", cfg, cfg.seed, inputs,
                 {{"log", log_path.string()}, {"checkpoint", ckpt_path.string()}});

  const DatasetSplits data = load_data(a.data);
  std::ofstream log(log_path, std::ios::trunc);
  if (!log) throw DataError("cannot write '" + log_path.string() + "'");
  const std::string aug = cfg.augmentation_name();
  auto emit = [&](const json& line) {
    log << line.dump() << '\n';
    log.flush();
    if (!a.quiet) std::cout << line.dump() << '\n' << std::flush;
  };
  emit({{"event", "start"},
        {"augmentation", aug},
        {"length", data.train.length},
        {"channels", data.train.channels},
        {"classes", data.train.classes},
        {"train_samples", data.train.size()},
        {"config", cfg}});

  TrainHooks hooks;
  hooks.on_epoch = [&](const EpochRecord& r) {
    json line = r;
    line["event"] = "epoch";
    line["augmentation"] = aug;
    emit(line);
  };
  hooks.on_failure = [&](const Checkpoint& ck) {
    const fs::path dump = out / "failure_state";
    save_checkpoint(ck, dump);
    emit({{"event", "failure_state"}, {"path", dump.string()}, {"epoch", ck.epoch}});
  };
  const Checkpoint ck = pretrain(data, cfg, hooks);
  save_checkpoint(ck, ckpt_path);
  emit({{"event", "done"},
        {"augmentation", aug},
        {"epochs", ck.epoch},
        {"selected_epoch", ck.selected_epoch},
        {"final_mask_mean", ck.history.back().mask_mean},
        {"checkpoint", ckpt_path.string()}});
  return 0;
}

// ---------------------------------------------------------------------------
// eval

struct EvalArgs {
  std::string checkpoint;
  DataArgs data;
  std::size_t iterations = 500;
  double lr = 0.1;
  std::size_t eval_every = 10;
  std::string out;
};

int cmd_eval(const EvalArgs& a) {
  if (!a.out.empty())
    write_manifest(fs::path(a.out) / "run_manifest.json",
                   {{"iterations", a.iterations}, {"lr", a.lr}, {"eval_every", a.eval_every}}, std::nullopt,
                   {a.checkpoint, a.data.path}, {{"result", (fs::path(a.out) / "eval.json").string()}});
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const DatasetSplits data = load_data(a.data);
  require_shape(ck, data);
  const ProbeResult r = linear_evaluate(ck, data, {a.iterations, a.lr, a.eval_every});
  json res = {{"accuracy", r.best_test_accuracy},
              {"val_selected_test_accuracy", r.test_accuracy},
              {"val_accuracy", r.val_accuracy},
              {"macro_f1", r.macro_f1},
              {"selected_iteration", r.selected_iteration},
              {"encoder_epoch", ck.selected_encoder ? ck.selected_epoch : ck.epoch},
              {"missing_classes", r.missing_classes}};
  if (!r.missing_classes.empty())
    std::cerr << "warning: " << r.missing_classes.size()
              << " test class(es) absent from the training split are scored as always wrong\n";
  std::cout << res.dump() << '\n';
  if (!a.out.empty()) std::ofstream(fs::path(a.out) / "eval.json") << res.dump(2) << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// analyze

struct AnalyzeArgs {
  std::string what;
  std::string checkpoint;
  DataArgs data;
  std::string out;
  std::string split = "all";
  std::string view = "identity";
  int bins = 16;
  bool use_complex = false;
  std::uint64_t seed = 0;
};

ViewFn make_view_fn(const std::string& view, const Checkpoint* ck, std::uint64_t seed) {
  if (view == "identity") return nullptr;
  auto rng = std::make_shared<Rng>(derive_rng(seed, 0xa1));
  if (view == "frera") {
    if (!ck) throw UsageError("--view frera needs --checkpoint");
    const ImportanceVector s = ck->state.importance_vector();
    const DistortionVector dist = compute_distortion(s, ck->config.threshold);
    const double tau_w = ck->config.tau_w;
    return [s, dist, tau_w, rng](const TimeSeries& x) { return augment(x, sample_crit_mask(s, tau_w, *rng), dist); };
  }
  const BaselineKind kind = parse_baseline_kind(view);
  return [kind, rng](const TimeSeries& x) { return baseline_augment(x, kind, {}, *rng); };
}

int cmd_analyze(const AnalyzeArgs& a) {
  static const std::vector<std::string> kinds{"mi_time", "mi_freq", "energy", "export_s"};
  if (std::find(kinds.begin(), kinds.end(), a.what) == kinds.end())
    throw UsageError("unknown analysis '" + a.what + "' (mi_time, mi_freq, energy, export_s)");
  const fs::path out(a.out);
  std::vector<fs::path> inputs;
  if (!a.checkpoint.empty()) inputs.emplace_back(a.checkpoint);
  if (!a.data.path.empty()) inputs.emplace_back(a.data.path);
  write_manifest(manifest_beside(out),
                 {{"what", a.what}, {"split", a.split}, {"view", a.view}, {"bins", a.bins}, {"complex", a.use_complex}},
                 a.seed, inputs, {{"result", out.string()}});

  std::optional<Checkpoint> ck;
  if (!a.checkpoint.empty()) ck = load_checkpoint(a.checkpoint);

  if (a.what == "export_s") {
    if (!ck) throw UsageError("export_s needs --checkpoint");
    std::ofstream f(out);
    if (!f) throw DataError("cannot write '" + out.string() + "'");
    for (Eigen::Index i = 0; i < ck->state.importance.value.size(); ++i)
      f << detail::format_double(ck->state.importance.value(i)) << '\n';
    std::cout << json{{"event", "export_s"}, {"components", ck->state.importance.value.size()}, {"out", out.string()}}.dump()
              << '\n';
    return 0;
  }

  if (a.data.path.empty()) throw UsageError(a.what + " needs --data");
  const DatasetSplits data = load_data(a.data);
  if (ck) require_shape(*ck, data);
  const Dataset d = pick_split(data, a.split);
  std::vector<double> values;
  json summary{{"event", a.what}, {"out", out.string()}, {"split", a.split}};
  if (a.what == "mi_time") {
    const auto curve = mi_timestamp_curve(d, make_view_fn(a.view, ck ? &*ck : nullptr, a.seed), a.bins);
    values = curve.values;
    summary["view"] = a.view;
  } else if (a.what == "mi_freq") {
    values = mi_frequency_profile(d, a.bins, a.use_complex).values;
  } else {
    values = mean_energy_profile(d);
    summary["top10_energy_fraction"] = top_k_energy_fraction(values, 10);
  }
  write_curve_csv(out, values);
  summary["mean"] = values.empty() ? 0.0 : std::accumulate(values.begin(), values.end(), 0.0) / values.size();
  summary["top_indices"] = top_k_indices(values, std::min<std::size_t>(6, values.size()));
  std::cout << summary.dump() << '\n';
  return 0;
}

// ---------------------------------------------------------------------------
// augment

struct AugmentArgs {
  std::string checkpoint;
  DataArgs data;
  std::string out;
  bool hard = false;
  std::uint64_t seed = 0;
};

int cmd_augment(const AugmentArgs& a) {
  const fs::path out(a.out);
  write_manifest(out / "run_manifest.json", {{"hard", a.hard}}, a.seed, {a.checkpoint, a.data.path},
                 {{"views", out.string()}});
  const Checkpoint ck = load_checkpoint(a.checkpoint);
  const DatasetSplits data = load_data(a.data);
  require_shape(ck, data);
  const ImportanceVector s = ck.state.importance_vector();
  const DistortionVector dist = compute_distortion(s, ck.config.threshold);
  DatasetSplits views = data;
  std::uint64_t slot = 0;
  for (Dataset* d : {&views.train, &views.val, &views.test})
    for (auto& x : d->samples) {
      Rng rng = derive_rng(a.seed, slot++);
      CritMask mask = sample_crit_mask(s, ck.config.tau_w, rng);
      if (a.hard) mask = mask.hardened();
      x = augment(x, mask, dist);
    }
  write_csv_dir(views, out);
  std::cout << json{{"event", "augment"},
                    {"out", out.string()},
                    {"hard", a.hard},
                    {"unimportant_components", dist.unimportant.size()},
                    {"samples", slot}}
                   .dump()
            << '\n';
  return 0;
}

} // namespace

int main(int argc, char** argv) {
  CLI::App app{"frera: learnable frequency-domain augmentation for time-series contrastive learning"};
  app.require_subcommand(1);
  for (int i = 0; i < argc; ++i) g_run.argv.emplace_back(argv[i]);

  PropertiesArgs pa;
  auto* props = app.add_subcommand("properties", "run the transform and augmentation property suites");
  props->add_option("--sizes", pa.sizes, "comma-separated sequence lengths")->capture_default_str();
  props->add_option("--channels", pa.channels, "comma-separated channel counts")->capture_default_str();
  props->add_option("--trials", pa.trials, "random instances per size")->capture_default_str();
  props->add_option("--seed", pa.seed)->capture_default_str();
  props->add_option("--mutate", pa.mutate, "none | sign (deliberately broken inverse transform)")->capture_default_str();

  SynthArgs sa;
  auto* synth = app.add_subcommand("synth", "generate a synthetic dataset in csv_dir format");
  synth->add_option("--spec", sa.spec, "synthetic spec JSON")->required();
  synth->add_option("--out", sa.out, "output directory")->required();
  synth->add_option("--seed", sa.seed, "override the spec seed");

  TrainArgs ta;
  auto* train = app.add_subcommand("train", "pretrain an encoder with FreRA or a baseline augmentation");
  train->add_option("--config", ta.config, "training config JSON (flags override it)");
  add_data_options(train, ta.data);
  train->add_option("--out", ta.out, "output directory")->required();
  train->add_option("--lambda", ta.lambda, "regularizer weight");
  train->add_option("--tau-w", ta.tau_w, "mask temperature");
  train->add_option("--tau", ta.tau, "InfoNCE temperature");
  train->add_option("--lr-model", ta.lr_model);
  train->add_option("--lr-s", ta.lr_s);
  train->add_option("--seed", ta.seed);
  train->add_option("--epochs", ta.epochs);
  train->add_option("--batch-size", ta.batch_size);
  train->add_option("--probe-every", ta.probe_every, "epochs between validation probes (0 disables)");
  train->add_option("--profile", ta.profile, "small | full");
  train->add_option("--threshold", ta.threshold, "mean | median | mean_plus_std");
  train->add_option("--baseline", ta.baseline, "replace FreRA: jitter, scaling, permutation, lowpass, highpass, phase_shift");
  train->add_option("--variant", ta.variant, "full | random_mask | no_distortion");
  train->add_flag("--no-balanced", ta.no_balanced, "uniform instead of class-balanced sampling");
  train->add_flag("--quiet", ta.quiet, "log to file only");

  EvalArgs ea;
  auto* eval = app.add_subcommand("eval", "linear evaluation of a pretrained encoder");
  eval->add_option("--checkpoint", ea.checkpoint)->required();
  add_data_options(eval, ea.data);
  eval->add_option("--iterations", ea.iterations)->capture_default_str();
  eval->add_option("--lr", ea.lr)->capture_default_str();
  eval->add_option("--eval-every", ea.eval_every)->capture_default_str();
  eval->add_option("--out", ea.out, "optional output directory for eval.json");

  AnalyzeArgs aa;
  auto* analyze = app.add_subcommand("analyze", "mutual information, energy profiles, importance export");
  analyze->add_option("what", aa.what, "mi_time | mi_freq | energy | export_s")->required();
  analyze->add_option("--checkpoint", aa.checkpoint);
  add_data_options(analyze, aa.data, false);
  analyze->add_option("--out", aa.out, "output file (CSV, or text for export_s)")->required();
  analyze->add_option("--split", aa.split, "train, val, test or all")->capture_default_str();
  analyze->add_option("--view", aa.view, "mi_time view: identity, frera, or a baseline kind")->capture_default_str();
  analyze->add_option("--bins", aa.bins)->capture_default_str();
  analyze->add_flag("--complex", aa.use_complex, "mi_freq on (Re, Im) instead of magnitude");
  analyze->add_option("--seed", aa.seed)->capture_default_str();

  AugmentArgs ga;
  auto* aug = app.add_subcommand("augment", "write FreRA views of a dataset");
  aug->add_option("--checkpoint", ga.checkpoint)->required();
  add_data_options(aug, ga.data);
  aug->add_option("--out", ga.out, "output directory")->required();
  aug->add_flag("--hard", ga.hard, "threshold the mask at 0.5");
  aug->add_option("--seed", ga.seed)->capture_default_str();

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? 0 : static_cast<int>(ErrorKind::usage);
  }

  try {
    if (*props) return g_run.command = "properties", cmd_properties(pa);
    if (*synth) return g_run.command = "synth", cmd_synth(sa);
    if (*train) return g_run.command = "train", cmd_train(ta);
    if (*eval) return g_run.command = "eval", cmd_eval(ea);
    if (*analyze) return g_run.command = "analyze", cmd_analyze(aa);
    if (*aug) return g_run.command = "augment", cmd_augment(ga);
  } catch (const Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(e.kind());
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return static_cast<int>(ErrorKind::data);
  }
  return static_cast<int>(ErrorKind::usage);
}
