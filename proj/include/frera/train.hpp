#pragma once

// Joint contrastive pretraining of encoder, projector and importance vector,
// and the frozen-encoder linear evaluation protocol.

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <functional>
#include <limits>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "frera/analysis.hpp"
#include "frera/augment.hpp"
#include "frera/dataset.hpp"
#include "frera/error.hpp"
#include "frera/nn.hpp"
#include "frera/objective.hpp"
#include "frera/random.hpp"

namespace frera {

/// Component-removal variants used for ablations.
enum class FreraVariant { full, random_mask, no_distortion };

inline std::string_view to_string(FreraVariant v) {
  switch (v) {
  case FreraVariant::full: return "full";
  case FreraVariant::random_mask: return "random_mask";
  case FreraVariant::no_distortion: return "no_distortion";
  }
  return "full";
}

inline FreraVariant parse_variant(std::string_view name) {
  if (name == "full") return FreraVariant::full;
  if (name == "random_mask") return FreraVariant::random_mask;
  if (name == "no_distortion") return FreraVariant::no_distortion;
  throw UsageError("unknown variant '" + std::string(name) + "' (expected full|random_mask|no_distortion)");
}

struct TrainConfig {
  std::size_t batch_size = 64;
  std::size_t epochs = 100;
  double lr_model = 0.03;
  double lr_s = 0.01;
  double momentum = 0.9;
  double weight_decay = 0.0;
  double tau = 0.2;
  double tau_w = 0.1;
  double lambda = 1.0;
  ThresholdMode threshold = ThresholdMode::mean;
  std::uint64_t seed = 0;
  std::string profile = "small";
  bool balanced_sampling = true;
  int projector_hidden = 128;
  int projector_out = 128;
  double s_init_std = 0.01;
  std::optional<BaselineKind> baseline;
  BaselineParams baseline_params;
  FreraVariant variant = FreraVariant::full;
  double random_mask_proportion = 0.5;
  std::size_t probe_every = 10;

  void validate() const {
    if (batch_size < 2) throw UsageError("batch size must be >= 2");
    if (epochs < 1) throw UsageError("epochs must be >= 1");
    if (!(lr_model > 0.0) || !(lr_s > 0.0)) throw UsageError("learning rates must be positive");
    if (!(tau > 0.0) || !(tau_w > 0.0)) throw UsageError("temperatures must be positive");
    if (!(lambda >= 0.0)) throw UsageError("lambda must be >= 0");
    if (!(random_mask_proportion >= 0.0 && random_mask_proportion <= 1.0))
      throw UsageError("random_mask_proportion must be in [0, 1]");
    nn::EncoderProfile::named(profile);
  }

  /// Name of the view generator, recorded in logs and checkpoints.
  std::string augmentation_name() const {
    if (baseline) return std::string(to_string(*baseline));
    return variant == FreraVariant::full ? "frera" : "frera_" + std::string(to_string(variant));
  }
};

inline void to_json(nlohmann::json& j, const TrainConfig& c) {
  j = {{"batch_size", c.batch_size},
       {"epochs", c.epochs},
       {"lr_model", c.lr_model},
       {"lr_s", c.lr_s},
       {"momentum", c.momentum},
       {"weight_decay", c.weight_decay},
       {"tau", c.tau},
       {"tau_w", c.tau_w},
       {"lambda", c.lambda},
       {"threshold", std::string(to_string(c.threshold))},
       {"seed", c.seed},
       {"profile", c.profile},
       {"balanced_sampling", c.balanced_sampling},
       {"projector_hidden", c.projector_hidden},
       {"projector_out", c.projector_out},
       {"s_init_std", c.s_init_std},
       {"baseline", c.baseline ? nlohmann::json(std::string(to_string(*c.baseline))) : nlohmann::json(nullptr)},
       {"baseline_params",
        {{"jitter_sigma", c.baseline_params.jitter_sigma},
         {"scaling_sigma", c.baseline_params.scaling_sigma},
         {"segments", c.baseline_params.segments},
         {"cutoff", c.baseline_params.cutoff}}},
       {"variant", std::string(to_string(c.variant))},
       {"random_mask_proportion", c.random_mask_proportion},
       {"probe_every", c.probe_every}};
}

inline void from_json(const nlohmann::json& j, TrainConfig& c) {
  const TrainConfig d;
  c.batch_size = j.value("batch_size", d.batch_size);
  c.epochs = j.value("epochs", d.epochs);
  c.lr_model = j.value("lr_model", d.lr_model);
  c.lr_s = j.value("lr_s", d.lr_s);
  c.momentum = j.value("momentum", d.momentum);
  c.weight_decay = j.value("weight_decay", d.weight_decay);
  c.tau = j.value("tau", d.tau);
  c.tau_w = j.value("tau_w", d.tau_w);
  c.lambda = j.value("lambda", d.lambda);
  c.threshold = parse_threshold_mode(j.value("threshold", std::string("mean")));
  c.seed = j.value("seed", d.seed);
  c.profile = j.value("profile", d.profile);
  c.balanced_sampling = j.value("balanced_sampling", d.balanced_sampling);
  c.projector_hidden = j.value("projector_hidden", d.projector_hidden);
  c.projector_out = j.value("projector_out", d.projector_out);
  c.s_init_std = j.value("s_init_std", d.s_init_std);
  c.baseline.reset();
  if (j.contains("baseline") && !j["baseline"].is_null())
    c.baseline = parse_baseline_kind(j["baseline"].get<std::string>());
  if (j.contains("baseline_params")) {
    const auto& b = j["baseline_params"];
    c.baseline_params.jitter_sigma = b.value("jitter_sigma", d.baseline_params.jitter_sigma);
    c.baseline_params.scaling_sigma = b.value("scaling_sigma", d.baseline_params.scaling_sigma);
    c.baseline_params.segments = b.value("segments", d.baseline_params.segments);
    c.baseline_params.cutoff = b.value("cutoff", d.baseline_params.cutoff);
  }
  c.variant = parse_variant(j.value("variant", std::string("full")));
  c.random_mask_proportion = j.value("random_mask_proportion", d.random_mask_proportion);
  c.probe_every = j.value("probe_every", d.probe_every);
}

/// Encoder, projector, importance vector and optimizer moments.
struct ModelState {
  nn::Encoder encoder;
  nn::Projector projector;
  nn::Parameter importance;  ///< (F, 1)
  nn::Sgd model_optimizer;
  nn::Adam importance_optimizer;

  static ModelState create(std::size_t length, std::size_t channels, const TrainConfig& cfg, Rng& rng) {
    ModelState m;
    const auto profile = nn::EncoderProfile::named(cfg.profile);
    m.encoder = nn::Encoder(static_cast<int>(channels), profile);
    m.projector = nn::Projector(profile.output_dim(), cfg.projector_hidden, cfg.projector_out);
    m.encoder.reset(rng);
    m.projector.reset(rng);
    const auto s = ImportanceVector::random(spectrum_size(length), rng, cfg.s_init_std);
    m.importance = nn::Parameter("importance", Eigen::Map<const Eigen::VectorXd>(s.s.data(), s.s.size()));
    m.model_optimizer = nn::Sgd({cfg.lr_model, cfg.momentum, cfg.weight_decay});
    m.importance_optimizer = nn::Adam({.lr = cfg.lr_s});
    m.init_optimizer_state();
    return m;
  }

  void init_optimizer_state() {
    auto params = model_parameters();
    nn::detail::match_state(model_optimizer.velocity, params);
    std::vector<nn::Parameter*> s{&importance};
    nn::detail::match_state(importance_optimizer.first_moment, s);
    nn::detail::match_state(importance_optimizer.second_moment, s);
  }

  std::vector<nn::Parameter*> model_parameters() {
    auto out = encoder.parameters();
    for (auto* p : projector.parameters()) out.push_back(p);
    return out;
  }

  ImportanceVector importance_vector() const {
    ImportanceVector v;
    v.s.assign(importance.value.data(), importance.value.data() + importance.value.size());
    return v;
  }

  void set_importance(const ImportanceVector& v) {
    if (static_cast<Eigen::Index>(v.size()) != importance.value.rows())
      throw DataError("set_importance: length mismatch");
    importance.value.col(0) = Eigen::Map<const Eigen::VectorXd>(v.s.data(), v.s.size());
  }

  void zero_grad() {
    for (auto* p : model_parameters()) p->zero_grad();
    importance.zero_grad();
  }
};

/// Views of one batch plus the masks that produced them (empty for baselines).
struct BatchViews {
  std::vector<TimeSeries> views;
  std::vector<CritMask> masks;
};

struct StepOutput {
  LossBreakdown loss;
  double mask_mean = 0.0;
  int floored_norms = 0;
  nn::Encoder::Cache cache;
};

/// One forward pass of anchors and views (concatenated into a single batch
/// so that normalization statistics are shared) and, optionally, the full
/// backward pass. All gradients are computed before anything is updated.
inline StepOutput contrastive_step(ModelState& m, std::span<const TimeSeries> anchors, const BatchViews& v,
                                   double tau, double lambda, bool compute_grads, bool train_importance) {
  const auto B = static_cast<Eigen::Index>(anchors.size());
  if (v.views.size() != anchors.size()) throw DataError("contrastive_step: one view per anchor required");
  const auto L = static_cast<Eigen::Index>(anchors.front().length());
  std::vector<TimeSeries> all(anchors.begin(), anchors.end());
  all.insert(all.end(), v.views.begin(), v.views.end());
  const nn::Matrix x = nn::stack_batch(all);

  StepOutput out;
  const nn::Matrix rep = m.encoder.forward(x, 2 * B, L, nn::Mode::train, out.cache);
  nn::Projector::Cache pcache;
  const nn::Matrix h = m.projector.forward(rep, pcache);
  const nn::Matrix ha = h.leftCols(B), hv = h.rightCols(B);
  const auto sim = cosine_similarity_matrix(ha, hv);
  out.floored_norms = sim.floored_norms;
  Eigen::MatrixXd dsim;
  const double contrastive = infonce_loss(sim.sim, tau, compute_grads ? &dsim : nullptr);

  double reg = 0.0;
  for (const auto& mask : v.masks) reg += l1_regularizer(mask.w);
  if (!v.masks.empty()) reg /= static_cast<double>(v.masks.size());
  out.mask_mean = reg;
  out.loss = total_loss(contrastive, reg, lambda);
  if (!compute_grads) return out;

  m.zero_grad();
  Eigen::MatrixXd da, dv;
  cosine_similarity_backward(ha, hv, dsim, da, dv);
  nn::Matrix dh(h.rows(), 2 * B);
  dh << da, dv;
  const nn::Matrix drep = m.projector.backward(dh, pcache);
  const bool importance_path = train_importance && !v.masks.empty();
  const nn::Matrix dx = m.encoder.backward(drep, out.cache, importance_path);
  if (importance_path) {
    if (!dx.allFinite()) throw NumericalError("non-finite gradient with respect to the views");
    const auto F = static_cast<double>(m.importance.value.rows());
    for (Eigen::Index b = 0; b < B; ++b) {
      const TimeSeries upstream = nn::unstack_sample(dx, B + b, L);
      const auto& mask = v.masks[static_cast<std::size_t>(b)];
      const auto g = augment_backward(upstream, anchors[static_cast<std::size_t>(b)], mask);
      const auto dw = mask.derivative();
      for (std::size_t i = 0; i < g.size(); ++i)
        m.importance.grad(static_cast<Eigen::Index>(i), 0) +=
            g[i] + lambda * dw[i] / (F * static_cast<double>(B));
    }
  }
  return out;
}

/// Hard 0/1 mask with round(p * F) components kept, chosen uniformly.
inline CritMask random_crit_mask(std::size_t components, double proportion, Rng& rng) {
  CritMask mask;
  mask.w.assign(components, 0.0);
  mask.noise.assign(components, 0.0);
  std::vector<std::size_t> idx(components);
  std::iota(idx.begin(), idx.end(), 0);
  std::shuffle(idx.begin(), idx.end(), rng);
  const auto keep = static_cast<std::size_t>(std::llround(proportion * static_cast<double>(components)));
  for (std::size_t k = 0; k < keep; ++k) mask.w[idx[k]] = 1.0;
  return mask;
}

/// Independent stream for sample `slot` of step `step`.
inline Rng view_rng(std::uint64_t seed, std::uint64_t step, std::uint64_t slot) {
  return derive_rng(mix_seed(seed ^ 0xa11ce5ULL) + step, slot);
}

/// Builds one view per anchor according to the configured view generator.
inline BatchViews make_views(const ModelState& m, std::span<const TimeSeries> anchors, const TrainConfig& cfg,
                             std::uint64_t step) {
  BatchViews out;
  out.views.reserve(anchors.size());
  if (cfg.baseline) {
    for (std::size_t b = 0; b < anchors.size(); ++b) {
      Rng rng = view_rng(cfg.seed, step, b);
      out.views.push_back(baseline_augment(anchors[b], *cfg.baseline, cfg.baseline_params, rng));
    }
    return out;
  }
  const ImportanceVector s = m.importance_vector();
  const DistortionVector dist = cfg.variant == FreraVariant::no_distortion ? DistortionVector::zeros(s.size())
                                                                           : compute_distortion(s, cfg.threshold);
  out.masks.reserve(anchors.size());
  for (std::size_t b = 0; b < anchors.size(); ++b) {
    Rng rng = view_rng(cfg.seed, step, b);
    out.masks.push_back(cfg.variant == FreraVariant::random_mask
                            ? random_crit_mask(s.size(), cfg.random_mask_proportion, rng)
                            : sample_crit_mask(s, cfg.tau_w, rng));
    out.views.push_back(augment(anchors[b], out.masks.back(), dist));
  }
  return out;
}

struct EpochRecord {
  std::size_t epoch = 0;
  double contrastive = 0.0;
  double regularizer = 0.0;
  double total = 0.0;
  double mask_mean = 0.0;
  double mi_lower_bound = 0.0;
  std::optional<double> probe_val_accuracy;

  friend bool operator==(const EpochRecord&, const EpochRecord&) = default;
};

inline void to_json(nlohmann::json& j, const EpochRecord& r) {
  j = {{"epoch", r.epoch},
       {"contrastive", r.contrastive},
       {"regularizer", r.regularizer},
       {"total", r.total},
       {"mask_mean", r.mask_mean},
       {"mi_lower_bound", r.mi_lower_bound}};
  if (r.probe_val_accuracy) j["probe_val_accuracy"] = *r.probe_val_accuracy;
}

inline void from_json(const nlohmann::json& j, EpochRecord& r) {
  r.epoch = j.at("epoch").get<std::size_t>();
  r.contrastive = j.at("contrastive").get<double>();
  r.regularizer = j.at("regularizer").get<double>();
  r.total = j.at("total").get<double>();
  r.mask_mean = j.at("mask_mean").get<double>();
  r.mi_lower_bound = j.at("mi_lower_bound").get<double>();
  r.probe_val_accuracy.reset();
  if (j.contains("probe_val_accuracy")) r.probe_val_accuracy = j["probe_val_accuracy"].get<double>();
}

struct Checkpoint {
  TrainConfig config;
  std::size_t length = 0;
  std::size_t channels = 0;
  std::size_t classes = 0;
  ModelState state;
  std::size_t epoch = 0;
  std::vector<EpochRecord> history;
  /// Encoder snapshot at the epoch with the best validation probe accuracy.
  std::optional<nn::Encoder> selected_encoder;
  std::size_t selected_epoch = 0;

  const nn::Encoder& evaluation_encoder() const { return selected_encoder ? *selected_encoder : state.encoder; }
};

// ---------------------------------------------------------------------------
// Linear probe

struct ProbeConfig {
  std::size_t iterations = 500;
  double lr = 0.1;
  std::size_t eval_every = 10;
};

struct ProbeResult {
  double val_accuracy = 0.0;        ///< at the selected iteration
  double test_accuracy = 0.0;       ///< at the selected iteration
  double best_test_accuracy = 0.0;  ///< best over all evaluation points
  double macro_f1 = 0.0;            ///< at the selected iteration
  std::size_t selected_iteration = 0;
  std::vector<int> missing_classes; ///< present in test, absent from train
};

inline double accuracy(std::span<const int> pred, std::span<const int> truth) {
  if (truth.empty()) return 0.0;
  std::size_t ok = 0;
  for (std::size_t i = 0; i < truth.size(); ++i) ok += pred[i] == truth[i];
  return static_cast<double>(ok) / static_cast<double>(truth.size());
}

/// Unweighted mean of per-class F1 over classes that occur in truth or predictions.
inline double macro_f1(std::span<const int> pred, std::span<const int> truth, std::size_t classes) {
  std::vector<double> tp(classes, 0), fp(classes, 0), fn(classes, 0);
  for (std::size_t i = 0; i < truth.size(); ++i) {
    if (pred[i] == truth[i]) {
      tp[truth[i]] += 1;
    } else {
      fp[pred[i]] += 1;
      fn[truth[i]] += 1;
    }
  }
  double sum = 0.0;
  std::size_t n = 0;
  for (std::size_t k = 0; k < classes; ++k) {
    const double denom = 2 * tp[k] + fp[k] + fn[k];
    if (denom == 0) continue;
    sum += 2 * tp[k] / denom;
    ++n;
  }
  return n ? sum / static_cast<double>(n) : 0.0;
}

/// Multinomial logistic regression trained by full-batch gradient descent on
/// standardized features. Features are (dim, N) matrices.
inline ProbeResult fit_linear_probe(const Eigen::MatrixXd& train_x, std::span<const int> train_y,
                                    const Eigen::MatrixXd& val_x, std::span<const int> val_y,
                                    const Eigen::MatrixXd& test_x, std::span<const int> test_y, std::size_t classes,
                                    const ProbeConfig& cfg = {}) {
  const Eigen::Index dim = train_x.rows(), n = train_x.cols();
  const auto K = static_cast<Eigen::Index>(classes);
  if (n == 0) throw DataError("linear probe: empty training set");
  const Eigen::VectorXd mean = train_x.rowwise().mean();
  Eigen::VectorXd sd = ((train_x.colwise() - mean).array().square().rowwise().mean()).sqrt().matrix();
  for (Eigen::Index i = 0; i < dim; ++i) sd(i) = std::max(sd(i), 1e-8);
  auto standardize = [&](const Eigen::MatrixXd& x) -> Eigen::MatrixXd {
    return sd.cwiseInverse().asDiagonal() * (x.colwise() - mean);
  };
  const Eigen::MatrixXd xs = standardize(train_x), vs = standardize(val_x), ts = standardize(test_x);

  ProbeResult res;
  std::vector<bool> in_train(classes, false), in_test(classes, false);
  for (int y : train_y) in_train[y] = true;
  for (int y : test_y) in_test[y] = true;
  for (std::size_t k = 0; k < classes; ++k)
    if (in_test[k] && !in_train[k]) res.missing_classes.push_back(static_cast<int>(k));

  Eigen::MatrixXd W = Eigen::MatrixXd::Zero(K, dim);
  Eigen::VectorXd bias = Eigen::VectorXd::Zero(K);
  Eigen::MatrixXd onehot = Eigen::MatrixXd::Zero(K, n);
  for (Eigen::Index i = 0; i < n; ++i) onehot(train_y[i], i) = 1.0;

  auto predict = [&](const Eigen::MatrixXd& x) {
    Eigen::MatrixXd logits = W * x;
    logits.colwise() += bias;
    std::vector<int> pred(static_cast<std::size_t>(x.cols()));
    for (Eigen::Index i = 0; i < x.cols(); ++i) {
      int best = -1;
      double bv = -std::numeric_limits<double>::infinity();
      for (Eigen::Index k = 0; k < K; ++k) {
        if (!in_train[k]) continue;
        if (logits(k, i) > bv) {
          bv = logits(k, i);
          best = static_cast<int>(k);
        }
      }
      pred[i] = best;
    }
    return pred;
  };

  double best_val = -1.0;
  const bool have_val = !val_y.empty();
  for (std::size_t it = 1; it <= cfg.iterations; ++it) {
    Eigen::MatrixXd logits = W * xs;
    logits.colwise() += bias;
    for (Eigen::Index k = 0; k < K; ++k)
      if (!in_train[k]) logits.row(k).setConstant(-1e30);
    const Eigen::RowVectorXd mx = logits.colwise().maxCoeff();
    Eigen::MatrixXd p = (logits.rowwise() - mx).array().exp();
    p.array().rowwise() /= p.colwise().sum().array();
    const Eigen::MatrixXd g = (p - onehot) / static_cast<double>(n);
    W -= cfg.lr * g * xs.transpose();
    bias -= cfg.lr * g.rowwise().sum();

    if (it % cfg.eval_every == 0 || it == cfg.iterations) {
      const auto tp = predict(ts);
      const double test_acc = accuracy(tp, test_y);
      res.best_test_accuracy = std::max(res.best_test_accuracy, test_acc);
      const double val_acc = have_val ? accuracy(predict(vs), val_y) : 0.0;
      const bool select = have_val ? val_acc > best_val : it == cfg.iterations;
      if (select) {
        best_val = val_acc;
        res.val_accuracy = val_acc;
        res.test_accuracy = test_acc;
        res.macro_f1 = macro_f1(tp, test_y, classes);
        res.selected_iteration = it;
      }
    }
  }
  return res;
}

/// Frozen-encoder representations (eval mode), (dim, N).
inline Eigen::MatrixXd encode_dataset(const nn::Encoder& encoder, const Dataset& data, std::size_t chunk = 256) {
  Eigen::MatrixXd out(encoder.output_dim(), static_cast<Eigen::Index>(data.size()));
  const auto L = static_cast<Eigen::Index>(data.length);
  for (std::size_t start = 0; start < data.size(); start += chunk) {
    const std::size_t count = std::min(chunk, data.size() - start);
    std::span<const TimeSeries> batch(data.samples.data() + start, count);
    const auto rep = encoder.forward(nn::stack_batch(batch), static_cast<Eigen::Index>(count), L, nn::Mode::eval);
    out.middleCols(static_cast<Eigen::Index>(start), static_cast<Eigen::Index>(count)) = rep;
  }
  return out;
}

inline ProbeResult probe_encoder(const nn::Encoder& encoder, const DatasetSplits& data, const ProbeConfig& cfg = {}) {
  const auto ytr = dataset_labels(data.train);
  const auto yva = data.val.empty() ? std::vector<int>{} : dataset_labels(data.val);
  const auto yte = dataset_labels(data.test);
  const Eigen::MatrixXd xva = data.val.empty() ? Eigen::MatrixXd(encoder.output_dim(), 0) : encode_dataset(encoder, data.val);
  return fit_linear_probe(encode_dataset(encoder, data.train), ytr, xva, yva, encode_dataset(encoder, data.test), yte,
                          data.train.classes, cfg);
}

inline ProbeResult linear_evaluate(const Checkpoint& ckpt, const DatasetSplits& data, const ProbeConfig& cfg = {}) {
  if (data.train.length != ckpt.length || data.train.channels != ckpt.channels)
    throw DataError("linear_evaluate: dataset shape " + std::to_string(data.train.length) + "x" +
                    std::to_string(data.train.channels) + " does not match checkpoint " + std::to_string(ckpt.length) +
                    "x" + std::to_string(ckpt.channels));
  return probe_encoder(ckpt.evaluation_encoder(), data, cfg);
}

// ---------------------------------------------------------------------------
// Pretraining

struct TrainHooks {
  std::function<void(const EpochRecord&)> on_epoch;
  /// Called with the state at the moment of a numerical failure, before the throw.
  std::function<void(const Checkpoint&)> on_failure;
};

inline Checkpoint pretrain(const DatasetSplits& data, const TrainConfig& cfg, const TrainHooks& hooks = {}) {
  cfg.validate();
  const Dataset& train = data.train;
  if (train.empty()) throw DataError("pretrain: empty training split");
  train.validate();

  Checkpoint ck;
  ck.config = cfg;
  ck.length = train.length;
  ck.channels = train.channels;
  ck.classes = train.classes;
  Rng init_rng = derive_rng(cfg.seed, 1);
  ck.state = ModelState::create(train.length, train.channels, cfg, init_rng);

  const BatchSampler sampler(train, cfg.batch_size, cfg.balanced_sampling);
  Rng sampler_rng = derive_rng(cfg.seed, 2);
  const bool train_importance = !cfg.baseline && cfg.variant != FreraVariant::random_mask;
  const bool probe = cfg.probe_every > 0 && !data.val.empty() && data.val.labeled() && train.labeled();
  double best_probe = -1.0;
  std::uint64_t step = 0;

  for (std::size_t epoch = 1; epoch <= cfg.epochs; ++epoch) {
    EpochRecord rec;
    rec.epoch = epoch;
    const auto batches = sampler.epoch(sampler_rng);
    for (std::size_t bi = 0; bi < batches.size(); ++bi, ++step) {
      std::vector<TimeSeries> anchors;
      anchors.reserve(batches[bi].size());
      for (auto i : batches[bi]) anchors.push_back(train.samples[i]);
      const BatchViews views = make_views(ck.state, anchors, cfg, step);
      auto fail = [&](const std::string& what) {
        ck.epoch = epoch;
        if (hooks.on_failure) hooks.on_failure(ck);
        throw NumericalError("pretrain: " + what + " at epoch " + std::to_string(epoch) + ", batch " +
                             std::to_string(bi));
      };
      StepOutput out;
      try {
        out = contrastive_step(ck.state, anchors, views, cfg.tau, cfg.lambda, true, train_importance);
      } catch (const NumericalError& e) {
        fail(e.what());
      }
      if (!std::isfinite(out.loss.total)) fail("non-finite loss");
      auto params = ck.state.model_parameters();
      std::vector<nn::Parameter*> s{&ck.state.importance};
      try {
        nn::detail::require_finite_grads(params);
        if (train_importance) nn::detail::require_finite_grads(s);
      } catch (const NumericalError& e) {
        fail(e.what());
      }
      ck.state.model_optimizer.step(params);
      if (train_importance) ck.state.importance_optimizer.step(s);
      ck.state.encoder.update_running(out.cache);

      rec.contrastive += out.loss.contrastive;
      rec.regularizer += out.loss.regularizer;
      rec.total += out.loss.total;
      rec.mask_mean += out.mask_mean;
      rec.mi_lower_bound += std::log(static_cast<double>(anchors.size())) - out.loss.contrastive;
    }
    const double steps = static_cast<double>(batches.size());
    rec.contrastive /= steps;
    rec.regularizer /= steps;
    rec.total /= steps;
    rec.mask_mean /= steps;
    rec.mi_lower_bound /= steps;

    if (probe && (epoch % cfg.probe_every == 0 || epoch == cfg.epochs)) {
      const auto res = probe_encoder(ck.state.encoder, {train, data.val, data.val, {}}, {100, 0.1, 100});
      rec.probe_val_accuracy = res.val_accuracy;
      if (res.val_accuracy > best_probe) {
        best_probe = res.val_accuracy;
        ck.selected_encoder = ck.state.encoder;
        ck.selected_epoch = epoch;
      }
    }
    ck.history.push_back(rec);
    ck.epoch = epoch;
    if (hooks.on_epoch) hooks.on_epoch(rec);
  }
  return ck;
}

} // namespace frera
