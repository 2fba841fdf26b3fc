#pragma once

// Fully-convolutional encoder and MLP projector with hand-written reverse-mode
// gradients, plus the SGD and Adam optimizers.
//
// Activations are column-major matrices of shape (channels, batch * length);
// column b * L + t holds timestamp t of sample b.

#include <cmath>
#include <cstdint>
#include <span>
#include <string>
#include <vector>

#include <Eigen/Dense>

#include "frera/error.hpp"
#include "frera/random.hpp"
#include "frera/spectral.hpp"

namespace frera::nn {

using Matrix = Eigen::MatrixXd;
using Vector = Eigen::VectorXd;

struct Parameter {
  std::string name;
  Matrix value;
  Matrix grad;

  Parameter() = default;
  Parameter(std::string n, Matrix v)
      : name(std::move(n)), value(std::move(v)), grad(Matrix::Zero(value.rows(), value.cols())) {}

  void zero_grad() { grad.setZero(value.rows(), value.cols()); }
};

/// Non-trainable state (normalization statistics).
struct Buffer {
  std::string name;
  Matrix value;
};

enum class Mode { train, eval };

inline void kaiming_uniform(Matrix& w, Eigen::Index fan_in, Rng& rng) {
  const double bound = std::sqrt(6.0 / static_cast<double>(fan_in));
  std::uniform_real_distribution<double> dist(-bound, bound);
  for (Eigen::Index j = 0; j < w.cols(); ++j)
    for (Eigen::Index i = 0; i < w.rows(); ++i) w(i, j) = dist(rng);
}

/// Stack a batch of equally-shaped series into a (D, B * L) matrix.
inline Matrix stack_batch(std::span<const TimeSeries> batch) {
  if (batch.empty()) throw DataError("stack_batch: empty batch");
  const auto L = static_cast<Eigen::Index>(batch.front().length());
  const auto D = static_cast<Eigen::Index>(batch.front().channels());
  Matrix x(D, L * static_cast<Eigen::Index>(batch.size()));
  for (std::size_t b = 0; b < batch.size(); ++b) {
    const auto& s = batch[b];
    if (static_cast<Eigen::Index>(s.length()) != L || static_cast<Eigen::Index>(s.channels()) != D)
      throw DataError("stack_batch: sample " + std::to_string(b) + " has a different shape");
    for (Eigen::Index c = 0; c < D; ++c)
      for (Eigen::Index t = 0; t < L; ++t)
        x(c, static_cast<Eigen::Index>(b) * L + t) = s.at(static_cast<std::size_t>(t),
                                                          static_cast<std::size_t>(c));
  }
  return x;
}

/// Inverse of stack_batch for sample b.
inline TimeSeries unstack_sample(const Matrix& x, Eigen::Index b, Eigen::Index length) {
  TimeSeries out = TimeSeries::zeros(static_cast<std::size_t>(length),
                                     static_cast<std::size_t>(x.rows()));
  for (Eigen::Index c = 0; c < x.rows(); ++c)
    for (Eigen::Index t = 0; t < length; ++t)
      out.at(static_cast<std::size_t>(t), static_cast<std::size_t>(c)) = x(c, b * length + t);
  return out;
}

/// 1-D convolution with "same" padding (left pad (k-1)/2) and no bias;
/// a batch normalization always follows it.
class Conv1d {
public:
  Conv1d() = default;
  Conv1d(std::string name, int in_channels, int out_channels, int kernel)
      : weight(name + ".weight", Matrix::Zero(out_channels, in_channels * kernel)),
        in_channels_(in_channels), out_channels_(out_channels), kernel_(kernel) {}

  Parameter weight;

  int in_channels() const noexcept { return in_channels_; }
  int out_channels() const noexcept { return out_channels_; }
  int kernel() const noexcept { return kernel_; }
  int pad_left() const noexcept { return (kernel_ - 1) / 2; }

  void reset(Rng& rng) { kaiming_uniform(weight.value, in_channels_ * kernel_, rng); }

  Matrix im2col(const Matrix& x, Eigen::Index batch, Eigen::Index length) const {
    const Eigen::Index k = kernel_, pad = pad_left();
    Matrix cols = Matrix::Zero(in_channels_ * k, batch * length);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index t = 0; t < length; ++t) {
        const Eigen::Index col = b * length + t;
        for (Eigen::Index j = 0; j < k; ++j) {
          const Eigen::Index src = t + j - pad;
          if (src < 0 || src >= length) continue;
          for (Eigen::Index c = 0; c < in_channels_; ++c)
            cols(c * k + j, col) = x(c, b * length + src);
        }
      }
    }
    return cols;
  }

  Matrix col2im(const Matrix& dcols, Eigen::Index batch, Eigen::Index length) const {
    const Eigen::Index k = kernel_, pad = pad_left();
    Matrix dx = Matrix::Zero(in_channels_, batch * length);
    for (Eigen::Index b = 0; b < batch; ++b) {
      for (Eigen::Index t = 0; t < length; ++t) {
        const Eigen::Index col = b * length + t;
        for (Eigen::Index j = 0; j < k; ++j) {
          const Eigen::Index src = t + j - pad;
          if (src < 0 || src >= length) continue;
          for (Eigen::Index c = 0; c < in_channels_; ++c)
            dx(c, b * length + src) += dcols(c * k + j, col);
        }
      }
    }
    return dx;
  }

  Matrix forward(const Matrix& x, Eigen::Index batch, Eigen::Index length, Matrix& cols) const {
    if (x.rows() != in_channels_ || x.cols() != batch * length)
      throw DataError("Conv1d '" + weight.name + "': input shape mismatch");
    cols = im2col(x, batch, length);
    return weight.value * cols;
  }

  /// Accumulates the weight gradient; returns dx when requested.
  Matrix backward(const Matrix& dy, const Matrix& cols, Eigen::Index batch, Eigen::Index length,
                  bool need_input_grad) {
    weight.grad.noalias() += dy * cols.transpose();
    if (!need_input_grad) return {};
    Matrix dcols = weight.value.transpose() * dy;
    return col2im(dcols, batch, length);
  }

private:
  int in_channels_ = 0;
  int out_channels_ = 0;
  int kernel_ = 0;
};

/// Per-channel normalization over all (sample, timestamp) columns.
class BatchNorm {
public:
  static constexpr double kEps = 1e-5;

  BatchNorm() = default;
  BatchNorm(const std::string& name, int channels, double momentum = 0.9)
      : gamma(name + ".gamma", Matrix::Ones(channels, 1)),
        beta(name + ".beta", Matrix::Zero(channels, 1)),
        running_mean{name + ".running_mean", Matrix::Zero(channels, 1)},
        running_var{name + ".running_var", Matrix::Ones(channels, 1)}, momentum_(momentum) {}

  Parameter gamma;
  Parameter beta;
  Buffer running_mean;
  Buffer running_var;

  struct Cache {
    Mode mode = Mode::train;
    Matrix xhat;
    Vector inv_std;
    Vector batch_mean;
    Vector batch_var;
    Eigen::Index count = 0;
  };

  Matrix forward(const Matrix& x, Mode mode, Cache& cache) const {
    cache.mode = mode;
    cache.count = x.cols();
    if (mode == Mode::train) {
      cache.batch_mean = x.rowwise().mean();
      Matrix centered = x.colwise() - cache.batch_mean;
      cache.batch_var = centered.array().square().rowwise().mean();
      cache.inv_std = (cache.batch_var.array() + kEps).rsqrt();
      cache.xhat = cache.inv_std.asDiagonal() * centered;
    } else {
      cache.inv_std = (running_var.value.col(0).array() + kEps).rsqrt();
      cache.xhat = cache.inv_std.asDiagonal() * (x.colwise() - running_mean.value.col(0));
    }
    Matrix y = gamma.value.col(0).asDiagonal() * cache.xhat;
    y.colwise() += beta.value.col(0);
    return y;
  }

  Matrix backward(const Matrix& dy, const Cache& cache) {
    gamma.grad.col(0) += (dy.array() * cache.xhat.array()).rowwise().sum().matrix();
    beta.grad.col(0) += dy.rowwise().sum();
    Matrix dxhat = gamma.value.col(0).asDiagonal() * dy;
    if (cache.mode == Mode::eval) return cache.inv_std.asDiagonal() * dxhat;
    const double n = static_cast<double>(cache.count);
    Vector sum_d = dxhat.rowwise().sum();
    Vector sum_dx = (dxhat.array() * cache.xhat.array()).rowwise().sum().matrix();
    Matrix dx = n * dxhat;
    dx.colwise() -= sum_d;
    dx -= sum_dx.asDiagonal() * cache.xhat;
    return (cache.inv_std / n).asDiagonal() * dx;
  }

  /// running <- momentum * running + (1 - momentum) * batch (unbiased variance).
  void update_running(const Cache& cache) {
    if (cache.mode != Mode::train) return;
    const double n = static_cast<double>(cache.count);
    const double unbias = n > 1 ? n / (n - 1.0) : 1.0;
    running_mean.value.col(0) = momentum_ * running_mean.value.col(0) + (1.0 - momentum_) * cache.batch_mean;
    running_var.value.col(0) =
        momentum_ * running_var.value.col(0) + (1.0 - momentum_) * unbias * cache.batch_var;
  }

private:
  double momentum_ = 0.9;
};

class Linear {
public:
  Linear() = default;
  Linear(const std::string& name, int in, int out)
      : weight(name + ".weight", Matrix::Zero(out, in)), bias(name + ".bias", Matrix::Zero(out, 1)) {}

  Parameter weight;
  Parameter bias;

  void reset(Rng& rng) {
    kaiming_uniform(weight.value, weight.value.cols(), rng);
    bias.value.setZero();
  }

  Matrix forward(const Matrix& x) const {
    if (x.rows() != weight.value.cols()) throw DataError("Linear '" + weight.name + "': input dim mismatch");
    Matrix y = weight.value * x;
    y.colwise() += bias.value.col(0);
    return y;
  }

  Matrix backward(const Matrix& dy, const Matrix& x) {
    weight.grad.noalias() += dy * x.transpose();
    bias.grad.col(0) += dy.rowwise().sum();
    return weight.value.transpose() * dy;
  }
};

/// Filter counts and kernel sizes of the three convolution blocks.
struct EncoderProfile {
  std::vector<int> filters{128, 256, 128};
  std::vector<int> kernels{8, 5, 3};

  static EncoderProfile full() { return {}; }
  static EncoderProfile small() { return {{32, 64, 32}, {8, 5, 3}}; }

  static EncoderProfile named(const std::string& name) {
    if (name == "full") return full();
    if (name == "small") return small();
    throw UsageError("unknown encoder profile '" + name + "' (expected small|full)");
  }

  int output_dim() const { return filters.back(); }
  friend bool operator==(const EncoderProfile&, const EncoderProfile&) = default;
};

/// conv -> batch norm -> ReLU, three times, then global average pooling.
class Encoder {
public:
  Encoder() = default;
  Encoder(int in_channels, const EncoderProfile& profile) : in_channels_(in_channels), profile_(profile) {
    if (profile.filters.size() != profile.kernels.size() || profile.filters.empty())
      throw UsageError("EncoderProfile: filters and kernels must be non-empty and equal length");
    int c = in_channels;
    for (std::size_t i = 0; i < profile.filters.size(); ++i) {
      const std::string prefix = "encoder.block" + std::to_string(i);
      convs_.emplace_back(prefix + ".conv", c, profile.filters[i], profile.kernels[i]);
      norms_.emplace_back(prefix + ".bn", profile.filters[i]);
      c = profile.filters[i];
    }
  }

  struct Cache {
    Mode mode = Mode::train;
    Eigen::Index batch = 0;
    Eigen::Index length = 0;
    std::vector<Matrix> cols;
    std::vector<BatchNorm::Cache> norms;
    std::vector<Matrix> activations;
  };

  int in_channels() const noexcept { return in_channels_; }
  int output_dim() const { return profile_.output_dim(); }
  const EncoderProfile& profile() const noexcept { return profile_; }

  void reset(Rng& rng) {
    for (auto& conv : convs_) conv.reset(rng);
  }

  /// x is (D, B * L); returns (output_dim, B).
  Matrix forward(const Matrix& x, Eigen::Index batch, Eigen::Index length, Mode mode, Cache& cache) const {
    if (x.rows() != in_channels_ || x.cols() != batch * length)
      throw DataError("encoder: expected input of shape (" + std::to_string(in_channels_) + ", " +
                      std::to_string(batch * length) + ")");
    cache.mode = mode;
    cache.batch = batch;
    cache.length = length;
    cache.cols.assign(convs_.size(), {});
    cache.norms.assign(convs_.size(), {});
    cache.activations.assign(convs_.size(), {});
    Matrix h = x;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      Matrix z = convs_[i].forward(h, batch, length, cache.cols[i]);
      h = norms_[i].forward(z, mode, cache.norms[i]).cwiseMax(0.0);
      cache.activations[i] = h;
    }
    Matrix rep(h.rows(), batch);
    for (Eigen::Index b = 0; b < batch; ++b) rep.col(b) = h.middleCols(b * length, length).rowwise().mean();
    return rep;
  }

  Matrix forward(const Matrix& x, Eigen::Index batch, Eigen::Index length, Mode mode) const {
    Cache cache;
    return forward(x, batch, length, mode, cache);
  }

  /// Accumulates parameter gradients; returns dLoss/dx when requested.
  Matrix backward(const Matrix& drep, const Cache& cache, bool need_input_grad) {
    const Eigen::Index B = cache.batch, L = cache.length;
    Matrix dh(drep.rows(), B * L);
    for (Eigen::Index b = 0; b < B; ++b)
      dh.middleCols(b * L, L) = (drep.col(b) / static_cast<double>(L)).replicate(1, L);
    for (std::size_t k = convs_.size(); k-- > 0;) {
      dh = (cache.activations[k].array() > 0.0).select(dh, 0.0);
      Matrix dz = norms_[k].backward(dh, cache.norms[k]);
      dh = convs_[k].backward(dz, cache.cols[k], B, L, need_input_grad || k > 0);
    }
    return need_input_grad ? dh : Matrix{};
  }

  void update_running(const Cache& cache) {
    for (std::size_t i = 0; i < norms_.size(); ++i) norms_[i].update_running(cache.norms[i]);
  }

  std::vector<Parameter*> parameters() {
    std::vector<Parameter*> out;
    for (std::size_t i = 0; i < convs_.size(); ++i) {
      out.push_back(&convs_[i].weight);
      out.push_back(&norms_[i].gamma);
      out.push_back(&norms_[i].beta);
    }
    return out;
  }

  std::vector<Buffer*> buffers() {
    std::vector<Buffer*> out;
    for (auto& n : norms_) {
      out.push_back(&n.running_mean);
      out.push_back(&n.running_var);
    }
    return out;
  }

private:
  int in_channels_ = 0;
  EncoderProfile profile_;
  std::vector<Conv1d> convs_;
  std::vector<BatchNorm> norms_;
};

/// affine -> ReLU -> affine.
class Projector {
public:
  Projector() = default;
  Projector(int in, int hidden = 128, int out = 128)
      : first("projector.fc0", in, hidden), second("projector.fc1", hidden, out) {}

  Linear first;
  Linear second;

  struct Cache {
    Matrix input;
    Matrix hidden;
  };

  int input_dim() const { return static_cast<int>(first.weight.value.cols()); }
  int output_dim() const { return static_cast<int>(second.weight.value.rows()); }

  void reset(Rng& rng) {
    first.reset(rng);
    second.reset(rng);
  }

  Matrix forward(const Matrix& rep, Cache& cache) const {
    if (rep.rows() != input_dim())
      throw DataError("projector: representation dim " + std::to_string(rep.rows()) + " != " +
                      std::to_string(input_dim()));
    cache.input = rep;
    cache.hidden = first.forward(rep).cwiseMax(0.0);
    return second.forward(cache.hidden);
  }

  Matrix forward(const Matrix& rep) const {
    Cache cache;
    return forward(rep, cache);
  }

  Matrix backward(const Matrix& dout, const Cache& cache) {
    Matrix dh = second.backward(dout, cache.hidden);
    dh = (cache.hidden.array() > 0.0).select(dh, 0.0);
    return first.backward(dh, cache.input);
  }

  std::vector<Parameter*> parameters() {
    return {&first.weight, &first.bias, &second.weight, &second.bias};
  }
};

struct SgdConfig {
  double lr = 0.03;
  double momentum = 0.9;
  double weight_decay = 0.0;
};

struct AdamConfig {
  double lr = 0.01;
  double beta1 = 0.9;
  double beta2 = 0.999;
  double eps = 1e-8;
};

namespace detail {

inline void require_finite_grads(std::span<Parameter* const> params) {
  for (const Parameter* p : params)
    if (!p->grad.allFinite()) throw NumericalError("optimizer: non-finite gradient in '" + p->name + "'");
}

inline void match_state(std::vector<Matrix>& state, std::span<Parameter* const> params) {
  if (state.size() == params.size()) return;
  state.clear();
  for (const Parameter* p : params) state.push_back(Matrix::Zero(p->value.rows(), p->value.cols()));
}

} // namespace detail

/// p <- p - lr * v, v <- momentum * v + (g + weight_decay * p).
class Sgd {
public:
  Sgd() = default;
  explicit Sgd(SgdConfig cfg) : config(cfg) {
    if (!(cfg.lr > 0.0)) throw UsageError("SGD learning rate must be positive");
  }

  SgdConfig config;
  std::vector<Matrix> velocity;

  void step(std::span<Parameter* const> params) {
    detail::require_finite_grads(params);
    detail::match_state(velocity, params);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      Matrix g = p.grad;
      if (config.weight_decay != 0.0) g += config.weight_decay * p.value;
      if (config.momentum != 0.0) {
        velocity[i] = config.momentum * velocity[i] + g;
        p.value -= config.lr * velocity[i];
      } else {
        p.value -= config.lr * g;
      }
    }
  }
};

/// Bias-corrected Adam.
class Adam {
public:
  Adam() = default;
  explicit Adam(AdamConfig cfg) : config(cfg) {
    if (!(cfg.lr > 0.0)) throw UsageError("Adam learning rate must be positive");
  }

  AdamConfig config;
  std::vector<Matrix> first_moment;
  std::vector<Matrix> second_moment;
  std::int64_t steps = 0;

  void step(std::span<Parameter* const> params) {
    detail::require_finite_grads(params);
    detail::match_state(first_moment, params);
    detail::match_state(second_moment, params);
    ++steps;
    const double c1 = 1.0 - std::pow(config.beta1, static_cast<double>(steps));
    const double c2 = 1.0 - std::pow(config.beta2, static_cast<double>(steps));
    for (std::size_t i = 0; i < params.size(); ++i) {
      Parameter& p = *params[i];
      first_moment[i] = config.beta1 * first_moment[i] + (1.0 - config.beta1) * p.grad;
      second_moment[i] =
          config.beta2 * second_moment[i] + (1.0 - config.beta2) * p.grad.cwiseProduct(p.grad);
      const Matrix mhat = first_moment[i] / c1;
      const Matrix vhat = second_moment[i] / c2;
      p.value.array() -= config.lr * mhat.array() / (vhat.array().sqrt() + config.eps);
    }
  }
};

} // namespace frera::nn
