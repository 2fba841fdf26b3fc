#pragma once

// InfoNCE over cosine similarities, the L1 mask regularizer and their sum.

#include <algorithm>
#include <cmath>
#include <span>

#include <Eigen/Dense>

#include "frera/error.hpp"

namespace frera {

using Eigen::MatrixXd;
using Eigen::VectorXd;

inline constexpr double kNormFloor = 1e-12;

struct SimilarityResult {
  MatrixXd sim;               ///< (B, B), entry (i, j) = cos(anchor i, view j)
  int floored_norms = 0;      ///< embeddings whose norm hit the floor
};

/// Column-wise embeddings: anchors and views are (dim, B).
inline SimilarityResult cosine_similarity_matrix(const MatrixXd& anchors, const MatrixXd& views) {
  if (anchors.cols() != views.cols() || anchors.rows() != views.rows())
    throw DataError("cosine_similarity_matrix: anchor/view shape mismatch");
  SimilarityResult out;
  auto normalize = [&](const MatrixXd& m) {
    MatrixXd u = m;
    for (Eigen::Index j = 0; j < m.cols(); ++j) {
      double n = m.col(j).norm();
      if (n < kNormFloor) {
        n = kNormFloor;
        ++out.floored_norms;
      }
      u.col(j) /= n;
    }
    return u;
  };
  out.sim = normalize(anchors).transpose() * normalize(views);
  return out;
}

/// Gradients of a loss with respect to anchors and views, given dLoss/dsim.
inline void cosine_similarity_backward(const MatrixXd& anchors, const MatrixXd& views,
                                       const MatrixXd& dsim, MatrixXd& danchors, MatrixXd& dviews) {
  const Eigen::Index B = anchors.cols();
  VectorXd na(B), nv(B);
  MatrixXd ua = anchors, uv = views;
  for (Eigen::Index j = 0; j < B; ++j) {
    na(j) = std::max(anchors.col(j).norm(), kNormFloor);
    nv(j) = std::max(views.col(j).norm(), kNormFloor);
    ua.col(j) /= na(j);
    uv.col(j) /= nv(j);
  }
  MatrixXd dua = uv * dsim.transpose();
  MatrixXd duv = ua * dsim;
  danchors.resize(anchors.rows(), B);
  dviews.resize(views.rows(), B);
  for (Eigen::Index j = 0; j < B; ++j) {
    danchors.col(j) = (dua.col(j) - ua.col(j) * ua.col(j).dot(dua.col(j))) / na(j);
    dviews.col(j) = (duv.col(j) - uv.col(j) * uv.col(j).dot(duv.col(j))) / nv(j);
  }
}

/// -(1/B) sum_i log softmax_j(sim(i, j) / tau)[i]; the positive of anchor i is view i
/// and the denominator runs over all B views.
inline double infonce_loss(const MatrixXd& sim, double tau, MatrixXd* dsim = nullptr) {
  const Eigen::Index B = sim.rows();
  if (sim.cols() != B) throw DataError("infonce_loss: similarity matrix must be square");
  if (B < 2) throw DataError("infonce_loss: batch size must be >= 2");
  if (!(tau > 0.0)) throw UsageError("infonce_loss: tau must be positive");
  double loss = 0.0;
  if (dsim) dsim->resize(B, B);
  for (Eigen::Index i = 0; i < B; ++i) {
    const VectorXd logits = sim.row(i).transpose() / tau;
    const double mx = logits.maxCoeff();
    const VectorXd ex = (logits.array() - mx).exp();
    const double z = ex.sum();
    loss += -(logits(i) - mx - std::log(z));
    if (dsim) {
      VectorXd g = ex / z;
      g(i) -= 1.0;
      dsim->row(i) = g.transpose() / (tau * static_cast<double>(B));
    }
  }
  return loss / static_cast<double>(B);
}

/// (1/F) sum_f |w_f|.
inline double l1_regularizer(std::span<const double> w) {
  if (w.empty()) return 0.0;
  double acc = 0.0;
  for (double v : w) acc += std::abs(v);
  return acc / static_cast<double>(w.size());
}

struct LossBreakdown {
  double contrastive = 0.0;
  double regularizer = 0.0;
  double total = 0.0;
  double lambda = 0.0;
};

inline LossBreakdown total_loss(double contrastive, double regularizer, double lambda) {
  if (!(lambda >= 0.0)) throw UsageError("lambda must be >= 0");
  return {contrastive, regularizer, contrastive + lambda * regularizer, lambda};
}

} // namespace frera
