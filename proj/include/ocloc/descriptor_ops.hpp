#pragma once

#include <algorithm>
#include <cmath>
#include <cstddef>
#include <numeric>
#include <stdexcept>
#include <utility>
#include <vector>

#include <Eigen/Dense>

namespace ocloc {

using Descriptor = Eigen::VectorXd;

// Per-channel spatial activations of a feature map. Activations must be
// non-negative (post-rectification).
struct FeatureMap {
  std::vector<std::vector<double>> channels;
};

// Generalized-mean pooling: component c = ((1/|X_c|) sum x^p)^(1/p).
inline Descriptor gem_pool(const FeatureMap& fm, double p = 3.0) {
  if (p < 1.0) {
    throw std::invalid_argument("gem_pool: p must be >= 1");
  }
  Descriptor out(static_cast<Eigen::Index>(fm.channels.size()));
  for (size_t c = 0; c < fm.channels.size(); ++c) {
    const auto& xs = fm.channels[c];
    if (xs.empty()) {
      throw std::invalid_argument("gem_pool: empty channel");
    }
    double acc = 0.0;
    for (double x : xs) {
      if (x < 0.0) {
        throw std::invalid_argument("gem_pool: negative activation");
      }
      acc += std::pow(x, p);
    }
    out(static_cast<Eigen::Index>(c)) =
        std::pow(acc / static_cast<double>(xs.size()), 1.0 / p);
  }
  return out;
}

// Softmax classifier head with optional additive angular margin. With
// margin = 0 and scale = 1 the loss is plain softmax cross-entropy over
// the raw logits W_j^T x + b_j; with margin > 0 the features and weight
// columns are L2-normalized and the margin is added to the target-class
// angle before scaling.
struct ClassifierHead {
  Eigen::MatrixXd W;  // D x n, column j = class j weights
  Eigen::VectorXd b;  // n
  double margin = 0.0;
  double scale = 1.0;
};

inline double classification_loss(
    const std::vector<std::pair<Descriptor, int>>& batch,
    const ClassifierHead& head) {
  if (batch.empty()) {
    throw std::invalid_argument("classification_loss: empty batch");
  }
  const Eigen::Index n = head.W.cols();
  if (head.b.size() != n) {
    throw std::invalid_argument("classification_loss: W/b size mismatch");
  }
  double total = 0.0;
  for (const auto& [x, y] : batch) {
    if (x.size() != head.W.rows()) {
      throw std::invalid_argument("classification_loss: dimension mismatch");
    }
    if (y < 0 || y >= n) {
      throw std::invalid_argument("classification_loss: class id out of range");
    }
    Eigen::VectorXd logits(n);
    if (head.margin > 0.0) {
      const Eigen::VectorXd xn = x.normalized();
      for (Eigen::Index j = 0; j < n; ++j) {
        const double cos_th =
            std::clamp(head.W.col(j).normalized().dot(xn), -1.0, 1.0);
        double angle = std::acos(cos_th);
        if (j == y) angle += head.margin;
        logits(j) = head.scale * std::cos(angle) + head.b(j);
      }
    } else {
      logits = head.scale * (head.W.transpose() * x) + head.b;
    }
    // log-sum-exp, stabilized
    const double m = logits.maxCoeff();
    const double lse = m + std::log((logits.array() - m).exp().sum());
    total += lse - logits(y);
  }
  return total / static_cast<double>(batch.size());
}

inline Descriptor l2_normalize(const Descriptor& v) {
  const double norm = v.norm();
  if (norm <= 1e-12) {
    throw std::invalid_argument("l2_normalize: near-zero vector");
  }
  return v / norm;
}

struct PcaModel {
  Eigen::VectorXd mean;
  Eigen::MatrixXd basis;  // D x D', orthonormal columns, descending variance
};

// Eigendecomposition of the covariance of mean-centered data. Sign
// convention: first nonzero component of each basis column is positive.
inline PcaModel pca_fit(const std::vector<Descriptor>& descriptors,
                        int out_dim) {
  if (descriptors.size() < 2) {
    throw std::invalid_argument("pca_fit: need at least 2 samples");
  }
  const Eigen::Index dim = descriptors.front().size();
  if (out_dim < 1 || out_dim > dim ||
      static_cast<size_t>(out_dim) > descriptors.size()) {
    throw std::invalid_argument("pca_fit: invalid output dimension");
  }
  Eigen::MatrixXd data(dim, static_cast<Eigen::Index>(descriptors.size()));
  for (size_t i = 0; i < descriptors.size(); ++i) {
    if (descriptors[i].size() != dim) {
      throw std::invalid_argument("pca_fit: inconsistent dimensions");
    }
    data.col(static_cast<Eigen::Index>(i)) = descriptors[i];
  }
  PcaModel model;
  model.mean = data.rowwise().mean();
  data.colwise() -= model.mean;
  const Eigen::MatrixXd cov =
      data * data.transpose() / static_cast<double>(descriptors.size() - 1);
  Eigen::SelfAdjointEigenSolver<Eigen::MatrixXd> eig(cov);
  // eigenvalues ascending; take the top out_dim from the back
  const double max_ev = eig.eigenvalues().maxCoeff();
  const double rank_tol = std::max(max_ev, 1.0) * 1e-12;
  model.basis.resize(dim, out_dim);
  for (int k = 0; k < out_dim; ++k) {
    const Eigen::Index src = dim - 1 - k;
    if (eig.eigenvalues()(src) <= rank_tol) {
      throw std::invalid_argument(
          "pca_fit: requested dimension exceeds data rank");
    }
    Eigen::VectorXd col = eig.eigenvectors().col(src);
    for (Eigen::Index i = 0; i < dim; ++i) {
      if (std::abs(col(i)) > 1e-12) {
        if (col(i) < 0.0) col = -col;
        break;
      }
    }
    model.basis.col(k) = col;
  }
  return model;
}

inline Descriptor pca_apply(const PcaModel& model, const Descriptor& v) {
  if (v.size() != model.mean.size()) {
    throw std::invalid_argument("pca_apply: dimension mismatch");
  }
  return model.basis.transpose() * (v - model.mean);
}

struct KnnResult {
  size_t index;
  double distance;
};

// Exact k-NN by Euclidean distance; k capped at database size; ties broken
// by lower index.
inline std::vector<KnnResult> knn_search(const Descriptor& query,
                                         const std::vector<Descriptor>& database,
                                         size_t k) {
  if (database.empty()) {
    throw std::invalid_argument("knn_search: empty database");
  }
  if (k < 1) {
    throw std::invalid_argument("knn_search: k must be >= 1");
  }
  k = std::min(k, database.size());
  std::vector<KnnResult> all(database.size());
  for (size_t i = 0; i < database.size(); ++i) {
    all[i] = {i, (database[i] - query).norm()};
  }
  std::partial_sort(all.begin(), all.begin() + static_cast<long>(k), all.end(),
                    [](const KnnResult& a, const KnnResult& b) {
                      return a.distance != b.distance ? a.distance < b.distance
                                                      : a.index < b.index;
                    });
  all.resize(k);
  return all;
}

}  // namespace ocloc
