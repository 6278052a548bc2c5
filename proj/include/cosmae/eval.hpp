#pragma once

#include <algorithm>
#include <cmath>
#include <cstdint>
#include <vector>

#include "cosmae/mae.hpp"

namespace cosmae {

// Images plus a binary label matrix [N x L]. Every sample must carry at
// least one positive label.
struct MultiLabelEvalSet {
  std::vector<Tensor<float>> images;
  Tensor<float> labels;

  std::int64_t size() const { return static_cast<std::int64_t>(images.size()); }
  std::int64_t n_labels() const { return labels.cols(); }

  void validate() const {
    if (labels.rank() != 2 || labels.rows() != size()) {
      throw ConfigError("eval set: label matrix does not match image count");
    }
    if (labels.cols() < 2) throw ConfigError("eval set: need at least 2 labels");
    for (std::int64_t i = 0; i < labels.rows(); ++i) {
      bool any = false;
      for (std::int64_t j = 0; j < labels.cols(); ++j) {
        const float v = labels.at(i, j);
        if (v != 0.0f && v != 1.0f) throw ConfigError("eval set: labels must be 0/1");
        any |= (v == 1.0f);
      }
      if (!any) throw ConfigError("eval set: sample without any positive label");
    }
  }
};

// Frozen-encoder feature extraction: unmasked forward pass, mean over patch
// tokens, no gradients.
template <typename T>
Tensor<T> extract_features(const MAEConfig& cfg, const ParamSet<T>& encoder_params,
                           const std::vector<Tensor<T>>& images) {
  return encoder_features(cfg, encoder_params, images);
}

namespace detail {

// k nearest rows of `features` to the query, Euclidean distance, distance
// ties broken by lower training index. `exclude` skips one index (leave-self-
// out during fitting).
template <typename T>
std::vector<std::int64_t> k_nearest(const Tensor<T>& features, const T* query, std::int64_t k,
                                    std::int64_t exclude) {
  const std::int64_t n = features.rows(), d = features.cols();
  std::vector<std::pair<double, std::int64_t>> dist;
  dist.reserve(static_cast<std::size_t>(n));
  for (std::int64_t i = 0; i < n; ++i) {
    if (i == exclude) continue;
    double s = 0.0;
    const T* row = &features.data[static_cast<std::size_t>(i * d)];
    for (std::int64_t j = 0; j < d; ++j) {
      const double diff = static_cast<double>(row[j]) - static_cast<double>(query[j]);
      s += diff * diff;
    }
    dist.emplace_back(s, i);
  }
  std::partial_sort(dist.begin(), dist.begin() + static_cast<std::ptrdiff_t>(k), dist.end());
  std::vector<std::int64_t> out(static_cast<std::size_t>(k));
  for (std::int64_t i = 0; i < k; ++i) out[static_cast<std::size_t>(i)] = dist[static_cast<std::size_t>(i)].second;
  return out;
}

}  // namespace detail

// Multi-label kNN classifier: Bayesian posteriors over the count of positive
// labels among a point's k nearest training neighbors. Laplace smoothing `s`
// keeps all probabilities inside (0,1).
class MLkNN {
 public:
  template <typename T>
  static MLkNN fit(const Tensor<T>& features_train, const Tensor<float>& labels_train,
                   std::int64_t k, double s) {
    const std::int64_t n = features_train.rows();
    const std::int64_t n_labels = labels_train.cols();
    if (k <= 0) throw ConfigError("mlknn: k must be positive");
    if (k >= n) throw ConfigError("mlknn: k must be smaller than the training set");
    if (s <= 0.0) throw ConfigError("mlknn: smoothing must be positive");
    if (labels_train.rows() != n) throw ConfigError("mlknn: label/feature row mismatch");

    MLkNN model;
    model.k_ = k;
    model.s_ = s;
    model.features_ = features_train.template cast<double>();
    model.labels_ = labels_train;

    // Priors.
    model.prior1_.resize(static_cast<std::size_t>(n_labels));
    for (std::int64_t j = 0; j < n_labels; ++j) {
      double cnt = 0.0;
      for (std::int64_t i = 0; i < n; ++i) cnt += labels_train.at(i, j);
      model.prior1_[static_cast<std::size_t>(j)] = (s + cnt) / (2.0 * s + static_cast<double>(n));
    }

    // Count-conditional likelihoods from each training point's k neighbors,
    // leave-self-out.
    std::vector<std::vector<double>> pos_counts(
        static_cast<std::size_t>(n_labels), std::vector<double>(static_cast<std::size_t>(k + 1), 0.0));
    std::vector<std::vector<double>> neg_counts = pos_counts;
    for (std::int64_t i = 0; i < n; ++i) {
      const auto nbrs = detail::k_nearest(model.features_, &model.features_.data[static_cast<std::size_t>(
                                              i * model.features_.cols())],
                                          k, i);
      for (std::int64_t j = 0; j < n_labels; ++j) {
        std::int64_t c = 0;
        for (auto nb : nbrs) c += labels_train.at(nb, j) == 1.0f ? 1 : 0;
        if (labels_train.at(i, j) == 1.0f) {
          pos_counts[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)] += 1.0;
        } else {
          neg_counts[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)] += 1.0;
        }
      }
    }
    model.like1_.assign(static_cast<std::size_t>(n_labels),
                        std::vector<double>(static_cast<std::size_t>(k + 1), 0.0));
    model.like0_ = model.like1_;
    for (std::int64_t j = 0; j < n_labels; ++j) {
      double pos_total = 0.0, neg_total = 0.0;
      for (std::int64_t c = 0; c <= k; ++c) {
        pos_total += pos_counts[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        neg_total += neg_counts[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
      }
      for (std::int64_t c = 0; c <= k; ++c) {
        model.like1_[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)] =
            (s + pos_counts[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)]) /
            (s * static_cast<double>(k + 1) + pos_total);
        model.like0_[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)] =
            (s + neg_counts[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)]) /
            (s * static_cast<double>(k + 1) + neg_total);
      }
    }
    return model;
  }

  // Posterior P(label | neighbor count) per test point and label.
  template <typename T>
  Tensor<double> predict(const Tensor<T>& features_test) const {
    if (features_test.cols() != features_.cols()) {
      throw UsageError("mlknn: test feature dimension mismatch");
    }
    const std::int64_t n_test = features_test.rows();
    const std::int64_t n_labels = labels_.cols();
    Tensor<double> scores(Shape{n_test, n_labels});
    Tensor<double> ft = features_test.template cast<double>();
    for (std::int64_t i = 0; i < n_test; ++i) {
      const auto nbrs =
          detail::k_nearest(features_, &ft.data[static_cast<std::size_t>(i * ft.cols())], k_, -1);
      for (std::int64_t j = 0; j < n_labels; ++j) {
        std::int64_t c = 0;
        for (auto nb : nbrs) c += labels_.at(nb, j) == 1.0f ? 1 : 0;
        const double p1 = prior1_[static_cast<std::size_t>(j)] *
                          like1_[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        const double p0 = (1.0 - prior1_[static_cast<std::size_t>(j)]) *
                          like0_[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)];
        scores.at(i, j) = p1 / (p1 + p0);
      }
    }
    return scores;
  }

  std::int64_t k() const { return k_; }
  double prior(std::int64_t label) const { return prior1_.at(static_cast<std::size_t>(label)); }
  double likelihood_pos(std::int64_t label, std::int64_t count) const {
    return like1_.at(static_cast<std::size_t>(label)).at(static_cast<std::size_t>(count));
  }
  double likelihood_neg(std::int64_t label, std::int64_t count) const {
    return like0_.at(static_cast<std::size_t>(label)).at(static_cast<std::size_t>(count));
  }

 private:
  std::int64_t k_ = 0;
  double s_ = 1.0;
  Tensor<double> features_;
  Tensor<float> labels_;
  std::vector<double> prior1_;
  std::vector<std::vector<double>> like1_;  // [label][count]
  std::vector<std::vector<double>> like0_;
};

// Micro mean average precision: all (sample, label) pairs pooled into one
// list ranked by score (descending, ties broken by lower flat index), then
// AP = mean over positive pairs of precision at their rank.
inline double micro_map(const Tensor<double>& scores, const Tensor<float>& labels) {
  check_same_shape(scores, labels.cast<double>(), "micro_map");
  const std::int64_t n_pairs = scores.numel();
  std::vector<std::int64_t> order(static_cast<std::size_t>(n_pairs));
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
    const double sa = scores.data[static_cast<std::size_t>(a)];
    const double sb = scores.data[static_cast<std::size_t>(b)];
    if (sa != sb) return sa > sb;
    return a < b;
  });
  double n_pos = 0.0, ap_sum = 0.0;
  for (std::size_t rank = 0; rank < order.size(); ++rank) {
    if (labels.data[static_cast<std::size_t>(order[rank])] == 1.0f) {
      n_pos += 1.0;
      ap_sum += n_pos / static_cast<double>(rank + 1);
    }
  }
  if (n_pos == 0.0) throw UsageError("micro_map: no positive pairs");
  return ap_sum / n_pos;
}

// Per-label mean AP; labels without positives are skipped. Reported as an
// optional extra metric.
inline double macro_map(const Tensor<double>& scores, const Tensor<float>& labels) {
  const std::int64_t L = scores.cols();
  double sum = 0.0;
  std::int64_t used = 0;
  for (std::int64_t j = 0; j < L; ++j) {
    std::vector<std::pair<double, std::int64_t>> col;
    double n_pos_label = 0.0;
    for (std::int64_t i = 0; i < scores.rows(); ++i) {
      col.emplace_back(scores.at(i, j), i);
      n_pos_label += labels.at(i, j);
    }
    if (n_pos_label == 0.0) continue;
    std::sort(col.begin(), col.end(), [](const auto& a, const auto& b) {
      if (a.first != b.first) return a.first > b.first;
      return a.second < b.second;
    });
    double n_pos = 0.0, ap = 0.0;
    for (std::size_t rank = 0; rank < col.size(); ++rank) {
      if (labels.at(col[rank].second, j) == 1.0f) {
        n_pos += 1.0;
        ap += n_pos / static_cast<double>(rank + 1);
      }
    }
    sum += ap / n_pos;
    used += 1;
  }
  if (used == 0) throw UsageError("macro_map: no label with positives");
  return sum / static_cast<double>(used);
}

}  // namespace cosmae
