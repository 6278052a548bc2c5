#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include "cosmae/eval.hpp"
#include "support/oracles.hpp"
#include "support/testutil.hpp"

using namespace cosmae;
using testutil::random_tensor;

namespace {

std::vector<std::vector<double>> to_rows(const Tensor<float>& t) {
  std::vector<std::vector<double>> out;
  for (std::int64_t i = 0; i < t.rows(); ++i) {
    std::vector<double> row;
    for (std::int64_t j = 0; j < t.cols(); ++j) row.push_back(t.at(i, j));
    out.push_back(std::move(row));
  }
  return out;
}

std::vector<std::vector<int>> to_label_rows(const Tensor<float>& t) {
  std::vector<std::vector<int>> out;
  for (std::int64_t i = 0; i < t.rows(); ++i) {
    std::vector<int> row;
    for (std::int64_t j = 0; j < t.cols(); ++j) row.push_back(t.at(i, j) == 1.0f ? 1 : 0);
    out.push_back(std::move(row));
  }
  return out;
}

}  // namespace

TEST_CASE("mlknn priors") {
  SUBCASE("all-positive label column with s=1 gives (1+N)/(2+N)") {
    const std::int64_t n = 7;
    Rng rng(1);
    Tensor<float> feats = random_tensor<float>(Shape{n, 3}, rng);
    Tensor<float> labels(Shape{n, 2});
    for (std::int64_t i = 0; i < n; ++i) {
      labels.at(i, 0) = 1.0f;
      labels.at(i, 1) = i % 2 == 0 ? 1.0f : 0.0f;
    }
    MLkNN m = MLkNN::fit(feats, labels, 3, 1.0);
    CHECK(m.prior(0) == doctest::Approx((1.0 + n) / (2.0 + n)).epsilon(1e-12));
    CHECK(m.prior(1) == doctest::Approx((1.0 + 4.0) / (2.0 + n)).epsilon(1e-12));
  }

  SUBCASE("k >= N is a configuration error") {
    Tensor<float> feats(Shape{3, 2});
    Tensor<float> labels(Shape{3, 2}, 1.0f);
    CHECK_THROWS_AS(MLkNN::fit(feats, labels, 3, 1.0), ConfigError);
    CHECK_THROWS_AS(MLkNN::fit(feats, labels, 2, 0.0), ConfigError);
  }
}

TEST_CASE("mlknn likelihood tables: 3 points, k=1, hand enumeration") {
  // Features on a line: 0, 0.1, 10. Nearest neighbors (leave-self-out):
  // point0 -> point1, point1 -> point0, point2 -> point1.
  Tensor<float> feats(Shape{3, 1});
  feats.at(0, 0) = 0.0f;
  feats.at(1, 0) = 0.1f;
  feats.at(2, 0) = 10.0f;
  // Label column: y = (1, 0, 1); a second column keeps L >= 2 legal.
  Tensor<float> labels(Shape{3, 2});
  labels.at(0, 0) = 1.0f;
  labels.at(1, 0) = 0.0f;
  labels.at(2, 0) = 1.0f;
  for (std::int64_t i = 0; i < 3; ++i) labels.at(i, 1) = 1.0f;

  MLkNN m = MLkNN::fit(feats, labels, 1, 1.0);
  // Neighbor positive counts for label 0: c = (0, 1, 0).
  // Positives {0,2} both have c=0: k[0]=2, k[1]=0 -> P(c|H1) = (3/4, 1/4).
  // Negative {1} has c=1: k~[0]=0, k~[1]=1 -> P(c|H0) = (1/3, 2/3).
  CHECK(m.prior(0) == doctest::Approx(3.0 / 5.0).epsilon(1e-12));
  CHECK(m.likelihood_pos(0, 0) == doctest::Approx(3.0 / 4.0).epsilon(1e-12));
  CHECK(m.likelihood_pos(0, 1) == doctest::Approx(1.0 / 4.0).epsilon(1e-12));
  CHECK(m.likelihood_neg(0, 0) == doctest::Approx(1.0 / 3.0).epsilon(1e-12));
  CHECK(m.likelihood_neg(0, 1) == doctest::Approx(2.0 / 3.0).epsilon(1e-12));
}

TEST_CASE("mlknn against the brute-force oracle") {
  Rng rng(2);

  SUBCASE("predictions match exhaustive enumeration on small sets to 1e-9") {
    for (int trial = 0; trial < 10; ++trial) {
      const std::int64_t n = 5 + static_cast<std::int64_t>(rng.index(4));  // 5..8
      const std::int64_t L = 2 + static_cast<std::int64_t>(rng.index(2));
      const std::int64_t k = 1 + static_cast<std::int64_t>(rng.index(3));
      Tensor<float> feats = random_tensor<float>(Shape{n, 3}, rng);
      Tensor<float> labels(Shape{n, L});
      for (std::int64_t i = 0; i < n; ++i) {
        bool any = false;
        for (std::int64_t j = 0; j < L; ++j) {
          labels.at(i, j) = rng.uniform() < 0.5 ? 1.0f : 0.0f;
          any |= labels.at(i, j) == 1.0f;
        }
        if (!any) labels.at(i, 0) = 1.0f;
      }
      Tensor<float> test = random_tensor<float>(Shape{4, 3}, rng);

      MLkNN m = MLkNN::fit(feats, labels, k, 1.0);
      Tensor<double> scores = m.predict(test);

      auto oracle = oracles::mlknn_fit_bruteforce(to_rows(feats), to_label_rows(labels), k, 1.0);
      auto oracle_scores = oracles::mlknn_predict_bruteforce(oracle, to_rows(feats),
                                                             to_label_rows(labels), to_rows(test), k);
      for (std::int64_t i = 0; i < 4; ++i) {
        for (std::int64_t j = 0; j < L; ++j) {
          CHECK(std::fabs(scores.at(i, j) -
                          oracle_scores[static_cast<std::size_t>(i)][static_cast<std::size_t>(j)]) < 1e-9);
        }
      }
    }
  }

  SUBCASE("duplicate training points match the oracle under the tie-breaking rule") {
    Tensor<float> feats(Shape{6, 2});
    const float vals[6][2] = {{0, 0}, {1, 1}, {0.5f, 0.5f}, {0.5f, 0.5f}, {3, 3}, {2, 0}};
    for (int i = 0; i < 6; ++i) {
      feats.at(i, 0) = vals[i][0];
      feats.at(i, 1) = vals[i][1];
    }
    Tensor<float> labels(Shape{6, 2});
    for (int i = 0; i < 6; ++i) {
      labels.at(i, 0) = i % 2 == 0 ? 1.0f : 0.0f;
      labels.at(i, 1) = 1.0f;
    }
    MLkNN m = MLkNN::fit(feats, labels, 2, 1.0);
    auto oracle = oracles::mlknn_fit_bruteforce(to_rows(feats), to_label_rows(labels), 2, 1.0);
    for (std::int64_t j = 0; j < 2; ++j) {
      for (std::int64_t c = 0; c <= 2; ++c) {
        CHECK(m.likelihood_pos(j, c) ==
              doctest::Approx(oracle.like1[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)])
                  .epsilon(1e-12));
        CHECK(m.likelihood_neg(j, c) ==
              doctest::Approx(oracle.like0[static_cast<std::size_t>(j)][static_cast<std::size_t>(c)])
                  .epsilon(1e-12));
      }
    }
  }
}

TEST_CASE("mlknn prediction properties") {
  Rng rng(3);

  SUBCASE("a pure cluster pushes its label strictly above all others") {
    // Cluster A near the origin carries label 0 only; cluster B far away
    // carries label 1 only. A probe inside cluster A must rank label 0 first.
    Tensor<float> feats(Shape{8, 2});
    Tensor<float> labels(Shape{8, 3});
    for (int i = 0; i < 4; ++i) {
      feats.at(i, 0) = 0.1f * static_cast<float>(i);
      feats.at(i, 1) = 0.05f * static_cast<float>(i);
      labels.at(i, 0) = 1.0f;
      labels.at(i, 2) = 1.0f;  // shared background label
    }
    for (int i = 4; i < 8; ++i) {
      feats.at(i, 0) = 10.0f + 0.1f * static_cast<float>(i);
      feats.at(i, 1) = 10.0f;
      labels.at(i, 1) = 1.0f;
      labels.at(i, 2) = 1.0f;
    }
    MLkNN m = MLkNN::fit(feats, labels, 3, 1.0);
    Tensor<float> probe(Shape{1, 2});
    probe.at(0, 0) = 0.1f;
    probe.at(0, 1) = 0.05f;
    Tensor<double> scores = m.predict(probe);
    CHECK(scores.at(0, 0) > scores.at(0, 1));

    SUBCASE("posterior values lie strictly inside (0,1)") {
      for (double v : scores.data) {
        CHECK(v > 0.0);
        CHECK(v < 1.0);
      }
    }
  }

  SUBCASE("invariant to a rigid rotation of all features") {
    const std::int64_t n = 12, d = 4;
    Tensor<float> feats = random_tensor<float>(Shape{n, d}, rng);
    Tensor<float> labels(Shape{n, 3});
    for (std::int64_t i = 0; i < n; ++i) {
      labels.at(i, static_cast<std::int64_t>(rng.index(3))) = 1.0f;
    }
    Tensor<float> test = random_tensor<float>(Shape{5, d}, rng);

    // Random orthogonal matrix via Gram-Schmidt in double precision.
    Tensor<double> q(Shape{d, d});
    for (auto& v : q.data) v = rng.normal();
    for (std::int64_t c = 0; c < d; ++c) {
      for (std::int64_t p = 0; p < c; ++p) {
        double dot = 0.0;
        for (std::int64_t r = 0; r < d; ++r) dot += q.at(r, c) * q.at(r, p);
        for (std::int64_t r = 0; r < d; ++r) q.at(r, c) -= dot * q.at(r, p);
      }
      double norm = 0.0;
      for (std::int64_t r = 0; r < d; ++r) norm += q.at(r, c) * q.at(r, c);
      norm = std::sqrt(norm);
      for (std::int64_t r = 0; r < d; ++r) q.at(r, c) /= norm;
    }
    auto rotate = [&](const Tensor<float>& x) {
      Tensor<float> out(x.shape);
      for (std::int64_t i = 0; i < x.rows(); ++i) {
        for (std::int64_t j = 0; j < d; ++j) {
          double s = 0.0;
          for (std::int64_t r = 0; r < d; ++r) s += static_cast<double>(x.at(i, r)) * q.at(r, j);
          out.at(i, j) = static_cast<float>(s);
        }
      }
      return out;
    };

    MLkNN base = MLkNN::fit(feats, labels, 4, 1.0);
    MLkNN rotated = MLkNN::fit(rotate(feats), labels, 4, 1.0);
    Tensor<double> s1 = base.predict(test);
    Tensor<double> s2 = rotated.predict(rotate(test));
    for (std::size_t i = 0; i < s1.data.size(); ++i) {
      CHECK(s1.data[i] == doctest::Approx(s2.data[i]).epsilon(1e-12));
    }
  }
}

TEST_CASE("micro mAP") {
  SUBCASE("perfect separation gives 1.0") {
    Tensor<double> scores(Shape{2, 2});
    scores.at(0, 0) = 0.9;
    scores.at(0, 1) = 0.2;
    scores.at(1, 0) = 0.8;
    scores.at(1, 1) = 0.1;
    Tensor<float> labels(Shape{2, 2});
    labels.at(0, 0) = 1.0f;
    labels.at(1, 0) = 1.0f;
    CHECK(micro_map(scores, labels) == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("all pairs positive gives 1.0 regardless of scores") {
    Rng rng(4);
    Tensor<double> scores(Shape{3, 3});
    for (auto& v : scores.data) v = rng.uniform();
    Tensor<float> labels(Shape{3, 3}, 1.0f);
    CHECK(micro_map(scores, labels) == doctest::Approx(1.0).epsilon(1e-12));
  }

  SUBCASE("hand-enumerated 3-pair list gives (1 + 2/3)/2") {
    // pairs ranked by score: (1,0.9), (0,0.8), (1,0.7) laid out as one row
    Tensor<double> scores(Shape{1, 3});
    scores.at(0, 0) = 0.9;
    scores.at(0, 1) = 0.8;
    scores.at(0, 2) = 0.7;
    Tensor<float> labels(Shape{1, 3});
    labels.at(0, 0) = 1.0f;
    labels.at(0, 2) = 1.0f;
    const double expected = (1.0 / 1.0 + 2.0 / 3.0) / 2.0;
    CHECK(micro_map(scores, labels) == doctest::Approx(expected).epsilon(1e-12));
    CHECK(micro_map(scores, labels) == doctest::Approx(0.8333).epsilon(1e-4));
    CHECK(oracles::average_precision_direct({{1, 0.9}, {0, 0.8}, {1, 0.7}}) ==
          doctest::Approx(expected).epsilon(1e-12));
  }

  SUBCASE("agrees with the direct oracle on random matrices") {
    Rng rng(5);
    for (int trial = 0; trial < 20; ++trial) {
      Tensor<double> scores(Shape{6, 4});
      for (auto& v : scores.data) v = rng.uniform();
      Tensor<float> labels(Shape{6, 4});
      bool any = false;
      for (auto& v : labels.data) {
        v = rng.uniform() < 0.4 ? 1.0f : 0.0f;
        any |= v == 1.0f;
      }
      if (!any) labels.data[0] = 1.0f;
      std::vector<std::pair<int, double>> flat;
      for (std::int64_t i = 0; i < scores.numel(); ++i) {
        flat.emplace_back(labels.data[static_cast<std::size_t>(i)] == 1.0f ? 1 : 0,
                          scores.data[static_cast<std::size_t>(i)]);
      }
      CHECK(micro_map(scores, labels) ==
            doctest::Approx(oracles::average_precision_direct(flat)).epsilon(1e-12));
    }
  }

  SUBCASE("invariant under a strictly increasing score transform") {
    Rng rng(6);
    Tensor<double> scores(Shape{5, 3});
    for (auto& v : scores.data) v = rng.normal();
    Tensor<float> labels(Shape{5, 3});
    for (auto& v : labels.data) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
    labels.data[0] = 1.0f;
    const double base = micro_map(scores, labels);
    Tensor<double> transformed = scores;
    for (auto& v : transformed.data) v = std::atan(v) * 2.0 + 0.1 * v * v * v + v;
    CHECK(micro_map(transformed, labels) == doctest::Approx(base).epsilon(1e-12));
  }

  SUBCASE("swapping a positive below an adjacent negative never increases mAP") {
    Rng rng(7);
    for (int trial = 0; trial < 50; ++trial) {
      Tensor<double> scores(Shape{4, 4});
      for (auto& v : scores.data) v = rng.uniform();
      Tensor<float> labels(Shape{4, 4});
      for (auto& v : labels.data) v = rng.uniform() < 0.5 ? 1.0f : 0.0f;
      labels.data[3] = 1.0f;
      const double before = micro_map(scores, labels);

      // rank pairs, find an adjacent (positive, negative) pair, swap scores
      std::vector<std::int64_t> order(static_cast<std::size_t>(scores.numel()));
      std::iota(order.begin(), order.end(), 0);
      std::sort(order.begin(), order.end(), [&](std::int64_t a, std::int64_t b) {
        if (scores.data[static_cast<std::size_t>(a)] != scores.data[static_cast<std::size_t>(b)]) {
          return scores.data[static_cast<std::size_t>(a)] > scores.data[static_cast<std::size_t>(b)];
        }
        return a < b;
      });
      for (std::size_t r = 0; r + 1 < order.size(); ++r) {
        if (labels.data[static_cast<std::size_t>(order[r])] == 1.0f &&
            labels.data[static_cast<std::size_t>(order[r + 1])] == 0.0f) {
          std::swap(scores.data[static_cast<std::size_t>(order[r])],
                    scores.data[static_cast<std::size_t>(order[r + 1])]);
          break;
        }
      }
      CHECK(micro_map(scores, labels) <= before + 1e-12);
    }
  }

  SUBCASE("zero positives is a usage error") {
    Tensor<double> scores(Shape{2, 2}, 0.5);
    Tensor<float> labels(Shape{2, 2});
    CHECK_THROWS_AS(micro_map(scores, labels), UsageError);
  }
}

TEST_CASE("random encoder evaluates at chance level") {
  Rng rng(8);
  MAEConfig cfg;
  cfg.image_size = 16;
  cfg.channels = 2;
  cfg.patch_size = 4;
  cfg.enc_depth = 1;
  cfg.enc_heads = 2;
  cfg.enc_dim = 16;
  cfg.dec_depth = 1;
  cfg.dec_heads = 2;
  cfg.dec_dim = 16;
  MAEModel<float> model = init_mae_model<float>(cfg, rng);

  const std::int64_t n_train = 48, n_test = 48, L = 4;
  auto make_set = [&](std::int64_t n) {
    MultiLabelEvalSet set;
    set.labels = Tensor<float>(Shape{n, L});
    for (std::int64_t i = 0; i < n; ++i) {
      set.images.push_back(random_tensor<float>(Shape{2, 16, 16}, rng, 0.5));
      bool any = false;
      for (std::int64_t j = 0; j < L; ++j) {
        set.labels.at(i, j) = rng.uniform() < 0.5 ? 1.0f : 0.0f;
        any |= set.labels.at(i, j) == 1.0f;
      }
      if (!any) set.labels.at(i, static_cast<std::int64_t>(rng.index(L))) = 1.0f;
    }
    return set;
  };
  MultiLabelEvalSet train = make_set(n_train);
  MultiLabelEvalSet test = make_set(n_test);
  train.validate();
  test.validate();

  ParamSet<float> encoder = model.params.subset("encoder.");
  Tensor<float> tf = extract_features(cfg, encoder, train.images);
  Tensor<float> sf = extract_features(cfg, encoder, test.images);
  CHECK(tf.shape == Shape{n_train, 16});

  // identical images give identical features
  Tensor<float> twice = extract_features(cfg, encoder, {test.images[0], test.images[0]});
  for (std::int64_t j = 0; j < 16; ++j) CHECK(twice.at(0, j) == twice.at(1, j));

  MLkNN m = MLkNN::fit(tf, train.labels, 10, 1.0);
  const double map = micro_map(m.predict(sf), test.labels);
  double pos_rate = 0.0;
  for (float v : test.labels.data) pos_rate += v;
  pos_rate /= static_cast<double>(test.labels.numel());
  CHECK(std::fabs(map - pos_rate) < 0.1);
}
