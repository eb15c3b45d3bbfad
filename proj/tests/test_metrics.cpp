#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "mmfuse/errors.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/rng.hpp"

using namespace mmfuse;

namespace {

// exhaustive O(n^2) pairwise comparison, ties worth one half
double auc_pairwise_oracle(const std::vector<double>& scores, const std::vector<int>& labels) {
  double wins = 0.0;
  std::size_t pairs = 0;
  for (std::size_t i = 0; i < scores.size(); ++i) {
    if (labels[i] != 1) continue;
    for (std::size_t j = 0; j < scores.size(); ++j) {
      if (labels[j] != 0) continue;
      ++pairs;
      if (scores[i] > scores[j]) {
        wins += 1.0;
      } else if (scores[i] == scores[j]) {
        wins += 0.5;
      }
    }
  }
  return wins / static_cast<double>(pairs);
}

}  // namespace

TEST_CASE("error_rate counting") {
  std::vector<int> labels{0, 1, 1, 0};
  CHECK(error_rate(std::vector<int>{0, 1, 1, 0}, labels) == 0.0);
  CHECK(error_rate(std::vector<int>{1, 0, 0, 1}, labels) == 1.0);
  CHECK(error_rate(std::vector<int>{0, 1, 1, 1}, labels) == 0.25);
  CHECK_THROWS_AS(error_rate(std::vector<int>{}, std::vector<int>{}), MetricError);
  CHECK_THROWS_AS(error_rate(std::vector<int>{1}, labels), MetricError);
}

TEST_CASE("error_rate is invariant to sample order") {
  Rng rng(1);
  std::vector<int> preds, labels;
  for (int i = 0; i < 200; ++i) {
    preds.push_back(static_cast<int>(rng.index(3)));
    labels.push_back(static_cast<int>(rng.index(3)));
  }
  const double base = error_rate(preds, labels);
  std::vector<std::size_t> order(200);
  for (std::size_t i = 0; i < 200; ++i) order[i] = i;
  rng.shuffle(order);
  std::vector<int> p2, l2;
  for (std::size_t i : order) {
    p2.push_back(preds[i]);
    l2.push_back(labels[i]);
  }
  CHECK(error_rate(p2, l2) == base);
}

TEST_CASE("auc frozen example") {
  // positives 0.35 and 0.8 against negatives 0.1 and 0.4: 3 of 4 pairs won
  std::vector<double> scores{0.1, 0.4, 0.35, 0.8};
  std::vector<int> labels{0, 0, 1, 1};
  CHECK(auc(scores, labels) == doctest::Approx(0.75).epsilon(1e-15));
}

TEST_CASE("auc edge cases") {
  CHECK(auc(std::vector<double>{0.1, 0.2, 0.8, 0.9}, std::vector<int>{0, 0, 1, 1}) == 1.0);
  CHECK(auc(std::vector<double>{0.5, 0.5, 0.5, 0.5}, std::vector<int>{0, 1, 0, 1}) == 0.5);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{1, 1}), MetricError);
  CHECK_THROWS_AS(auc(std::vector<double>{0.1, 0.2}, std::vector<int>{0, 2}), MetricError);
  CHECK_THROWS_AS(auc(std::vector<double>{}, std::vector<int>{}), MetricError);
}

TEST_CASE("auc equals the exhaustive pairwise count") {
  Rng rng(2);
  for (int trial = 0; trial < 60; ++trial) {
    const std::size_t n = 20 + rng.index(200);
    std::vector<double> scores;
    std::vector<int> labels;
    bool with_ties = trial % 2 == 0;
    for (std::size_t i = 0; i < n; ++i) {
      double s = rng.uniform();
      if (with_ties) s = std::round(s * 8.0) / 8.0;  // heavy ties
      scores.push_back(s);
      labels.push_back(static_cast<int>(rng.index(2)));
    }
    // both classes must be present
    labels[0] = 0;
    labels[1] = 1;
    const double fast = auc(scores, labels);
    const double slow = auc_pairwise_oracle(scores, labels);
    if (with_ties) {
      CHECK(std::abs(fast - slow) < 1e-12);
    } else {
      CHECK(fast == slow);
    }
  }
}

TEST_CASE("over_learn_error hand-built five sample case") {
  // per-modality correctness mask (label 1 everywhere):
  //   sample:      0  1  2  3  4
  //   modality A:  1  0  1  0  0
  //   modality B:  0  0  1  1  0
  // qualifying subset (someone right): {0, 2, 3}
  std::vector<int> labels{1, 1, 1, 1, 1};
  std::vector<std::vector<int>> per_mod{{1, 0, 1, 0, 0}, {0, 0, 1, 1, 0}};
  // multimodal right on 0, wrong on 2 and 3 -> 2 of 3
  std::vector<int> multi{1, 1, 0, 0, 1};
  CHECK(over_learn_error(multi, per_mod, labels) == doctest::Approx(2.0 / 3.0).epsilon(1e-15));

  // multimodal correct on the whole qualifying subset -> 0
  std::vector<int> perfect{1, 0, 1, 1, 0};
  CHECK(over_learn_error(perfect, per_mod, labels) == 0.0);
}

TEST_CASE("over_learn_error with no qualifying samples is an error") {
  std::vector<int> labels{1, 1};
  std::vector<std::vector<int>> per_mod{{0, 0}, {0, 0}};
  std::vector<int> multi{1, 1};
  CHECK_THROWS_AS(over_learn_error(multi, per_mod, labels), MetricError);
  CHECK_THROWS_AS(over_learn_error(multi, {}, labels), MetricError);
}

TEST_CASE("over_learn_error equals the error rate on a brute-force subset") {
  Rng rng(3);
  for (int trial = 0; trial < 30; ++trial) {
    const std::size_t n = 50;
    std::vector<int> labels, multi;
    std::vector<std::vector<int>> per_mod(3, std::vector<int>(n));
    for (std::size_t i = 0; i < n; ++i) {
      labels.push_back(static_cast<int>(rng.index(3)));
      multi.push_back(static_cast<int>(rng.index(3)));
      for (auto& pm : per_mod) pm[i] = static_cast<int>(rng.index(3));
    }
    per_mod[0][0] = labels[0];  // subset is never empty
    // independent recomputation of the qualifying mask
    std::vector<int> sub_multi, sub_labels;
    for (std::size_t i = 0; i < n; ++i) {
      bool any = false;
      for (const auto& pm : per_mod) any = any || pm[i] == labels[i];
      if (any) {
        sub_multi.push_back(multi[i]);
        sub_labels.push_back(labels[i]);
      }
    }
    CHECK(over_learn_error(multi, per_mod, labels) == error_rate(sub_multi, sub_labels));
  }
}

TEST_CASE("metrics report JSON round-trip") {
  MetricsReport rep;
  rep.error = 0.123456789012345;
  rep.auc = 0.87;
  rep.per_modality_error = {0.3, 0.4};
  rep.over_learn = 0.05;
  rep.sample_count = 4000;
  rep.seed = 42;
  rep.method = "mulmix";
  rep.beta = 0.5;
  rep.final_train_loss = 1.5;
  rep.best_dev_metric = 0.11;
  rep.config_fingerprint = "cfg123";
  rep.dataset_fingerprint = "ds456";
  rep.n_seeds = 1;
  rep.timestamp = "2000-01-01T00:00:00Z";
  MetricsReport back = MetricsReport::from_json_string(rep.to_json_string());
  CHECK(back.error == rep.error);
  CHECK(back.auc == rep.auc);
  CHECK(back.per_modality_error == rep.per_modality_error);
  CHECK(back.over_learn == rep.over_learn);
  CHECK(back.seed == rep.seed);
  CHECK(back.method == rep.method);
  CHECK(back.config_fingerprint == rep.config_fingerprint);
  CHECK(back.dataset_fingerprint == rep.dataset_fingerprint);
  CHECK(!back.error_std.has_value());
  CHECK_THROWS_AS(MetricsReport::from_json_string("nope"), IoError);
  CHECK_THROWS_AS(MetricsReport::from_json_string("{}"), IoError);
}
