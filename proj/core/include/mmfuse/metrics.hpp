#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace mmfuse {

// Fraction mispredicted. Throws MetricError on empty input.
double error_rate(std::span<const int> predictions, std::span<const int> labels);

// Probability that a random positive outranks a random negative, ties
// counting one half; computed from average ranks in O(n log n). Throws
// MetricError unless both classes are present.
double auc(std::span<const double> scores, std::span<const int> labels);

// Error rate of the multimodal predictions restricted to the samples where
// at least one single-modality model is correct. Throws MetricError when
// that subset is empty.
double over_learn_error(std::span<const int> multimodal_predictions,
                        const std::vector<std::vector<int>>& per_modality_predictions,
                        std::span<const int> labels);

// Test-split summary of one run; serialized as metrics.json.
struct MetricsReport {
  double error = 0.0;
  std::optional<double> auc;  // binary tasks only
  std::vector<double> per_modality_error;
  std::optional<double> over_learn;
  std::size_t sample_count = 0;
  std::uint64_t seed = 0;
  std::string method;  // fusion kind label
  double beta = 0.0;
  double final_train_loss = 0.0;
  double best_dev_metric = 0.0;
  std::string config_fingerprint;
  std::string dataset_fingerprint;
  // Filled by multi-seed aggregation; single runs leave them unset.
  std::optional<double> error_std;
  std::optional<double> auc_std;
  std::size_t n_seeds = 1;
  std::string timestamp;  // the only field allowed to differ between reruns

  std::string to_json_string() const;
  static MetricsReport from_json_string(const std::string& text);
  static MetricsReport load(const std::string& path);
};

}  // namespace mmfuse
