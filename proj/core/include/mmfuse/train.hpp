#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/dataset.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/optimizer.hpp"

namespace mmfuse {

enum class DevMetric { kError, kAuc };

std::string to_string(DevMetric m);
DevMetric dev_metric_from_string(const std::string& s);

struct TrainingConfig {
  std::size_t batch_size = 100;
  std::size_t max_epochs = 200;
  std::optional<std::size_t> max_iterations;
  std::size_t eval_every_epochs = 1;
  std::size_t patience = 15;  // evaluations without improvement before stopping
  std::uint64_t seed = 1;
  DevMetric dev_metric = DevMetric::kError;

  void collect_violations(std::vector<std::string>& out) const;
};

struct TrainLogEntry {
  std::size_t iteration;
  double train_loss;  // mean batch loss since the previous evaluation
  double dev_metric;
};

struct TrainResult {
  std::vector<TrainLogEntry> log;
  double best_dev_metric = 0.0;
  std::size_t best_iteration = 0;
  std::size_t total_iterations = 0;
  bool early_stopped = false;
};

// Epoch loop with seeded shuffling of the training split, periodic dev
// evaluation, and patience-based early stopping. The bundle is left holding
// the parameters of the best dev evaluation, not the last.
TrainResult train(ModelBundle& bundle, const Dataset& data, const FusionConfig& fusion,
                  const OptimizerConfig& opt, const TrainingConfig& cfg);

std::string train_log_to_csv(const std::vector<TrainLogEntry>& log,
                             const std::string& config_fingerprint,
                             const std::string& metric_name);

}  // namespace mmfuse
