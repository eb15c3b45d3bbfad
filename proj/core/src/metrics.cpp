#include "mmfuse/metrics.hpp"

#include <algorithm>
#include <fstream>
#include <numeric>
#include <sstream>

#include "json.hpp"
#include "mmfuse/errors.hpp"

namespace mmfuse {

using nlohmann::json;

double error_rate(std::span<const int> predictions, std::span<const int> labels) {
  if (predictions.empty()) throw MetricError("error_rate: empty input");
  if (predictions.size() != labels.size()) {
    throw MetricError("error_rate: " + std::to_string(predictions.size()) + " predictions vs " +
                      std::to_string(labels.size()) + " labels");
  }
  std::size_t wrong = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    if (predictions[i] != labels[i]) ++wrong;
  }
  return static_cast<double>(wrong) / static_cast<double>(predictions.size());
}

double auc(std::span<const double> scores, std::span<const int> labels) {
  if (scores.size() != labels.size() || scores.empty()) {
    throw MetricError("auc: need equal, non-empty scores and labels");
  }
  const std::size_t n = scores.size();
  std::size_t n_pos = 0;
  for (int y : labels) {
    if (y != 0 && y != 1) throw MetricError("auc: labels must be binary 0/1");
    n_pos += static_cast<std::size_t>(y);
  }
  const std::size_t n_neg = n - n_pos;
  if (n_pos == 0 || n_neg == 0) {
    throw MetricError("auc: undefined with a single class (" + std::to_string(n_pos) +
                      " positives of " + std::to_string(n) + ")");
  }

  std::vector<std::size_t> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::sort(order.begin(), order.end(),
            [&](std::size_t a, std::size_t b) { return scores[a] < scores[b]; });

  // average ranks over tied score groups
  double pos_rank_sum = 0.0;
  std::size_t i = 0;
  while (i < n) {
    std::size_t j = i;
    while (j + 1 < n && scores[order[j + 1]] == scores[order[i]]) ++j;
    const double avg_rank = 0.5 * static_cast<double>((i + 1) + (j + 1));
    for (std::size_t t = i; t <= j; ++t) {
      if (labels[order[t]] == 1) pos_rank_sum += avg_rank;
    }
    i = j + 1;
  }
  const double np = static_cast<double>(n_pos), nn = static_cast<double>(n_neg);
  return (pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn);
}

double over_learn_error(std::span<const int> multimodal_predictions,
                        const std::vector<std::vector<int>>& per_modality_predictions,
                        std::span<const int> labels) {
  const std::size_t n = labels.size();
  if (multimodal_predictions.size() != n) {
    throw MetricError("over_learn_error: prediction/label counts disagree");
  }
  for (const auto& pm : per_modality_predictions) {
    if (pm.size() != n) throw MetricError("over_learn_error: per-modality size disagrees");
  }
  if (per_modality_predictions.empty()) {
    throw MetricError("over_learn_error: no per-modality predictions");
  }
  std::size_t qualifying = 0, wrong = 0;
  for (std::size_t i = 0; i < n; ++i) {
    bool some_modality_right = false;
    for (const auto& pm : per_modality_predictions) {
      if (pm[i] == labels[i]) {
        some_modality_right = true;
        break;
      }
    }
    if (!some_modality_right) continue;
    ++qualifying;
    if (multimodal_predictions[i] != labels[i]) ++wrong;
  }
  if (qualifying == 0) {
    throw MetricError("over_learn_error: no sample is predicted correctly by any single modality");
  }
  return static_cast<double>(wrong) / static_cast<double>(qualifying);
}

std::string MetricsReport::to_json_string() const {
  json j;
  j["format_version"] = 1;
  j["error"] = error;
  j["auc"] = auc ? json(*auc) : json(nullptr);
  j["per_modality_error"] = per_modality_error;
  j["over_learn"] = over_learn ? json(*over_learn) : json(nullptr);
  j["sample_count"] = sample_count;
  j["seed"] = seed;
  j["method"] = method;
  j["beta"] = beta;
  j["final_train_loss"] = final_train_loss;
  j["best_dev_metric"] = best_dev_metric;
  j["config_fingerprint"] = config_fingerprint;
  j["dataset_fingerprint"] = dataset_fingerprint;
  j["error_std"] = error_std ? json(*error_std) : json(nullptr);
  j["auc_std"] = auc_std ? json(*auc_std) : json(nullptr);
  j["n_seeds"] = n_seeds;
  j["timestamp"] = timestamp;
  return j.dump(2) + "\n";
}

MetricsReport MetricsReport::from_json_string(const std::string& text) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("metrics: invalid JSON: ") + e.what());
  }
  try {
    MetricsReport r;
    r.error = j.at("error").get<double>();
    if (!j.at("auc").is_null()) r.auc = j.at("auc").get<double>();
    r.per_modality_error = j.at("per_modality_error").get<std::vector<double>>();
    if (!j.at("over_learn").is_null()) r.over_learn = j.at("over_learn").get<double>();
    r.sample_count = j.at("sample_count").get<std::size_t>();
    r.seed = j.at("seed").get<std::uint64_t>();
    r.method = j.at("method").get<std::string>();
    r.beta = j.at("beta").get<double>();
    r.final_train_loss = j.at("final_train_loss").get<double>();
    r.best_dev_metric = j.at("best_dev_metric").get<double>();
    r.config_fingerprint = j.at("config_fingerprint").get<std::string>();
    r.dataset_fingerprint = j.at("dataset_fingerprint").get<std::string>();
    if (!j.at("error_std").is_null()) r.error_std = j.at("error_std").get<double>();
    if (!j.at("auc_std").is_null()) r.auc_std = j.at("auc_std").get<double>();
    r.n_seeds = j.at("n_seeds").get<std::size_t>();
    r.timestamp = j.at("timestamp").get<std::string>();
    return r;
  } catch (const json::exception& e) {
    throw IoError(std::string("metrics: missing or malformed field: ") + e.what());
  }
}

MetricsReport MetricsReport::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open metrics file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return from_json_string(buf.str());
}

}  // namespace mmfuse
