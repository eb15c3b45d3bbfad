#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "json.hpp"
#include "mmfuse/dataset.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/metrics.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/optimizer.hpp"
#include "mmfuse/train.hpp"

namespace mmfuse {

struct ModelConfig {
  std::size_t embedding_dim = 16;
  // One entry applies to every modality, otherwise one entry per modality.
  std::vector<std::vector<std::size_t>> encoder_hidden = {{16}};
  std::vector<std::size_t> head_hidden = {16};
  Activation activation = Activation::kRelu;
  bool heads_on_raw_inputs = false;
  bool per_candidate_encoders = false;
  AddCombine add_combine = AddCombine::kSum;
};

struct DatasetConfig {
  enum class Source { kFile, kSynthetic };
  Source source = Source::kSynthetic;
  FileDatasetSpec file;
  SyntheticSpec synthetic;

  std::size_t modality_count() const;
};

// One self-contained declarative experiment: data, model, objective,
// optimization, seeds, output location. Serializes to/from the JSON config
// file format the CLI consumes (schema documented in the README).
struct ExperimentConfig {
  DatasetConfig dataset;
  ModelConfig model;
  FusionConfig fusion;
  OptimizerConfig optimizer;
  TrainingConfig training;
  std::vector<std::uint64_t> seeds = {1, 2, 3, 4, 5};
  std::string output_dir = "runs/experiment";

  nlohmann::json to_json() const;
  static ExperimentConfig from_json(const nlohmann::json& j);
  static ExperimentConfig load(const std::string& path);

  // Every cross-field violation, empty when valid.
  std::vector<std::string> validate() const;

  // Canonical fingerprints; the config fingerprint covers the resolved
  // seed and excludes output_dir, the dataset fingerprint covers only the
  // dataset section.
  std::string fingerprint(std::uint64_t seed) const;
  std::string dataset_fingerprint() const;
};

std::uint64_t fnv1a64(const std::string& bytes);
std::string fnv1a64_hex(const std::string& bytes);

// Write-to-temp-then-rename so partially written artifacts never appear.
void atomic_write_file(const std::string& path, const std::string& contents);

std::string iso8601_utc_now();

Dataset build_dataset(const ExperimentConfig& config);
ModelBundle build_bundle(const ExperimentConfig& config,
                         const std::vector<std::size_t>& modality_dims, std::size_t classes,
                         std::uint64_t seed);

struct RunResult {
  MetricsReport report;
  TrainResult training;
};

// Full pipeline: data, train, test evaluation, artifacts (checkpoint.json,
// metrics.json, train_log.csv, config.json) under out_dir. Pass a prebuilt
// dataset to share it across runs; it must match the config's dataset
// section. Empty out_dir skips artifact writing.
RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                         const std::string& out_dir, const Dataset* prebuilt = nullptr);

std::vector<std::string> preset_names();
nlohmann::json preset_config_json(const std::string& name);  // throws ConfigError if unknown

struct CompareRow {
  std::string label;
  MetricsReport report;
  bool best = false;
  bool second = false;
};

// Row per report in input order; refuses mismatched dataset fingerprints.
// Best and second best by error rate, first input winning ties.
std::vector<CompareRow> compare_reports(
    const std::vector<std::pair<std::string, MetricsReport>>& reports);
std::string render_compare_text(const std::vector<CompareRow>& rows);
std::string render_compare_csv(const std::vector<CompareRow>& rows);

}  // namespace mmfuse
