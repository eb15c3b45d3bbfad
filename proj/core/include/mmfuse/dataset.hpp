#pragma once

#include <cstdint>
#include <optional>
#include <span>
#include <string>
#include <vector>

#include "mmfuse/tensor.hpp"

namespace mmfuse {

// One batch of aligned modality matrices ([n x d_m] each) and labels.
struct MultimodalBatch {
  std::vector<Tensor> modalities;
  std::vector<int> labels;
  std::vector<std::size_t> ids;

  std::size_t size() const { return labels.size(); }
  std::size_t modality_count() const { return modalities.size(); }
};

enum class Normalization { kNone, kZscore };

// In-memory dataset with row-index splits. Rows keep file order; test/dev
// are tail slices so the "last N rows are the test set" protocol holds, and
// shuffling only ever happens inside the training split.
struct Dataset {
  std::vector<Tensor> modalities;  // full [N x d_m] matrices
  std::vector<int> labels;
  std::vector<std::size_t> train, dev, test;  // row indices
  std::size_t classes = 0;
  // Which modality carried the class signal, per row; synthetic data only.
  // Diagnostics for the evaluation harness; never fed to models.
  std::vector<int> informative;

  std::size_t rows() const { return labels.size(); }
  std::size_t modality_count() const { return modalities.size(); }
  std::vector<std::size_t> modality_dims() const;
  MultimodalBatch gather(std::span<const std::size_t> rows) const;
};

struct FileDatasetSpec {
  std::string path;
  std::size_t label_column = 0;
  std::vector<std::vector<std::size_t>> modality_columns;
  // nullopt = auto-detect: a first line with any non-numeric field is a header.
  std::optional<bool> has_header;
  std::size_t test_tail_rows = 0;
  std::size_t dev_tail_rows = 0;
  double train_downsample = 1.0;  // keep this fraction of the train split
  std::uint64_t downsample_seed = 1;
  Normalization normalization = Normalization::kZscore;
};

// Parses a delimited numeric file (comma separated, label column holds the
// integer class), applies the modality partition, carves tail test/dev
// splits, and z-scores every column using statistics from the (possibly
// down-sampled) training split only.
Dataset load_delimited(const FileDatasetSpec& spec);

// Weak-modality generator: per sample one uniformly chosen modality carries
// the class signal (centroid + isotropic noise); all other modalities are
// pure standard normal noise with no class information. Class centroids sit
// at separation * e_k, so class k needs dims[m] > k.
struct SyntheticSpec {
  std::size_t train_rows = 0;
  std::size_t dev_rows = 0;
  std::size_t test_rows = 0;
  std::size_t classes = 2;
  std::size_t modalities = 3;
  std::vector<std::size_t> dims;
  double separation = 1.0;
  double noise_sigma = 0.43;
  std::uint64_t seed = 7;

  std::size_t total_rows() const { return train_rows + dev_rows + test_rows; }
  void validate() const;  // throws ConfigError
};

Dataset generate_synthetic(const SyntheticSpec& spec);

// Monte-Carlo estimate of the error of the oracle that knows which modality
// is informative and classifies it by nearest centroid. A desk-scale
// reference rate for the synthetic benchmark.
double bayes_rate(const SyntheticSpec& spec, std::size_t draws = 100000,
                  std::uint64_t mc_seed = 1);

// CSV export in the delimited layout (label first, then modality columns in
// order) plus a JSON sidecar with the generative spec, the column
// partition, and the per-row informative-modality assignment.
void export_synthetic_csv(const Dataset& data, const SyntheticSpec& spec,
                          const std::string& csv_path, const std::string& meta_path);

}  // namespace mmfuse
