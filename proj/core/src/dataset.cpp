#include "mmfuse/dataset.hpp"

#include <algorithm>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mmfuse/errors.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

std::vector<std::size_t> Dataset::modality_dims() const {
  std::vector<std::size_t> dims;
  for (const Tensor& m : modalities) dims.push_back(m.cols());
  return dims;
}

MultimodalBatch Dataset::gather(std::span<const std::size_t> rows) const {
  MultimodalBatch batch;
  batch.ids.assign(rows.begin(), rows.end());
  batch.labels.reserve(rows.size());
  for (std::size_t r : rows) batch.labels.push_back(labels[r]);
  for (const Tensor& m : modalities) {
    const std::size_t d = m.cols();
    Tensor sub({rows.size(), d});
    for (std::size_t i = 0; i < rows.size(); ++i) {
      const double* src = m.data() + rows[i] * d;
      std::copy(src, src + d, sub.data() + i * d);
    }
    batch.modalities.push_back(std::move(sub));
  }
  return batch;
}

namespace {

bool parse_field(const std::string& field, double& out) {
  const char* s = field.c_str();
  char* end = nullptr;
  out = std::strtod(s, &end);
  if (end == s) return false;
  while (*end == ' ' || *end == '\t' || *end == '\r') ++end;
  return *end == '\0';
}

std::vector<std::string> split_csv_line(const std::string& line) {
  std::vector<std::string> fields;
  std::string field;
  std::istringstream ss(line);
  while (std::getline(ss, field, ',')) fields.push_back(field);
  if (!line.empty() && line.back() == ',') fields.push_back("");
  return fields;
}

// Tail split rule: test takes the last rows, dev the tail of what remains.
void carve_tail_splits(Dataset& data, std::size_t dev_rows, std::size_t test_rows,
                       double train_downsample, std::uint64_t downsample_seed) {
  const std::size_t n = data.rows();
  if (dev_rows + test_rows >= n) {
    throw ConfigError("split sizes leave no training rows: " + std::to_string(n) +
                      " total, dev " + std::to_string(dev_rows) + ", test " +
                      std::to_string(test_rows));
  }
  const std::size_t train_end = n - test_rows - dev_rows;
  data.train.clear();
  data.dev.clear();
  data.test.clear();
  for (std::size_t i = 0; i < train_end; ++i) data.train.push_back(i);
  for (std::size_t i = train_end; i < n - test_rows; ++i) data.dev.push_back(i);
  for (std::size_t i = n - test_rows; i < n; ++i) data.test.push_back(i);

  if (train_downsample < 1.0) {
    Rng rng(downsample_seed);
    std::vector<std::size_t> pool = data.train;
    rng.shuffle(pool);
    std::size_t keep = static_cast<std::size_t>(
        std::llround(train_downsample * static_cast<double>(pool.size())));
    keep = std::max<std::size_t>(1, std::min(keep, pool.size()));
    pool.resize(keep);
    std::sort(pool.begin(), pool.end());
    data.train = std::move(pool);
  }
}

void zscore_with_train_stats(Dataset& data) {
  for (Tensor& m : data.modalities) {
    const std::size_t d = m.cols();
    std::vector<double> mean(d, 0.0), var(d, 0.0);
    for (std::size_t r : data.train) {
      const double* row = m.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) mean[j] += row[j];
    }
    const double n = static_cast<double>(data.train.size());
    for (std::size_t j = 0; j < d; ++j) mean[j] /= n;
    for (std::size_t r : data.train) {
      const double* row = m.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) {
        const double dev = row[j] - mean[j];
        var[j] += dev * dev;
      }
    }
    std::vector<double> inv_std(d);
    for (std::size_t j = 0; j < d; ++j) {
      const double sd = std::sqrt(var[j] / n);
      inv_std[j] = sd > 1e-12 ? 1.0 / sd : 1.0;  // constant columns pass through
    }
    for (std::size_t r = 0; r < m.rows(); ++r) {
      double* row = m.data() + r * d;
      for (std::size_t j = 0; j < d; ++j) row[j] = (row[j] - mean[j]) * inv_std[j];
    }
  }
}

}  // namespace

Dataset load_delimited(const FileDatasetSpec& spec) {
  if (spec.modality_columns.empty()) throw ConfigError("dataset: no modality column partition");
  for (std::size_t a = 0; a < spec.modality_columns.size(); ++a) {
    if (spec.modality_columns[a].empty())
      throw ConfigError("dataset: modality " + std::to_string(a) + " has no columns");
    for (std::size_t col : spec.modality_columns[a]) {
      if (col == spec.label_column)
        throw ConfigError("dataset: label column " + std::to_string(spec.label_column) +
                          " also appears in modality " + std::to_string(a));
      for (std::size_t b = a + 1; b < spec.modality_columns.size(); ++b) {
        const auto& other = spec.modality_columns[b];
        if (std::find(other.begin(), other.end(), col) != other.end())
          throw ConfigError("dataset: column " + std::to_string(col) +
                            " assigned to modalities " + std::to_string(a) + " and " +
                            std::to_string(b));
      }
    }
  }

  std::ifstream in(spec.path);
  if (!in) throw IoError("cannot open dataset file: " + spec.path);

  std::vector<std::vector<double>> rows;
  std::string line;
  std::size_t line_no = 0;
  std::size_t ncols = 0;
  bool checked_header = false;
  while (std::getline(in, line)) {
    ++line_no;
    if (line.empty() || (line.size() == 1 && line[0] == '\r')) continue;
    std::vector<std::string> fields = split_csv_line(line);
    std::vector<double> values(fields.size());
    bool numeric = true;
    for (std::size_t i = 0; i < fields.size(); ++i) {
      if (!parse_field(fields[i], values[i])) {
        numeric = false;
        break;
      }
    }
    if (!checked_header) {
      checked_header = true;
      if (spec.has_header.value_or(!numeric)) continue;
    }
    if (!numeric) {
      throw IoError("dataset: malformed row at line " + std::to_string(line_no) + " in " +
                    spec.path);
    }
    if (ncols == 0) {
      ncols = values.size();
    } else if (values.size() != ncols) {
      throw IoError("dataset: line " + std::to_string(line_no) + " has " +
                    std::to_string(values.size()) + " columns, expected " +
                    std::to_string(ncols) + " in " + spec.path);
    }
    rows.push_back(std::move(values));
  }
  if (rows.empty()) throw IoError("dataset: no data rows in " + spec.path);

  if (spec.label_column >= ncols)
    throw ConfigError("dataset: label column " + std::to_string(spec.label_column) +
                      " out of range; file has " + std::to_string(ncols) + " columns");
  for (const auto& part : spec.modality_columns) {
    for (std::size_t col : part) {
      if (col >= ncols)
        throw ConfigError("dataset: column " + std::to_string(col) +
                          " out of range; file has " + std::to_string(ncols) + " columns");
    }
  }

  Dataset data;
  const std::size_t n = rows.size();
  data.labels.reserve(n);
  int max_label = 0;
  for (std::size_t r = 0; r < n; ++r) {
    const double raw = rows[r][spec.label_column];
    const int label = static_cast<int>(std::llround(raw));
    if (label < 0 || std::abs(raw - label) > 1e-9) {
      throw IoError("dataset: label " + std::to_string(raw) + " at data row " +
                    std::to_string(r + 1) + " is not a non-negative integer");
    }
    max_label = std::max(max_label, label);
    data.labels.push_back(label);
  }
  data.classes = static_cast<std::size_t>(max_label) + 1;
  if (data.classes < 2) throw ConfigError("dataset: need at least 2 classes, labels are all " +
                                          std::to_string(max_label));

  for (const auto& part : spec.modality_columns) {
    Tensor m({n, part.size()});
    for (std::size_t r = 0; r < n; ++r)
      for (std::size_t j = 0; j < part.size(); ++j) m.at(r, j) = rows[r][part[j]];
    data.modalities.push_back(std::move(m));
  }

  carve_tail_splits(data, spec.dev_tail_rows, spec.test_tail_rows, spec.train_downsample,
                    spec.downsample_seed);
  if (spec.normalization == Normalization::kZscore) zscore_with_train_stats(data);
  return data;
}

void SyntheticSpec::validate() const {
  if (classes < 2) throw ConfigError("synthetic: need K >= 2 classes");
  if (modalities < 1) throw ConfigError("synthetic: need at least one modality");
  if (dims.size() != modalities)
    throw ConfigError("synthetic: dims has " + std::to_string(dims.size()) +
                      " entries for " + std::to_string(modalities) + " modalities");
  for (std::size_t d : dims) {
    if (d < classes)
      throw ConfigError("synthetic: per-modality dimension " + std::to_string(d) +
                        " must be >= classes " + std::to_string(classes) +
                        " (centroids sit on the first K axes)");
  }
  if (train_rows == 0 || test_rows == 0)
    throw ConfigError("synthetic: train_rows and test_rows must be positive");
  if (!(separation > 0.0)) throw ConfigError("synthetic: separation must be > 0");
  if (noise_sigma < 0.0) throw ConfigError("synthetic: noise_sigma must be >= 0");
}

Dataset generate_synthetic(const SyntheticSpec& spec) {
  spec.validate();
  const std::size_t n = spec.total_rows();
  Dataset data;
  data.classes = spec.classes;
  data.labels.resize(n);
  data.informative.resize(n);
  for (std::size_t m = 0; m < spec.modalities; ++m)
    data.modalities.push_back(Tensor({n, spec.dims[m]}));

  Rng rng(spec.seed);
  for (std::size_t r = 0; r < n; ++r) {
    const std::size_t y = rng.index(spec.classes);
    const std::size_t info = rng.index(spec.modalities);
    data.labels[r] = static_cast<int>(y);
    data.informative[r] = static_cast<int>(info);
    for (std::size_t m = 0; m < spec.modalities; ++m) {
      double* row = data.modalities[m].data() + r * spec.dims[m];
      if (m == info) {
        for (std::size_t j = 0; j < spec.dims[m]; ++j) {
          const double centroid = (j == y) ? spec.separation : 0.0;
          row[j] = centroid + spec.noise_sigma * rng.normal();
        }
      } else {
        for (std::size_t j = 0; j < spec.dims[m]; ++j) row[j] = rng.normal();
      }
    }
  }
  carve_tail_splits(data, spec.dev_rows, spec.test_rows, 1.0, spec.seed);
  return data;
}

double bayes_rate(const SyntheticSpec& spec, std::size_t draws, std::uint64_t mc_seed) {
  spec.validate();
  Rng rng(mc_seed);
  std::size_t errors = 0;
  std::vector<double> v;
  for (std::size_t t = 0; t < draws; ++t) {
    const std::size_t y = rng.index(spec.classes);
    const std::size_t info = rng.index(spec.modalities);
    const std::size_t d = spec.dims[info];
    v.assign(d, 0.0);
    for (std::size_t j = 0; j < d; ++j) {
      const double centroid = (j == y) ? spec.separation : 0.0;
      v[j] = centroid + spec.noise_sigma * rng.normal();
    }
    // nearest centroid on the informative modality
    std::size_t best = 0;
    double best_dist = 0.0;
    for (std::size_t k = 0; k < spec.classes; ++k) {
      double dist = 0.0;
      for (std::size_t j = 0; j < d; ++j) {
        const double centroid = (j == k) ? spec.separation : 0.0;
        const double dev = v[j] - centroid;
        dist += dev * dev;
      }
      if (k == 0 || dist < best_dist) {
        best = k;
        best_dist = dist;
      }
    }
    if (best != y) ++errors;
  }
  return static_cast<double>(errors) / static_cast<double>(draws);
}

void export_synthetic_csv(const Dataset& data, const SyntheticSpec& spec,
                          const std::string& csv_path, const std::string& meta_path) {
  std::ofstream csv(csv_path, std::ios::binary);
  if (!csv) throw IoError("cannot open for writing: " + csv_path);
  csv.precision(17);
  for (std::size_t r = 0; r < data.rows(); ++r) {
    csv << data.labels[r];
    for (const Tensor& m : data.modalities) {
      const std::size_t d = m.cols();
      for (std::size_t j = 0; j < d; ++j) csv << ',' << m.data()[r * d + j];
    }
    csv << '\n';
  }
  if (!csv) throw IoError("failed writing " + csv_path);

  nlohmann::json meta;
  meta["format_version"] = 1;
  meta["spec"] = {{"train_rows", spec.train_rows},
                  {"dev_rows", spec.dev_rows},
                  {"test_rows", spec.test_rows},
                  {"classes", spec.classes},
                  {"modalities", spec.modalities},
                  {"dims", spec.dims},
                  {"separation", spec.separation},
                  {"noise_sigma", spec.noise_sigma},
                  {"seed", spec.seed}};
  meta["label_column"] = 0;
  nlohmann::json parts = nlohmann::json::array();
  std::size_t col = 1;
  for (const Tensor& m : data.modalities) {
    std::vector<std::size_t> cols;
    for (std::size_t j = 0; j < m.cols(); ++j) cols.push_back(col++);
    parts.push_back(cols);
  }
  meta["modality_columns"] = parts;
  meta["informative"] = data.informative;
  std::ofstream out(meta_path, std::ios::binary);
  if (!out) throw IoError("cannot open for writing: " + meta_path);
  out << meta.dump(2) << '\n';
  if (!out) throw IoError("failed writing " + meta_path);
}

}  // namespace mmfuse
