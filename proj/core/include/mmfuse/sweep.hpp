#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "mmfuse/experiment.hpp"

namespace mmfuse {

// Grid over one config axis. "beta" maps values onto fusion.beta;
// "head_depth" stacks that many copies of the base head width.
struct SweepSpec {
  std::string axis = "beta";
  std::vector<double> values;
  std::vector<std::uint64_t> seeds;  // empty = use the config's seeds
  std::size_t parallel = 1;
};

struct SweepCell {
  double value = 0.0;
  std::uint64_t seed = 0;
  bool ok = false;
  std::string error_message;
  MetricsReport report;
};

struct SweepPoint {
  double value = 0.0;
  std::size_t n_seeds = 0;  // successful cells
  std::size_t failures = 0;
  double mean_error = 0.0;
  std::optional<double> std_error;  // needs >= 2 seeds
  std::optional<double> mean_auc;
};

struct SweepResult {
  std::string axis;
  std::vector<SweepPoint> points;
  std::vector<SweepCell> cells;

  std::string to_csv() const;   // value, mean_err, std_err, n_seeds
  std::string to_json_string() const;
};

ExperimentConfig apply_sweep_value(const ExperimentConfig& base, const std::string& axis,
                                   double value);

// Trains one run per (value, seed). Cells are independent: they share one
// immutable dataset, use the seed from the seed list regardless of the
// grid value (so adding grid points never perturbs existing cells), and a
// failed cell is recorded without aborting the sweep. When out_dir is
// non-empty each cell writes its run artifacts under
// out_dir/cells/<axis>_<value>_seed_<seed>/ and the aggregate lands in
// sweep.csv / sweep.json.
SweepResult run_sweep(const ExperimentConfig& base, const SweepSpec& spec,
                      const std::string& out_dir);

}  // namespace mmfuse
