#include "mmfuse/sweep.hpp"

#include <atomic>
#include <cmath>
#include <sstream>
#include <thread>

#include "mmfuse/errors.hpp"

namespace mmfuse {

using nlohmann::json;

ExperimentConfig apply_sweep_value(const ExperimentConfig& base, const std::string& axis,
                                   double value) {
  ExperimentConfig cfg = base;
  if (axis == "beta") {
    cfg.fusion.beta = value;
    return cfg;
  }
  if (axis == "head_depth") {
    const double rounded = std::round(value);
    if (!(rounded >= 1.0) || std::abs(value - rounded) > 1e-9) {
      throw ConfigError("sweep: head_depth values must be positive integers, got " +
                        std::to_string(value));
    }
    const std::size_t width = cfg.model.head_hidden.empty() ? 16 : cfg.model.head_hidden.front();
    cfg.model.head_hidden.assign(static_cast<std::size_t>(rounded), width);
    return cfg;
  }
  throw ConfigError("sweep: unknown axis '" + axis + "' (expected beta|head_depth)");
}

namespace {

std::string value_tag(double v) {
  std::ostringstream os;
  os << v;
  std::string s = os.str();
  for (char& c : s) {
    if (c == '.') c = 'p';
    if (c == '-') c = 'm';
  }
  return s;
}

}  // namespace

SweepResult run_sweep(const ExperimentConfig& base, const SweepSpec& spec,
                      const std::string& out_dir) {
  if (spec.values.empty()) throw ConfigError("sweep: empty grid");
  const std::vector<std::uint64_t>& seeds = spec.seeds.empty() ? base.seeds : spec.seeds;
  if (seeds.empty()) throw ConfigError("sweep: no seeds");

  // validate every grid point up front so a bad grid fails before training
  for (double v : spec.values) {
    ExperimentConfig cfg = apply_sweep_value(base, spec.axis, v);
    std::vector<std::string> violations = cfg.validate();
    if (!violations.empty()) {
      std::string msg = "sweep: grid value " + std::to_string(v) + " yields an invalid config:";
      for (const std::string& s : violations) msg += "\n  - " + s;
      throw ConfigError(msg);
    }
  }

  const Dataset data = build_dataset(base);

  SweepResult result;
  result.axis = spec.axis;
  result.cells.resize(spec.values.size() * seeds.size());

  std::atomic<std::size_t> next{0};
  auto worker = [&]() {
    while (true) {
      const std::size_t i = next.fetch_add(1);
      if (i >= result.cells.size()) return;
      const std::size_t vi = i / seeds.size();
      const std::size_t si = i % seeds.size();
      SweepCell& cell = result.cells[i];
      cell.value = spec.values[vi];
      cell.seed = seeds[si];
      ExperimentConfig cfg = apply_sweep_value(base, spec.axis, cell.value);
      std::string cell_dir;
      if (!out_dir.empty()) {
        cell_dir = out_dir + "/cells/" + spec.axis + "_" + value_tag(cell.value) + "_seed_" +
                   std::to_string(cell.seed);
      }
      try {
        RunResult run = run_experiment(cfg, cell.seed, cell_dir, &data);
        cell.report = std::move(run.report);
        cell.ok = true;
      } catch (const std::exception& e) {
        cell.ok = false;
        cell.error_message = e.what();
      }
    }
  };

  const std::size_t threads = std::max<std::size_t>(1, spec.parallel);
  if (threads == 1) {
    worker();
  } else {
    std::vector<std::thread> pool;
    for (std::size_t t = 0; t < threads; ++t) pool.emplace_back(worker);
    for (std::thread& t : pool) t.join();
  }

  for (std::size_t vi = 0; vi < spec.values.size(); ++vi) {
    SweepPoint point;
    point.value = spec.values[vi];
    double err_sum = 0.0, auc_sum = 0.0;
    std::size_t auc_count = 0;
    std::vector<double> errs;
    for (std::size_t si = 0; si < seeds.size(); ++si) {
      const SweepCell& cell = result.cells[vi * seeds.size() + si];
      if (!cell.ok) {
        point.failures += 1;
        continue;
      }
      errs.push_back(cell.report.error);
      err_sum += cell.report.error;
      if (cell.report.auc) {
        auc_sum += *cell.report.auc;
        auc_count += 1;
      }
    }
    point.n_seeds = errs.size();
    if (!errs.empty()) {
      point.mean_error = err_sum / static_cast<double>(errs.size());
      if (errs.size() >= 2) {
        double sq = 0.0;
        for (double e : errs) sq += (e - point.mean_error) * (e - point.mean_error);
        point.std_error = std::sqrt(sq / static_cast<double>(errs.size() - 1));
      }
      if (auc_count == errs.size()) point.mean_auc = auc_sum / static_cast<double>(auc_count);
    }
    result.points.push_back(point);
  }

  if (!out_dir.empty()) {
    atomic_write_file(out_dir + "/sweep.csv", result.to_csv());
    atomic_write_file(out_dir + "/sweep.json", result.to_json_string());
  }
  return result;
}

std::string SweepResult::to_csv() const {
  std::ostringstream os;
  os.precision(17);
  os << axis << ",mean_err,std_err,n_seeds\n";
  for (const SweepPoint& p : points) {
    os << p.value << "," << p.mean_error << ",";
    if (p.std_error) os << *p.std_error;
    os << "," << p.n_seeds << "\n";
  }
  return os.str();
}

std::string SweepResult::to_json_string() const {
  json j;
  j["format_version"] = 1;
  j["axis"] = axis;
  json points_j = json::array();
  for (const SweepPoint& p : points) {
    json pj;
    pj["value"] = p.value;
    pj["n_seeds"] = p.n_seeds;
    pj["failures"] = p.failures;
    pj["mean_error"] = p.mean_error;
    pj["std_error"] = p.std_error ? json(*p.std_error) : json(nullptr);
    pj["mean_auc"] = p.mean_auc ? json(*p.mean_auc) : json(nullptr);
    points_j.push_back(pj);
  }
  j["points"] = points_j;
  json cells_j = json::array();
  for (const SweepCell& c : cells) {
    json cj;
    cj["value"] = c.value;
    cj["seed"] = c.seed;
    cj["ok"] = c.ok;
    if (c.ok) {
      cj["error"] = c.report.error;
      cj["auc"] = c.report.auc ? json(*c.report.auc) : json(nullptr);
      cj["config_fingerprint"] = c.report.config_fingerprint;
    } else {
      cj["error_message"] = c.error_message;
    }
    cells_j.push_back(cj);
  }
  j["cells"] = cells_j;
  return j.dump(2) + "\n";
}

}  // namespace mmfuse
