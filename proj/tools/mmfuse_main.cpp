// mmfuse experiment CLI: validate configs, run training, sweep grids,
// compare result reports, and generate synthetic datasets.

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "CLI11.hpp"
#include "mmfuse/dataset.hpp"
#include "mmfuse/errors.hpp"
#include "mmfuse/experiment.hpp"
#include "mmfuse/sweep.hpp"

namespace fs = std::filesystem;

namespace {

// Exit codes: 0 ok, 1 CLI usage, then one per failure class.
constexpr int kExitConfigInvalid = 2;
constexpr int kExitDiverged = 3;
constexpr int kExitIo = 4;

struct ConfigSource {
  std::string config_path;
  std::string preset;

  mmfuse::ExperimentConfig resolve() const {
    if (!preset.empty()) {
      return mmfuse::ExperimentConfig::from_json(mmfuse::preset_config_json(preset));
    }
    if (config_path.empty()) {
      throw mmfuse::ConfigError("no configuration given: pass --config FILE or --preset NAME");
    }
    return mmfuse::ExperimentConfig::load(config_path);
  }
};

void add_config_options(CLI::App* cmd, ConfigSource& src) {
  cmd->add_option("--config", src.config_path, "Path to an experiment config JSON file");
  cmd->add_option("--preset", src.preset,
                  "Built-in preset: synthetic-weak | higgs-small | higgs-full");
}

std::string output_root_prefixed(const std::string& dir) {
  const char* root = std::getenv("MMFUSE_OUT_ROOT");
  if (!root || *root == '\0' || dir.empty()) return dir;
  if (fs::path(dir).is_absolute()) return dir;
  return (fs::path(root) / dir).string();
}

std::size_t default_parallelism() {
  if (const char* env = std::getenv("MMFUSE_THREADS")) {
    const long v = std::strtol(env, nullptr, 10);
    if (v > 0) return static_cast<std::size_t>(v);
  }
  const unsigned hw = std::thread::hardware_concurrency();
  return hw == 0 ? 1 : hw;
}

std::vector<double> parse_grid(const std::string& grid, std::string& axis) {
  // "beta=0,0.3,0.5" or "head_depth=1,2,3,4"
  const std::size_t eq = grid.find('=');
  if (eq == std::string::npos) {
    throw mmfuse::ConfigError("--grid expects axis=v1,v2,... (e.g. beta=0,0.3,0.5)");
  }
  axis = grid.substr(0, eq);
  std::vector<double> values;
  std::string rest = grid.substr(eq + 1);
  std::size_t pos = 0;
  while (pos <= rest.size()) {
    const std::size_t comma = rest.find(',', pos);
    const std::string tok = rest.substr(pos, comma == std::string::npos ? std::string::npos
                                                                        : comma - pos);
    if (tok.empty()) throw mmfuse::ConfigError("--grid has an empty value in '" + grid + "'");
    char* end = nullptr;
    const double v = std::strtod(tok.c_str(), &end);
    if (end == tok.c_str() || *end != '\0') {
      throw mmfuse::ConfigError("--grid value '" + tok + "' is not a number");
    }
    values.push_back(v);
    if (comma == std::string::npos) break;
    pos = comma + 1;
  }
  if (values.empty()) throw mmfuse::ConfigError("--grid is empty");
  return values;
}

int cmd_validate(const ConfigSource& src, bool print_resolved) {
  mmfuse::ExperimentConfig cfg = src.resolve();
  std::vector<std::string> violations = cfg.validate();
  if (!violations.empty()) {
    std::cerr << "invalid config (" << violations.size() << " violation"
              << (violations.size() == 1 ? "" : "s") << "):\n";
    for (const std::string& v : violations) std::cerr << "  - " << v << "\n";
    return kExitConfigInvalid;
  }
  if (print_resolved) {
    std::cout << cfg.to_json().dump(2) << "\n";
  } else {
    std::cout << "ok\n";
  }
  return 0;
}

int cmd_run(const ConfigSource& src, std::optional<std::uint64_t> seed,
            const std::string& out_override) {
  mmfuse::ExperimentConfig cfg = src.resolve();
  const std::uint64_t run_seed = seed ? *seed : cfg.seeds.front();
  std::string out_dir = out_override.empty() ? cfg.output_dir : out_override;
  out_dir = output_root_prefixed(out_dir);
  mmfuse::RunResult result = mmfuse::run_experiment(cfg, run_seed, out_dir);
  std::cout << "method " << result.report.method << " seed " << run_seed << ": test error "
            << result.report.error;
  if (result.report.auc) std::cout << ", auc " << *result.report.auc;
  std::cout << " (" << result.training.total_iterations << " iterations"
            << (result.training.early_stopped ? ", early stopped" : "") << ")\n"
            << "artifacts in " << out_dir << "\n";
  return 0;
}

int cmd_sweep(const ConfigSource& src, const std::string& grid,
              std::optional<std::uint64_t> seed, const std::string& out_override,
              std::size_t parallel) {
  mmfuse::ExperimentConfig cfg = src.resolve();
  mmfuse::SweepSpec spec;
  spec.values = parse_grid(grid, spec.axis);
  if (seed) {
    spec.seeds.clear();
    for (std::size_t i = 0; i < cfg.seeds.size(); ++i) spec.seeds.push_back(*seed + i);
  }
  spec.parallel = parallel;
  std::string out_dir = out_override.empty() ? cfg.output_dir + "-sweep" : out_override;
  out_dir = output_root_prefixed(out_dir);
  mmfuse::SweepResult result = mmfuse::run_sweep(cfg, spec, out_dir);
  std::size_t failures = 0;
  for (const mmfuse::SweepCell& c : result.cells) failures += c.ok ? 0 : 1;
  std::cout << result.to_csv();
  if (failures) {
    std::cerr << failures << " of " << result.cells.size()
              << " cells failed; see sweep.json for messages\n";
  }
  std::cout << "aggregate in " << out_dir << "/sweep.csv\n";
  return 0;
}

int cmd_compare(const std::vector<std::string>& paths, const std::string& out_csv) {
  std::vector<std::pair<std::string, mmfuse::MetricsReport>> reports;
  for (const std::string& p : paths) {
    mmfuse::MetricsReport rep = mmfuse::MetricsReport::load(p);
    std::string label = rep.method;
    for (const auto& [other, _] : reports) {
      if (other == label) {
        label += "#" + std::to_string(reports.size());
        break;
      }
    }
    reports.emplace_back(label, std::move(rep));
  }
  std::vector<mmfuse::CompareRow> rows = mmfuse::compare_reports(reports);
  std::cout << mmfuse::render_compare_text(rows);
  if (!out_csv.empty()) {
    mmfuse::atomic_write_file(output_root_prefixed(out_csv), mmfuse::render_compare_csv(rows));
    std::cout << "csv written to " << out_csv << "\n";
  }
  return 0;
}

int cmd_gen_data(const ConfigSource& src, const std::string& out_dir,
                 std::optional<std::uint64_t> seed) {
  mmfuse::ExperimentConfig cfg = src.resolve();
  if (cfg.dataset.source != mmfuse::DatasetConfig::Source::kSynthetic) {
    throw mmfuse::ConfigError("gen-data needs a config with dataset.source = synthetic");
  }
  mmfuse::SyntheticSpec spec = cfg.dataset.synthetic;
  if (seed) spec.seed = *seed;
  mmfuse::Dataset data = mmfuse::generate_synthetic(spec);
  const std::string dir = output_root_prefixed(out_dir.empty() ? "." : out_dir);
  fs::create_directories(dir);
  const std::string csv = dir + "/data.csv";
  const std::string meta = dir + "/data.meta.json";
  mmfuse::export_synthetic_csv(data, spec, csv, meta);
  std::cout << "wrote " << data.rows() << " rows to " << csv << " (+ " << meta << ")\n";
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"multiplicative multimodal fusion experiments"};
  app.require_subcommand(1);

  ConfigSource src;
  std::optional<std::uint64_t> seed;
  std::string out_dir;
  std::string grid;
  std::size_t parallel = default_parallelism();
  bool print_resolved = false;
  std::vector<std::string> compare_paths;
  std::string compare_csv = "compare.csv";

  CLI::App* validate = app.add_subcommand("validate", "Check a config and list every violation");
  add_config_options(validate, src);
  validate->add_flag("--print", print_resolved, "Print the resolved config JSON on success");

  CLI::App* run = app.add_subcommand("run", "Train and evaluate one experiment");
  add_config_options(run, src);
  run->add_option("--seed", seed, "Override the run seed (default: first of config seeds)");
  run->add_option("--out", out_dir, "Override the output directory");

  CLI::App* sweep = app.add_subcommand("sweep", "Run a grid over beta or head depth");
  add_config_options(sweep, src);
  sweep->add_option("--grid", grid, "Grid as axis=v1,v2,... (beta=0,0.3,0.5 or head_depth=1,2,3)")
      ->required();
  sweep->add_option("--seed", seed, "Base seed; cells use base+0..base+n-1");
  sweep->add_option("--out", out_dir, "Output directory for cells and aggregates");
  sweep->add_option("--parallel", parallel, "Concurrent cells (default: cores or MMFUSE_THREADS)");

  CLI::App* compare = app.add_subcommand("compare", "Tabulate metrics.json reports side by side");
  compare->add_option("reports", compare_paths, "metrics.json files (>= 2)")
      ->required()
      ->expected(-2);
  compare->add_option("--out", compare_csv, "CSV output path (default compare.csv)");

  CLI::App* gen = app.add_subcommand("gen-data", "Generate a synthetic dataset as CSV + metadata");
  add_config_options(gen, src);
  gen->add_option("--out", out_dir, "Directory for data.csv and data.meta.json");
  gen->add_option("--seed", seed, "Override the generator seed");

  CLI11_PARSE(app, argc, argv);

  try {
    if (validate->parsed()) return cmd_validate(src, print_resolved);
    if (run->parsed()) return cmd_run(src, seed, out_dir);
    if (sweep->parsed()) return cmd_sweep(src, grid, seed, out_dir, parallel);
    if (compare->parsed()) return cmd_compare(compare_paths, compare_csv);
    if (gen->parsed()) return cmd_gen_data(src, out_dir, seed);
  } catch (const mmfuse::ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitConfigInvalid;
  } catch (const mmfuse::DivergenceError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitDiverged;
  } catch (const mmfuse::IoError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 0;
}
