#include "mmfuse/train.hpp"

#include <algorithm>
#include <sstream>

#include "mmfuse/errors.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

std::string to_string(DevMetric m) { return m == DevMetric::kError ? "error" : "auc"; }

DevMetric dev_metric_from_string(const std::string& s) {
  if (s == "error") return DevMetric::kError;
  if (s == "auc") return DevMetric::kAuc;
  throw ConfigError("unknown dev_metric '" + s + "' (expected error|auc)");
}

void TrainingConfig::collect_violations(std::vector<std::string>& out) const {
  if (batch_size == 0) out.push_back("training.batch_size must be > 0");
  if (max_epochs == 0) out.push_back("training.max_epochs must be > 0");
  if (eval_every_epochs == 0) out.push_back("training.eval_every_epochs must be > 0");
  if (patience == 0) out.push_back("training.patience must be > 0");
  if (max_iterations && *max_iterations == 0) out.push_back("training.max_iterations must be > 0");
}

namespace {

double dev_metric_value(const ModelBundle& bundle, const Dataset& data,
                        const FusionConfig& fusion, DevMetric metric) {
  MultimodalBatch dev = data.gather(data.dev);
  EvalOutput out = evaluate(bundle, dev, fusion);
  if (metric == DevMetric::kAuc) return auc(out.positive_score, dev.labels);
  return error_rate(out.predicted, dev.labels);
}

// Lower is better internally; AUC is flipped.
double oriented(double value, DevMetric metric) {
  return metric == DevMetric::kAuc ? -value : value;
}

std::vector<Tensor> snapshot_params(ModelBundle& bundle) {
  std::vector<Tensor> snap;
  for (const ParamRef& p : bundle.params()) snap.push_back(*p.tensor);
  return snap;
}

void restore_params(ModelBundle& bundle, const std::vector<Tensor>& snap) {
  std::vector<ParamRef> params = bundle.params();
  for (std::size_t i = 0; i < params.size(); ++i) *params[i].tensor = snap[i];
}

}  // namespace

TrainResult train(ModelBundle& bundle, const Dataset& data, const FusionConfig& fusion,
                  const OptimizerConfig& opt, const TrainingConfig& cfg) {
  if (data.train.empty()) throw ConfigError("train: empty training split");
  if (data.dev.empty()) throw ConfigError("train: empty dev split (needed for early stopping)");
  {
    std::vector<std::string> violations;
    cfg.collect_violations(violations);
    opt.collect_violations(violations);
    if (!violations.empty()) {
      std::string msg = "invalid training config:";
      for (const std::string& v : violations) msg += "\n  - " + v;
      throw ConfigError(msg);
    }
  }

  if (cfg.dev_metric == DevMetric::kAuc && data.classes != 2) {
    throw ConfigError("train: dev_metric auc needs a binary task, dataset has " +
                      std::to_string(data.classes) + " classes");
  }

  TrainResult result;
  TrainState state;
  Rng shuffle_rng(cfg.seed);
  std::vector<std::size_t> order = data.train;

  std::vector<Tensor> best_params = snapshot_params(bundle);
  double loss_accum = 0.0;
  std::size_t loss_count = 0;
  bool stop = false;

  for (std::size_t epoch = 0; epoch < cfg.max_epochs && !stop; ++epoch) {
    state.epoch = epoch;
    shuffle_rng.shuffle(order);
    for (std::size_t start = 0; start < order.size(); start += cfg.batch_size) {
      const std::size_t count = std::min(cfg.batch_size, order.size() - start);
      MultimodalBatch batch =
          data.gather(std::span<const std::size_t>(order.data() + start, count));
      loss_accum += step(bundle, batch, fusion, opt, state);
      ++loss_count;
      if (cfg.max_iterations && state.iteration >= *cfg.max_iterations) {
        stop = true;
        break;
      }
    }

    const bool last_epoch = stop || epoch + 1 == cfg.max_epochs;
    if ((epoch + 1) % cfg.eval_every_epochs != 0 && !last_epoch) continue;

    double metric;
    try {
      metric = dev_metric_value(bundle, data, fusion, cfg.dev_metric);
    } catch (const MetricError& e) {
      // non-finite predictions mid-training mean the model blew up
      throw DivergenceError(std::string("dev evaluation failed: ") + e.what(), state.iteration);
    }
    result.log.push_back({state.iteration, loss_count ? loss_accum / loss_count : 0.0, metric});
    loss_accum = 0.0;
    loss_count = 0;

    if (!state.has_best || oriented(metric, cfg.dev_metric) < oriented(state.best_dev, cfg.dev_metric)) {
      state.best_dev = metric;
      state.has_best = true;
      state.evals_since_improvement = 0;
      best_params = snapshot_params(bundle);
      result.best_dev_metric = metric;
      result.best_iteration = state.iteration;
    } else {
      state.evals_since_improvement += 1;
      if (state.evals_since_improvement >= cfg.patience) {
        result.early_stopped = true;
        stop = true;
      }
    }
  }

  restore_params(bundle, best_params);
  result.total_iterations = state.iteration;
  return result;
}

std::string train_log_to_csv(const std::vector<TrainLogEntry>& log,
                             const std::string& config_fingerprint,
                             const std::string& metric_name) {
  std::ostringstream out;
  out.precision(17);
  out << "# config_fingerprint=" << config_fingerprint << "\n";
  out << "iteration,train_loss,dev_" << metric_name << "\n";
  for (const TrainLogEntry& e : log) {
    out << e.iteration << "," << e.train_loss << "," << e.dev_metric << "\n";
  }
  return out.str();
}

}  // namespace mmfuse
