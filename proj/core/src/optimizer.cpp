#include "mmfuse/optimizer.hpp"

#include <cmath>

#include "mmfuse/errors.hpp"
#include "mmfuse/tape.hpp"

namespace mmfuse {

std::string to_string(OptimizerKind k) {
  return k == OptimizerKind::kSgdMomentum ? "sgd-momentum" : "adam";
}

OptimizerKind optimizer_kind_from_string(const std::string& s) {
  if (s == "sgd-momentum" || s == "sgd") return OptimizerKind::kSgdMomentum;
  if (s == "adam") return OptimizerKind::kAdam;
  throw ConfigError("unknown optimizer '" + s + "' (expected sgd-momentum|adam)");
}

double OptimizerConfig::rate_at(std::size_t iteration, std::size_t epoch) const {
  double rate = learning_rate;
  for (const auto& [start, r] : lr_steps) {
    if (iteration >= start) rate = r;
  }
  if (lr_decay) rate *= std::pow(*lr_decay, static_cast<double>(epoch));
  return rate;
}

void OptimizerConfig::collect_violations(std::vector<std::string>& out) const {
  if (!(learning_rate > 0.0)) out.push_back("optimizer.learning_rate must be > 0");
  if (!(momentum >= 0.0 && momentum < 1.0)) out.push_back("optimizer.momentum must be in [0, 1)");
  if (!(weight_decay >= 0.0)) out.push_back("optimizer.weight_decay must be >= 0");
  if (!(adam_beta1 >= 0.0 && adam_beta1 < 1.0)) out.push_back("optimizer.adam_beta1 must be in [0, 1)");
  if (!(adam_beta2 >= 0.0 && adam_beta2 < 1.0)) out.push_back("optimizer.adam_beta2 must be in [0, 1)");
  if (!(adam_epsilon > 0.0)) out.push_back("optimizer.adam_epsilon must be > 0");
  if (clip_norm && !(*clip_norm > 0.0)) out.push_back("optimizer.clip_norm must be > 0");
  if (!lr_steps.empty() && lr_decay) {
    out.push_back("optimizer: lr_steps and lr_decay are mutually exclusive");
  }
  for (std::size_t i = 0; i < lr_steps.size(); ++i) {
    if (!(lr_steps[i].second > 0.0)) {
      out.push_back("optimizer.lr_steps rates must be > 0");
      break;
    }
    if (i > 0 && lr_steps[i].first < lr_steps[i - 1].first) {
      out.push_back("optimizer.lr_steps must be sorted by iteration");
      break;
    }
  }
  if (lr_decay && !(*lr_decay > 0.0 && *lr_decay <= 1.0)) {
    out.push_back("optimizer.lr_decay must be in (0, 1]");
  }
}

double step(ModelBundle& bundle, const MultimodalBatch& batch, const FusionConfig& fusion,
            const OptimizerConfig& opt, TrainState& state) {
  bundle.zero_grads();
  Tape tape;
  Var loss = training_loss(tape, bundle, batch, fusion);
  const double loss_value = loss.value().item();
  if (!std::isfinite(loss_value)) {
    throw DivergenceError("training loss is non-finite (" + std::to_string(loss_value) + ")",
                          state.iteration);
  }
  tape.backward(loss);

  std::vector<ParamRef> params = bundle.params();
  apply_update(params, opt, state);
  return loss_value;
}

void apply_update(std::vector<ParamRef>& params, const OptimizerConfig& opt, TrainState& state) {
  if (state.moment1.size() != params.size()) {
    state.moment1.assign(params.size(), {});
    state.moment2.assign(params.size(), {});
    for (std::size_t i = 0; i < params.size(); ++i) {
      state.moment1[i].assign(params[i].tensor->size(), 0.0);
      if (opt.kind == OptimizerKind::kAdam)
        state.moment2[i].assign(params[i].tensor->size(), 0.0);
    }
  }

  for (std::size_t i = 0; i < params.size(); ++i) {
    if (state.moment1[i].size() != params[i].tensor->size()) {
      throw ShapeError("optimizer state does not match parameter '" + params[i].name + "'");
    }
  }

  // decay before clipping so the clip bounds the true update direction
  if (opt.weight_decay > 0.0) {
    for (ParamRef& p : params) {
      if (!p.is_weight) continue;
      std::vector<double>& g = p.tensor->grad();
      for (std::size_t i = 0; i < g.size(); ++i) g[i] += opt.weight_decay * (*p.tensor)[i];
    }
  }

  if (opt.clip_norm) {
    double sq = 0.0;
    for (ParamRef& p : params) {
      for (double g : p.tensor->grad()) sq += g * g;
    }
    const double norm = std::sqrt(sq);
    if (norm > *opt.clip_norm) {
      const double scale = *opt.clip_norm / norm;
      for (ParamRef& p : params) {
        for (double& g : p.tensor->grad()) g *= scale;
      }
    }
  }

  const double rate = opt.rate_at(state.iteration, state.epoch);
  if (opt.kind == OptimizerKind::kSgdMomentum) {
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& t = *params[i].tensor;
      const std::vector<double>& g = t.grad();
      std::vector<double>& v = state.moment1[i];
      for (std::size_t e = 0; e < g.size(); ++e) {
        v[e] = opt.momentum * v[e] + g[e];
        t[e] -= rate * v[e];
      }
    }
  } else {
    // Adam bias correction counts steps from 1.
    const double t_step = static_cast<double>(state.iteration + 1);
    const double c1 = 1.0 - std::pow(opt.adam_beta1, t_step);
    const double c2 = 1.0 - std::pow(opt.adam_beta2, t_step);
    for (std::size_t i = 0; i < params.size(); ++i) {
      Tensor& t = *params[i].tensor;
      const std::vector<double>& g = t.grad();
      std::vector<double>& m = state.moment1[i];
      std::vector<double>& v = state.moment2[i];
      for (std::size_t e = 0; e < g.size(); ++e) {
        m[e] = opt.adam_beta1 * m[e] + (1.0 - opt.adam_beta1) * g[e];
        v[e] = opt.adam_beta2 * v[e] + (1.0 - opt.adam_beta2) * g[e] * g[e];
        const double mhat = m[e] / c1;
        const double vhat = v[e] / c2;
        t[e] -= rate * mhat / (std::sqrt(vhat) + opt.adam_epsilon);
      }
    }
  }
  state.iteration += 1;
}

}  // namespace mmfuse
