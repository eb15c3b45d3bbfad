#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "mmfuse/dataset.hpp"
#include "mmfuse/fusion.hpp"
#include "mmfuse/model.hpp"

namespace mmfuse {

enum class OptimizerKind { kSgdMomentum, kAdam };

std::string to_string(OptimizerKind k);
OptimizerKind optimizer_kind_from_string(const std::string& s);

struct OptimizerConfig {
  OptimizerKind kind = OptimizerKind::kSgdMomentum;
  double learning_rate = 0.01;
  double momentum = 0.9;
  double adam_beta1 = 0.9;
  double adam_beta2 = 0.999;
  double adam_epsilon = 1e-8;
  double weight_decay = 0.0;             // L2 on weight matrices, not biases
  std::optional<double> clip_norm;       // global gradient norm clip
  // Either a piecewise-constant (iteration, rate) schedule or a per-epoch
  // exponential decay factor; not both.
  std::vector<std::pair<std::size_t, double>> lr_steps;
  std::optional<double> lr_decay;

  double rate_at(std::size_t iteration, std::size_t epoch) const;
  void collect_violations(std::vector<std::string>& out) const;
};

// Per-parameter moment buffers plus progress counters.
struct TrainState {
  std::size_t iteration = 0;
  std::size_t epoch = 0;
  std::vector<std::vector<double>> moment1;  // momentum / Adam m
  std::vector<std::vector<double>> moment2;  // Adam v
  double best_dev = 0.0;
  bool has_best = false;
  std::size_t evals_since_improvement = 0;
};

// Consumes the gradients already sitting in the parameters' grad buffers:
// adds weight decay to weight matrices, clips the global norm, applies the
// SGD-momentum or Adam update, and advances the iteration counter.
void apply_update(std::vector<ParamRef>& params, const OptimizerConfig& opt, TrainState& state);

// One forward/backward/update cycle over the batch. Throws DivergenceError
// (carrying the iteration) when the loss is non-finite.
double step(ModelBundle& bundle, const MultimodalBatch& batch, const FusionConfig& fusion,
            const OptimizerConfig& opt, TrainState& state);

}  // namespace mmfuse
