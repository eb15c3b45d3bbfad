#pragma once

#include <cstddef>
#include <string>
#include <vector>

#include "mmfuse/dataset.hpp"
#include "mmfuse/model.hpp"
#include "mmfuse/tape.hpp"

namespace mmfuse {

enum class QGradientMode { kFull, kStop };

std::string to_string(QGradientMode m);
QGradientMode q_gradient_mode_from_string(const std::string& s);

// Named loss-weight presets usable in place of an explicit weight list.
// "cifar-layers" weighs three stacked feature-level modalities
// (0.3, 0.3, 1.0), emphasizing the deepest one.
std::vector<double> named_loss_weights(const std::string& name);

// Objective selection. beta interpolates between model averaging (0) and
// non-smoothed multiplicative combination (1); the boosted flag zeroes the
// loss on samples whose true-class loss already wins by margin delta.
struct FusionConfig {
  FusionKind kind = FusionKind::kMul;
  double beta = 0.5;
  double delta = 0.0;
  bool boosted = false;
  std::vector<double> modality_loss_weights;  // empty = all ones; mul/late only
  QGradientMode q_gradient_mode = QGradientMode::kFull;
  std::size_t max_mixture_modalities = 8;

  // Appends human-readable violations; empty result means valid.
  void collect_violations(std::size_t modality_count, std::vector<std::string>& out) const;
  void validate(std::size_t modality_count) const;  // throws ConfigError
};

// ---- Value-level objective pieces (plain probability vectors) ----
// `probs` holds one probability vector per model (modalities for mul,
// mixture candidates for mulmix).

// Down-weighting factor q_i^k = [prod_{j != i} (1 - p_j^k)]^(beta/(M-1)).
// Returns 1 when M == 1 or beta == 0.
double q_factor(const std::vector<std::vector<double>>& probs, std::size_t class_index,
                std::size_t model_index, double beta);

// Class losses l^k = -sum_i w_i q_i^k log p_i^k for every class; label-free.
std::vector<double> mul_class_losses(const std::vector<std::vector<double>>& probs, double beta,
                                     const std::vector<double>& weights = {});

// Smallest class loss wins; ties break to the lowest class index.
std::size_t predict_argmin(const std::vector<double>& class_losses);

// True iff the true-class loss beats every other class by more than delta.
// Gated samples contribute zero loss; the gate is constant under backward.
bool boosted_gate(const std::vector<double>& class_losses, std::size_t true_class, double delta);

// ---- Tape-level forward paths (batched) ----

// Concatenate raw modality vectors and apply the single head.
Var early_fusion_forward(Tape& tape, const ModelBundle& bundle, const MultimodalBatch& batch);

// Arithmetic mean of the per-modality probability vectors.
Var late_fusion_forward(Tape& tape, const ModelBundle& bundle, const MultimodalBatch& batch);

// Sum (or concatenate) encoder outputs, then the shared head.
Var additive_forward(Tape& tape, const ModelBundle& bundle, const MultimodalBatch& batch);

// Sum the shared encoder embeddings over the candidate's modalities and
// apply its head.
Var mixture_forward(Tape& tape, const ModelBundle& bundle, const MultimodalBatch& batch,
                    const MixtureCandidate& candidate);

// One clamped probability matrix per modality (late/mul) or per candidate
// (mulmix).
std::vector<Var> per_model_probs(Tape& tape, const ModelBundle& bundle,
                                 const MultimodalBatch& batch);

// [n x K] class-loss matrix over the given probability matrices
// (down-weighted log losses; candidates play the modality role for mulmix).
Var class_loss_matrix(Tape& tape, const std::vector<Var>& probs, double beta,
                      const std::vector<double>& weights, QGradientMode q_mode);

// Class losses for one sample under the mulmix objective.
std::vector<double> mulmix_class_losses(const ModelBundle& bundle, const MultimodalBatch& sample,
                                        double beta, QGradientMode q_mode = QGradientMode::kFull);

// Mean over the batch of the per-sample objective selected by the config.
// Differentiable end to end; boosted gating is applied per sample.
Var training_loss(Tape& tape, const ModelBundle& bundle, const MultimodalBatch& batch,
                  const FusionConfig& config);

// ---- Inference ----

struct EvalOutput {
  std::vector<int> predicted;
  // Score of class 1 for AUC on binary tasks. Probability-producing kinds
  // use p^1 directly; argmin kinds use softmin over class losses.
  std::vector<double> positive_score;
  // argmax of each individual model's probabilities: per modality for
  // late/mul, per singleton candidate for mulmix, absent for early/add.
  std::vector<std::vector<int>> per_modality_predicted;
};

// Forward the whole batch without gradients, in chunks.
EvalOutput evaluate(const ModelBundle& bundle, const MultimodalBatch& batch,
                    const FusionConfig& config, std::size_t chunk_rows = 2048);

}  // namespace mmfuse
