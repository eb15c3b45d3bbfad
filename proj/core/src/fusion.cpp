#include "mmfuse/fusion.hpp"

#include <algorithm>
#include <cmath>

#include "mmfuse/errors.hpp"

namespace mmfuse {

std::string to_string(QGradientMode m) {
  return m == QGradientMode::kFull ? "full" : "stop";
}

QGradientMode q_gradient_mode_from_string(const std::string& s) {
  if (s == "full") return QGradientMode::kFull;
  if (s == "stop") return QGradientMode::kStop;
  throw ConfigError("unknown q_gradient_mode '" + s + "' (expected full|stop)");
}

std::vector<double> named_loss_weights(const std::string& name) {
  if (name == "cifar-layers") return {0.3, 0.3, 1.0};
  throw ConfigError("unknown loss-weight preset '" + name + "' (known: cifar-layers)");
}

void FusionConfig::collect_violations(std::size_t modality_count,
                                      std::vector<std::string>& out) const {
  if (!(beta >= 0.0 && beta <= 1.0)) {
    out.push_back("fusion.beta = " + std::to_string(beta) + " is outside [0, 1]");
  }
  if (!(delta >= 0.0)) {
    out.push_back("fusion.delta = " + std::to_string(delta) + " must be >= 0");
  }
  if (boosted && kind != FusionKind::kMul && kind != FusionKind::kMulMix) {
    out.push_back("fusion.boosted requires kind mul or mulmix, got '" + to_string(kind) + "'");
  }
  if (!modality_loss_weights.empty()) {
    if (modality_loss_weights.size() != modality_count) {
      out.push_back("fusion.modality_loss_weights has " +
                    std::to_string(modality_loss_weights.size()) + " entries for " +
                    std::to_string(modality_count) + " modalities");
    }
    for (double w : modality_loss_weights) {
      if (!(w >= 0.0)) {
        out.push_back("fusion.modality_loss_weights entries must be >= 0");
        break;
      }
    }
    const bool all_unit = std::all_of(modality_loss_weights.begin(), modality_loss_weights.end(),
                                      [](double w) { return w == 1.0; });
    if (!all_unit && kind != FusionKind::kMul && kind != FusionKind::kLate) {
      out.push_back("fusion.modality_loss_weights (non-unit) only apply to kinds mul and late");
    }
  }
  if (max_mixture_modalities < 1) {
    out.push_back("fusion.max_mixture_modalities must be >= 1");
  }
  if (kind == FusionKind::kMulMix && modality_count > max_mixture_modalities) {
    out.push_back("fusion.kind mulmix with " + std::to_string(modality_count) +
                  " modalities exceeds the mixture cap " +
                  std::to_string(max_mixture_modalities) + " (2^M - 1 = " +
                  std::to_string((1ull << modality_count) - 1) + " candidate heads)");
  }
}

void FusionConfig::validate(std::size_t modality_count) const {
  std::vector<std::string> violations;
  collect_violations(modality_count, violations);
  if (!violations.empty()) {
    std::string msg = "invalid fusion config:";
    for (const std::string& v : violations) msg += "\n  - " + v;
    throw ConfigError(msg);
  }
}

double q_factor(const std::vector<std::vector<double>>& probs, std::size_t class_index,
                std::size_t model_index, double beta) {
  const std::size_t count = probs.size();
  if (count == 0) throw ShapeError("q_factor: no probability vectors");
  if (model_index >= count) {
    throw ShapeError("q_factor: model index " + std::to_string(model_index) + " out of range");
  }
  if (count == 1 || beta == 0.0) return 1.0;
  double prod = 1.0;
  for (std::size_t j = 0; j < count; ++j) {
    if (j == model_index) continue;
    prod *= 1.0 - probs[j][class_index];
  }
  return std::pow(prod, beta / static_cast<double>(count - 1));
}

std::vector<double> mul_class_losses(const std::vector<std::vector<double>>& probs, double beta,
                                     const std::vector<double>& weights) {
  const std::size_t count = probs.size();
  if (count == 0) throw ShapeError("mul_class_losses: no probability vectors");
  const std::size_t k = probs.front().size();
  for (const auto& p : probs) {
    if (p.size() != k) throw ShapeError("mul_class_losses: class counts disagree");
  }
  if (!weights.empty() && weights.size() != count) {
    throw ShapeError("mul_class_losses: " + std::to_string(weights.size()) + " weights for " +
                     std::to_string(count) + " models");
  }
  std::vector<double> losses(k, 0.0);
  for (std::size_t i = 0; i < count; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    for (std::size_t c = 0; c < k; ++c) {
      losses[c] -= w * q_factor(probs, c, i, beta) * std::log(probs[i][c]);
    }
  }
  return losses;
}

std::size_t predict_argmin(const std::vector<double>& class_losses) {
  if (class_losses.empty()) throw ShapeError("predict_argmin: empty class losses");
  std::size_t best = 0;
  for (std::size_t c = 0; c < class_losses.size(); ++c) {
    if (!std::isfinite(class_losses[c])) {
      throw MetricError("predict_argmin: non-finite class loss at index " + std::to_string(c));
    }
    if (class_losses[c] < class_losses[best]) best = c;  // ties keep the lowest index
  }
  return best;
}

bool boosted_gate(const std::vector<double>& class_losses, std::size_t true_class, double delta) {
  if (true_class >= class_losses.size()) {
    throw ShapeError("boosted_gate: class " + std::to_string(true_class) + " out of range");
  }
  if (!(delta >= 0.0)) throw ConfigError("boosted_gate: delta must be >= 0");
  for (std::size_t c = 0; c < class_losses.size(); ++c) {
    if (c == true_class) continue;
    if (!(class_losses[true_class] + delta < class_losses[c])) return false;
  }
  return true;
}

namespace {

void check_batch(const ModelBundle& bundle, const MultimodalBatch& batch) {
  if (batch.modality_count() != bundle.modality_count) {
    throw ShapeError("batch has " + std::to_string(batch.modality_count()) +
                     " modalities, bundle expects " + std::to_string(bundle.modality_count));
  }
  for (const Tensor& m : batch.modalities) {
    if (m.rank() != 2 || m.rows() != batch.size()) {
      throw ShapeError("batch modality rows disagree with label count");
    }
  }
}

std::vector<double> resolved_weights(const FusionConfig& config, std::size_t count) {
  // Per-modality weights only make sense when models line up with
  // modalities; mulmix candidates always weigh 1.
  if (config.kind == FusionKind::kMul || config.kind == FusionKind::kLate) {
    if (!config.modality_loss_weights.empty()) return config.modality_loss_weights;
  }
  return std::vector<double>(count, 1.0);
}

}  // namespace

Var early_fusion_forward(Tape& tape, const ModelBundle& bundle, const MultimodalBatch& batch) {
  check_batch(bundle, batch);
  std::vector<Var> parts;
  parts.reserve(batch.modality_count());
  for (const Tensor& m : batch.modalities) parts.push_back(tape.leaf(m));
  Var joint = parts.size() == 1 ? parts[0] : tape.concat_cols(parts);
  return predict_head(tape, bundle, 0, joint);
}

Var additive_forward(Tape& tape, const ModelBundle& bundle, const MultimodalBatch& batch) {
  check_batch(bundle, batch);
  std::vector<Var> embeddings;
  embeddings.reserve(batch.modality_count());
  for (std::size_t m = 0; m < batch.modality_count(); ++m) {
    embeddings.push_back(encode(tape, bundle, m, tape.leaf(batch.modalities[m])));
  }
  Var u;
  if (bundle.add_combine == AddCombine::kConcat) {
    u = embeddings.size() == 1 ? embeddings[0] : tape.concat_cols(embeddings);
  } else {
    u = embeddings[0];
    for (std::size_t m = 1; m < embeddings.size(); ++m) u = tape.add(u, embeddings[m]);
  }
  return predict_head(tape, bundle, 0, u);
}

Var mixture_forward(Tape& tape, const ModelBundle& bundle, const MultimodalBatch& batch,
                    const MixtureCandidate& candidate) {
  check_batch(bundle, batch);
  if (candidate.members.empty()) throw ShapeError("mixture_forward: empty candidate");
  Var u;
  bool first = true;
  for (std::size_t m : candidate.members) {
    const Mlp& enc = bundle.encoders[bundle.encoder_index(candidate.id, m)];
    Var e = enc.forward(tape, tape.leaf(batch.modalities[m]));
    u = first ? e : tape.add(u, e);
    first = false;
  }
  return predict_head(tape, bundle, candidate.id, u);
}

std::vector<Var> per_model_probs(Tape& tape, const ModelBundle& bundle,
                                 const MultimodalBatch& batch) {
  check_batch(bundle, batch);
  std::vector<Var> probs;
  switch (bundle.kind) {
    case FusionKind::kLate:
    case FusionKind::kMul: {
      for (std::size_t m = 0; m < bundle.modality_count; ++m) {
        Var in = tape.leaf(batch.modalities[m]);
        if (!bundle.heads_on_raw_inputs) in = encode(tape, bundle, m, in);
        probs.push_back(predict_head(tape, bundle, m, in));
      }
      break;
    }
    case FusionKind::kMulMix: {
      // Encode each modality once; candidates reuse the shared embeddings.
      std::vector<Var> embeddings(bundle.modality_count);
      if (!bundle.per_candidate_encoders) {
        for (std::size_t m = 0; m < bundle.modality_count; ++m) {
          embeddings[m] = encode(tape, bundle, m, tape.leaf(batch.modalities[m]));
        }
      }
      for (const MixtureCandidate& c : bundle.candidates) {
        if (bundle.per_candidate_encoders) {
          probs.push_back(mixture_forward(tape, bundle, batch, c));
          continue;
        }
        Var u = embeddings[c.members.front()];
        for (std::size_t i = 1; i < c.members.size(); ++i) {
          u = tape.add(u, embeddings[c.members[i]]);
        }
        probs.push_back(predict_head(tape, bundle, c.id, u));
      }
      break;
    }
    default:
      throw ShapeError("per_model_probs: kind '" + to_string(bundle.kind) +
                       "' has a single fused path");
  }
  return probs;
}

Var late_fusion_forward(Tape& tape, const ModelBundle& bundle, const MultimodalBatch& batch) {
  std::vector<Var> probs = per_model_probs(tape, bundle, batch);
  Var acc = probs[0];
  for (std::size_t m = 1; m < probs.size(); ++m) acc = tape.add(acc, probs[m]);
  return tape.affine(acc, 1.0 / static_cast<double>(probs.size()), 0.0);
}

Var class_loss_matrix(Tape& tape, const std::vector<Var>& probs, double beta,
                      const std::vector<double>& weights, QGradientMode q_mode) {
  const std::size_t count = probs.size();
  if (count == 0) throw ShapeError("class_loss_matrix: no probability matrices");
  if (!weights.empty() && weights.size() != count) {
    throw ShapeError("class_loss_matrix: weight count mismatch");
  }

  // q_i = exp(beta/(C-1) * sum_{j != i} log(1 - p_j)); identically 1 when
  // beta = 0 or there is a single model, recovering the plain sum of
  // per-model cross entropies.
  std::vector<Var> q(count);
  const bool unit_q = (count == 1 || beta == 0.0);
  if (!unit_q) {
    std::vector<Var> log1m(count);
    for (std::size_t i = 0; i < count; ++i) {
      log1m[i] = tape.log(tape.affine(probs[i], -1.0, 1.0));
    }
    Var total = log1m[0];
    for (std::size_t i = 1; i < count; ++i) total = tape.add(total, log1m[i]);
    const double exponent = beta / static_cast<double>(count - 1);
    for (std::size_t i = 0; i < count; ++i) {
      Var qi = tape.exp(tape.affine(tape.sub(total, log1m[i]), exponent, 0.0));
      q[i] = q_mode == QGradientMode::kStop ? tape.detach(qi) : qi;
    }
  }

  Var losses;
  for (std::size_t i = 0; i < count; ++i) {
    const double w = weights.empty() ? 1.0 : weights[i];
    Var log_p = tape.log(probs[i]);
    Var term = unit_q ? tape.affine(log_p, -w, 0.0) : tape.affine(tape.mul(q[i], log_p), -w, 0.0);
    losses = (i == 0) ? term : tape.add(losses, term);
  }
  return losses;
}

std::vector<double> mulmix_class_losses(const ModelBundle& bundle, const MultimodalBatch& sample,
                                        double beta, QGradientMode q_mode) {
  if (bundle.kind != FusionKind::kMulMix) {
    throw ShapeError("mulmix_class_losses: bundle kind is '" + to_string(bundle.kind) + "'");
  }
  if (sample.size() != 1) {
    throw ShapeError("mulmix_class_losses: expected a single sample, got " +
                     std::to_string(sample.size()));
  }
  Tape tape;
  std::vector<Var> probs = per_model_probs(tape, bundle, sample);
  Var losses = class_loss_matrix(tape, probs, beta, {}, q_mode);
  return losses.value().values();
}

Var training_loss(Tape& tape, const ModelBundle& bundle, const MultimodalBatch& batch,
                  const FusionConfig& config) {
  if (batch.size() == 0) throw ShapeError("training_loss: empty batch");
  if (config.kind != bundle.kind) {
    throw ConfigError("training_loss: config kind '" + to_string(config.kind) +
                      "' does not match bundle kind '" + to_string(bundle.kind) + "'");
  }
  config.validate(bundle.modality_count);
  check_batch(bundle, batch);
  const std::size_t n = batch.size();
  std::vector<int> labels = batch.labels;
  for (int y : labels) {
    if (y < 0 || static_cast<std::size_t>(y) >= bundle.classes) {
      throw ShapeError("training_loss: label " + std::to_string(y) + " out of range for K=" +
                       std::to_string(bundle.classes));
    }
  }

  Var per_sample;  // [n] true-class objective values
  switch (config.kind) {
    case FusionKind::kEarly:
    case FusionKind::kAdd: {
      Var p = config.kind == FusionKind::kEarly ? early_fusion_forward(tape, bundle, batch)
                                                : additive_forward(tape, bundle, batch);
      per_sample = tape.affine(tape.log(tape.gather_cols(p, labels)), -1.0, 0.0);
      break;
    }
    case FusionKind::kLate: {
      // Each modality model trains on its own cross entropy; averaging
      // only happens at prediction time.
      std::vector<Var> probs = per_model_probs(tape, bundle, batch);
      Var losses =
          class_loss_matrix(tape, probs, 0.0, resolved_weights(config, probs.size()),
                            config.q_gradient_mode);
      per_sample = tape.gather_cols(losses, labels);
      break;
    }
    case FusionKind::kMul:
    case FusionKind::kMulMix: {
      std::vector<Var> probs = per_model_probs(tape, bundle, batch);
      Var losses = class_loss_matrix(tape, probs, config.beta,
                                     resolved_weights(config, probs.size()),
                                     config.q_gradient_mode);
      per_sample = tape.gather_cols(losses, labels);
      if (config.boosted) {
        // 0/1 factor from the forward values: samples already correct by
        // margin delta contribute nothing, and the gate is a constant
        // under backward.
        const Tensor& lv = losses.value();
        Tensor keep({n});
        std::vector<double> row(bundle.classes);
        for (std::size_t r = 0; r < n; ++r) {
          for (std::size_t c = 0; c < bundle.classes; ++c) row[c] = lv.at(r, c);
          keep[r] = boosted_gate(row, static_cast<std::size_t>(labels[r]), config.delta)
                        ? 0.0
                        : 1.0;
        }
        per_sample = tape.mul(per_sample, tape.leaf(std::move(keep)));
      }
      break;
    }
  }
  return tape.affine(tape.sum(per_sample), 1.0 / static_cast<double>(n), 0.0);
}

namespace {

MultimodalBatch slice_batch(const MultimodalBatch& batch, std::size_t start, std::size_t count) {
  MultimodalBatch out;
  out.labels.assign(batch.labels.begin() + start, batch.labels.begin() + start + count);
  if (!batch.ids.empty()) {
    out.ids.assign(batch.ids.begin() + start, batch.ids.begin() + start + count);
  }
  for (const Tensor& m : batch.modalities) {
    const std::size_t d = m.cols();
    Tensor sub({count, d});
    std::copy(m.data() + start * d, m.data() + (start + count) * d, sub.data());
    out.modalities.push_back(std::move(sub));
  }
  return out;
}

std::size_t argmax_row(const Tensor& p, std::size_t row) {
  std::size_t best = 0;
  for (std::size_t c = 1; c < p.cols(); ++c) {
    if (!std::isfinite(p.at(row, c))) {
      throw MetricError("evaluate: non-finite probability at row " + std::to_string(row));
    }
    if (p.at(row, c) > p.at(row, best)) best = c;
  }
  if (!std::isfinite(p.at(row, 0))) {
    throw MetricError("evaluate: non-finite probability at row " + std::to_string(row));
  }
  return best;
}

void softmin_scores(const Tensor& losses, std::vector<double>& out) {
  // Positive-class ranking score for binary argmin prediction:
  // softmin over class losses, exp(-l^k) normalized.
  for (std::size_t r = 0; r < losses.rows(); ++r) {
    const double l0 = losses.at(r, 0), l1 = losses.at(r, 1);
    const double m = std::min(l0, l1);
    const double e0 = std::exp(-(l0 - m)), e1 = std::exp(-(l1 - m));
    out.push_back(e1 / (e0 + e1));
  }
}

}  // namespace

EvalOutput evaluate(const ModelBundle& bundle, const MultimodalBatch& batch,
                    const FusionConfig& config, std::size_t chunk_rows) {
  check_batch(bundle, batch);
  config.validate(bundle.modality_count);
  EvalOutput out;
  const bool binary = bundle.classes == 2;
  const bool per_modality = bundle.kind == FusionKind::kLate || bundle.kind == FusionKind::kMul ||
                            bundle.kind == FusionKind::kMulMix;
  if (per_modality) out.per_modality_predicted.resize(bundle.modality_count);

  for (std::size_t start = 0; start < batch.size(); start += chunk_rows) {
    const std::size_t count = std::min(chunk_rows, batch.size() - start);
    MultimodalBatch chunk = slice_batch(batch, start, count);
    Tape tape;
    switch (bundle.kind) {
      case FusionKind::kEarly:
      case FusionKind::kAdd: {
        const Tensor& p = (bundle.kind == FusionKind::kEarly
                               ? early_fusion_forward(tape, bundle, chunk)
                               : additive_forward(tape, bundle, chunk))
                              .value();
        for (std::size_t r = 0; r < count; ++r) {
          out.predicted.push_back(static_cast<int>(argmax_row(p, r)));
          if (binary) out.positive_score.push_back(p.at(r, 1));
        }
        break;
      }
      case FusionKind::kLate: {
        std::vector<Var> probs = per_model_probs(tape, bundle, chunk);
        Var mean = probs[0];
        for (std::size_t m = 1; m < probs.size(); ++m) mean = tape.add(mean, probs[m]);
        mean = tape.affine(mean, 1.0 / static_cast<double>(probs.size()), 0.0);
        const Tensor& p = mean.value();
        for (std::size_t r = 0; r < count; ++r) {
          out.predicted.push_back(static_cast<int>(argmax_row(p, r)));
          if (binary) out.positive_score.push_back(p.at(r, 1));
        }
        for (std::size_t m = 0; m < probs.size(); ++m) {
          const Tensor& pm = probs[m].value();
          for (std::size_t r = 0; r < count; ++r)
            out.per_modality_predicted[m].push_back(static_cast<int>(argmax_row(pm, r)));
        }
        break;
      }
      case FusionKind::kMul:
      case FusionKind::kMulMix: {
        std::vector<Var> probs = per_model_probs(tape, bundle, chunk);
        Var losses = class_loss_matrix(tape, probs, config.beta,
                                       resolved_weights(config, probs.size()),
                                       config.q_gradient_mode);
        const Tensor& lv = losses.value();
        std::vector<double> row(bundle.classes);
        for (std::size_t r = 0; r < count; ++r) {
          for (std::size_t c = 0; c < bundle.classes; ++c) row[c] = lv.at(r, c);
          out.predicted.push_back(static_cast<int>(predict_argmin(row)));
        }
        if (binary) softmin_scores(lv, out.positive_score);
        // Individual-model predictions: modality heads for mul, singleton
        // candidates (the first M by enumeration order) for mulmix.
        for (std::size_t m = 0; m < bundle.modality_count; ++m) {
          const Tensor& pm = probs[m].value();
          for (std::size_t r = 0; r < count; ++r)
            out.per_modality_predicted[m].push_back(static_cast<int>(argmax_row(pm, r)));
        }
        break;
      }
    }
  }
  return out;
}

}  // namespace mmfuse
