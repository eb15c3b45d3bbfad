#pragma once

#include <cstdint>
#include <iosfwd>
#include <string>
#include <vector>

#include "mmfuse/tape.hpp"
#include "mmfuse/tensor.hpp"

namespace mmfuse {

// Probabilities out of every head are clamped to [kProbClamp, 1 - kProbClamp]
// so that log p and the (1 - p) down-weighting products stay away from 0.
inline constexpr double kProbClamp = 1e-7;

enum class FusionKind { kEarly, kLate, kAdd, kMul, kMulMix };
enum class Activation { kRelu, kTanh, kIdentity };
enum class AddCombine { kSum, kConcat };

std::string to_string(FusionKind kind);
FusionKind fusion_kind_from_string(const std::string& s);
std::string to_string(Activation a);
Activation activation_from_string(const std::string& s);

// Per-modality feature network f_m: R^{d_m} -> R^d. All encoders in a
// bundle share the output dimension so their embeddings can be summed.
struct EncoderSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t output_dim = 0;
  Activation activation = Activation::kRelu;
};

// Prediction network emitting K class logits.
struct HeadSpec {
  std::size_t input_dim = 0;
  std::vector<std::size_t> hidden;
  std::size_t classes = 0;
  Activation activation = Activation::kRelu;
};

// Fully connected network. weights[i] is [in x out], biases[i] is [out];
// the activation is applied after every layer except the last.
struct Mlp {
  std::vector<Tensor> weights;
  std::vector<Tensor> biases;
  Activation activation = Activation::kRelu;

  std::size_t input_dim() const { return weights.empty() ? 0 : weights.front().rows(); }
  std::size_t output_dim() const { return weights.empty() ? 0 : weights.back().cols(); }
  std::size_t parameter_count() const;

  // x is [n x input_dim]; returns [n x output_dim].
  Var forward(Tape& tape, Var x) const;
};

// A non-empty subset of modality indices, one of the 2^M - 1 mixtures.
struct MixtureCandidate {
  std::size_t id = 0;
  std::vector<std::size_t> members;  // sorted modality indices

  bool contains(std::size_t m) const;
};

// All non-empty subsets of {0..M-1}, ordered by size then lexicographically.
// Throws ConfigError when M exceeds the cap (2^M blowup).
std::vector<MixtureCandidate> enumerate_candidates(std::size_t modalities, std::size_t cap = 8);

struct ParamRef {
  std::string name;
  Tensor* tensor;
  bool is_weight;  // false for biases; weight decay applies to weights only
};

// All networks of one fusion model plus the bookkeeping to enumerate their
// parameters deterministically. Head layout by kind: one head for
// early/add, one per modality for late/mul, one per mixture candidate for
// mulmix.
class ModelBundle {
 public:
  FusionKind kind = FusionKind::kMul;
  std::size_t modality_count = 0;
  std::size_t classes = 0;
  bool heads_on_raw_inputs = false;    // mul/late heads consume raw v_m
  bool per_candidate_encoders = false; // mulmix ablation: no encoder sharing
  AddCombine add_combine = AddCombine::kSum;

  std::vector<EncoderSpec> encoder_specs;
  std::vector<HeadSpec> head_specs;

  std::vector<Mlp> encoders;
  std::vector<Mlp> heads;
  std::vector<MixtureCandidate> candidates;  // mulmix only

  // Every parameter exactly once, in a deterministic order (encoders in
  // index order then heads, each layer's weight before its bias).
  std::vector<ParamRef> params();
  std::vector<const Tensor*> param_tensors() const;
  std::size_t parameter_count() const;
  void zero_grads() const;

  // Index into encoders for (candidate, modality); identity when encoders
  // are shared.
  std::size_t encoder_index(std::size_t candidate, std::size_t modality) const;

  bool uses_encoders() const;
  std::size_t expected_head_count() const;
};

// He-style fan-in scaled uniform weights, zero biases, deterministic under
// the seed. Throws ConfigError on zero-dimension layers.
ModelBundle init_bundle(FusionKind kind, const std::vector<EncoderSpec>& encoders,
                        const std::vector<HeadSpec>& heads, std::uint64_t seed,
                        bool heads_on_raw_inputs = false, bool per_candidate_encoders = false,
                        AddCombine add_combine = AddCombine::kSum,
                        std::size_t mixture_cap = 8);

// f_m applied to one batch of modality vectors; v is [n x d_m].
Var encode(Tape& tape, const ModelBundle& bundle, std::size_t modality, Var v);
Tensor encode_value(const ModelBundle& bundle, std::size_t modality, const Tensor& v);

// Head forward to clamped probabilities; u is [n x input_dim].
Var predict_head(Tape& tape, const ModelBundle& bundle, std::size_t head, Var u);
Tensor predict_head_value(const ModelBundle& bundle, std::size_t head, const Tensor& u);

// Versioned JSON checkpoint; doubles round-trip bit-exactly.
void save_checkpoint(const ModelBundle& bundle, const std::string& path,
                     const std::string& config_fingerprint);
std::string checkpoint_to_json(const ModelBundle& bundle, const std::string& config_fingerprint);
ModelBundle load_checkpoint(const std::string& path, std::string* config_fingerprint = nullptr);
ModelBundle checkpoint_from_json(const std::string& text,
                                 std::string* config_fingerprint = nullptr);

}  // namespace mmfuse
