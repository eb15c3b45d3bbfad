#include "mmfuse/model.hpp"

#include <algorithm>
#include <bit>
#include <cmath>
#include <fstream>
#include <sstream>

#include "json.hpp"
#include "mmfuse/errors.hpp"
#include "mmfuse/rng.hpp"

namespace mmfuse {

using nlohmann::json;

std::string to_string(FusionKind kind) {
  switch (kind) {
    case FusionKind::kEarly: return "early";
    case FusionKind::kLate: return "late";
    case FusionKind::kAdd: return "add";
    case FusionKind::kMul: return "mul";
    case FusionKind::kMulMix: return "mulmix";
  }
  return "?";
}

FusionKind fusion_kind_from_string(const std::string& s) {
  if (s == "early") return FusionKind::kEarly;
  if (s == "late") return FusionKind::kLate;
  if (s == "add") return FusionKind::kAdd;
  if (s == "mul") return FusionKind::kMul;
  if (s == "mulmix") return FusionKind::kMulMix;
  throw ConfigError("unknown fusion kind '" + s + "' (expected early|late|add|mul|mulmix)");
}

std::string to_string(Activation a) {
  switch (a) {
    case Activation::kRelu: return "relu";
    case Activation::kTanh: return "tanh";
    case Activation::kIdentity: return "identity";
  }
  return "?";
}

Activation activation_from_string(const std::string& s) {
  if (s == "relu") return Activation::kRelu;
  if (s == "tanh") return Activation::kTanh;
  if (s == "identity") return Activation::kIdentity;
  throw ConfigError("unknown activation '" + s + "' (expected relu|tanh|identity)");
}

std::size_t Mlp::parameter_count() const {
  std::size_t n = 0;
  for (const Tensor& w : weights) n += w.size();
  for (const Tensor& b : biases) n += b.size();
  return n;
}

Var Mlp::forward(Tape& tape, Var x) const {
  Var h = x;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    h = tape.matmul(h, tape.param(weights[i]));
    h = tape.add_rowvec(h, tape.param(biases[i]));
    if (i + 1 < weights.size()) {
      switch (activation) {
        case Activation::kRelu: h = tape.relu(h); break;
        case Activation::kTanh: h = tape.tanh(h); break;
        case Activation::kIdentity: break;
      }
    }
  }
  return h;
}

bool MixtureCandidate::contains(std::size_t m) const {
  return std::find(members.begin(), members.end(), m) != members.end();
}

std::vector<MixtureCandidate> enumerate_candidates(std::size_t modalities, std::size_t cap) {
  if (modalities < 1) throw ConfigError("mixture enumeration needs at least one modality");
  if (modalities > cap) {
    throw ConfigError("mixture enumeration over " + std::to_string(modalities) +
                      " modalities would create 2^" + std::to_string(modalities) + " - 1 = " +
                      std::to_string((1ull << modalities) - 1) +
                      " candidate heads; the cap is " + std::to_string(cap) +
                      " (raise max_mixture_modalities explicitly to go further)");
  }
  std::vector<MixtureCandidate> out;
  out.reserve((1ull << modalities) - 1);
  for (std::uint64_t mask = 1; mask < (1ull << modalities); ++mask) {
    MixtureCandidate c;
    for (std::size_t m = 0; m < modalities; ++m)
      if (mask & (1ull << m)) c.members.push_back(m);
    out.push_back(std::move(c));
  }
  std::stable_sort(out.begin(), out.end(),
                   [](const MixtureCandidate& a, const MixtureCandidate& b) {
                     if (a.members.size() != b.members.size())
                       return a.members.size() < b.members.size();
                     return a.members < b.members;
                   });
  for (std::size_t i = 0; i < out.size(); ++i) out[i].id = i;
  return out;
}

std::vector<ParamRef> ModelBundle::params() {
  std::vector<ParamRef> out;
  for (std::size_t e = 0; e < encoders.size(); ++e) {
    for (std::size_t l = 0; l < encoders[e].weights.size(); ++l) {
      out.push_back({"enc" + std::to_string(e) + ".l" + std::to_string(l) + ".w",
                     &encoders[e].weights[l], true});
      out.push_back({"enc" + std::to_string(e) + ".l" + std::to_string(l) + ".b",
                     &encoders[e].biases[l], false});
    }
  }
  for (std::size_t h = 0; h < heads.size(); ++h) {
    for (std::size_t l = 0; l < heads[h].weights.size(); ++l) {
      out.push_back({"head" + std::to_string(h) + ".l" + std::to_string(l) + ".w",
                     &heads[h].weights[l], true});
      out.push_back({"head" + std::to_string(h) + ".l" + std::to_string(l) + ".b",
                     &heads[h].biases[l], false});
    }
  }
  return out;
}

std::vector<const Tensor*> ModelBundle::param_tensors() const {
  std::vector<const Tensor*> out;
  auto& self = const_cast<ModelBundle&>(*this);
  for (const ParamRef& p : self.params()) out.push_back(p.tensor);
  return out;
}

std::size_t ModelBundle::parameter_count() const {
  std::size_t n = 0;
  for (const Mlp& e : encoders) n += e.parameter_count();
  for (const Mlp& h : heads) n += h.parameter_count();
  return n;
}

void ModelBundle::zero_grads() const {
  for (const Tensor* t : param_tensors()) t->zero_grad();
}

std::size_t ModelBundle::encoder_index(std::size_t candidate, std::size_t modality) const {
  if (!per_candidate_encoders) return modality;
  std::size_t offset = 0;
  for (std::size_t c = 0; c < candidate; ++c) offset += candidates[c].members.size();
  const auto& members = candidates[candidate].members;
  auto it = std::find(members.begin(), members.end(), modality);
  if (it == members.end()) {
    throw ShapeError("modality " + std::to_string(modality) + " is not part of candidate " +
                     std::to_string(candidate));
  }
  return offset + static_cast<std::size_t>(it - members.begin());
}

bool ModelBundle::uses_encoders() const {
  if (kind == FusionKind::kEarly) return false;
  if ((kind == FusionKind::kLate || kind == FusionKind::kMul) && heads_on_raw_inputs) return false;
  return true;
}

std::size_t ModelBundle::expected_head_count() const {
  switch (kind) {
    case FusionKind::kEarly:
    case FusionKind::kAdd: return 1;
    case FusionKind::kLate:
    case FusionKind::kMul: return modality_count;
    case FusionKind::kMulMix: return (1ull << modality_count) - 1;
  }
  return 0;
}

namespace {

Mlp init_mlp(const std::vector<std::size_t>& dims, Activation act, Rng& rng,
             const std::string& what) {
  for (std::size_t d : dims) {
    if (d == 0) throw ConfigError("zero-dimension layer in " + what);
  }
  Mlp mlp;
  mlp.activation = act;
  for (std::size_t l = 0; l + 1 < dims.size(); ++l) {
    const std::size_t fan_in = dims[l], fan_out = dims[l + 1];
    const double limit = std::sqrt(6.0 / static_cast<double>(fan_in));
    Tensor w({fan_in, fan_out});
    for (std::size_t i = 0; i < w.size(); ++i) w[i] = rng.uniform(-limit, limit);
    mlp.weights.push_back(std::move(w));
    mlp.biases.push_back(Tensor({fan_out}));
  }
  return mlp;
}

std::vector<std::size_t> encoder_dims(const EncoderSpec& s) {
  std::vector<std::size_t> dims{s.input_dim};
  dims.insert(dims.end(), s.hidden.begin(), s.hidden.end());
  dims.push_back(s.output_dim);
  return dims;
}

std::vector<std::size_t> head_dims(const HeadSpec& s) {
  std::vector<std::size_t> dims{s.input_dim};
  dims.insert(dims.end(), s.hidden.begin(), s.hidden.end());
  dims.push_back(s.classes);
  return dims;
}

}  // namespace

ModelBundle init_bundle(FusionKind kind, const std::vector<EncoderSpec>& encoders,
                        const std::vector<HeadSpec>& heads, std::uint64_t seed,
                        bool heads_on_raw_inputs, bool per_candidate_encoders,
                        AddCombine add_combine, std::size_t mixture_cap) {
  ModelBundle bundle;
  bundle.kind = kind;
  bundle.heads_on_raw_inputs = heads_on_raw_inputs;
  bundle.per_candidate_encoders = per_candidate_encoders && kind == FusionKind::kMulMix;
  bundle.add_combine = add_combine;
  bundle.encoder_specs = encoders;
  bundle.head_specs = heads;

  if (heads.empty()) throw ConfigError("init_bundle: at least one head spec required");
  bundle.classes = heads.front().classes;
  if (bundle.classes < 2) throw ConfigError("init_bundle: need K >= 2 classes");
  for (const HeadSpec& h : heads) {
    if (h.classes != bundle.classes)
      throw ConfigError("init_bundle: all heads must emit the same class count");
  }

  // early fusion keeps the encoder specs only to describe modality widths;
  // no encoder networks are created for it
  switch (kind) {
    case FusionKind::kLate:
    case FusionKind::kMul:
      bundle.modality_count = heads_on_raw_inputs ? heads.size() : encoders.size();
      break;
    default: bundle.modality_count = encoders.size(); break;
  }
  if (bundle.modality_count == 0) throw ConfigError("init_bundle: no modalities");

  if (kind == FusionKind::kMulMix) {
    bundle.candidates = enumerate_candidates(bundle.modality_count, mixture_cap);
  }
  if (heads.size() != bundle.expected_head_count()) {
    throw ConfigError("init_bundle: kind '" + to_string(kind) + "' with " +
                      std::to_string(bundle.modality_count) + " modalities expects " +
                      std::to_string(bundle.expected_head_count()) + " heads, got " +
                      std::to_string(heads.size()));
  }

  if (bundle.uses_encoders()) {
    if (!encoders.empty()) {
      const std::size_t d = encoders.front().output_dim;
      for (const EncoderSpec& e : encoders) {
        if (e.output_dim != d) {
          throw ConfigError("init_bundle: all encoder output dims must match (" +
                            std::to_string(e.output_dim) + " vs " + std::to_string(d) + ")");
        }
      }
    }
  }

  Rng rng(seed);
  if (bundle.uses_encoders()) {
    if (bundle.per_candidate_encoders) {
      for (const MixtureCandidate& c : bundle.candidates) {
        for (std::size_t m : c.members) {
          bundle.encoders.push_back(init_mlp(encoder_dims(encoders[m]), encoders[m].activation,
                                             rng, "encoder " + std::to_string(m)));
        }
      }
    } else {
      for (std::size_t m = 0; m < encoders.size(); ++m) {
        bundle.encoders.push_back(init_mlp(encoder_dims(encoders[m]), encoders[m].activation, rng,
                                           "encoder " + std::to_string(m)));
      }
    }
  }
  for (std::size_t h = 0; h < heads.size(); ++h) {
    bundle.heads.push_back(
        init_mlp(head_dims(heads[h]), heads[h].activation, rng, "head " + std::to_string(h)));
  }
  return bundle;
}

Var encode(Tape& tape, const ModelBundle& bundle, std::size_t modality, Var v) {
  if (modality >= bundle.modality_count) {
    throw ShapeError("encode: modality index " + std::to_string(modality) + " out of range (M=" +
                     std::to_string(bundle.modality_count) + ")");
  }
  if (!bundle.uses_encoders()) throw ShapeError("encode: bundle has no encoders");
  // per-candidate bundles answer with the singleton candidate's encoder
  // (candidate m is {m} by enumeration order)
  const Mlp& enc = bundle.encoders[bundle.per_candidate_encoders
                                       ? bundle.encoder_index(modality, modality)
                                       : modality];
  if (v.value().rank() != 2 || v.value().cols() != enc.input_dim()) {
    throw ShapeError("encode: modality " + std::to_string(modality) + " expects dimension " +
                     std::to_string(enc.input_dim()) + ", got " + v.value().shape_str());
  }
  return enc.forward(tape, v);
}

Tensor encode_value(const ModelBundle& bundle, std::size_t modality, const Tensor& v) {
  Tape tape;
  Tensor in = v.rank() == 1 ? Tensor::matrix(1, v.size(), v.values()) : v;
  return encode(tape, bundle, modality, tape.leaf(in)).value();
}

Var predict_head(Tape& tape, const ModelBundle& bundle, std::size_t head, Var u) {
  if (head >= bundle.heads.size()) {
    throw ShapeError("predict_head: head index " + std::to_string(head) + " out of range (" +
                     std::to_string(bundle.heads.size()) + " heads)");
  }
  const Mlp& net = bundle.heads[head];
  if (u.value().rank() != 2 || u.value().cols() != net.input_dim()) {
    throw ShapeError("predict_head: head " + std::to_string(head) + " expects dimension " +
                     std::to_string(net.input_dim()) + ", got " + u.value().shape_str());
  }
  Var logits = net.forward(tape, u);
  return tape.clamp(tape.softmax_rows(logits), kProbClamp, 1.0 - kProbClamp);
}

Tensor predict_head_value(const ModelBundle& bundle, std::size_t head, const Tensor& u) {
  Tape tape;
  Tensor in = u.rank() == 1 ? Tensor::matrix(1, u.size(), u.values()) : u;
  return predict_head(tape, bundle, head, tape.leaf(in)).value();
}

namespace {

constexpr int kCheckpointVersion = 1;

json mlp_to_json(const Mlp& mlp) {
  json layers = json::array();
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    layers.push_back({{"w", mlp.weights[l].values()},
                      {"rows", mlp.weights[l].rows()},
                      {"cols", mlp.weights[l].cols()},
                      {"b", mlp.biases[l].values()}});
  }
  return layers;
}

void mlp_from_json(Mlp& mlp, const json& layers, const std::string& what) {
  if (!layers.is_array() || layers.size() != mlp.weights.size()) {
    throw IoError("checkpoint: layer count mismatch in " + what);
  }
  for (std::size_t l = 0; l < mlp.weights.size(); ++l) {
    std::vector<double> w = layers[l].at("w").get<std::vector<double>>();
    std::vector<double> b = layers[l].at("b").get<std::vector<double>>();
    if (w.size() != mlp.weights[l].size() || b.size() != mlp.biases[l].size()) {
      throw IoError("checkpoint: parameter size mismatch in " + what);
    }
    mlp.weights[l].values() = std::move(w);
    mlp.biases[l].values() = std::move(b);
  }
}

json encoder_spec_to_json(const EncoderSpec& s) {
  return {{"input_dim", s.input_dim},
          {"hidden", s.hidden},
          {"output_dim", s.output_dim},
          {"activation", to_string(s.activation)}};
}

json head_spec_to_json(const HeadSpec& s) {
  return {{"input_dim", s.input_dim},
          {"hidden", s.hidden},
          {"classes", s.classes},
          {"activation", to_string(s.activation)}};
}

EncoderSpec encoder_spec_from_json(const json& j) {
  EncoderSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.output_dim = j.at("output_dim").get<std::size_t>();
  s.activation = activation_from_string(j.at("activation").get<std::string>());
  return s;
}

HeadSpec head_spec_from_json(const json& j) {
  HeadSpec s;
  s.input_dim = j.at("input_dim").get<std::size_t>();
  s.hidden = j.at("hidden").get<std::vector<std::size_t>>();
  s.classes = j.at("classes").get<std::size_t>();
  s.activation = activation_from_string(j.at("activation").get<std::string>());
  return s;
}

}  // namespace

std::string checkpoint_to_json(const ModelBundle& bundle, const std::string& config_fingerprint) {
  json j;
  j["format_version"] = kCheckpointVersion;
  j["config_fingerprint"] = config_fingerprint;
  j["kind"] = to_string(bundle.kind);
  j["modality_count"] = bundle.modality_count;
  j["classes"] = bundle.classes;
  j["heads_on_raw_inputs"] = bundle.heads_on_raw_inputs;
  j["per_candidate_encoders"] = bundle.per_candidate_encoders;
  j["add_combine"] = bundle.add_combine == AddCombine::kSum ? "sum" : "concat";
  j["encoder_specs"] = json::array();
  for (const EncoderSpec& s : bundle.encoder_specs) j["encoder_specs"].push_back(encoder_spec_to_json(s));
  j["head_specs"] = json::array();
  for (const HeadSpec& s : bundle.head_specs) j["head_specs"].push_back(head_spec_to_json(s));
  j["encoders"] = json::array();
  for (const Mlp& e : bundle.encoders) j["encoders"].push_back(mlp_to_json(e));
  j["heads"] = json::array();
  for (const Mlp& h : bundle.heads) j["heads"].push_back(mlp_to_json(h));
  return j.dump();
}

void save_checkpoint(const ModelBundle& bundle, const std::string& path,
                     const std::string& config_fingerprint) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw IoError("cannot open checkpoint file for writing: " + path);
  out << checkpoint_to_json(bundle, config_fingerprint);
  if (!out) throw IoError("failed writing checkpoint: " + path);
}

ModelBundle checkpoint_from_json(const std::string& text, std::string* config_fingerprint) {
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: invalid JSON: ") + e.what());
  }
  try {
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointVersion) {
      throw IoError("checkpoint: unsupported format_version " + std::to_string(version));
    }
    if (config_fingerprint) *config_fingerprint = j.at("config_fingerprint").get<std::string>();
    std::vector<EncoderSpec> enc_specs;
    for (const json& e : j.at("encoder_specs")) enc_specs.push_back(encoder_spec_from_json(e));
    std::vector<HeadSpec> head_specs;
    for (const json& h : j.at("head_specs")) head_specs.push_back(head_spec_from_json(h));

    ModelBundle bundle = init_bundle(
        fusion_kind_from_string(j.at("kind").get<std::string>()), enc_specs, head_specs,
        /*seed=*/0, j.at("heads_on_raw_inputs").get<bool>(),
        j.at("per_candidate_encoders").get<bool>(),
        j.at("add_combine").get<std::string>() == "concat" ? AddCombine::kConcat
                                                           : AddCombine::kSum,
        /*mixture_cap=*/64);
    const json& encs = j.at("encoders");
    if (encs.size() != bundle.encoders.size()) throw IoError("checkpoint: encoder count mismatch");
    for (std::size_t e = 0; e < bundle.encoders.size(); ++e)
      mlp_from_json(bundle.encoders[e], encs[e], "encoder " + std::to_string(e));
    const json& hds = j.at("heads");
    if (hds.size() != bundle.heads.size()) throw IoError("checkpoint: head count mismatch");
    for (std::size_t h = 0; h < bundle.heads.size(); ++h)
      mlp_from_json(bundle.heads[h], hds[h], "head " + std::to_string(h));
    return bundle;
  } catch (const json::exception& e) {
    throw IoError(std::string("checkpoint: missing or malformed field: ") + e.what());
  }
}

ModelBundle load_checkpoint(const std::string& path, std::string* config_fingerprint) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open checkpoint file: " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return checkpoint_from_json(buf.str(), config_fingerprint);
}

}  // namespace mmfuse
