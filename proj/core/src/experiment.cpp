#include "mmfuse/experiment.hpp"

#include <atomic>
#include <cstdio>
#include <ctime>
#include <filesystem>
#include <fstream>
#include <iomanip>
#include <sstream>

#include "mmfuse/errors.hpp"

namespace fs = std::filesystem;

namespace mmfuse {

using nlohmann::json;

std::uint64_t fnv1a64(const std::string& bytes) {
  std::uint64_t h = 14695981039346656037ull;
  for (unsigned char c : bytes) {
    h ^= c;
    h *= 1099511628211ull;
  }
  return h;
}

std::string fnv1a64_hex(const std::string& bytes) {
  std::ostringstream os;
  os << std::hex << std::setw(16) << std::setfill('0') << fnv1a64(bytes);
  return os.str();
}

void atomic_write_file(const std::string& path, const std::string& contents) {
  fs::path p(path);
  fs::path dir = p.parent_path();
  std::error_code ec;
  if (!dir.empty()) fs::create_directories(dir, ec);
  static std::atomic<unsigned> counter{0};
  fs::path tmp = dir / (p.filename().string() + ".tmp." + std::to_string(counter++));
  {
    std::ofstream out(tmp, std::ios::binary);
    if (!out) throw IoError("cannot open for writing: " + tmp.string());
    out << contents;
    if (!out) {
      fs::remove(tmp, ec);
      throw IoError("failed writing: " + tmp.string());
    }
  }
  fs::rename(tmp, p, ec);
  if (ec) {
    fs::remove(tmp, ec);
    throw IoError("cannot rename " + tmp.string() + " to " + path);
  }
}

std::string iso8601_utc_now() {
  const std::time_t now = std::time(nullptr);
  std::tm tm_utc{};
  gmtime_r(&now, &tm_utc);
  char buf[32];
  std::strftime(buf, sizeof(buf), "%Y-%m-%dT%H:%M:%SZ", &tm_utc);
  return buf;
}

// ---- JSON parsing helpers; errors carry the field path ----

namespace {

const json& member(const json& j, const char* key, const std::string& where) {
  auto it = j.find(key);
  if (it == j.end()) throw ConfigError("config: missing field '" + where + "." + key + "'");
  return *it;
}

template <typename T>
T as(const json& j, const std::string& where) {
  try {
    return j.get<T>();
  } catch (const json::exception& e) {
    throw ConfigError("config: field '" + where + "' has the wrong type (" + e.what() + ")");
  }
}

template <typename T>
T field_or(const json& j, const char* key, const std::string& where, T fallback) {
  auto it = j.find(key);
  if (it == j.end() || it->is_null()) return fallback;
  return as<T>(*it, where + "." + std::string(key));
}

void check_keys(const json& j, std::initializer_list<const char*> allowed,
                const std::string& where) {
  if (!j.is_object()) throw ConfigError("config: '" + where + "' must be an object");
  for (const auto& item : j.items()) {
    bool known = false;
    for (const char* a : allowed) {
      if (item.key() == a) {
        known = true;
        break;
      }
    }
    if (!known) throw ConfigError("config: unknown field '" + where + "." + item.key() + "'");
  }
}

json optional_number(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

json optional_size(const std::optional<std::size_t>& v) { return v ? json(*v) : json(nullptr); }

}  // namespace

std::size_t DatasetConfig::modality_count() const {
  return source == Source::kFile ? file.modality_columns.size() : synthetic.modalities;
}

json ExperimentConfig::to_json() const {
  json d;
  if (dataset.source == DatasetConfig::Source::kFile) {
    d["source"] = "file";
    json f;
    f["path"] = dataset.file.path;
    f["label_column"] = dataset.file.label_column;
    f["modality_columns"] = dataset.file.modality_columns;
    f["has_header"] = dataset.file.has_header ? json(*dataset.file.has_header) : json(nullptr);
    f["test_tail_rows"] = dataset.file.test_tail_rows;
    f["dev_tail_rows"] = dataset.file.dev_tail_rows;
    f["train_downsample"] = dataset.file.train_downsample;
    f["downsample_seed"] = dataset.file.downsample_seed;
    f["normalization"] =
        dataset.file.normalization == Normalization::kZscore ? "zscore" : "none";
    d["file"] = f;
  } else {
    d["source"] = "synthetic";
    json s;
    s["train_rows"] = dataset.synthetic.train_rows;
    s["dev_rows"] = dataset.synthetic.dev_rows;
    s["test_rows"] = dataset.synthetic.test_rows;
    s["classes"] = dataset.synthetic.classes;
    s["modalities"] = dataset.synthetic.modalities;
    s["dims"] = dataset.synthetic.dims;
    s["separation"] = dataset.synthetic.separation;
    s["noise_sigma"] = dataset.synthetic.noise_sigma;
    s["seed"] = dataset.synthetic.seed;
    d["synthetic"] = s;
  }

  json m;
  m["embedding_dim"] = model.embedding_dim;
  m["encoder_hidden"] = model.encoder_hidden;
  m["head_hidden"] = model.head_hidden;
  m["activation"] = to_string(model.activation);
  m["heads_on_raw_inputs"] = model.heads_on_raw_inputs;
  m["per_candidate_encoders"] = model.per_candidate_encoders;
  m["add_combine"] = model.add_combine == AddCombine::kConcat ? "concat" : "sum";

  json f;
  f["kind"] = to_string(fusion.kind);
  f["beta"] = fusion.beta;
  f["delta"] = fusion.delta;
  f["boosted"] = fusion.boosted;
  f["modality_loss_weights"] = fusion.modality_loss_weights;
  f["q_gradient_mode"] = to_string(fusion.q_gradient_mode);
  f["max_mixture_modalities"] = fusion.max_mixture_modalities;

  json o;
  o["kind"] = to_string(optimizer.kind);
  o["learning_rate"] = optimizer.learning_rate;
  o["momentum"] = optimizer.momentum;
  o["adam_beta1"] = optimizer.adam_beta1;
  o["adam_beta2"] = optimizer.adam_beta2;
  o["adam_epsilon"] = optimizer.adam_epsilon;
  o["weight_decay"] = optimizer.weight_decay;
  o["clip_norm"] = optional_number(optimizer.clip_norm);
  o["lr_steps"] = optimizer.lr_steps;
  o["lr_decay"] = optional_number(optimizer.lr_decay);

  json t;
  t["batch_size"] = training.batch_size;
  t["max_epochs"] = training.max_epochs;
  t["max_iterations"] = optional_size(training.max_iterations);
  t["eval_every_epochs"] = training.eval_every_epochs;
  t["patience"] = training.patience;
  t["dev_metric"] = to_string(training.dev_metric);

  json j;
  j["dataset"] = d;
  j["model"] = m;
  j["fusion"] = f;
  j["optimizer"] = o;
  j["training"] = t;
  j["seeds"] = seeds;
  j["output_dir"] = output_dir;
  return j;
}

ExperimentConfig ExperimentConfig::from_json(const json& j) {
  check_keys(j, {"dataset", "model", "fusion", "optimizer", "training", "seeds", "output_dir",
                 "_fingerprint"},
             "(top level)");
  ExperimentConfig c;

  const json& d = member(j, "dataset", "(top level)");
  check_keys(d, {"source", "file", "synthetic"}, "dataset");
  const std::string source = as<std::string>(member(d, "source", "dataset"), "dataset.source");
  if (source == "file") {
    c.dataset.source = DatasetConfig::Source::kFile;
    const json& f = member(d, "file", "dataset");
    check_keys(f,
               {"path", "label_column", "modality_columns", "has_header", "test_tail_rows",
                "dev_tail_rows", "train_downsample", "downsample_seed", "normalization"},
               "dataset.file");
    c.dataset.file.path = as<std::string>(member(f, "path", "dataset.file"), "dataset.file.path");
    c.dataset.file.label_column = field_or<std::size_t>(f, "label_column", "dataset.file", 0);
    c.dataset.file.modality_columns = as<std::vector<std::vector<std::size_t>>>(
        member(f, "modality_columns", "dataset.file"), "dataset.file.modality_columns");
    if (f.contains("has_header") && !f["has_header"].is_null()) {
      c.dataset.file.has_header = as<bool>(f["has_header"], "dataset.file.has_header");
    }
    c.dataset.file.test_tail_rows = field_or<std::size_t>(f, "test_tail_rows", "dataset.file", 0);
    c.dataset.file.dev_tail_rows = field_or<std::size_t>(f, "dev_tail_rows", "dataset.file", 0);
    c.dataset.file.train_downsample =
        field_or<double>(f, "train_downsample", "dataset.file", 1.0);
    c.dataset.file.downsample_seed =
        field_or<std::uint64_t>(f, "downsample_seed", "dataset.file", 1);
    const std::string norm =
        field_or<std::string>(f, "normalization", "dataset.file", "zscore");
    if (norm == "zscore") {
      c.dataset.file.normalization = Normalization::kZscore;
    } else if (norm == "none") {
      c.dataset.file.normalization = Normalization::kNone;
    } else {
      throw ConfigError("config: dataset.file.normalization must be zscore|none, got '" + norm +
                        "'");
    }
  } else if (source == "synthetic") {
    c.dataset.source = DatasetConfig::Source::kSynthetic;
    const json& s = member(d, "synthetic", "dataset");
    check_keys(s,
               {"train_rows", "dev_rows", "test_rows", "classes", "modalities", "dims",
                "separation", "noise_sigma", "seed"},
               "dataset.synthetic");
    c.dataset.synthetic.train_rows =
        as<std::size_t>(member(s, "train_rows", "dataset.synthetic"), "dataset.synthetic.train_rows");
    c.dataset.synthetic.dev_rows = field_or<std::size_t>(s, "dev_rows", "dataset.synthetic", 0);
    c.dataset.synthetic.test_rows =
        as<std::size_t>(member(s, "test_rows", "dataset.synthetic"), "dataset.synthetic.test_rows");
    c.dataset.synthetic.classes = field_or<std::size_t>(s, "classes", "dataset.synthetic", 2);
    c.dataset.synthetic.modalities =
        field_or<std::size_t>(s, "modalities", "dataset.synthetic", 3);
    c.dataset.synthetic.dims = as<std::vector<std::size_t>>(
        member(s, "dims", "dataset.synthetic"), "dataset.synthetic.dims");
    c.dataset.synthetic.separation = field_or<double>(s, "separation", "dataset.synthetic", 1.0);
    c.dataset.synthetic.noise_sigma =
        field_or<double>(s, "noise_sigma", "dataset.synthetic", 0.43);
    c.dataset.synthetic.seed = field_or<std::uint64_t>(s, "seed", "dataset.synthetic", 7);
  } else {
    throw ConfigError("config: dataset.source must be file|synthetic, got '" + source + "'");
  }

  if (j.contains("model")) {
    const json& m = j["model"];
    check_keys(m,
               {"embedding_dim", "encoder_hidden", "head_hidden", "activation",
                "heads_on_raw_inputs", "per_candidate_encoders", "add_combine"},
               "model");
    c.model.embedding_dim = field_or<std::size_t>(m, "embedding_dim", "model", 16);
    if (m.contains("encoder_hidden")) {
      const json& eh = m["encoder_hidden"];
      if (eh.is_array() && !eh.empty() && eh[0].is_array()) {
        c.model.encoder_hidden =
            as<std::vector<std::vector<std::size_t>>>(eh, "model.encoder_hidden");
      } else {
        c.model.encoder_hidden = {as<std::vector<std::size_t>>(eh, "model.encoder_hidden")};
      }
    }
    c.model.head_hidden =
        field_or<std::vector<std::size_t>>(m, "head_hidden", "model", {16});
    c.model.activation = activation_from_string(
        field_or<std::string>(m, "activation", "model", "relu"));
    c.model.heads_on_raw_inputs = field_or<bool>(m, "heads_on_raw_inputs", "model", false);
    c.model.per_candidate_encoders =
        field_or<bool>(m, "per_candidate_encoders", "model", false);
    const std::string combine = field_or<std::string>(m, "add_combine", "model", "sum");
    if (combine == "sum") {
      c.model.add_combine = AddCombine::kSum;
    } else if (combine == "concat") {
      c.model.add_combine = AddCombine::kConcat;
    } else {
      throw ConfigError("config: model.add_combine must be sum|concat, got '" + combine + "'");
    }
  }

  if (j.contains("fusion")) {
    const json& f = j["fusion"];
    check_keys(f,
               {"kind", "beta", "delta", "boosted", "modality_loss_weights", "q_gradient_mode",
                "max_mixture_modalities"},
               "fusion");
    c.fusion.kind =
        fusion_kind_from_string(field_or<std::string>(f, "kind", "fusion", "mul"));
    c.fusion.beta = field_or<double>(f, "beta", "fusion", 0.5);
    c.fusion.delta = field_or<double>(f, "delta", "fusion", 0.0);
    c.fusion.boosted = field_or<bool>(f, "boosted", "fusion", false);
    if (f.contains("modality_loss_weights") && f["modality_loss_weights"].is_string()) {
      c.fusion.modality_loss_weights =
          named_loss_weights(f["modality_loss_weights"].get<std::string>());
    } else {
      c.fusion.modality_loss_weights =
          field_or<std::vector<double>>(f, "modality_loss_weights", "fusion", {});
    }
    c.fusion.q_gradient_mode = q_gradient_mode_from_string(
        field_or<std::string>(f, "q_gradient_mode", "fusion", "full"));
    c.fusion.max_mixture_modalities =
        field_or<std::size_t>(f, "max_mixture_modalities", "fusion", 8);
  }

  if (j.contains("optimizer")) {
    const json& o = j["optimizer"];
    check_keys(o,
               {"kind", "learning_rate", "momentum", "adam_beta1", "adam_beta2", "adam_epsilon",
                "weight_decay", "clip_norm", "lr_steps", "lr_decay"},
               "optimizer");
    c.optimizer.kind = optimizer_kind_from_string(
        field_or<std::string>(o, "kind", "optimizer", "sgd-momentum"));
    c.optimizer.learning_rate = field_or<double>(o, "learning_rate", "optimizer", 0.01);
    c.optimizer.momentum = field_or<double>(o, "momentum", "optimizer", 0.9);
    c.optimizer.adam_beta1 = field_or<double>(o, "adam_beta1", "optimizer", 0.9);
    c.optimizer.adam_beta2 = field_or<double>(o, "adam_beta2", "optimizer", 0.999);
    c.optimizer.adam_epsilon = field_or<double>(o, "adam_epsilon", "optimizer", 1e-8);
    c.optimizer.weight_decay = field_or<double>(o, "weight_decay", "optimizer", 0.0);
    if (o.contains("clip_norm") && !o["clip_norm"].is_null()) {
      c.optimizer.clip_norm = as<double>(o["clip_norm"], "optimizer.clip_norm");
    }
    c.optimizer.lr_steps = field_or<std::vector<std::pair<std::size_t, double>>>(
        o, "lr_steps", "optimizer", {});
    if (o.contains("lr_decay") && !o["lr_decay"].is_null()) {
      c.optimizer.lr_decay = as<double>(o["lr_decay"], "optimizer.lr_decay");
    }
  }

  if (j.contains("training")) {
    const json& t = j["training"];
    check_keys(t,
               {"batch_size", "max_epochs", "max_iterations", "eval_every_epochs", "patience",
                "dev_metric"},
               "training");
    c.training.batch_size = field_or<std::size_t>(t, "batch_size", "training", 100);
    c.training.max_epochs = field_or<std::size_t>(t, "max_epochs", "training", 200);
    if (t.contains("max_iterations") && !t["max_iterations"].is_null()) {
      c.training.max_iterations = as<std::size_t>(t["max_iterations"], "training.max_iterations");
    }
    c.training.eval_every_epochs =
        field_or<std::size_t>(t, "eval_every_epochs", "training", 1);
    c.training.patience = field_or<std::size_t>(t, "patience", "training", 15);
    c.training.dev_metric =
        dev_metric_from_string(field_or<std::string>(t, "dev_metric", "training", "error"));
  }

  c.seeds = field_or<std::vector<std::uint64_t>>(j, "seeds", "(top level)", {1, 2, 3, 4, 5});
  c.output_dir = field_or<std::string>(j, "output_dir", "(top level)", "runs/experiment");
  return c;
}

ExperimentConfig ExperimentConfig::load(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open config file: " + path);
  json j;
  try {
    j = json::parse(in);
  } catch (const json::exception& e) {
    throw ConfigError("config: " + path + " is not valid JSON: " + e.what());
  }
  return from_json(j);
}

std::vector<std::string> ExperimentConfig::validate() const {
  std::vector<std::string> out;
  const std::size_t m_count = dataset.modality_count();
  if (m_count == 0) out.push_back("dataset: no modalities configured");

  if (dataset.source == DatasetConfig::Source::kFile) {
    const FileDatasetSpec& f = dataset.file;
    if (!fs::exists(f.path)) out.push_back("dataset.file.path does not exist: " + f.path);
    for (std::size_t a = 0; a < f.modality_columns.size(); ++a) {
      if (f.modality_columns[a].empty()) {
        out.push_back("dataset.file.modality_columns[" + std::to_string(a) + "] is empty");
      }
      for (std::size_t col : f.modality_columns[a]) {
        if (col == f.label_column) {
          out.push_back("dataset.file: label column " + std::to_string(f.label_column) +
                        " also appears in modality " + std::to_string(a));
        }
        for (std::size_t b = a + 1; b < f.modality_columns.size(); ++b) {
          const auto& other = f.modality_columns[b];
          if (std::find(other.begin(), other.end(), col) != other.end()) {
            out.push_back("dataset.file: column " + std::to_string(col) +
                          " assigned to modalities " + std::to_string(a) + " and " +
                          std::to_string(b));
          }
        }
      }
    }
    if (!(f.train_downsample > 0.0 && f.train_downsample <= 1.0)) {
      out.push_back("dataset.file.train_downsample must be in (0, 1]");
    }
    if (f.test_tail_rows == 0) out.push_back("dataset.file.test_tail_rows must be > 0");
    if (f.dev_tail_rows == 0) {
      out.push_back("dataset.file.dev_tail_rows must be > 0 (early stopping needs a dev split)");
    }
  } else {
    try {
      dataset.synthetic.validate();
    } catch (const ConfigError& e) {
      out.push_back(e.what());
    }
    if (dataset.synthetic.dev_rows == 0) {
      out.push_back("dataset.synthetic.dev_rows must be > 0 (early stopping needs a dev split)");
    }
  }

  const bool needs_encoders =
      !(fusion.kind == FusionKind::kEarly ||
        ((fusion.kind == FusionKind::kLate || fusion.kind == FusionKind::kMul) &&
         model.heads_on_raw_inputs));
  if (needs_encoders) {
    if (model.embedding_dim == 0) out.push_back("model.embedding_dim must be > 0");
    if (model.encoder_hidden.size() != 1 && model.encoder_hidden.size() != m_count) {
      out.push_back("model.encoder_hidden has " + std::to_string(model.encoder_hidden.size()) +
                    " entries; expected 1 (shared) or " + std::to_string(m_count) +
                    " (one per modality)");
    }
    for (const auto& h : model.encoder_hidden) {
      for (std::size_t width : h) {
        if (width == 0) out.push_back("model.encoder_hidden widths must be > 0");
      }
    }
  }
  for (std::size_t width : model.head_hidden) {
    if (width == 0) out.push_back("model.head_hidden widths must be > 0");
  }
  if (model.heads_on_raw_inputs && fusion.kind != FusionKind::kLate &&
      fusion.kind != FusionKind::kMul) {
    out.push_back("model.heads_on_raw_inputs requires fusion.kind late or mul");
  }
  if (model.per_candidate_encoders && fusion.kind != FusionKind::kMulMix) {
    out.push_back("model.per_candidate_encoders requires fusion.kind mulmix");
  }

  fusion.collect_violations(m_count, out);
  optimizer.collect_violations(out);
  training.collect_violations(out);
  if (training.dev_metric == DevMetric::kAuc &&
      dataset.source == DatasetConfig::Source::kSynthetic && dataset.synthetic.classes != 2) {
    out.push_back("training.dev_metric auc needs a binary task; synthetic classes = " +
                  std::to_string(dataset.synthetic.classes));
  }
  if (seeds.empty()) out.push_back("seeds must not be empty");
  return out;
}

std::string ExperimentConfig::fingerprint(std::uint64_t seed) const {
  json j = to_json();
  j.erase("output_dir");
  j["seeds"] = std::vector<std::uint64_t>{seed};
  return fnv1a64_hex(j.dump());
}

std::string ExperimentConfig::dataset_fingerprint() const {
  return fnv1a64_hex(to_json()["dataset"].dump());
}

Dataset build_dataset(const ExperimentConfig& config) {
  if (config.dataset.source == DatasetConfig::Source::kFile) {
    return load_delimited(config.dataset.file);
  }
  return generate_synthetic(config.dataset.synthetic);
}

ModelBundle build_bundle(const ExperimentConfig& config,
                         const std::vector<std::size_t>& modality_dims, std::size_t classes,
                         std::uint64_t seed) {
  const std::size_t m_count = modality_dims.size();
  const ModelConfig& mc = config.model;
  const FusionKind kind = config.fusion.kind;

  if (kind == FusionKind::kMulMix && m_count > config.fusion.max_mixture_modalities) {
    throw ConfigError("mulmix with " + std::to_string(m_count) +
                      " modalities exceeds max_mixture_modalities (" +
                      std::to_string(config.fusion.max_mixture_modalities) + ")");
  }

  auto hidden_for = [&](std::size_t m) -> const std::vector<std::size_t>& {
    if (mc.encoder_hidden.size() == 1) return mc.encoder_hidden.front();
    if (mc.encoder_hidden.size() != m_count) {
      throw ConfigError("model.encoder_hidden has " + std::to_string(mc.encoder_hidden.size()) +
                        " entries for " + std::to_string(m_count) + " modalities");
    }
    return mc.encoder_hidden[m];
  };

  const bool raw_heads = (kind == FusionKind::kLate || kind == FusionKind::kMul) &&
                         mc.heads_on_raw_inputs;
  std::vector<EncoderSpec> encoders;
  if (kind != FusionKind::kEarly && !raw_heads) {
    for (std::size_t m = 0; m < m_count; ++m) {
      encoders.push_back({modality_dims[m], hidden_for(m), mc.embedding_dim, mc.activation});
    }
  } else if (kind == FusionKind::kEarly) {
    // early fusion keeps no encoder networks; bundle still records M
    for (std::size_t m = 0; m < m_count; ++m) {
      encoders.push_back({modality_dims[m], {}, modality_dims[m], mc.activation});
    }
  }

  std::vector<HeadSpec> heads;
  switch (kind) {
    case FusionKind::kEarly: {
      std::size_t total = 0;
      for (std::size_t d : modality_dims) total += d;
      heads.push_back({total, mc.head_hidden, classes, mc.activation});
      break;
    }
    case FusionKind::kAdd: {
      const std::size_t in = mc.add_combine == AddCombine::kConcat
                                 ? mc.embedding_dim * m_count
                                 : mc.embedding_dim;
      heads.push_back({in, mc.head_hidden, classes, mc.activation});
      break;
    }
    case FusionKind::kLate:
    case FusionKind::kMul: {
      for (std::size_t m = 0; m < m_count; ++m) {
        heads.push_back({raw_heads ? modality_dims[m] : mc.embedding_dim, mc.head_hidden, classes,
                         mc.activation});
      }
      break;
    }
    case FusionKind::kMulMix: {
      const std::size_t count = (1ull << m_count) - 1;
      for (std::size_t i = 0; i < count; ++i) {
        heads.push_back({mc.embedding_dim, mc.head_hidden, classes, mc.activation});
      }
      break;
    }
  }

  return init_bundle(kind, encoders, heads, seed, raw_heads, mc.per_candidate_encoders,
                     mc.add_combine, config.fusion.max_mixture_modalities);
}

RunResult run_experiment(const ExperimentConfig& config, std::uint64_t seed,
                         const std::string& out_dir, const Dataset* prebuilt) {
  {
    std::vector<std::string> violations = config.validate();
    if (!violations.empty()) {
      std::string msg = "invalid config:";
      for (const std::string& v : violations) msg += "\n  - " + v;
      throw ConfigError(msg);
    }
  }

  Dataset local;
  const Dataset* data = prebuilt;
  if (!data) {
    local = build_dataset(config);
    data = &local;
  }

  ModelBundle bundle = build_bundle(config, data->modality_dims(), data->classes, seed);
  TrainingConfig tcfg = config.training;
  tcfg.seed = seed ^ 0x9e3779b97f4a7c15ull;  // shuffle stream distinct from init stream
  TrainResult tr = train(bundle, *data, config.fusion, config.optimizer, tcfg);

  MultimodalBatch test = data->gather(data->test);
  EvalOutput eval_out = evaluate(bundle, test, config.fusion);

  MetricsReport rep;
  rep.error = error_rate(eval_out.predicted, test.labels);
  if (data->classes == 2 && !eval_out.positive_score.empty()) {
    try {
      rep.auc = auc(eval_out.positive_score, test.labels);
    } catch (const MetricError&) {
      // single-class test split; AUC stays unset
    }
  }
  for (const auto& pm : eval_out.per_modality_predicted) {
    rep.per_modality_error.push_back(error_rate(pm, test.labels));
  }
  if (!eval_out.per_modality_predicted.empty()) {
    try {
      rep.over_learn =
          over_learn_error(eval_out.predicted, eval_out.per_modality_predicted, test.labels);
    } catch (const MetricError&) {
    }
  }
  rep.sample_count = test.size();
  rep.seed = seed;
  rep.method = (config.fusion.boosted ? "boosted-" : "") + to_string(config.fusion.kind);
  rep.beta = config.fusion.beta;
  rep.final_train_loss = tr.log.empty() ? 0.0 : tr.log.back().train_loss;
  rep.best_dev_metric = tr.best_dev_metric;
  rep.config_fingerprint = config.fingerprint(seed);
  rep.dataset_fingerprint = config.dataset_fingerprint();
  rep.timestamp = iso8601_utc_now();

  if (!out_dir.empty()) {
    atomic_write_file(out_dir + "/checkpoint.json",
                      checkpoint_to_json(bundle, rep.config_fingerprint));
    atomic_write_file(out_dir + "/metrics.json", rep.to_json_string());
    atomic_write_file(out_dir + "/train_log.csv",
                      train_log_to_csv(tr.log, rep.config_fingerprint,
                                       to_string(config.training.dev_metric)));
    json copy = config.to_json();
    copy["seeds"] = std::vector<std::uint64_t>{seed};
    copy["_fingerprint"] = rep.config_fingerprint;
    atomic_write_file(out_dir + "/config.json", copy.dump(2) + "\n");
  }
  return {std::move(rep), std::move(tr)};
}

std::vector<std::string> preset_names() { return {"synthetic-weak", "higgs-small", "higgs-full"}; }

json preset_config_json(const std::string& name) {
  if (name == "synthetic-weak") {
    // M=3, K=2, one informative modality per sample, sigma chosen so the
    // informed-oracle error rate is about 0.05.
    return json::parse(R"({
      "dataset": {
        "source": "synthetic",
        "synthetic": {
          "train_rows": 3000, "dev_rows": 1000, "test_rows": 4000,
          "classes": 2, "modalities": 3, "dims": [8, 8, 8],
          "separation": 1.0, "noise_sigma": 0.43, "seed": 7
        }
      },
      "model": {
        "embedding_dim": 8,
        "encoder_hidden": [16],
        "head_hidden": [16],
        "activation": "relu"
      },
      "fusion": { "kind": "mul", "beta": 0.5 },
      "optimizer": {
        "kind": "sgd-momentum", "learning_rate": 0.02, "momentum": 0.9,
        "weight_decay": 0.00002
      },
      "training": { "batch_size": 100, "max_epochs": 300, "patience": 20 },
      "seeds": [1, 2, 3, 4, 5],
      "output_dir": "runs/synthetic-weak"
    })");
  }
  if (name == "higgs-small" || name == "higgs-full") {
    json j = json::parse(R"({
      "dataset": {
        "source": "file",
        "file": {
          "path": "data/HIGGS.csv",
          "label_column": 0,
          "modality_columns": [[], []],
          "has_header": null,
          "test_tail_rows": 500000,
          "dev_tail_rows": 100000,
          "train_downsample": 1.0,
          "downsample_seed": 1,
          "normalization": "zscore"
        }
      },
      "model": {
        "embedding_dim": 300,
        "encoder_hidden": [300],
        "head_hidden": [],
        "activation": "relu"
      },
      "fusion": { "kind": "mul", "beta": 0.8 },
      "optimizer": {
        "kind": "sgd-momentum", "learning_rate": 0.01, "momentum": 0.9,
        "weight_decay": 0.00002
      },
      "training": { "batch_size": 100, "max_epochs": 40, "patience": 15 },
      "seeds": [1, 2, 3, 4, 5],
      "output_dir": "runs/higgs"
    })");
    // low-level kinematic features in columns 1-21, derived high-level
    // features in columns 22-28
    std::vector<std::size_t> low, high;
    for (std::size_t c = 1; c <= 21; ++c) low.push_back(c);
    for (std::size_t c = 22; c <= 28; ++c) high.push_back(c);
    j["dataset"]["file"]["modality_columns"] = {low, high};
    if (name == "higgs-small") {
      j["dataset"]["file"]["train_downsample"] = 1.0 / 3.0;
      j["output_dir"] = "runs/higgs-small";
    } else {
      j["output_dir"] = "runs/higgs-full";
    }
    return j;
  }
  std::string known;
  for (const std::string& n : preset_names()) known += (known.empty() ? "" : ", ") + n;
  throw ConfigError("unknown preset '" + name + "' (known: " + known + ")");
}

std::vector<CompareRow> compare_reports(
    const std::vector<std::pair<std::string, MetricsReport>>& reports) {
  if (reports.size() < 2) throw ConfigError("compare: need at least 2 reports");
  const std::string& fp = reports.front().second.dataset_fingerprint;
  for (const auto& [label, rep] : reports) {
    if (rep.dataset_fingerprint != fp) {
      throw ConfigError("compare: dataset fingerprints disagree: '" + reports.front().first +
                        "' has " + fp + " but '" + label + "' has " + rep.dataset_fingerprint +
                        "; reports must come from the same dataset");
    }
  }
  std::vector<CompareRow> rows;
  for (const auto& [label, rep] : reports) rows.push_back({label, rep, false, false});

  std::size_t best = 0;
  for (std::size_t i = 1; i < rows.size(); ++i) {
    if (rows[i].report.error < rows[best].report.error) best = i;
  }
  rows[best].best = true;
  std::size_t second = rows.size();
  for (std::size_t i = 0; i < rows.size(); ++i) {
    if (i == best) continue;
    if (second == rows.size() || rows[i].report.error < rows[second].report.error) second = i;
  }
  if (second < rows.size()) rows[second].second = true;
  return rows;
}

namespace {

std::string fmt_opt(const std::optional<double>& v) {
  if (!v) return "-";
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << *v;
  return os.str();
}

std::string fmt(double v) {
  std::ostringstream os;
  os << std::fixed << std::setprecision(4) << v;
  return os.str();
}

}  // namespace

std::string render_compare_text(const std::vector<CompareRow>& rows) {
  std::size_t width = 8;
  for (const CompareRow& r : rows) width = std::max(width, r.label.size() + 2);
  std::ostringstream os;
  os << std::left << std::setw(static_cast<int>(width)) << "method" << std::setw(10) << "error"
     << std::setw(10) << "err_std" << std::setw(10) << "auc" << std::setw(10) << "auc_std"
     << std::setw(8) << "seeds" << "rank\n";
  for (const CompareRow& r : rows) {
    os << std::left << std::setw(static_cast<int>(width)) << r.label << std::setw(10)
       << fmt(r.report.error) << std::setw(10) << fmt_opt(r.report.error_std) << std::setw(10)
       << fmt_opt(r.report.auc) << std::setw(10) << fmt_opt(r.report.auc_std) << std::setw(8)
       << r.report.n_seeds << (r.best ? "best" : (r.second ? "2nd" : "")) << "\n";
  }
  return os.str();
}

std::string render_compare_csv(const std::vector<CompareRow>& rows) {
  std::ostringstream os;
  os << "method,error,error_std,auc,auc_std,n_seeds,rank\n";
  os.precision(17);
  for (const CompareRow& r : rows) {
    os << r.label << "," << r.report.error << ",";
    if (r.report.error_std) os << *r.report.error_std;
    os << ",";
    if (r.report.auc) os << *r.report.auc;
    os << ",";
    if (r.report.auc_std) os << *r.report.auc_std;
    os << "," << r.report.n_seeds << "," << (r.best ? "best" : (r.second ? "2nd" : "")) << "\n";
  }
  return os.str();
}

}  // namespace mmfuse
