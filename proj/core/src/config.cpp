#include "repcl/config.hpp"

#include "repcl/errors.hpp"

#include <fmt/format.h>

#include <algorithm>
#include <charconv>
#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>

namespace repcl {

namespace {

std::string trim(const std::string& s) {
  const auto b = s.find_first_not_of(" \t\r");
  if (b == std::string::npos) return "";
  const auto e = s.find_last_not_of(" \t\r");
  return s.substr(b, e - b + 1);
}

[[noreturn]] void bad_value(const std::string& key, const std::string& value, const std::string& type) {
  throw ConfigError("invalid value '" + value + "' for " + key + " (expected " + type + ")");
}

long long parse_int(const std::string& key, const std::string& v) {
  long long out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "int");
  return out;
}

int parse_i32(const std::string& key, const std::string& v) {
  const long long x = parse_int(key, v);
  if (x < std::numeric_limits<int>::min() || x > std::numeric_limits<int>::max()) bad_value(key, v, "int");
  return static_cast<int>(x);
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
  std::uint64_t out = 0;
  const auto [p, ec] = std::from_chars(v.data(), v.data() + v.size(), out);
  if (ec != std::errc() || p != v.data() + v.size()) bad_value(key, v, "unsigned int");
  return out;
}

double parse_real(const std::string& key, const std::string& v) {
  try {
    std::size_t used = 0;
    const double x = std::stod(v, &used);
    if (used != v.size()) bad_value(key, v, "real");
    return x;
  } catch (const std::logic_error&) {
    bad_value(key, v, "real");
  }
}

bool parse_bool(const std::string& key, const std::string& v) {
  if (v == "true" || v == "1") return true;
  if (v == "false" || v == "0") return false;
  bad_value(key, v, "bool");
}

std::string fmt_real(double x) { return fmt::format("{}", x); }
std::string fmt_bool(bool b) { return b ? "true" : "false"; }

struct Field {
  SchemaField schema;
  std::function<void(ExperimentConfig&, const std::string&)> set;
  std::function<std::string(const ExperimentConfig&)> get;
};

#define REPCL_INT(KEY, MEMBER, HELP)                                                             \
  Field{{KEY, "int", HELP},                                                                      \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_i32(KEY, v); },         \
        [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }}
#define REPCL_U64(KEY, MEMBER, HELP)                                                             \
  Field{{KEY, "uint", HELP},                                                                     \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_u64(KEY, v); },         \
        [](const ExperimentConfig& c) { return std::to_string(c.MEMBER); }}
#define REPCL_REAL(KEY, MEMBER, HELP)                                                            \
  Field{{KEY, "real", HELP},                                                                     \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_real(KEY, v); },        \
        [](const ExperimentConfig& c) { return fmt_real(c.MEMBER); }}
#define REPCL_BOOL(KEY, MEMBER, HELP)                                                            \
  Field{{KEY, "bool", HELP},                                                                     \
        [](ExperimentConfig& c, const std::string& v) { c.MEMBER = parse_bool(KEY, v); },        \
        [](const ExperimentConfig& c) { return fmt_bool(c.MEMBER); }}

const std::vector<Field>& fields() {
  static const std::vector<Field> f = {
      Field{{"preset", "string", "hyperparameter preset applied before other keys"},
            [](ExperimentConfig& c, const std::string& v) { apply_preset(c, v); },
            [](const ExperimentConfig& c) { return c.preset; }},
      Field{{"dataset", "string", "\"synthetic\" or path to a JSONL corpus"},
            [](ExperimentConfig& c, const std::string& v) {
              if (v.empty()) bad_value("dataset", v, "path or synthetic");
              c.dataset = v;
            },
            [](const ExperimentConfig& c) { return c.dataset; }},
      REPCL_INT("synthetic.num_classes", synthetic.num_classes, "classes in the generated corpus"),
      REPCL_INT("synthetic.per_class", synthetic.per_class, "instances per generated class"),
      REPCL_INT("synthetic.seq_len", synthetic.seq_len, "tokens per generated instance"),
      REPCL_INT("synthetic.vocab_size", synthetic.vocab_size, "generated vocabulary size (incl. reserved ids)"),
      REPCL_INT("synthetic.window", synthetic.window, "positions per signature window"),
      REPCL_REAL("synthetic.signature_prob", synthetic.signature_prob, "signature probability per window"),
      REPCL_U64("synthetic.seed", synthetic_seed, "seed of the generated corpus"),
      REPCL_INT("num_tasks", num_tasks, "tasks in the stream"),
      REPCL_INT("classes_per_task", classes_per_task, "new classes per task"),
      REPCL_INT("seeds", seeds, "number of seeds per run"),
      REPCL_U64("base_seed", base_seed, "first seed; seeds are base_seed .. base_seed + seeds - 1"),
      REPCL_INT("encoder.embed_dim", encoder.embed_dim, "model width"),
      REPCL_INT("encoder.num_layers", encoder.num_layers, "transformer layers"),
      REPCL_INT("encoder.num_heads", encoder.num_heads, "attention heads"),
      REPCL_INT("encoder.hidden_dim", encoder.hidden_dim, "feed-forward width"),
      REPCL_INT("encoder.max_seq_len", encoder.max_seq_len, "longer inputs are truncated"),
      Field{{"encoder.pooling", "enum", "sentence_mean | span_mean | span_concat"},
            [](ExperimentConfig& c, const std::string& v) { c.encoder.pooling = pooling_from_string(v); },
            [](const ExperimentConfig& c) { return to_string(c.encoder.pooling); }},
      REPCL_INT("encoder.proj_dim", encoder.proj_dim, "contrastive feature width"),
      REPCL_REAL("encoder.dropout", encoder.dropout, "dropout rate"),
      REPCL_REAL("encoder.init_std", encoder.init_std, "weight init standard deviation"),
      REPCL_REAL("lambda1", train.lambda_con, "contrastive loss weight"),
      REPCL_REAL("lambda2", train.lambda_xmlm, "cross-MLM loss weight"),
      REPCL_INT("queue_size", train.queue_size, "feature queue capacity Q"),
      REPCL_REAL("temperature", train.temperature, "contrastive temperature"),
      REPCL_REAL("momentum", train.momentum, "EMA decay of the momentum branch"),
      REPCL_REAL("mask_prob", train.mask_prob, "proportion of partner tokens masked"),
      REPCL_BOOL("queue_reset_per_task", train.queue_reset_per_task, "clear the feature queue at task boundaries"),
      REPCL_INT("adv.steps", train.adv.steps, "adversarial steps K"),
      REPCL_REAL("adv.step_size", train.adv.step_size, "adversarial step size"),
      REPCL_REAL("adv.epsilon", train.adv.epsilon, "perturbation norm bound"),
      Field{{"adv.init", "enum", "zero | uniform_scaled"},
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "zero")
                c.train.adv.init = DeltaInit::Zero;
              else if (v == "uniform_scaled")
                c.train.adv.init = DeltaInit::UniformScaled;
              else
                bad_value("adv.init", v, "zero | uniform_scaled");
            },
            [](const ExperimentConfig& c) { return std::string(c.train.adv.init == DeltaInit::Zero ? "zero" : "uniform_scaled"); }},
      Field{{"adv.norm", "enum", "batch | per_example"},
            [](ExperimentConfig& c, const std::string& v) {
              if (v == "batch")
                c.train.adv.norm = NormScope::Batch;
              else if (v == "per_example")
                c.train.adv.norm = NormScope::PerExample;
              else
                bad_value("adv.norm", v, "batch | per_example");
            },
            [](const ExperimentConfig& c) { return std::string(c.train.adv.norm == NormScope::Batch ? "batch" : "per_example"); }},
      REPCL_INT("memory_budget", train.memory_budget, "exemplars per class"),
      REPCL_INT("epochs_initial", train.epochs_initial, "epochs of the initial stage"),
      REPCL_INT("epochs_replay", train.epochs_replay, "epochs of the replay stage"),
      REPCL_INT("batch_size", train.batch_size, "instances per batch"),
      REPCL_REAL("lr_encoder", train.lr_encoder, "encoder learning rate"),
      REPCL_REAL("lr_head", train.lr_head, "head learning rate"),
      REPCL_REAL("adam.beta1", train.adam.beta1, "first-moment decay"),
      REPCL_REAL("adam.beta2", train.adam.beta2, "second-moment decay"),
      REPCL_REAL("adam.eps", train.adam.eps, "denominator epsilon"),
      REPCL_REAL("adam.weight_decay", train.adam.weight_decay, "L2 penalty"),
      REPCL_BOOL("no_con", train.no_con, "drop the contrastive loss"),
      REPCL_BOOL("no_xmlm", train.no_xmlm, "drop the cross-MLM loss"),
      REPCL_BOOL("no_adv", train.no_adv, "replay with clean CE only"),
      REPCL_BOOL("mlm_instead_of_xmlm", train.mlm_instead_of_xmlm, "plain MLM without the anchor"),
      REPCL_BOOL("no_replay", train.no_replay, "skip memory and replay"),
      REPCL_BOOL("infomax_variant", train.infomax_variant, "self-view InfoNCE instead of con + xmlm"),
      REPCL_INT("diag.mine_epochs", diagnostics.mine.epochs, "MINE training epochs"),
      REPCL_INT("diag.mine_batch", diagnostics.mine.batch_size, "MINE batch size"),
      REPCL_INT("diag.mine_hidden", diagnostics.mine.hidden, "MINE hidden width"),
      REPCL_REAL("diag.mine_lr", diagnostics.mine.lr, "MINE learning rate"),
      REPCL_INT("diag.min_pairs", diagnostics.min_pairs, "minimum same-class pairs"),
      REPCL_INT("diag.top_k", diagnostics.top_k, "eigenvalues kept"),
      REPCL_BOOL("diag.task1", diagnostics.task1, "compute task-1 diagnostics during run"),
  };
  return f;
}

#undef REPCL_INT
#undef REPCL_U64
#undef REPCL_REAL
#undef REPCL_BOOL

const Field& find_field(const std::string& key) {
  for (const Field& f : fields())
    if (f.schema.key == key) return f;
  throw ConfigError("unknown config key: " + key);
}

}  // namespace

std::uint64_t fnv1a64(const std::string& s) {
  std::uint64_t h = 0xcbf29ce484222325ULL;
  for (unsigned char c : s) {
    h ^= c;
    h *= 0x100000001b3ULL;
  }
  return h;
}

const std::vector<SchemaField>& config_schema() {
  static const std::vector<SchemaField> s = [] {
    std::vector<SchemaField> out;
    for (const Field& f : fields()) out.push_back(f.schema);
    return out;
  }();
  return s;
}

std::string schema_text() {
  const ExperimentConfig defaults;
  std::ostringstream out;
  for (const Field& f : fields())
    out << fmt::format("  {:<26} {:<7} (default {}) {}\n", f.schema.key, f.schema.type, f.get(defaults), f.schema.help);
  return out.str();
}

void set_config_value(ExperimentConfig& cfg, const std::string& key, const std::string& value) {
  find_field(key).set(cfg, value);
}

void ExperimentConfig::validate() const {
  if (dataset == "synthetic") {
    if (synthetic.num_classes < 1 || synthetic.per_class < 4 || synthetic.seq_len < 1 || synthetic.window < 1)
      throw ConfigError("synthetic corpus needs positive sizes and at least 4 instances per class");
    if (synthetic.vocab_size < synthetic.num_classes + 10)
      throw ConfigError("synthetic.vocab_size must be >= synthetic.num_classes + 10");
    if (synthetic.signature_prob < 0.0 || synthetic.signature_prob > 1.0)
      throw ConfigError("synthetic.signature_prob must be in [0, 1]");
    if (num_tasks * classes_per_task > synthetic.num_classes)
      throw ConfigError("num_tasks * classes_per_task exceeds the synthetic class count");
  }
  if (num_tasks < 1 || classes_per_task < 1) throw ConfigError("num_tasks and classes_per_task must be >= 1");
  if (seeds < 1) throw ConfigError("seeds must be >= 1");
  EncoderConfig probe = encoder;
  probe.vocab_size = std::max(probe.vocab_size, kNumSpecialTokens + 1);
  probe.validate();
  train.validate();
  diagnostics.mine.validate();
  if (diagnostics.min_pairs < 2) throw ConfigError("diag.min_pairs must be >= 2");
  if (diagnostics.top_k < 1) throw ConfigError("diag.top_k must be >= 1");
}

std::string ExperimentConfig::to_text() const {
  std::string out;
  for (const Field& f : fields()) out += f.schema.key + " = " + f.get(*this) + "\n";
  return out;
}

nlohmann::json ExperimentConfig::to_json() const {
  nlohmann::json j = nlohmann::json::object();
  for (const Field& f : fields()) j[f.schema.key] = f.get(*this);
  return j;
}

std::string ExperimentConfig::hash() const { return fmt::format("{:016x}", fnv1a64(to_text())); }

ExperimentConfig parse_config(const std::string& text) {
  std::vector<std::pair<std::string, std::string>> entries;
  std::set<std::string> seen;
  std::istringstream in(text);
  std::string line;
  int lineno = 0;
  while (std::getline(in, line)) {
    ++lineno;
    const auto hash = line.find('#');
    if (hash != std::string::npos) line.erase(hash);
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError(fmt::format("line {}: expected key = value", lineno));
    std::string key = trim(line.substr(0, eq));
    std::string value = trim(line.substr(eq + 1));
    find_field(key);
    if (!seen.insert(key).second) throw ConfigError(fmt::format("line {}: duplicate key {}", lineno, key));
    entries.emplace_back(std::move(key), std::move(value));
  }
  ExperimentConfig cfg;
  for (const auto& [k, v] : entries)
    if (k == "preset") set_config_value(cfg, k, v);
  for (const auto& [k, v] : entries)
    if (k != "preset") set_config_value(cfg, k, v);
  cfg.validate();
  return cfg;
}

ExperimentConfig load_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_config(ss.str());
}

const std::vector<std::string>& preset_names() {
  static const std::vector<std::string> n = {"none", "toy", "fewrel", "tacred", "maven", "hwu64"};
  return n;
}

void apply_preset(ExperimentConfig& cfg, const std::string& name) {
  struct P {
    double l1, l2;
    int q;
    double tau, eta, p;
    int cpt;
    Pooling pooling;
  };
  static const std::map<std::string, P> table = {
      {"fewrel", {0.05, 0.2, 512, 0.05, 0.99, 0.5, 8, Pooling::SpanConcat}},
      {"tacred", {0.05, 0.05, 1024, 0.1, 0.99, 0.2, 4, Pooling::SpanConcat}},
      {"maven", {0.05, 0.05, 512, 0.05, 0.99, 0.1, 12, Pooling::SpanMean}},
      {"hwu64", {0.05, 0.1, 512, 0.05, 0.99, 0.4, 5, Pooling::SentenceMean}},
  };
  if (name == "none") {
    cfg.preset = name;
    return;
  }
  if (name == "toy") {
    // Desk-scale synthetic benchmark: 20 classes in 10 tasks of 2.
    cfg = ExperimentConfig{};
    cfg.preset = name;
    cfg.encoder.embed_dim = 32;
    cfg.encoder.hidden_dim = 64;
    cfg.encoder.num_heads = 2;
    cfg.encoder.proj_dim = 32;
    cfg.encoder.max_seq_len = 32;
    cfg.train.lambda_con = 0.05;
    cfg.train.lambda_xmlm = 0.2;
    cfg.train.queue_size = 512;
    cfg.train.temperature = 0.05;
    cfg.train.mask_prob = 0.5;
    cfg.train.epochs_initial = 5;
    cfg.train.epochs_replay = 4;
    // From-scratch encoder: needs far larger steps than fine-tuning a pretrained one.
    cfg.train.lr_encoder = 1e-3;
    cfg.train.lr_head = 3e-3;
    // Sparser signatures keep both replay variants off the accuracy ceiling.
    cfg.synthetic.signature_prob = 0.5;
    return;
  }
  const auto it = table.find(name);
  if (it == table.end()) throw ConfigError("unknown preset: " + name);
  const P& p = it->second;
  cfg.preset = name;
  cfg.train.lambda_con = p.l1;
  cfg.train.lambda_xmlm = p.l2;
  cfg.train.queue_size = p.q;
  cfg.train.temperature = p.tau;
  cfg.train.momentum = p.eta;
  cfg.train.mask_prob = p.p;
  cfg.train.adv.steps = 2;
  cfg.train.adv.step_size = 0.1;
  cfg.train.adv.epsilon = 0.2;
  cfg.train.memory_budget = 10;
  cfg.num_tasks = 10;
  cfg.classes_per_task = p.cpt;
  cfg.encoder.pooling = p.pooling;
}

const std::vector<std::string>& variant_names() {
  static const std::vector<std::string> n = {"full",      "no_con",  "no_xmlm",  "no_adv", "mlm",
                                             "no_replay", "infomax", "backbone", "ce_only"};
  return n;
}

const std::vector<std::string>& ablation_variants() {
  static const std::vector<std::string> n = {"full", "no_con", "no_xmlm", "no_adv", "mlm", "no_replay", "infomax"};
  return n;
}

void apply_variant(TrainConfig& cfg, const std::string& variant) {
  if (variant == "full") return;
  if (variant == "no_con") {
    cfg.no_con = true;
  } else if (variant == "no_xmlm") {
    cfg.no_xmlm = true;
  } else if (variant == "no_adv") {
    cfg.no_adv = true;
  } else if (variant == "mlm") {
    cfg.mlm_instead_of_xmlm = true;
  } else if (variant == "no_replay") {
    cfg.no_replay = true;
  } else if (variant == "infomax") {
    cfg.infomax_variant = true;
  } else if (variant == "backbone") {
    cfg.no_con = cfg.no_xmlm = cfg.no_adv = true;
  } else if (variant == "ce_only") {
    cfg.no_con = cfg.no_xmlm = cfg.no_adv = cfg.no_replay = true;
  } else {
    throw ConfigError("unknown variant: " + variant);
  }
}

}  // namespace repcl
