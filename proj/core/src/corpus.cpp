#include "repcl/corpus.hpp"

#include "repcl/errors.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <map>
#include <numeric>
#include <set>
#include <sstream>

namespace repcl {

std::string to_string(SpanKind kind) {
  switch (kind) {
    case SpanKind::HeadEntity:
      return "head_entity";
    case SpanKind::TailEntity:
      return "tail_entity";
    case SpanKind::Trigger:
      return "trigger";
  }
  return "unknown";
}

SpanKind span_kind_from_string(const std::string& s) {
  if (s == "head_entity") return SpanKind::HeadEntity;
  if (s == "tail_entity") return SpanKind::TailEntity;
  if (s == "trigger") return SpanKind::Trigger;
  throw ValidationError("unknown span kind '" + s + "'");
}

const Span* Instance::find_span(SpanKind kind) const {
  for (const Span& s : spans)
    if (s.kind == kind) return &s;
  return nullptr;
}

void validate_instance(const Instance& x, int vocab_size) {
  if (x.label < 0) throw ValidationError("negative label");
  for (int t : x.tokens)
    if (t < 0 || t >= vocab_size) throw ValidationError("token id " + std::to_string(t) + " outside vocabulary");
  const int n = static_cast<int>(x.tokens.size());
  for (const Span& s : x.spans) {
    if (!(0 <= s.start && s.start < s.end && s.end <= n)) {
      throw ValidationError(to_string(s.kind) + " span [" + std::to_string(s.start) + ", " + std::to_string(s.end) +
                            ") invalid for sequence of length " + std::to_string(n));
    }
  }
}

Vocabulary::Vocabulary() {
  for (const char* t : {"[E11]", "[E12]", "[E21]", "[E22]", "[MASK]", "[PAD]"}) add(t);
}

int Vocabulary::add(const std::string& token) {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  const int id = size();
  tokens_.push_back(token);
  ids_.emplace(token, id);
  return id;
}

std::optional<int> Vocabulary::find(const std::string& token) const {
  if (auto it = ids_.find(token); it != ids_.end()) return it->second;
  return std::nullopt;
}

namespace {

struct RawLine {
  std::vector<std::string> text;
  std::string label;
  std::vector<Span> spans;
  std::size_t line_number;
};

RawLine parse_line(const std::string& line, std::size_t line_number) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(line);
  } catch (const nlohmann::json::parse_error& e) {
    throw ParseError(std::string("invalid JSON: ") + e.what(), line_number);
  }
  if (!j.is_object()) throw ParseError("expected a JSON object", line_number);
  if (!j.contains("text") || !j["text"].is_array()) throw ParseError("missing array field \"text\"", line_number);
  if (!j.contains("label") || !j["label"].is_string()) throw ParseError("missing string field \"label\"", line_number);

  RawLine raw;
  raw.line_number = line_number;
  for (const auto& tok : j["text"]) {
    if (!tok.is_string()) throw ParseError("\"text\" must hold strings", line_number);
    raw.text.push_back(tok.get<std::string>());
  }
  raw.label = j["label"].get<std::string>();
  if (j.contains("spans")) {
    if (!j["spans"].is_array()) throw ParseError("\"spans\" must be an array", line_number);
    for (const auto& s : j["spans"]) {
      if (!s.is_array() || s.size() != 3 || !s[0].is_string() || !s[1].is_number_integer() ||
          !s[2].is_number_integer()) {
        throw ParseError("span must be [kind, start, end]", line_number);
      }
      SpanKind kind;
      try {
        kind = span_kind_from_string(s[0].get<std::string>());
      } catch (const ValidationError& e) {
        throw ValidationError("line " + std::to_string(line_number) + ": " + e.what());
      }
      raw.spans.push_back(Span{kind, s[1].get<int>(), s[2].get<int>()});
    }
  }
  return raw;
}

}  // namespace

Corpus parse_corpus(std::istream& in, std::optional<Vocabulary> vocab, int min_instances_per_class) {
  std::vector<RawLine> raws;
  std::string line;
  std::size_t line_number = 0;
  while (std::getline(in, line)) {
    ++line_number;
    if (std::all_of(line.begin(), line.end(), [](unsigned char c) { return std::isspace(c); })) continue;
    raws.push_back(parse_line(line, line_number));
  }

  Corpus corpus;
  if (vocab) corpus.vocab = std::move(*vocab);

  std::set<std::string> labels;
  std::map<std::string, int> counts;
  for (const RawLine& r : raws) {
    labels.insert(r.label);
    ++counts[r.label];
  }
  for (const auto& [name, n] : counts) {
    if (n < min_instances_per_class) {
      throw ValidationError("class '" + name + "' has " + std::to_string(n) + " instances; at least " +
                            std::to_string(min_instances_per_class) + " required");
    }
  }
  corpus.label_names.assign(labels.begin(), labels.end());
  std::map<std::string, int> label_ids;
  for (std::size_t i = 0; i < corpus.label_names.size(); ++i) label_ids[corpus.label_names[i]] = static_cast<int>(i);

  for (const RawLine& r : raws) {
    Instance x;
    x.label = label_ids.at(r.label);
    x.spans = r.spans;
    x.index = static_cast<int>(corpus.instances.size());
    x.tokens.reserve(r.text.size());
    for (const std::string& tok : r.text) x.tokens.push_back(corpus.vocab.add(tok));
    try {
      validate_instance(x, corpus.vocab.size());
    } catch (const ValidationError& e) {
      throw ValidationError("line " + std::to_string(r.line_number) + ": " + e.what());
    }
    corpus.instances.push_back(std::move(x));
  }
  return corpus;
}

Corpus parse_corpus(std::istream& in, std::optional<Vocabulary> vocab) {
  return parse_corpus(in, std::move(vocab), kMinInstancesPerClass);
}

Corpus load_corpus(const std::filesystem::path& path, std::optional<Vocabulary> vocab) {
  std::ifstream in(path);
  if (!in) throw InputError("cannot open corpus file " + path.string());
  return parse_corpus(in, std::move(vocab));
}

TaskStream split_tasks(const Corpus& corpus, int num_tasks, int classes_per_task, std::uint64_t seed) {
  if (num_tasks < 1 || classes_per_task < 1) throw ConfigError("num_tasks and classes_per_task must be positive");

  std::map<int, std::vector<int>> by_class;
  for (std::size_t i = 0; i < corpus.instances.size(); ++i) by_class[corpus.instances[i].label].push_back(static_cast<int>(i));

  const int needed = num_tasks * classes_per_task;
  if (static_cast<int>(by_class.size()) < needed) {
    throw ConfigError("need " + std::to_string(needed) + " classes for " + std::to_string(num_tasks) + " tasks of " +
                      std::to_string(classes_per_task) + ", corpus has " + std::to_string(by_class.size()));
  }

  Rng rng = make_rng(seed, 0x5e11);
  std::vector<int> classes;
  for (const auto& [c, _] : by_class) classes.push_back(c);
  std::shuffle(classes.begin(), classes.end(), rng);
  classes.resize(static_cast<std::size_t>(needed));

  TaskStream stream;
  stream.seed = seed;
  stream.label_names = corpus.label_names;
  for (int t = 0; t < num_tasks; ++t) {
    TaskSpec task;
    task.index = t + 1;
    for (int k = 0; k < classes_per_task; ++k) {
      const int c = classes[static_cast<std::size_t>(t * classes_per_task + k)];
      task.label_set.push_back(c);
      std::vector<int> members = by_class.at(c);
      std::shuffle(members.begin(), members.end(), rng);
      const auto n_train = static_cast<std::size_t>(std::floor(kTrainFraction * static_cast<double>(members.size())));
      if (n_train < 1 || n_train >= members.size()) {
        throw ConfigError("class '" + corpus.label_names.at(static_cast<std::size_t>(c)) +
                          "' is too small for a train/test split");
      }
      for (std::size_t i = 0; i < members.size(); ++i) {
        const Instance& x = corpus.instances[static_cast<std::size_t>(members[i])];
        (i < n_train ? task.train : task.test).push_back(x);
      }
      stream.global_label_set.push_back(c);
    }
    stream.tasks.push_back(std::move(task));
  }
  std::sort(stream.global_label_set.begin(), stream.global_label_set.end());
  return stream;
}

nlohmann::json stream_manifest(const TaskStream& stream) {
  nlohmann::json tasks = nlohmann::json::array();
  for (const TaskSpec& t : stream.tasks) {
    nlohmann::json labels = nlohmann::json::array();
    for (int c : t.label_set) labels.push_back(stream.label_names.at(static_cast<std::size_t>(c)));
    tasks.push_back({{"index", t.index}, {"labels", labels}});
  }
  return {{"seed", stream.seed}, {"tasks", tasks}};
}

Corpus make_synthetic_corpus(const SyntheticOptions& o, std::uint64_t seed) {
  if (o.num_classes < 1 || o.per_class < 1 || o.seq_len < 1 || o.window < 1)
    throw ConfigError("synthetic corpus dimensions must be positive");
  if (o.vocab_size < o.num_classes + 10)
    throw ConfigError("synthetic corpus needs vocab_size >= num_classes + 10");

  Corpus corpus;
  for (int v = kNumSpecialTokens; v < o.vocab_size; ++v) corpus.vocab.add("tok" + std::to_string(v));
  for (int c = 0; c < o.num_classes; ++c) {
    std::ostringstream name;
    name << "class_" << (c < 10 ? "0" : "") << c;
    corpus.label_names.push_back(name.str());
  }

  const int noise_lo = kNumSpecialTokens + o.num_classes;
  const int noise_n = o.vocab_size - noise_lo;
  Rng rng = make_rng(seed, 0x5717);
  std::uniform_int_distribution<int> noise(noise_lo, noise_lo + noise_n - 1);
  for (int c = 0; c < o.num_classes; ++c) {
    for (int k = 0; k < o.per_class; ++k) {
      Instance x;
      x.label = c;
      x.index = static_cast<int>(corpus.instances.size());
      x.tokens.resize(static_cast<std::size_t>(o.seq_len));
      for (int& t : x.tokens) t = noise(rng);
      for (int w = 0; w < o.seq_len; w += o.window) {
        const int width = std::min(o.window, o.seq_len - w);
        const double u = uniform01(rng);
        const int pos = w + static_cast<int>(uniform_index(rng, static_cast<std::size_t>(width)));
        if (u < o.signature_prob) x.tokens[static_cast<std::size_t>(pos)] = kNumSpecialTokens + c;
      }
      corpus.instances.push_back(std::move(x));
    }
  }
  return corpus;
}

Corpus make_synthetic_corpus(int num_classes, int per_class, int seq_len, int vocab_size, std::uint64_t seed) {
  SyntheticOptions o;
  o.num_classes = num_classes;
  o.per_class = per_class;
  o.seq_len = seq_len;
  o.vocab_size = vocab_size;
  return make_synthetic_corpus(o, seed);
}

std::vector<std::vector<int>> make_batches(std::size_t n, int batch_size, Rng& rng) {
  if (batch_size < 1) throw ConfigError("batch_size must be positive");
  std::vector<int> order(n);
  std::iota(order.begin(), order.end(), 0);
  std::shuffle(order.begin(), order.end(), rng);
  std::vector<std::vector<int>> batches;
  for (std::size_t i = 0; i < n; i += static_cast<std::size_t>(batch_size)) {
    const std::size_t end = std::min(n, i + static_cast<std::size_t>(batch_size));
    batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i), order.begin() + static_cast<std::ptrdiff_t>(end));
  }
  return batches;
}

void write_corpus_jsonl(const Corpus& corpus, std::ostream& out) {
  for (const Instance& x : corpus.instances) {
    nlohmann::json text = nlohmann::json::array();
    for (int t : x.tokens) text.push_back(corpus.vocab.token(t));
    nlohmann::json j = {{"text", text}, {"label", corpus.label_names.at(static_cast<std::size_t>(x.label))}};
    if (!x.spans.empty()) {
      nlohmann::json spans = nlohmann::json::array();
      for (const Span& s : x.spans) spans.push_back({to_string(s.kind), s.start, s.end});
      j["spans"] = spans;
    }
    out << j.dump() << '\n';
  }
}

}  // namespace repcl
