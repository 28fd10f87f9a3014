#pragma once

// Labeled token sequences, class-incremental task streams and batching.

#include "repcl/rng.hpp"

#include <nlohmann/json.hpp>

#include <cstdint>
#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <unordered_map>
#include <vector>

namespace repcl {

/// Reserved vocabulary ids. Corpora are bit-stable because these never move.
enum SpecialToken : int {
  kHeadStart = 0,  // [E11]
  kHeadEnd = 1,    // [E12]
  kTailStart = 2,  // [E21]
  kTailEnd = 3,    // [E22]
  kMask = 4,       // [MASK]
  kPad = 5,        // [PAD]
};
inline constexpr int kNumSpecialTokens = 6;

enum class SpanKind { HeadEntity, TailEntity, Trigger };

std::string to_string(SpanKind kind);
SpanKind span_kind_from_string(const std::string& s);

/// Half-open token range [start, end).
struct Span {
  SpanKind kind;
  int start;
  int end;

  bool operator==(const Span&) const = default;
};

struct Instance {
  std::vector<int> tokens;
  int label = 0;
  std::vector<Span> spans;
  /// Position in the source corpus; memory banks refer to instances by it.
  int index = -1;

  const Span* find_span(SpanKind kind) const;
  bool operator==(const Instance&) const = default;
};

/// Throws ValidationError when an instance breaks its invariants.
void validate_instance(const Instance& x, int vocab_size);

class Vocabulary {
 public:
  /// Vocabulary holding only the reserved tokens.
  Vocabulary();

  int size() const { return static_cast<int>(tokens_.size()); }
  /// Number of tokens beyond the reserved ones.
  int learned_size() const { return size() - kNumSpecialTokens; }
  int add(const std::string& token);
  std::optional<int> find(const std::string& token) const;
  const std::string& token(int id) const { return tokens_.at(static_cast<std::size_t>(id)); }
  const std::vector<std::string>& tokens() const { return tokens_; }

 private:
  std::vector<std::string> tokens_;
  std::unordered_map<std::string, int> ids_;
};

struct Corpus {
  std::vector<Instance> instances;
  /// Dense label id -> label string, sorted lexicographically.
  std::vector<std::string> label_names;
  Vocabulary vocab;

  int num_classes() const { return static_cast<int>(label_names.size()); }
};

/// Minimum number of instances a class needs to survive loading.
inline constexpr int kMinInstancesPerClass = 4;

/// Reads the JSONL dataset format:
///   {"text": ["tok", ...], "label": "string", "spans": [["head_entity", 3, 5], ...]}
/// Labels are mapped to dense ids in lexicographic order. When `vocab` is given
/// it is extended; otherwise a fresh one is built.
Corpus load_corpus(const std::filesystem::path& path, std::optional<Vocabulary> vocab = std::nullopt);
Corpus parse_corpus(std::istream& in, std::optional<Vocabulary> vocab = std::nullopt);
/// As above with an explicit per-class minimum (ValidationError below it).
Corpus parse_corpus(std::istream& in, std::optional<Vocabulary> vocab, int min_instances_per_class);

struct TaskSpec {
  int index = 1;  // 1-based
  std::vector<int> label_set;
  std::vector<Instance> train;
  std::vector<Instance> test;
};

struct TaskStream {
  std::vector<TaskSpec> tasks;
  std::uint64_t seed = 0;
  std::vector<int> global_label_set;
  std::vector<std::string> label_names;

  int num_tasks() const { return static_cast<int>(tasks.size()); }
};

/// Fraction of each class routed to the training partition.
inline constexpr double kTrainFraction = 0.75;

/// Shuffles classes with the seed, partitions them into consecutive groups of
/// `classes_per_task`, and splits every selected class 75/25 into train/test.
TaskStream split_tasks(const Corpus& corpus, int num_tasks, int classes_per_task, std::uint64_t seed);

/// {"seed": int, "tasks": [{"index": int, "labels": [str, ...]}]}
nlohmann::json stream_manifest(const TaskStream& stream);

struct SyntheticOptions {
  int num_classes = 20;
  int per_class = 40;
  int seq_len = 16;
  int vocab_size = 64;
  /// Each window of this many positions carries the class signature token
  /// with probability `signature_prob`.
  int window = 4;
  double signature_prob = 0.8;
};

/// Desk-scale stand-in for real datasets: class c owns signature token
/// kNumSpecialTokens + c; everything else is uniform noise over the
/// remaining non-reserved vocabulary.
Corpus make_synthetic_corpus(const SyntheticOptions& opts, std::uint64_t seed);
Corpus make_synthetic_corpus(int num_classes, int per_class, int seq_len, int vocab_size, std::uint64_t seed);

/// Seeded shuffle of [0, n) cut into batches of at most `batch_size`.
std::vector<std::vector<int>> make_batches(std::size_t n, int batch_size, Rng& rng);

/// Writes the JSONL form of a corpus (inverse of load_corpus).
void write_corpus_jsonl(const Corpus& corpus, std::ostream& out);

}  // namespace repcl
