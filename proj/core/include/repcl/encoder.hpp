#pragma once

// The classification model: a small transformer encoder producing pooled
// representations, a growable linear classifier, a projection head for the
// contrastive branch and the cross-MLM decoding head.

#include "repcl/autograd.hpp"
#include "repcl/corpus.hpp"
#include "repcl/rng.hpp"

#include <nlohmann/json.hpp>

#include <filesystem>
#include <optional>
#include <span>
#include <string>
#include <vector>

namespace repcl {

enum class Pooling { SpanConcat, SpanMean, SentenceMean };

std::string to_string(Pooling p);
Pooling pooling_from_string(const std::string& s);

struct EncoderConfig {
  int vocab_size = 64;
  int embed_dim = 64;
  int num_layers = 2;
  int num_heads = 4;
  int hidden_dim = 128;
  int max_seq_len = 128;
  Pooling pooling = Pooling::SentenceMean;
  int proj_dim = 64;
  double dropout = 0.1;
  double init_std = 0.02;

  int repr_dim() const { return pooling == Pooling::SpanConcat ? 2 * embed_dim : embed_dim; }
  void validate() const;
  nlohmann::json to_json() const;
  static EncoderConfig from_json(const nlohmann::json& j);
  bool operator==(const EncoderConfig&) const = default;
};

/// Per-pass options. A null rng (or rate 0) means evaluation mode.
struct PassOptions {
  Rng* dropout_rng = nullptr;
  /// Added to the summed token+position embeddings (same shape, T x D).
  const Var* perturbation = nullptr;
};

/// All trainable state. Copying a Model copies every parameter (deep clone).
class Model {
 public:
  Model() = default;
  Model(const EncoderConfig& cfg, std::uint64_t seed);

  const EncoderConfig& config() const { return cfg_; }

  /// Final hidden states (T x D) of a token sequence. Sequences longer than
  /// max_seq_len are truncated with a warning.
  Var hidden_states(Tape& tape, std::span<const int> tokens, const PassOptions& opts = {});

  /// Pools hidden states into the representation z (1 x repr_dim).
  Var pool(Var hidden, const Instance& x) const;

  /// hidden_states + pool.
  Var encode(Tape& tape, const Instance& x, const PassOptions& opts = {});

  /// Logits over all classes the head has been expanded to (rows of z -> rows of logits).
  Var classify(Tape& tape, Var z);

  /// Unit-norm contrastive feature for each row of z.
  Var project(Tape& tape, Var z);

  /// Vocabulary logits for each masked position, conditioned on z_anchor
  /// (1 x repr_dim). With use_anchor = false the anchor slice is zeroed,
  /// giving plain MLM.
  Var xmlm_logits(Tape& tape, Var masked_hidden, std::span<const int> positions, Var z_anchor, bool use_anchor = true);

  /// Appends `n` classifier rows (normal(0, init_std) weights, zero bias).
  void expand_classes(int n, Rng& rng);
  int num_classes() const { return static_cast<int>(cls_w_.value.rows()); }

  std::vector<Param*> encoder_params();
  std::vector<Param*> classifier_params();
  std::vector<Param*> projection_params();
  std::vector<Param*> xmlm_params();
  /// Encoder + projection: the parameters mirrored by the momentum branch.
  std::vector<Param*> momentum_params();
  std::vector<Param*> all_params();
  std::vector<const Param*> all_params() const;
  std::size_t parameter_count() const;
  void zero_grad();

  /// Token embedding table; the frozen copy taken at init serves as the
  /// input proxy for I(X; Z) diagnostics.
  const Mat& token_embeddings() const { return tok_embed_.value; }

  /// Convenience inference pass (no dropout, no tape kept).
  RowVec representation(const Instance& x);
  Mat representations(std::span<const Instance> xs);
  RowVec logits(const Instance& x);

 private:
  struct Layer {
    Param wq, bq, wk, bk, wv, bv, wo, bo;
    Param ln1_g, ln1_b;
    Param w1, b1, w2, b2;
    Param ln2_g, ln2_b;
  };

  Var dropout(Tape& tape, Var x, const PassOptions& opts) const;

  EncoderConfig cfg_;
  Param tok_embed_, pos_embed_, emb_ln_g_, emb_ln_b_;
  std::vector<Layer> layers_;
  Param cls_w_, cls_b_;
  Param proj_w1_, proj_b1_, proj_w2_, proj_b2_;
  Param xmlm_w1_, xmlm_b1_, xmlm_w2_, xmlm_b2_;
};

/// Cross-entropy of a logit row against a target, without a tape.
double cross_entropy_value(const RowVec& logits, int target);

/// Index of the largest entry; ties resolve to the lowest index.
int argmax(const RowVec& v);

/// Checkpoint: {"format": "repcl-checkpoint-1", "config": {...}, "class_order": [...],
/// "params": {name: {"rows", "cols", "data"}}}. Doubles round-trip exactly.
struct Checkpoint {
  Model model;
  std::vector<int> class_order;
};

void save_checkpoint(const Model& model, std::span<const int> class_order, const std::filesystem::path& path);
nlohmann::json checkpoint_json(const Model& model, std::span<const int> class_order);
/// Fails with ConfigError when `expected` is given and differs from the stored config.
Checkpoint load_checkpoint(const std::filesystem::path& path, const std::optional<EncoderConfig>& expected = std::nullopt);
Checkpoint checkpoint_from_json(const nlohmann::json& j, const std::optional<EncoderConfig>& expected = std::nullopt);

}  // namespace repcl
