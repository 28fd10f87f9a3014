#pragma once

// Cross masked language modelling: reconstruct a masked same-class partner
// with help from the anchor's representation.

#include "repcl/autograd.hpp"
#include "repcl/corpus.hpp"
#include "repcl/encoder.hpp"
#include "repcl/rng.hpp"

#include <map>
#include <span>
#include <vector>

namespace repcl {

struct MaskedSample {
  std::vector<int> masked_tokens;
  std::vector<int> target_positions;  // strictly increasing
  std::vector<int> target_ids;
  int partner_of = -1;
};

/// Uniformly samples a same-label instance from `pool`, excluding the anchor
/// itself unless it is the only member of its class. Identity is decided by
/// corpus index when both have one, by address otherwise.
const Instance& sample_partner(const Instance& anchor, std::span<const Instance> pool, Rng& rng);
const Instance& sample_partner(const Instance& anchor, const TaskSpec& task, Rng& rng);

/// Per-class position lists over a fixed pool; O(1) partner draws in training.
class PartnerIndex {
 public:
  explicit PartnerIndex(std::span<const Instance> pool);
  /// Position in the pool of a partner for pool[anchor_pos].
  std::size_t sample(std::size_t anchor_pos, Rng& rng) const;

 private:
  std::span<const Instance> pool_;
  std::map<int, std::vector<std::size_t>> by_label_;
};

/// Masks exactly max(1, round(p * n)) of the n maskable positions (reserved
/// tokens are never masked), chosen uniformly without replacement.
MaskedSample mask_tokens(const Instance& x, double proportion, Rng& rng);

/// Mean cross-entropy over the masked positions of the partner, using the
/// shared encoder for the masked sequence and the XMLM head.
Var xmlm_loss(Model& model, Tape& tape, Var anchor_repr, const MaskedSample& masked, bool use_anchor = true,
              const PassOptions& opts = {});

}  // namespace repcl
