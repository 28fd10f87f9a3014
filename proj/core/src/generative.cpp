#include "repcl/generative.hpp"

#include "repcl/errors.hpp"

#include <algorithm>
#include <cmath>

namespace repcl {

namespace {

bool same_instance(const Instance& a, const Instance& b) {
  if (a.index >= 0 && b.index >= 0) return a.index == b.index;
  return &a == &b;
}

}  // namespace

const Instance& sample_partner(const Instance& anchor, std::span<const Instance> pool, Rng& rng) {
  std::vector<const Instance*> others;
  for (const Instance& x : pool)
    if (x.label == anchor.label && !same_instance(x, anchor)) others.push_back(&x);
  if (others.empty()) return anchor;
  return *others[uniform_index(rng, others.size())];
}

const Instance& sample_partner(const Instance& anchor, const TaskSpec& task, Rng& rng) {
  return sample_partner(anchor, std::span<const Instance>(task.train), rng);
}

PartnerIndex::PartnerIndex(std::span<const Instance> pool) : pool_(pool) {
  for (std::size_t i = 0; i < pool.size(); ++i) by_label_[pool[i].label].push_back(i);
}

std::size_t PartnerIndex::sample(std::size_t anchor_pos, Rng& rng) const {
  const std::vector<std::size_t>& members = by_label_.at(pool_[anchor_pos].label);
  if (members.size() == 1) return anchor_pos;
  // Draw among the other members without building a filtered copy.
  const std::size_t self = static_cast<std::size_t>(
      std::lower_bound(members.begin(), members.end(), anchor_pos) - members.begin());
  std::size_t k = uniform_index(rng, members.size() - 1);
  if (k >= self) ++k;
  return members[k];
}

MaskedSample mask_tokens(const Instance& x, double proportion, Rng& rng) {
  if (!(proportion >= 0.0 && proportion <= 1.0)) throw ConfigError("mask proportion must be in [0, 1]");
  std::vector<int> maskable;
  for (std::size_t i = 0; i < x.tokens.size(); ++i)
    if (x.tokens[i] >= kNumSpecialTokens) maskable.push_back(static_cast<int>(i));
  if (maskable.empty()) throw InputError("sequence has no maskable tokens");

  const auto n = maskable.size();
  auto count = static_cast<std::size_t>(std::llround(proportion * static_cast<double>(n)));
  count = std::clamp<std::size_t>(count, 1, n);

  // Partial Fisher-Yates: the first `count` slots become a uniform sample.
  for (std::size_t i = 0; i < count; ++i) {
    const std::size_t j = i + uniform_index(rng, n - i);
    std::swap(maskable[i], maskable[j]);
  }
  std::vector<int> chosen(maskable.begin(), maskable.begin() + static_cast<std::ptrdiff_t>(count));
  std::sort(chosen.begin(), chosen.end());

  MaskedSample out;
  out.masked_tokens = x.tokens;
  out.partner_of = x.index;
  for (int p : chosen) {
    out.target_positions.push_back(p);
    out.target_ids.push_back(x.tokens[static_cast<std::size_t>(p)]);
    out.masked_tokens[static_cast<std::size_t>(p)] = kMask;
  }
  return out;
}

Var xmlm_loss(Model& model, Tape& tape, Var anchor_repr, const MaskedSample& masked, bool use_anchor,
              const PassOptions& opts) {
  if (masked.target_positions.empty()) throw InputError("masked sample has no targets");
  Var hidden = model.hidden_states(tape, masked.masked_tokens, opts);
  Var logits = model.xmlm_logits(tape, hidden, masked.target_positions, anchor_repr, use_anchor);
  return cross_entropy(logits, masked.target_ids);
}

}  // namespace repcl
