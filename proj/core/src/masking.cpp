#include "xcond/masking.hpp"

#include <algorithm>
#include <cmath>

#include <fmt/format.h>

#include "xcond/error.hpp"

namespace xcond {

void MaskingPolicy::validate() const {
  require(mask_rate >= 0.0 && mask_rate <= 1.0, "mask_rate must lie in [0, 1]");
  require(p_mask >= 0.0 && p_random >= 0.0 && p_keep >= 0.0, "replacement proportions must be non-negative");
  require(std::abs(p_mask + p_random + p_keep - 1.0) <= 1e-9, "p_mask + p_random + p_keep must equal 1");
}

std::size_t MaskedExample::target_count() const {
  return static_cast<std::size_t>(std::count_if(labels.begin(), labels.end(), [](TokenId l) { return l != kIgnoreLabel; }));
}

bool is_maskable(TokenId id) {
  return id != special::kPad && id != special::kBos && id != special::kEos && id != special::kMask;
}

MaskedExample apply_dynamic_mask(const TokenSequence& seq, const MaskingPolicy& policy, const Vocabulary& vocab,
                                 Rng& rng) {
  policy.validate();
  if (vocab.non_special_count() == 0)
    throw PreconditionError("masking needs at least one non-special vocabulary token for random replacement");
  require(seq.ids.size() == seq.attention.size(), "token sequence ids and attention flags differ in length");

  MaskedExample ex;
  ex.input_ids = seq.ids;
  ex.labels.assign(seq.ids.size(), kIgnoreLabel);
  ex.attention = seq.attention;
  const auto n_regular = static_cast<std::uint64_t>(vocab.non_special_count());
  const double random_cut = policy.p_mask + policy.p_random;

  for (std::size_t i = 0; i < seq.ids.size(); ++i) {
    const TokenId id = seq.ids[i];
    if (!seq.attention[i] || !is_maskable(id)) continue;
    if (!(uniform01(rng) < policy.mask_rate)) continue;
    ex.labels[i] = id;
    const double r = uniform01(rng);
    if (r < policy.p_mask) {
      ex.input_ids[i] = special::kMask;
    } else if (r < random_cut) {
      ex.input_ids[i] = static_cast<TokenId>(special::kCount + uniform_index(rng, n_regular));
    }
  }
  return ex;
}

MaskedExample apply_dynamic_mask(const TokenSequence& seq, const MaskingPolicy& policy, const Vocabulary& vocab,
                                 std::uint64_t seed) {
  Rng rng(seed);
  MaskedExample ex = apply_dynamic_mask(seq, policy, vocab, rng);
  ex.rng_seed_used = seed;
  return ex;
}

std::vector<MaskedExample> remask_epoch(const std::vector<TokenSequence>& dataset, const MaskingPolicy& policy,
                                        const Vocabulary& vocab, std::uint64_t epoch_seed) {
  require(!dataset.empty(), "cannot remask an empty dataset");
  std::vector<MaskedExample> out;
  out.reserve(dataset.size());
  for (std::size_t i = 0; i < dataset.size(); ++i)
    out.push_back(apply_dynamic_mask(dataset[i], policy, vocab, derive_seed(epoch_seed, {i})));
  return out;
}

std::string dump_masked_example(const MaskedExample& ex, const Vocabulary& vocab) {
  std::string out = fmt::format("# seed {}\n", ex.rng_seed_used);
  for (std::size_t i = 0; i < ex.input_ids.size(); ++i) {
    if (!ex.attention[i]) break;
    const std::string& in = vocab.token_of(ex.input_ids[i]);
    const std::string label = ex.labels[i] == kIgnoreLabel ? "-" : vocab.token_of(ex.labels[i]);
    out += fmt::format("{:>4}  {:<16} {}\n", i, in, label);
  }
  return out;
}

}  // namespace xcond
