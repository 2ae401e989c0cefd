#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "xcond/random.hpp"
#include "xcond/tokenizer.hpp"

namespace xcond {

/// Label value for positions that carry no MLM target. Outside every vocabulary id range.
inline constexpr TokenId kIgnoreLabel = -100;

struct MaskingPolicy {
  double mask_rate = 0.15;
  double p_mask = 0.8;
  double p_random = 0.1;
  double p_keep = 0.1;

  /// Throws PreconditionError unless the proportions sum to 1 and the rate lies in [0, 1].
  void validate() const;
};

enum class MaskGranularity { per_epoch, per_step };

struct MaskedExample {
  std::vector<TokenId> input_ids;
  std::vector<TokenId> labels;
  /// Mirrors the source sequence's pad flags.
  std::vector<bool> attention;
  std::uint64_t rng_seed_used = 0;

  std::size_t target_count() const;
  friend bool operator==(const MaskedExample&, const MaskedExample&) = default;
};

/// PAD, BOS, EOS and MASK are never selected; UNK and ordinary tokens are.
bool is_maskable(TokenId id);

/// Independent Bernoulli(mask_rate) selection of eligible positions, then
/// 80/10/10 replacement with MASK / a uniform non-special id / the original.
MaskedExample apply_dynamic_mask(const TokenSequence& seq, const MaskingPolicy& policy, const Vocabulary& vocab,
                                 Rng& rng);

/// Convenience overload seeding a fresh generator; the seed is recorded in the example.
MaskedExample apply_dynamic_mask(const TokenSequence& seq, const MaskingPolicy& policy, const Vocabulary& vocab,
                                 std::uint64_t seed);

/// Masks every sequence with seed derive_seed(epoch_seed, {index}).
std::vector<MaskedExample> remask_epoch(const std::vector<TokenSequence>& dataset, const MaskingPolicy& policy,
                                        const Vocabulary& vocab, std::uint64_t epoch_seed);

/// Aligned "input / label" columns for eyeballing masked data.
std::string dump_masked_example(const MaskedExample& ex, const Vocabulary& vocab);

}  // namespace xcond
