#pragma once

#include <cstdint>
#include <filesystem>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "xcond/corpus.hpp"

namespace xcond {

using TokenId = std::int32_t;

namespace special {
inline constexpr TokenId kPad = 0;
inline constexpr TokenId kBos = 1;
inline constexpr TokenId kEos = 2;
inline constexpr TokenId kUnk = 3;
inline constexpr TokenId kMask = 4;
inline constexpr TokenId kCount = 5;
}  // namespace special

/// Sentinels substituted for URLs and @-mentions during pre-tokenization.
inline constexpr std::string_view kUrlToken = "<url>";
inline constexpr std::string_view kUserToken = "<user>";

/// Lowercase, collapse URLs/mentions, split on whitespace and ASCII punctuation.
/// Each punctuation character becomes its own token; bytes >= 0x80 are word characters.
std::vector<std::string> pretokenize(std::string_view text);

/// The pretokenized form joined with single spaces.
std::string normalize_text(std::string_view text);

/// Token <-> id map. Ids 0..4 are PAD, BOS, EOS, UNK, MASK.
class Vocabulary {
 public:
  /// Vocabulary holding only the five reserved tokens.
  Vocabulary();
  /// Reserved tokens followed by `tokens` in order. Throws FormatError on duplicates.
  explicit Vocabulary(const std::vector<std::string>& tokens);

  std::size_t size() const { return id_to_token_.size(); }
  std::size_t non_special_count() const { return size() - special::kCount; }
  TokenId id_of(std::string_view token) const;  // kUnk when absent
  bool contains(std::string_view token) const;
  const std::string& token_of(TokenId id) const;
  const std::vector<std::string>& tokens() const { return id_to_token_; }

  static bool is_special(TokenId id) { return id >= 0 && id < special::kCount; }

  /// One token per line; id = line index.
  std::string serialize() const;
  static Vocabulary deserialize(std::string_view text);
  void save(const std::filesystem::path& path) const;
  static Vocabulary load(const std::filesystem::path& path);
  /// SHA-256 of serialize().
  std::string hash() const;

  friend bool operator==(const Vocabulary& a, const Vocabulary& b) { return a.id_to_token_ == b.id_to_token_; }

 private:
  struct StringHash {
    using is_transparent = void;
    std::size_t operator()(std::string_view s) const { return std::hash<std::string_view>{}(s); }
  };
  std::vector<std::string> id_to_token_;
  std::unordered_map<std::string, TokenId, StringHash, std::equal_to<>> token_to_id_;
};

const std::vector<std::string>& special_token_strings();

/// Frequency-ranked vocabulary: tokens with count >= min_freq, ordered by
/// (count desc, token asc), truncated to max_size - 5 entries.
Vocabulary build_vocab(const std::vector<Document>& docs, std::size_t max_size, std::size_t min_freq);
Vocabulary build_vocab_from_texts(const std::vector<std::string_view>& texts, std::size_t max_size,
                                  std::size_t min_freq);

struct TokenSequence {
  std::vector<TokenId> ids;
  /// true = attend, false = pad.
  std::vector<bool> attention;
  /// BOS + tokens + EOS before truncation.
  std::size_t original_length = 0;

  std::size_t attended_length() const;
  friend bool operator==(const TokenSequence&, const TokenSequence&) = default;
};

/// BOS + ids + EOS, truncated to max_len (last slot forced to EOS), padded with PAD.
TokenSequence encode(std::string_view text, const Vocabulary& vocab, std::size_t max_len);
/// Drops special ids; throws PreconditionError on ids outside the vocabulary.
std::string decode(const std::vector<TokenId>& ids, const Vocabulary& vocab);

}  // namespace xcond
