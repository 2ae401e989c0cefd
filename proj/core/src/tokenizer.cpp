#include "xcond/tokenizer.hpp"

#include <algorithm>
#include <cctype>
#include <map>

#include <fmt/format.h>

#include "xcond/error.hpp"
#include "xcond/io.hpp"

namespace xcond {

namespace {

bool is_word_byte(unsigned char c) { return std::isalnum(c) != 0 || c >= 0x80; }

bool starts_with_ci(std::string_view s, std::string_view prefix) {
  if (s.size() < prefix.size()) return false;
  for (std::size_t i = 0; i < prefix.size(); ++i) {
    if (std::tolower(static_cast<unsigned char>(s[i])) != prefix[i]) return false;
  }
  return true;
}

void split_chunk(std::string_view chunk, std::vector<std::string>& out) {
  if (starts_with_ci(chunk, "http://") || starts_with_ci(chunk, "https://") || starts_with_ci(chunk, "www.")) {
    out.emplace_back(kUrlToken);
    return;
  }
  std::size_t i = 0;
  if (chunk.size() > 1 && chunk[0] == '@' &&
      (std::isalnum(static_cast<unsigned char>(chunk[1])) || chunk[1] == '_')) {
    i = 1;
    while (i < chunk.size() && (std::isalnum(static_cast<unsigned char>(chunk[i])) || chunk[i] == '_')) ++i;
    out.emplace_back(kUserToken);
  }
  std::string word;
  for (; i < chunk.size(); ++i) {
    const auto c = static_cast<unsigned char>(chunk[i]);
    if (is_word_byte(c)) {
      word.push_back(static_cast<char>(std::tolower(c)));
      continue;
    }
    if (!word.empty()) out.push_back(std::move(word));
    word.clear();
    out.emplace_back(1, static_cast<char>(c));
  }
  if (!word.empty()) out.push_back(std::move(word));
}

}  // namespace

std::vector<std::string> pretokenize(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    while (i < text.size() && std::isspace(static_cast<unsigned char>(text[i]))) ++i;
    std::size_t j = i;
    while (j < text.size() && !std::isspace(static_cast<unsigned char>(text[j]))) ++j;
    if (j > i) split_chunk(text.substr(i, j - i), out);
    i = j;
  }
  return out;
}

std::string normalize_text(std::string_view text) {
  std::string out;
  for (const std::string& t : pretokenize(text)) {
    if (!out.empty()) out.push_back(' ');
    out += t;
  }
  return out;
}

// ---------------------------------------------------------------------------

const std::vector<std::string>& special_token_strings() {
  static const std::vector<std::string> kSpecials = {"<pad>", "<s>", "</s>", "<unk>", "<mask>"};
  return kSpecials;
}

Vocabulary::Vocabulary() : Vocabulary(std::vector<std::string>{}) {}

Vocabulary::Vocabulary(const std::vector<std::string>& tokens) {
  id_to_token_ = special_token_strings();
  id_to_token_.insert(id_to_token_.end(), tokens.begin(), tokens.end());
  for (std::size_t i = 0; i < id_to_token_.size(); ++i) {
    const std::string& t = id_to_token_[i];
    if (t.empty() || t.find('\n') != std::string::npos)
      throw FormatError(fmt::format("invalid vocabulary entry at id {}", i));
    if (!token_to_id_.emplace(t, static_cast<TokenId>(i)).second)
      throw FormatError(fmt::format("duplicate vocabulary entry '{}' at id {}", t, i));
  }
}

TokenId Vocabulary::id_of(std::string_view token) const {
  auto it = token_to_id_.find(token);
  return it == token_to_id_.end() ? special::kUnk : it->second;
}

bool Vocabulary::contains(std::string_view token) const { return token_to_id_.find(token) != token_to_id_.end(); }

const std::string& Vocabulary::token_of(TokenId id) const {
  if (id < 0 || static_cast<std::size_t>(id) >= size())
    throw PreconditionError(fmt::format("token id {} outside vocabulary of size {}", id, size()));
  return id_to_token_[static_cast<std::size_t>(id)];
}

std::string Vocabulary::serialize() const {
  std::string out;
  for (const std::string& t : id_to_token_) {
    out += t;
    out += '\n';
  }
  return out;
}

Vocabulary Vocabulary::deserialize(std::string_view text) {
  std::vector<std::string> lines;
  std::size_t start = 0;
  while (start < text.size()) {
    std::size_t nl = text.find('\n', start);
    if (nl == std::string_view::npos) nl = text.size();
    std::string line(text.substr(start, nl - start));
    if (!line.empty() && line.back() == '\r') line.pop_back();
    lines.push_back(std::move(line));
    start = nl + 1;
  }
  const auto& specials = special_token_strings();
  if (lines.size() < specials.size()) throw FormatError("vocabulary file shorter than the reserved tokens");
  for (std::size_t i = 0; i < specials.size(); ++i) {
    if (lines[i] != specials[i])
      throw FormatError(fmt::format("vocabulary line {} must be '{}', found '{}'", i + 1, specials[i], lines[i]));
  }
  return Vocabulary(std::vector<std::string>(lines.begin() + static_cast<std::ptrdiff_t>(specials.size()), lines.end()));
}

void Vocabulary::save(const std::filesystem::path& path) const { atomic_write(path, serialize()); }

Vocabulary Vocabulary::load(const std::filesystem::path& path) { return deserialize(read_file(path)); }

std::string Vocabulary::hash() const { return sha256_hex(serialize()); }

Vocabulary build_vocab_from_texts(const std::vector<std::string_view>& texts, std::size_t max_size,
                                  std::size_t min_freq) {
  require(max_size >= special::kCount, "max_size must be at least 5");
  require(min_freq >= 1, "min_freq must be at least 1");
  if (texts.empty()) throw PreconditionError("cannot build a vocabulary from an empty corpus");

  std::map<std::string, std::size_t> counts;
  for (std::string_view text : texts)
    for (std::string& tok : pretokenize(text)) ++counts[std::move(tok)];

  const auto& specials = special_token_strings();
  std::vector<std::pair<std::string, std::size_t>> ranked;
  for (auto& [tok, n] : counts) {
    if (n < min_freq) continue;
    if (std::find(specials.begin(), specials.end(), tok) != specials.end()) continue;
    ranked.emplace_back(tok, n);
  }
  // std::map iteration is already lexicographic; stable sort keeps that order among ties.
  std::stable_sort(ranked.begin(), ranked.end(), [](const auto& a, const auto& b) { return a.second > b.second; });
  const std::size_t keep = std::min(ranked.size(), max_size - special::kCount);
  std::vector<std::string> tokens;
  tokens.reserve(keep);
  for (std::size_t i = 0; i < keep; ++i) tokens.push_back(ranked[i].first);
  return Vocabulary(tokens);
}

Vocabulary build_vocab(const std::vector<Document>& docs, std::size_t max_size, std::size_t min_freq) {
  std::vector<std::string_view> texts;
  texts.reserve(docs.size());
  for (const Document& d : docs) texts.emplace_back(d.text);
  return build_vocab_from_texts(texts, max_size, min_freq);
}

// ---------------------------------------------------------------------------

std::size_t TokenSequence::attended_length() const {
  return static_cast<std::size_t>(std::count(attention.begin(), attention.end(), true));
}

TokenSequence encode(std::string_view text, const Vocabulary& vocab, std::size_t max_len) {
  require(max_len >= 3, "max_len must be at least 3");
  const std::vector<std::string> tokens = pretokenize(text);
  TokenSequence seq;
  seq.original_length = tokens.size() + 2;
  seq.ids.reserve(max_len);
  seq.ids.push_back(special::kBos);
  const std::size_t body = std::min(tokens.size(), max_len - 2);
  for (std::size_t i = 0; i < body; ++i) seq.ids.push_back(vocab.id_of(tokens[i]));
  seq.ids.push_back(special::kEos);
  seq.attention.assign(seq.ids.size(), true);
  seq.ids.resize(max_len, special::kPad);
  seq.attention.resize(max_len, false);
  return seq;
}

std::string decode(const std::vector<TokenId>& ids, const Vocabulary& vocab) {
  std::string out;
  for (TokenId id : ids) {
    const std::string& tok = vocab.token_of(id);
    if (Vocabulary::is_special(id)) continue;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

}  // namespace xcond
