#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <functional>
#include <memory>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include <nlohmann/json.hpp>

namespace xcond {

enum class Condition { depression, anxiety, ptsd, other };
enum class StressLabel { negative = 0, positive = 1 };

inline constexpr Condition kAllConditions[] = {Condition::depression, Condition::anxiety, Condition::ptsd,
                                               Condition::other};

std::string_view to_string(Condition c);
std::optional<Condition> parse_condition(std::string_view s);
std::string_view to_string(StressLabel l);
/// Accepts "1"/"0", "positive"/"negative", "p"/"n", "stress"/"no_stress" (case-insensitive).
std::optional<StressLabel> parse_stress_label(std::string_view s);

/// One post or tweet.
struct Document {
  std::string id;
  std::string text;
  std::optional<Condition> condition;
  std::optional<StressLabel> stress_label;
  std::string source;

  friend bool operator==(const Document&, const Document&) = default;
};

/// Collapse runs of whitespace to single spaces and trim both ends.
std::string normalize_whitespace(std::string_view text);

/// Number of whitespace-separated words; the counter used for composition reports.
std::size_t count_whitespace_tokens(std::string_view text);

// ---------------------------------------------------------------------------
// Ingestion

enum class InputFormat { jsonl, tsv };

/// Deduce the format from a file extension (.jsonl/.json -> jsonl, .tsv/.txt -> tsv).
std::optional<InputFormat> format_from_extension(const std::filesystem::path& path);

struct IngestSummary {
  std::size_t records = 0;
  std::size_t accepted = 0;
  std::size_t skipped_empty = 0;
  std::size_t skipped_malformed = 0;
  /// First few diagnostics, "line N: reason".
  std::vector<std::string> diagnostics;
};

struct IngestResult {
  std::vector<Document> documents;
  IngestSummary summary;
};

/// Read documents in file order. Records without usable text are skipped and
/// counted, never fatal. Throws IoError when the file cannot be read.
IngestResult ingest_documents(const std::filesystem::path& path, InputFormat format);

/// Write documents as JSONL (one object per line, fields id/text/condition/label/source).
std::string to_jsonl(const std::vector<Document>& docs);
nlohmann::json to_json(const Document& doc);

// ---------------------------------------------------------------------------
// Self-reported diagnosis matching

struct SelfReportRule {
  /// Case-insensitive ECMAScript regular expression.
  std::string pattern;
  Condition condition;
  /// Patterns that, when present in the text, suppress this rule.
  std::vector<std::string> negating_contexts;
};

/// Ordered rule list with pre-compiled patterns. First matching rule wins.
class SelfReportRuleSet {
 public:
  explicit SelfReportRuleSet(std::vector<SelfReportRule> rules);

  /// Built-in first-person diagnosis templates (six per condition).
  static SelfReportRuleSet defaults();
  /// One JSON object per line: {"pattern": ..., "condition": ..., "negating_contexts": [...]}.
  static SelfReportRuleSet load_jsonl(const std::filesystem::path& path);

  const std::vector<SelfReportRule>& rules() const { return rules_; }
  std::optional<Condition> match(std::string_view text) const;

 private:
  struct Compiled;
  std::vector<SelfReportRule> rules_;
  std::shared_ptr<const std::vector<Compiled>> compiled_;
};

std::optional<Condition> match_self_report(std::string_view text, const SelfReportRuleSet& rules);

// ---------------------------------------------------------------------------
// Composition

struct ConditionCounts {
  Condition condition;
  std::uint64_t post_count = 0;
  std::uint64_t token_count = 0;
  double token_share = 0.0;
};

struct CompositionReport {
  /// Conditions with at least one post, in enum order.
  std::vector<ConditionCounts> rows;
  std::uint64_t total_posts = 0;
  std::uint64_t total_tokens = 0;

  const ConditionCounts* find(Condition c) const;
};

using TokenCounter = std::function<std::size_t(std::string_view)>;

/// Throws PreconditionError if any document lacks a condition.
CompositionReport compute_composition(const std::vector<Document>& docs,
                                      const TokenCounter& tokenize = count_whitespace_tokens);

/// Build a report from already-aggregated counts.
CompositionReport composition_from_counts(const std::vector<ConditionCounts>& counts);

/// Share rounded to the nearest integer percent (presentation only).
int integer_percent(double share);

std::string format_table(const CompositionReport& report);
nlohmann::json to_json(const CompositionReport& report);

// ---------------------------------------------------------------------------
// Dedupe and split

struct CorpusSplit {
  std::vector<Document> train;
  std::vector<Document> valid;
  std::size_t duplicates_removed = 0;
};

/// Drop documents whose text exactly repeats an earlier one; the first occurrence is kept.
std::vector<Document> dedupe_exact(const std::vector<Document>& docs, std::size_t* removed = nullptr);

/// Dedupe, shuffle with `seed`, then hold out round(valid_fraction * n) documents.
CorpusSplit dedupe_and_split(const std::vector<Document>& docs, double valid_fraction, std::uint64_t seed,
                             bool dedupe = true);

}  // namespace xcond
