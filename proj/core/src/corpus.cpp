#include "xcond/corpus.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>
#include <regex>
#include <sstream>
#include <unordered_set>

#include <fmt/format.h>

#include "xcond/error.hpp"
#include "xcond/random.hpp"

namespace xcond {

namespace {

std::string lower_ascii(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool is_space(char c) { return std::isspace(static_cast<unsigned char>(c)) != 0; }

constexpr std::size_t kMaxDiagnostics = 20;

void note(IngestSummary& summary, std::size_t line, const std::string& reason) {
  if (summary.diagnostics.size() < kMaxDiagnostics) summary.diagnostics.push_back(fmt::format("line {}: {}", line, reason));
}

std::vector<std::string> split_tabs(const std::string& line) {
  std::vector<std::string> cols;
  std::size_t start = 0;
  for (;;) {
    std::size_t tab = line.find('\t', start);
    if (tab == std::string::npos) {
      cols.push_back(line.substr(start));
      break;
    }
    cols.push_back(line.substr(start, tab - start));
    start = tab + 1;
  }
  return cols;
}

// Parses the optional categorical fields; returns an error reason or empty.
std::string fill_optional_fields(Document& doc, const std::string& condition, const std::string& label) {
  if (!condition.empty()) {
    auto c = parse_condition(condition);
    if (!c) return "unknown condition '" + condition + "'";
    doc.condition = c;
  }
  if (!label.empty()) {
    auto l = parse_stress_label(label);
    if (!l) return "unknown label '" + label + "'";
    doc.stress_label = l;
  }
  return {};
}

std::string json_scalar_to_string(const nlohmann::json& v) {
  if (v.is_null()) return {};
  if (v.is_string()) return v.get<std::string>();
  if (v.is_number_integer()) return std::to_string(v.get<long long>());
  if (v.is_boolean()) return v.get<bool>() ? "1" : "0";
  throw FormatError("expected string or integer");
}

}  // namespace

// ---------------------------------------------------------------------------

std::string_view to_string(Condition c) {
  switch (c) {
    case Condition::depression: return "depression";
    case Condition::anxiety: return "anxiety";
    case Condition::ptsd: return "ptsd";
    case Condition::other: return "other";
  }
  return "other";
}

std::optional<Condition> parse_condition(std::string_view s) {
  const std::string v = lower_ascii(s);
  if (v == "depression") return Condition::depression;
  if (v == "anxiety") return Condition::anxiety;
  if (v == "ptsd") return Condition::ptsd;
  if (v == "other") return Condition::other;
  return std::nullopt;
}

std::string_view to_string(StressLabel l) { return l == StressLabel::positive ? "positive" : "negative"; }

std::optional<StressLabel> parse_stress_label(std::string_view s) {
  const std::string v = lower_ascii(s);
  if (v == "1" || v == "positive" || v == "p" || v == "stress") return StressLabel::positive;
  if (v == "0" || v == "negative" || v == "n" || v == "no_stress") return StressLabel::negative;
  return std::nullopt;
}

std::string normalize_whitespace(std::string_view text) {
  std::string out;
  out.reserve(text.size());
  bool pending_space = false;
  for (char c : text) {
    if (is_space(c)) {
      pending_space = !out.empty();
      continue;
    }
    if (pending_space) out.push_back(' ');
    pending_space = false;
    out.push_back(c);
  }
  return out;
}

std::size_t count_whitespace_tokens(std::string_view text) {
  std::size_t n = 0;
  bool in_word = false;
  for (char c : text) {
    if (is_space(c)) {
      in_word = false;
    } else if (!in_word) {
      in_word = true;
      ++n;
    }
  }
  return n;
}

std::optional<InputFormat> format_from_extension(const std::filesystem::path& path) {
  const std::string ext = lower_ascii(path.extension().string());
  if (ext == ".jsonl" || ext == ".json" || ext == ".ndjson") return InputFormat::jsonl;
  if (ext == ".tsv" || ext == ".txt") return InputFormat::tsv;
  return std::nullopt;
}

IngestResult ingest_documents(const std::filesystem::path& path, InputFormat format) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw IoError("cannot open input file '" + path.string() + "'");

  IngestResult result;
  IngestSummary& summary = result.summary;
  std::string line;
  std::size_t line_no = 0;
  std::vector<std::string> header;
  int col_id = -1, col_text = -1, col_condition = -1, col_label = -1, col_source = -1;

  if (format == InputFormat::tsv) {
    if (!std::getline(in, line)) return result;
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    header = split_tabs(line);
    for (std::size_t i = 0; i < header.size(); ++i) {
      const std::string name = lower_ascii(header[i]);
      const int idx = static_cast<int>(i);
      if (name == "id") col_id = idx;
      else if (name == "text") col_text = idx;
      else if (name == "condition") col_condition = idx;
      else if (name == "label" || name == "stress_label") col_label = idx;
      else if (name == "source") col_source = idx;
    }
    if (col_text < 0) throw FormatError("TSV header of '" + path.string() + "' has no 'text' column");
  }

  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (normalize_whitespace(line).empty()) continue;
    ++summary.records;

    Document doc;
    std::string raw_text, condition, label;
    if (format == InputFormat::jsonl) {
      nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
      if (obj.is_discarded() || !obj.is_object()) {
        ++summary.skipped_malformed;
        note(summary, line_no, "not a JSON object");
        continue;
      }
      try {
        if (!obj.contains("text") || !obj["text"].is_string()) {
          ++summary.skipped_malformed;
          note(summary, line_no, "missing string field 'text'");
          continue;
        }
        raw_text = obj["text"].get<std::string>();
        if (obj.contains("id")) doc.id = json_scalar_to_string(obj["id"]);
        if (obj.contains("condition")) condition = json_scalar_to_string(obj["condition"]);
        if (obj.contains("label")) label = json_scalar_to_string(obj["label"]);
        if (obj.contains("source")) doc.source = json_scalar_to_string(obj["source"]);
      } catch (const std::exception& e) {
        ++summary.skipped_malformed;
        note(summary, line_no, e.what());
        continue;
      }
    } else {
      std::vector<std::string> cols = split_tabs(line);
      if (cols.size() != header.size()) {
        ++summary.skipped_malformed;
        note(summary, line_no, fmt::format("expected {} columns, got {}", header.size(), cols.size()));
        continue;
      }
      raw_text = cols[col_text];
      if (col_id >= 0) doc.id = cols[col_id];
      if (col_condition >= 0) condition = normalize_whitespace(cols[col_condition]);
      if (col_label >= 0) label = normalize_whitespace(cols[col_label]);
      if (col_source >= 0) doc.source = cols[col_source];
    }

    doc.text = normalize_whitespace(raw_text);
    if (doc.text.empty()) {
      ++summary.skipped_empty;
      note(summary, line_no, "empty text");
      continue;
    }
    if (std::string err = fill_optional_fields(doc, condition, label); !err.empty()) {
      ++summary.skipped_malformed;
      note(summary, line_no, err);
      continue;
    }
    if (doc.id.empty()) doc.id = fmt::format("{}:{}", path.filename().string(), line_no);
    result.documents.push_back(std::move(doc));
  }
  if (in.bad()) throw IoError("read error on '" + path.string() + "'");
  summary.accepted = result.documents.size();
  return result;
}

nlohmann::json to_json(const Document& doc) {
  nlohmann::json j;
  j["id"] = doc.id;
  j["text"] = doc.text;
  j["condition"] = doc.condition ? nlohmann::json(std::string(to_string(*doc.condition))) : nlohmann::json();
  j["label"] = doc.stress_label ? nlohmann::json(static_cast<int>(*doc.stress_label)) : nlohmann::json();
  j["source"] = doc.source;
  return j;
}

std::string to_jsonl(const std::vector<Document>& docs) {
  std::string out;
  for (const Document& d : docs) {
    out += to_json(d).dump();
    out += '\n';
  }
  return out;
}

// ---------------------------------------------------------------------------

struct SelfReportRuleSet::Compiled {
  std::regex pattern;
  std::vector<std::regex> negations;
};

SelfReportRuleSet::SelfReportRuleSet(std::vector<SelfReportRule> rules) : rules_(std::move(rules)) {
  require(!rules_.empty(), "self-report rule set must contain at least one rule");
  auto compiled = std::make_shared<std::vector<Compiled>>();
  constexpr auto flags = std::regex::ECMAScript | std::regex::icase | std::regex::optimize;
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const SelfReportRule& r = rules_[i];
    if (r.pattern.empty()) throw FormatError(fmt::format("rule {} has an empty pattern", i));
    Compiled c;
    try {
      c.pattern = std::regex(r.pattern, flags);
      for (const std::string& n : r.negating_contexts) {
        if (n.empty()) throw FormatError(fmt::format("rule {} has an empty negating context", i));
        c.negations.emplace_back(n, flags);
      }
    } catch (const std::regex_error& e) {
      throw FormatError(fmt::format("rule {}: invalid pattern: {}", i, e.what()));
    }
    compiled->push_back(std::move(c));
  }
  compiled_ = std::move(compiled);
}

std::optional<Condition> SelfReportRuleSet::match(std::string_view text) const {
  const std::string normalized = normalize_whitespace(text);
  for (std::size_t i = 0; i < rules_.size(); ++i) {
    const Compiled& c = (*compiled_)[i];
    if (!std::regex_search(normalized, c.pattern)) continue;
    const bool negated = std::any_of(c.negations.begin(), c.negations.end(),
                                     [&](const std::regex& n) { return std::regex_search(normalized, n); });
    if (!negated) return rules_[i].condition;
  }
  return std::nullopt;
}

SelfReportRuleSet SelfReportRuleSet::defaults() {
  const std::vector<std::string> third_person = {
      R"(\b(my|his|her|their|our|a) (best )?(friend|mom|mother|dad|father|sister|brother|wife|husband|partner|son|daughter|boyfriend|girlfriend|cousin|aunt|uncle|roommate|coworker)s? (was|is|has|had|got|have been|has been)\b)",
      R"(\b(he|she|they) (was|were|is|are|has|have|had|got) (been )?(diagnosed|told)\b)",
      R"(\b(if|whether|wish) i (was|were|had been|get|got) diagnosed\b)",
  };
  struct Term {
    Condition condition;
    std::string words;
  };
  const std::vector<Term> terms = {
      {Condition::depression, "(clinical depression|major depressive disorder|mdd|depression)"},
      {Condition::anxiety, "(generalized anxiety disorder|an anxiety disorder|anxiety disorder|gad|social anxiety|panic disorder|anxiety)"},
      {Condition::ptsd, "(c-?ptsd|ptsd|post[- ]traumatic stress disorder)"},
  };
  const std::vector<std::string> templates = {
      R"(\bi (was|got|have been|'ve been|had been) (officially |formally |recently |finally )?diagnosed with (\w+ )?{}\b)",
      R"(\bmy (doctor|psychiatrist|therapist|psychologist|gp) (diagnosed me with|says i have|said i have) (\w+ )?{}\b)",
      R"(\bi was told (that )?i have (\w+ )?{}\b)",
      R"(\bi (suffer|struggle) (from|with) (\w+ )?{}\b)",
      R"(\bmy {} diagnosis\b)",
      R"(\bi have (been living with |had )?(severe |chronic |diagnosed )?{}\b)",
  };
  std::vector<SelfReportRule> rules;
  for (const Term& t : terms) {
    for (const std::string& tmpl : templates) {
      rules.push_back({fmt::format(fmt::runtime(tmpl), t.words), t.condition, third_person});
    }
  }
  return SelfReportRuleSet(std::move(rules));
}

SelfReportRuleSet SelfReportRuleSet::load_jsonl(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot open rule file '" + path.string() + "'");
  std::vector<SelfReportRule> rules;
  std::string line;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (normalize_whitespace(line).empty()) continue;
    nlohmann::json obj = nlohmann::json::parse(line, nullptr, false);
    auto bad = [&](const std::string& why) {
      return FormatError(fmt::format("{}:{}: {}", path.string(), line_no, why));
    };
    if (obj.is_discarded() || !obj.is_object()) throw bad("not a JSON object");
    if (!obj.contains("pattern") || !obj["pattern"].is_string()) throw bad("missing string 'pattern'");
    if (!obj.contains("condition") || !obj["condition"].is_string()) throw bad("missing string 'condition'");
    auto cond = parse_condition(obj["condition"].get<std::string>());
    if (!cond) throw bad("unknown condition");
    SelfReportRule rule{obj["pattern"].get<std::string>(), *cond, {}};
    if (obj.contains("negating_contexts")) {
      if (!obj["negating_contexts"].is_array()) throw bad("'negating_contexts' must be an array");
      for (const auto& n : obj["negating_contexts"]) {
        if (!n.is_string()) throw bad("negating context must be a string");
        rule.negating_contexts.push_back(n.get<std::string>());
      }
    }
    rules.push_back(std::move(rule));
  }
  if (rules.empty()) throw FormatError("rule file '" + path.string() + "' contains no rules");
  return SelfReportRuleSet(std::move(rules));
}

std::optional<Condition> match_self_report(std::string_view text, const SelfReportRuleSet& rules) {
  return rules.match(text);
}

// ---------------------------------------------------------------------------

const ConditionCounts* CompositionReport::find(Condition c) const {
  for (const ConditionCounts& r : rows)
    if (r.condition == c) return &r;
  return nullptr;
}

CompositionReport composition_from_counts(const std::vector<ConditionCounts>& counts) {
  CompositionReport report;
  for (Condition c : kAllConditions) {
    ConditionCounts row{c, 0, 0, 0.0};
    bool present = false;
    for (const ConditionCounts& in : counts) {
      if (in.condition != c) continue;
      row.post_count += in.post_count;
      row.token_count += in.token_count;
      present = true;
    }
    if (!present) continue;
    report.total_posts += row.post_count;
    report.total_tokens += row.token_count;
    report.rows.push_back(row);
  }
  if (report.total_tokens > 0) {
    for (ConditionCounts& r : report.rows)
      r.token_share = static_cast<double>(r.token_count) / static_cast<double>(report.total_tokens);
  }
  return report;
}

CompositionReport compute_composition(const std::vector<Document>& docs, const TokenCounter& tokenize) {
  std::vector<ConditionCounts> counts;
  for (Condition c : kAllConditions) counts.push_back({c, 0, 0, 0.0});
  std::vector<bool> seen(counts.size(), false);
  for (const Document& d : docs) {
    if (!d.condition) throw PreconditionError("document '" + d.id + "' has no condition");
    const auto idx = static_cast<std::size_t>(*d.condition);
    counts[idx].post_count += 1;
    counts[idx].token_count += tokenize(d.text);
    seen[idx] = true;
  }
  std::vector<ConditionCounts> present;
  for (std::size_t i = 0; i < counts.size(); ++i)
    if (seen[i]) present.push_back(counts[i]);
  return composition_from_counts(present);
}

int integer_percent(double share) { return static_cast<int>(std::lround(share * 100.0)); }

namespace {
std::string with_commas(std::uint64_t v) {
  std::string digits = std::to_string(v);
  std::string out;
  const std::size_t n = digits.size();
  for (std::size_t i = 0; i < n; ++i) {
    out.push_back(digits[i]);
    const std::size_t left = n - i - 1;
    if (left > 0 && left % 3 == 0) out.push_back(',');
  }
  return out;
}
}  // namespace

std::string format_table(const CompositionReport& report) {
  std::string out;
  out += fmt::format("{:<12} {:>14} {:>22}\n", "Condition", "Posts", "Tokens");
  out += std::string(50, '-') + "\n";
  for (const ConditionCounts& r : report.rows) {
    out += fmt::format("{:<12} {:>14} {:>22}\n", to_string(r.condition), with_commas(r.post_count),
                       fmt::format("{} ({}%)", with_commas(r.token_count), integer_percent(r.token_share)));
  }
  out += std::string(50, '-') + "\n";
  out += fmt::format("{:<12} {:>14} {:>22}\n", "Total", with_commas(report.total_posts),
                     fmt::format("{} ({}%)", with_commas(report.total_tokens), report.total_tokens > 0 ? 100 : 0));
  return out;
}

nlohmann::json to_json(const CompositionReport& report) {
  nlohmann::json j;
  j["rows"] = nlohmann::json::array();
  for (const ConditionCounts& r : report.rows) {
    j["rows"].push_back({{"condition", std::string(to_string(r.condition))},
                         {"post_count", r.post_count},
                         {"token_count", r.token_count},
                         {"token_share", r.token_share},
                         {"token_percent", integer_percent(r.token_share)}});
  }
  j["total_posts"] = report.total_posts;
  j["total_tokens"] = report.total_tokens;
  return j;
}

// ---------------------------------------------------------------------------

std::vector<Document> dedupe_exact(const std::vector<Document>& docs, std::size_t* removed) {
  std::unordered_set<std::string> seen;
  std::vector<Document> out;
  out.reserve(docs.size());
  for (const Document& d : docs) {
    if (seen.insert(d.text).second) out.push_back(d);
  }
  if (removed) *removed = docs.size() - out.size();
  return out;
}

CorpusSplit dedupe_and_split(const std::vector<Document>& docs, double valid_fraction, std::uint64_t seed,
                             bool dedupe) {
  require(valid_fraction > 0.0 && valid_fraction < 1.0, "valid_fraction must lie strictly between 0 and 1");
  CorpusSplit split;
  std::vector<Document> pool = dedupe ? dedupe_exact(docs, &split.duplicates_removed) : docs;
  if (pool.size() < 2) throw PreconditionError("need at least 2 unique documents to split");

  Rng rng(derive_seed(seed, {0x5d117ULL}));
  shuffle_in_place(pool, rng);

  const std::size_t n = pool.size();
  auto n_valid = static_cast<std::size_t>(std::llround(valid_fraction * static_cast<double>(n)));
  n_valid = std::clamp<std::size_t>(n_valid, 1, n - 1);
  split.valid.assign(pool.begin(), pool.begin() + static_cast<std::ptrdiff_t>(n_valid));
  split.train.assign(pool.begin() + static_cast<std::ptrdiff_t>(n_valid), pool.end());
  return split;
}

}  // namespace xcond
