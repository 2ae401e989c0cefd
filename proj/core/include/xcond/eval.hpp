#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "xcond/corpus.hpp"
#include "xcond/masking.hpp"
#include "xcond/model.hpp"

namespace xcond {

/// Binary confusion counts and the positive-class metrics derived from them.
/// Undefined ratios (0/0) are reported as 0 and flagged.
struct MetricsReport {
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  double precision = 0.0, recall = 0.0, f1 = 0.0, accuracy = 0.0;
  int positive_label = 1;
  bool precision_undefined = false;
  bool recall_undefined = false;

  std::size_t total() const { return tp + fp + tn + fn; }
  friend bool operator==(const MetricsReport&, const MetricsReport&) = default;
};

/// Throws PreconditionError on empty or mismatched inputs or labels outside {0, 1}.
MetricsReport classification_metrics(const std::vector<int>& predictions, const std::vector<int>& golds,
                                     int positive_label = 1);

/// Fills the derived fractions of a report from its counts.
MetricsReport metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn,
                                  int positive_label = 1);

/// F1 from precision and recall, 0 when both are 0.
double f1_score(double precision, double recall);

/// Generates n random prediction/gold pairs from `seed` and compares
/// classification_metrics against cell-by-cell enumeration, for both choices of
/// positive label. Draws mix balanced, skewed and single-class regimes so the
/// zero-division cases come up.
bool confusion_oracle_check(std::size_t n, std::uint64_t seed);

std::string format_table(const MetricsReport& report, const std::string& model_name = "model");
nlohmann::json to_json(const MetricsReport& report);

// ---------------------------------------------------------------------------

struct ClassShare {
  int label = 0;
  std::size_t count = 0;
  double share = 0.0;
};

/// Per-class counts for binary stress labels, positive first.
struct DistributionReport {
  std::vector<ClassShare> classes;
  std::size_t total = 0;
};

/// Throws PreconditionError when empty or when a document is unlabeled.
DistributionReport label_distribution(const std::vector<Document>& docs);
DistributionReport distribution_from_counts(std::size_t positives, std::size_t negatives);

std::string format_table(const DistributionReport& report, const std::string& split_name = "all");
nlohmann::json to_json(const DistributionReport& report);

// ---------------------------------------------------------------------------

struct PerplexityOptions {
  MaskingPolicy policy;
  /// Seed of the evaluation masks, fixed so the number is reproducible.
  std::uint64_t eval_seed = 20240517;
  /// Score every eligible position by masking it alone (one pass per position)
  /// instead of the sampled training-style masks.
  bool full_target = false;
  std::size_t batch_size = 16;
  std::size_t threads = 1;
};

struct PerplexityResult {
  double perplexity = 0.0;
  double mean_nll = 0.0;
  std::size_t targets = 0;
  std::uint64_t eval_seed = 0;
  bool full_target = false;
};

/// exp(mean cross-entropy) over evaluation targets. Throws PreconditionError when there are none.
PerplexityResult perplexity(const Parameters& params, const EncoderConfig& config,
                            const std::vector<TokenSequence>& data, const Vocabulary& vocab,
                            const PerplexityOptions& options = {});

PerplexityResult perplexity(const Parameters& params, const EncoderConfig& config, const std::vector<Document>& docs,
                            const Vocabulary& vocab, const PerplexityOptions& options = {});

nlohmann::json to_json(const PerplexityResult& result);

}  // namespace xcond
