#include "xcond/eval.hpp"

#include <cmath>

#include <fmt/format.h>

#include "xcond/error.hpp"
#include "xcond/random.hpp"

namespace xcond {

double f1_score(double precision, double recall) {
  const double denom = precision + recall;
  return denom > 0.0 ? 2.0 * precision * recall / denom : 0.0;
}

MetricsReport metrics_from_counts(std::size_t tp, std::size_t fp, std::size_t tn, std::size_t fn, int positive_label) {
  MetricsReport r;
  r.tp = tp;
  r.fp = fp;
  r.tn = tn;
  r.fn = fn;
  r.positive_label = positive_label;
  r.precision_undefined = tp + fp == 0;
  r.recall_undefined = tp + fn == 0;
  r.precision = r.precision_undefined ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
  r.recall = r.recall_undefined ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
  r.f1 = f1_score(r.precision, r.recall);
  const std::size_t total = tp + fp + tn + fn;
  r.accuracy = total == 0 ? 0.0 : static_cast<double>(tp + tn) / static_cast<double>(total);
  return r;
}

MetricsReport classification_metrics(const std::vector<int>& predictions, const std::vector<int>& golds,
                                     int positive_label) {
  require(predictions.size() == golds.size(),
          fmt::format("prediction count {} differs from gold count {}", predictions.size(), golds.size()));
  require(!predictions.empty(), "metrics need at least one example");
  require(positive_label == 0 || positive_label == 1, "positive_label must be 0 or 1");
  std::size_t tp = 0, fp = 0, tn = 0, fn = 0;
  for (std::size_t i = 0; i < predictions.size(); ++i) {
    const int p = predictions[i], g = golds[i];
    require((p == 0 || p == 1) && (g == 0 || g == 1), "labels must be 0 or 1");
    const bool pred_pos = p == positive_label;
    const bool gold_pos = g == positive_label;
    if (pred_pos && gold_pos) ++tp;
    else if (pred_pos) ++fp;
    else if (gold_pos) ++fn;
    else ++tn;
  }
  return metrics_from_counts(tp, fp, tn, fn, positive_label);
}

bool confusion_oracle_check(std::size_t n, std::uint64_t seed) {
  require(n >= 1, "n must be at least 1");
  Rng rng(derive_seed(seed, {0xc0f0ULL}));
  const double regimes[] = {0.5, 0.1, 0.9, 0.0, 1.0};
  const double p_pred = regimes[uniform_index(rng, 5)];
  const double p_gold = regimes[uniform_index(rng, 5)];
  std::vector<int> preds(n), golds(n);
  for (std::size_t i = 0; i < n; ++i) {
    preds[i] = uniform01(rng) < p_pred ? 1 : 0;
    golds[i] = uniform01(rng) < p_gold ? 1 : 0;
  }
  for (int positive : {1, 0}) {
    const MetricsReport fast = classification_metrics(preds, golds, positive);
    std::size_t cells[2][2] = {{0, 0}, {0, 0}};  // [predicted positive][gold positive]
    for (std::size_t i = 0; i < n; ++i) ++cells[preds[i] == positive][golds[i] == positive];
    const std::size_t tp = cells[1][1], fp = cells[1][0], fn = cells[0][1], tn = cells[0][0];
    if (fast.tp != tp || fast.fp != fp || fast.fn != fn || fast.tn != tn) return false;
    const double precision = tp + fp == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fp);
    const double recall = tp + fn == 0 ? 0.0 : static_cast<double>(tp) / static_cast<double>(tp + fn);
    const double f1 = precision + recall == 0.0 ? 0.0 : 2.0 * precision * recall / (precision + recall);
    const double accuracy = static_cast<double>(tp + tn) / static_cast<double>(n);
    if (fast.precision != precision || fast.recall != recall || fast.f1 != f1 || fast.accuracy != accuracy) return false;
    if (fast.precision_undefined != (tp + fp == 0) || fast.recall_undefined != (tp + fn == 0)) return false;
  }
  return true;
}

std::string format_table(const MetricsReport& r, const std::string& model_name) {
  std::string out;
  out += fmt::format("{:<20} {:>9} {:>9} {:>9} {:>9}\n", "Model", "Precision", "Recall", "F1", "Accuracy");
  out += std::string(60, '-') + "\n";
  out += fmt::format("{:<20} {:>8}% {:>8}% {:>8}% {:>8}%\n", model_name, integer_percent(r.precision),
                     integer_percent(r.recall), integer_percent(r.f1), integer_percent(r.accuracy));
  out += fmt::format("tp={} fp={} tn={} fn={}{}{}\n", r.tp, r.fp, r.tn, r.fn,
                     r.precision_undefined ? " [precision undefined -> 0]" : "",
                     r.recall_undefined ? " [recall undefined -> 0]" : "");
  return out;
}

nlohmann::json to_json(const MetricsReport& r) {
  return {{"tp", r.tp},
          {"fp", r.fp},
          {"tn", r.tn},
          {"fn", r.fn},
          {"precision", r.precision},
          {"recall", r.recall},
          {"f1", r.f1},
          {"accuracy", r.accuracy},
          {"positive_label", r.positive_label},
          {"precision_undefined", r.precision_undefined},
          {"recall_undefined", r.recall_undefined}};
}

// ---------------------------------------------------------------------------

DistributionReport distribution_from_counts(std::size_t positives, std::size_t negatives) {
  DistributionReport r;
  r.total = positives + negatives;
  const double total = static_cast<double>(r.total);
  r.classes.push_back({1, positives, r.total ? static_cast<double>(positives) / total : 0.0});
  r.classes.push_back({0, negatives, r.total ? static_cast<double>(negatives) / total : 0.0});
  return r;
}

DistributionReport label_distribution(const std::vector<Document>& docs) {
  require(!docs.empty(), "label distribution of an empty dataset");
  std::size_t pos = 0, neg = 0;
  for (const Document& d : docs) {
    if (!d.stress_label) throw PreconditionError("document '" + d.id + "' has no stress label");
    (*d.stress_label == StressLabel::positive ? pos : neg) += 1;
  }
  return distribution_from_counts(pos, neg);
}

namespace {
std::string count_with_commas(std::size_t v) {
  std::string digits = std::to_string(v), out;
  for (std::size_t i = 0; i < digits.size(); ++i) {
    out.push_back(digits[i]);
    const std::size_t left = digits.size() - i - 1;
    if (left > 0 && left % 3 == 0) out.push_back(',');
  }
  return out;
}
}  // namespace

std::string format_table(const DistributionReport& r, const std::string& split_name) {
  std::string out = fmt::format("{:<10} {:>16} {:>16} {:>10}\n", "Split", "P", "N", "#");
  out += std::string(55, '-') + "\n";
  const ClassShare& p = r.classes[0];
  const ClassShare& n = r.classes[1];
  out += fmt::format("{:<10} {:>16} {:>16} {:>10}\n", split_name,
                     fmt::format("{} ({}%)", count_with_commas(p.count), integer_percent(p.share)),
                     fmt::format("{} ({}%)", count_with_commas(n.count), integer_percent(n.share)),
                     count_with_commas(r.total));
  return out;
}

nlohmann::json to_json(const DistributionReport& r) {
  nlohmann::json j;
  j["total"] = r.total;
  j["classes"] = nlohmann::json::array();
  for (const ClassShare& c : r.classes)
    j["classes"].push_back(
        {{"label", c.label}, {"count", c.count}, {"share", c.share}, {"percent", integer_percent(c.share)}});
  return j;
}

// ---------------------------------------------------------------------------

PerplexityResult perplexity(const Parameters& params, const EncoderConfig& config,
                            const std::vector<TokenSequence>& data, const Vocabulary& vocab,
                            const PerplexityOptions& options) {
  require(!data.empty(), "perplexity of an empty dataset");
  require(vocab.size() == config.vocab_size, "vocabulary size does not match the model");
  options.policy.validate();

  std::vector<MaskedExample> examples;
  if (options.full_target) {
    for (const TokenSequence& seq : data) {
      for (std::size_t i = 0; i < seq.ids.size(); ++i) {
        if (!seq.attention[i] || !is_maskable(seq.ids[i])) continue;
        MaskedExample ex;
        ex.input_ids = seq.ids;
        ex.labels.assign(seq.ids.size(), kIgnoreLabel);
        ex.attention = seq.attention;
        ex.labels[i] = seq.ids[i];
        ex.input_ids[i] = special::kMask;
        examples.push_back(std::move(ex));
      }
    }
  } else {
    for (MaskedExample& ex : remask_epoch(data, options.policy, vocab, options.eval_seed))
      if (ex.target_count() > 0) examples.push_back(std::move(ex));
  }
  if (examples.empty()) throw PreconditionError("perplexity evaluation has no target positions");

  double nll_sum = 0.0;
  std::size_t targets = 0;
  const std::size_t bs = std::max<std::size_t>(1, options.batch_size);
  ForwardOptions fwd;
  fwd.threads = options.threads;
  for (std::size_t start = 0; start < examples.size(); start += bs) {
    const std::size_t end = std::min(examples.size(), start + bs);
    std::vector<MaskedExample> batch(examples.begin() + static_cast<std::ptrdiff_t>(start),
                                     examples.begin() + static_cast<std::ptrdiff_t>(end));
    ForwardTrace trace = forward_mlm(params, config, batch, fwd);
    nll_sum += trace.loss_sum;
    targets += trace.target_count;
  }
  PerplexityResult r;
  r.targets = targets;
  r.mean_nll = nll_sum / static_cast<double>(targets);
  r.perplexity = std::exp(r.mean_nll);
  r.eval_seed = options.eval_seed;
  r.full_target = options.full_target;
  return r;
}

PerplexityResult perplexity(const Parameters& params, const EncoderConfig& config, const std::vector<Document>& docs,
                            const Vocabulary& vocab, const PerplexityOptions& options) {
  std::vector<TokenSequence> seqs;
  seqs.reserve(docs.size());
  for (const Document& d : docs) seqs.push_back(encode(d.text, vocab, config.max_len));
  return perplexity(params, config, seqs, vocab, options);
}

nlohmann::json to_json(const PerplexityResult& r) {
  return {{"perplexity", r.perplexity},
          {"mean_nll", r.mean_nll},
          {"targets", r.targets},
          {"eval_seed", r.eval_seed},
          {"full_target", r.full_target}};
}

}  // namespace xcond
