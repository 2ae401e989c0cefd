#include "xcond/synthetic.hpp"

#include <algorithm>
#include <cmath>
#include <set>
#include <sstream>

#include <fmt/format.h>

#include "xcond/error.hpp"
#include "xcond/random.hpp"

namespace xcond {

namespace {

// Every template expands to the same number of words within its family.
const std::vector<std::string> kPretrainTemplates = {
    "i was diagnosed with {C} and i feel {M} and {M} because of {F} {F}",
    "since my {C} diagnosis i feel {M} and {M} when i think about {F} {F}",
    "my therapist says my {C} explains why i feel {M} and {M} near {F} {F}",
};

const std::vector<std::string> kTaskTemplates = {
    "ugh this {F} week and the stress of {F} makes me {X} today",
    "so much stress about {F} and {F} lately i am {X} again",
};

const std::array<const char*, 3> kConditionWords = {"depression", "anxiety", "ptsd"};

std::vector<std::string> split_words(const std::string& s) {
  std::istringstream in(s);
  std::vector<std::string> out;
  for (std::string w; in >> w;) out.push_back(w);
  return out;
}

// Pseudo-words of two consonant-vowel syllables, visited with a stride coprime to the pool size.
class PseudoWords {
 public:
  PseudoWords() {
    const std::string consonants = "bdfgklmnprstvz";
    const std::string vowels = "aeiou";
    for (char c : consonants)
      for (char v : vowels) syllables_.push_back(std::string{c, v});
  }
  std::size_t pool() const { return syllables_.size() * syllables_.size(); }
  std::string word(std::size_t i) const {
    const std::size_t k = (i * 37 + 11) % pool();
    return syllables_[k / syllables_.size()] + syllables_[k % syllables_.size()];
  }

 private:
  std::vector<std::string> syllables_;
};

std::string expand(const std::string& tmpl, Rng& rng, const std::vector<std::string>& fillers,
                   const std::vector<std::string>* markers, const std::string& condition_word,
                   const std::string& slot_word) {
  std::string out;
  for (const std::string& w : split_words(tmpl)) {
    std::string tok;
    if (w == "{F}") tok = fillers[uniform_index(rng, fillers.size())];
    else if (w == "{M}") tok = (*markers)[uniform_index(rng, markers->size())];
    else if (w == "{C}") tok = condition_word;
    else if (w == "{X}") tok = slot_word;
    else tok = w;
    if (!out.empty()) out.push_back(' ');
    out += tok;
  }
  return out;
}

// Integer allocation of n items to weights by largest remainder.
std::vector<std::size_t> allocate(std::size_t n, const std::vector<double>& weights) {
  double total = 0.0;
  for (double w : weights) total += w;
  std::vector<std::size_t> counts(weights.size());
  std::vector<std::pair<double, std::size_t>> remainders;
  std::size_t assigned = 0;
  for (std::size_t i = 0; i < weights.size(); ++i) {
    const double exact = static_cast<double>(n) * weights[i] / total;
    counts[i] = static_cast<std::size_t>(std::floor(exact));
    assigned += counts[i];
    remainders.emplace_back(exact - std::floor(exact), i);
  }
  std::stable_sort(remainders.begin(), remainders.end(), [](const auto& a, const auto& b) { return a.first > b.first; });
  for (std::size_t k = 0; assigned < n; ++k, ++assigned) counts[remainders[k % remainders.size()].second] += 1;
  return counts;
}

}  // namespace

void GeneratorSpec::validate() const {
  require(vocab_size_hint >= 1, "vocab_size_hint must be at least 1");
  require(markers_per_condition >= 1, "markers_per_condition must be at least 1");
  require(task_only_markers >= 1, "task_only_markers must be at least 1");
  require(overlap_rate >= 0.0 && overlap_rate <= 1.0, "overlap_rate must lie in [0, 1]");
  require(positive_rate > 0.0 && positive_rate < 1.0, "positive_rate must lie in (0, 1)");
  require(train_fraction > 0.0 && valid_fraction > 0.0 && train_fraction + valid_fraction < 1.0,
          "train/valid fractions must be positive and leave room for a test split");
  for (double s : condition_shares) require(s >= 0.0, "condition shares must be non-negative");
  require(condition_shares[0] + condition_shares[1] + condition_shares[2] > 0.0, "condition shares must not all be 0");
}

std::vector<std::string> SyntheticLexicon::all_condition_markers() const {
  std::vector<std::string> out;
  for (const auto& m : condition_markers) out.insert(out.end(), m.begin(), m.end());
  return out;
}

std::vector<std::string> SyntheticLexicon::closed_vocabulary() const {
  std::vector<std::string> out = template_words;
  out.insert(out.end(), fillers.begin(), fillers.end());
  for (const auto& m : condition_markers) out.insert(out.end(), m.begin(), m.end());
  out.insert(out.end(), task_markers.begin(), task_markers.end());
  return out;
}

SyntheticLexicon make_lexicon(const GeneratorSpec& spec) {
  spec.validate();
  SyntheticLexicon lex;
  std::set<std::string> fixed;
  for (const auto* family : {&kPretrainTemplates, &kTaskTemplates})
    for (const std::string& t : *family)
      for (const std::string& w : split_words(t))
        if (w.front() != '{') fixed.insert(w);
  for (const char* c : kConditionWords) fixed.insert(c);
  lex.template_words.assign(fixed.begin(), fixed.end());

  const PseudoWords words;
  const std::size_t needed = spec.vocab_size_hint + 3 * spec.markers_per_condition + spec.task_only_markers;
  require(needed + fixed.size() <= words.pool(), "synthetic lexicon request exceeds the pseudo-word pool");
  std::size_t cursor = 0;
  auto take = [&](std::size_t count) {
    std::vector<std::string> out;
    while (out.size() < count) {
      std::string w = words.word(cursor++);
      if (!fixed.count(w)) out.push_back(std::move(w));
    }
    return out;
  };
  lex.fillers = take(spec.vocab_size_hint);
  for (auto& m : lex.condition_markers) m = take(spec.markers_per_condition);
  lex.task_markers = take(spec.task_only_markers);
  return lex;
}

std::vector<Document> generate_pretrain_corpus(const GeneratorSpec& spec) {
  const SyntheticLexicon lex = make_lexicon(spec);
  const std::vector<double> shares(spec.condition_shares.begin(), spec.condition_shares.end());
  const std::vector<std::size_t> counts = allocate(spec.n_pretrain_docs, shares);

  std::vector<std::size_t> conditions;
  for (std::size_t c = 0; c < counts.size(); ++c) conditions.insert(conditions.end(), counts[c], c);
  Rng rng(derive_seed(spec.seed, {0x9e7a1ULL}));
  shuffle_in_place(conditions, rng);

  std::vector<Document> docs;
  docs.reserve(conditions.size());
  for (std::size_t i = 0; i < conditions.size(); ++i) {
    const std::size_t c = conditions[i];
    const std::string& tmpl = kPretrainTemplates[uniform_index(rng, kPretrainTemplates.size())];
    Document d;
    d.id = fmt::format("pre-{:06}", i);
    d.text = expand(tmpl, rng, lex.fillers, &lex.condition_markers[c], kConditionWords[c], {});
    d.condition = static_cast<Condition>(c);
    d.source = "synthetic-pretrain";
    docs.push_back(std::move(d));
  }
  return docs;
}

TaskSplits generate_task(const GeneratorSpec& spec) {
  const SyntheticLexicon lex = make_lexicon(spec);
  const std::vector<std::string> condition_markers = lex.all_condition_markers();
  const auto n_pos = static_cast<std::size_t>(std::llround(spec.positive_rate * static_cast<double>(spec.n_task_docs)));
  const std::size_t n_neg = spec.n_task_docs - n_pos;
  Rng rng(derive_seed(spec.seed, {0x7a5cULL}));

  auto make_doc = [&](bool positive) {
    const std::string& tmpl = kTaskTemplates[uniform_index(rng, kTaskTemplates.size())];
    std::string slot;
    if (positive) {
      slot = uniform01(rng) < spec.overlap_rate ? condition_markers[uniform_index(rng, condition_markers.size())]
                                                : lex.task_markers[uniform_index(rng, lex.task_markers.size())];
    } else {
      slot = lex.fillers[uniform_index(rng, lex.fillers.size())];
    }
    Document d;
    d.text = expand(tmpl, rng, lex.fillers, nullptr, {}, slot);
    d.stress_label = positive ? StressLabel::positive : StressLabel::negative;
    return d;
  };
  std::vector<Document> pos, neg;
  for (std::size_t i = 0; i < n_pos; ++i) pos.push_back(make_doc(true));
  for (std::size_t i = 0; i < n_neg; ++i) neg.push_back(make_doc(false));

  TaskSplits splits;
  auto distribute = [&](std::vector<Document>& group) {
    const std::size_t n = group.size();
    const auto n_train = static_cast<std::size_t>(std::llround(spec.train_fraction * static_cast<double>(n)));
    const auto n_valid = std::min(n - n_train, static_cast<std::size_t>(std::llround(spec.valid_fraction * static_cast<double>(n))));
    for (std::size_t i = 0; i < n; ++i) {
      auto& target = i < n_train ? splits.train : (i < n_train + n_valid ? splits.valid : splits.test);
      target.push_back(std::move(group[i]));
    }
  };
  distribute(pos);
  distribute(neg);
  auto finish = [&](std::vector<Document>& split, const char* name) {
    shuffle_in_place(split, rng);
    for (std::size_t i = 0; i < split.size(); ++i) {
      split[i].id = fmt::format("task-{}-{:05}", name, i);
      split[i].source = fmt::format("synthetic-task-{}", name);
    }
  };
  finish(splits.train, "train");
  finish(splits.valid, "valid");
  finish(splits.test, "test");
  return splits;
}

}  // namespace xcond
