#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <vector>

#include "xcond/corpus.hpp"

namespace xcond {

/// Parameters of the synthetic pretraining corpus and downstream stress task.
///
/// Pretraining posts are self-disclosure templates carrying their condition's
/// marker words. Task posts share one template family between classes and differ
/// only in one slot: positives hold a stress marker (a condition marker with
/// probability overlap_rate, otherwise a task-only marker), negatives a filler
/// word. Fillers also fill the pretraining templates, so without pretraining a
/// marker never seen during fine-tuning is indistinguishable from a filler.
struct GeneratorSpec {
  /// Number of filler words.
  std::size_t vocab_size_hint = 40;
  std::size_t n_pretrain_docs = 2000;
  std::size_t n_task_docs = 400;
  std::size_t markers_per_condition = 12;
  std::size_t task_only_markers = 8;
  double overlap_rate = 0.8;
  /// depression, anxiety, ptsd
  std::array<double, 3> condition_shares = {0.53, 0.34, 0.13};
  double positive_rate = 0.37;
  double train_fraction = 0.6;
  double valid_fraction = 0.2;
  std::uint64_t seed = 7;

  void validate() const;
};

/// The generator's closed word lists, a pure function of the generator sizes.
struct SyntheticLexicon {
  std::vector<std::string> fillers;
  std::array<std::vector<std::string>, 3> condition_markers;
  std::vector<std::string> task_markers;
  /// Fixed template words, including the condition names.
  std::vector<std::string> template_words;

  std::vector<std::string> all_condition_markers() const;
  /// Every word any generated document can contain.
  std::vector<std::string> closed_vocabulary() const;
};

SyntheticLexicon make_lexicon(const GeneratorSpec& spec);

/// Condition-labeled posts; per-condition post counts follow condition_shares and
/// all posts have the same length, so token shares follow them too.
std::vector<Document> generate_pretrain_corpus(const GeneratorSpec& spec);

struct TaskSplits {
  std::vector<Document> train;
  std::vector<Document> valid;
  std::vector<Document> test;
};

/// Stratified labeled splits with class ratio positive_rate in each split.
TaskSplits generate_task(const GeneratorSpec& spec);

}  // namespace xcond
