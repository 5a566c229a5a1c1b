// Scoring predicted treebanks against gold, baselines and report formatting.
#pragma once

#include <set>
#include <stdexcept>
#include <string>

#include "json.hpp"
#include "jointud/conllu.hpp"

namespace jointud::eval {

class AlignmentError : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

struct ScoreReport {
  double uas = 0, las = 0;
  double upos_acc = 0, xpos_acc = 0, feats_acc = 0, lemma_acc = 0;
  double mlas_style = 0, blex_style = 0;
  double cycle_rate = 0;  // filled in by callers that have a model
  std::size_t tokens = 0, sentences = 0, content_tokens = 0;
};

// Relations excluded from the content-word metrics.
const std::set<std::string>& function_deprels();
// Subtype-insensitive: "nmod:poss" counts as "nmod".
bool is_content_deprel(const std::string& deprel);

struct Attachment {
  double uas = 0, las = 0;
};
struct Tagging {
  double upos = 0, xpos = 0, feats = 0, lemma = 0;
};

// All throw AlignmentError when sentence or token counts differ.
Attachment attachment_scores(const conllu::Treebank& gold, const conllu::Treebank& pred);
Tagging tagging_scores(const conllu::Treebank& gold, const conllu::Treebank& pred);
double mlas_style(const conllu::Treebank& gold, const conllu::Treebank& pred);
double blex_style(const conllu::Treebank& gold, const conllu::Treebank& pred);
ScoreReport score(const conllu::Treebank& gold, const conllu::Treebank& pred);

// Heads chain to the previous token; every label is the most frequent deprel of train.
conllu::Treebank baseline_prev_word(const conllu::Treebank& tb, const conllu::Treebank& train);
std::string most_frequent_deprel(const conllu::Treebank& train);

nlohmann::json to_json(const ScoreReport& r);
std::string format_report(const ScoreReport& r);

struct AblationRow {
  std::string label;
  double uas_with = 0, uas_without = 0;
  double cycles_with = 0, cycles_without = 0;
};

// Aligned text table: UAS and % cycles, each without | with the cycle penalty.
std::string format_ablation(const std::vector<AblationRow>& rows);

}  // namespace jointud::eval
