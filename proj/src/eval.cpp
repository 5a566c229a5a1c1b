#include "jointud/eval.hpp"

#include <cstdio>
#include <map>
#include <sstream>

namespace jointud::eval {

const std::set<std::string>& function_deprels() {
  static const std::set<std::string> kSet = {"aux", "cop", "mark", "det", "clf", "case", "cc", "punct"};
  return kSet;
}

bool is_content_deprel(const std::string& deprel) {
  const std::string base = deprel.substr(0, deprel.find(':'));
  return !base.empty() && function_deprels().count(base) == 0;
}

namespace {

template <typename F>
void for_each_pair(const conllu::Treebank& gold, const conllu::Treebank& pred, F&& f) {
  if (gold.sentences.size() != pred.sentences.size()) {
    throw AlignmentError("sentence count mismatch: gold " + std::to_string(gold.sentences.size()) + ", predicted " +
                         std::to_string(pred.sentences.size()));
  }
  for (std::size_t s = 0; s < gold.sentences.size(); ++s) {
    const auto& g = gold.sentences[s].tokens;
    const auto& p = pred.sentences[s].tokens;
    if (g.size() != p.size()) {
      throw AlignmentError("token count mismatch in sentence " + std::to_string(s + 1) + ": gold " +
                           std::to_string(g.size()) + ", predicted " + std::to_string(p.size()));
    }
    for (std::size_t i = 0; i < g.size(); ++i) {
      if (g[i].form != p[i].form) {
        throw AlignmentError("form mismatch in sentence " + std::to_string(s + 1) + " token " +
                             std::to_string(i + 1) + ": '" + g[i].form + "' vs '" + p[i].form + "'");
      }
      f(g[i], p[i]);
    }
  }
}

double ratio(std::size_t num, std::size_t den) {
  return den == 0 ? 0.0 : static_cast<double>(num) / static_cast<double>(den);
}

bool head_ok(const conllu::Token& g, const conllu::Token& p) { return g.head.has_value() && g.head == p.head; }

bool label_ok(const conllu::Token& g, const conllu::Token& p) { return head_ok(g, p) && g.deprel == p.deprel; }

}  // namespace

Attachment attachment_scores(const conllu::Treebank& gold, const conllu::Treebank& pred) {
  std::size_t total = 0, uh = 0, lh = 0;
  for_each_pair(gold, pred, [&](const conllu::Token& g, const conllu::Token& p) {
    ++total;
    uh += head_ok(g, p) ? 1 : 0;
    lh += label_ok(g, p) ? 1 : 0;
  });
  return {ratio(uh, total), ratio(lh, total)};
}

Tagging tagging_scores(const conllu::Treebank& gold, const conllu::Treebank& pred) {
  std::size_t total = 0, u = 0, x = 0, f = 0, l = 0;
  for_each_pair(gold, pred, [&](const conllu::Token& g, const conllu::Token& p) {
    ++total;
    u += g.upos == p.upos ? 1 : 0;
    x += g.xpos == p.xpos ? 1 : 0;
    f += g.feats.same_as(p.feats) ? 1 : 0;
    l += g.lemma == p.lemma ? 1 : 0;
  });
  return {ratio(u, total), ratio(x, total), ratio(f, total), ratio(l, total)};
}

double mlas_style(const conllu::Treebank& gold, const conllu::Treebank& pred) {
  std::size_t content = 0, ok = 0;
  for_each_pair(gold, pred, [&](const conllu::Token& g, const conllu::Token& p) {
    if (!is_content_deprel(g.deprel)) return;
    ++content;
    ok += label_ok(g, p) && g.upos == p.upos && g.feats.same_as(p.feats) ? 1 : 0;
  });
  return ratio(ok, content);
}

double blex_style(const conllu::Treebank& gold, const conllu::Treebank& pred) {
  std::size_t content = 0, ok = 0;
  for_each_pair(gold, pred, [&](const conllu::Token& g, const conllu::Token& p) {
    if (!is_content_deprel(g.deprel)) return;
    ++content;
    ok += label_ok(g, p) && g.lemma == p.lemma ? 1 : 0;
  });
  return ratio(ok, content);
}

ScoreReport score(const conllu::Treebank& gold, const conllu::Treebank& pred) {
  ScoreReport r;
  const Attachment a = attachment_scores(gold, pred);
  const Tagging t = tagging_scores(gold, pred);
  r.uas = a.uas;
  r.las = a.las;
  r.upos_acc = t.upos;
  r.xpos_acc = t.xpos;
  r.feats_acc = t.feats;
  r.lemma_acc = t.lemma;
  r.mlas_style = mlas_style(gold, pred);
  r.blex_style = blex_style(gold, pred);
  r.sentences = gold.sentences.size();
  r.tokens = gold.token_count();
  for (const auto& s : gold.sentences)
    for (const auto& tok : s.tokens) r.content_tokens += is_content_deprel(tok.deprel) ? 1 : 0;
  return r;
}

std::string most_frequent_deprel(const conllu::Treebank& train) {
  std::map<std::string, std::size_t> counts;
  std::vector<std::string> order;
  for (const auto& s : train.sentences)
    for (const auto& t : s.tokens) {
      if (t.deprel.empty()) continue;
      if (counts[t.deprel]++ == 0) order.push_back(t.deprel);
    }
  std::string best;
  std::size_t best_count = 0;
  for (const auto& d : order) {
    if (counts[d] > best_count) {
      best = d;
      best_count = counts[d];
    }
  }
  return best;
}

conllu::Treebank baseline_prev_word(const conllu::Treebank& tb, const conllu::Treebank& train) {
  const std::string label = most_frequent_deprel(train);
  conllu::Treebank out = tb;
  for (auto& s : out.sentences) {
    for (std::size_t i = 0; i < s.tokens.size(); ++i) {
      s.tokens[i].head = static_cast<int>(i);
      s.tokens[i].deprel = label;
    }
  }
  return out;
}

nlohmann::json to_json(const ScoreReport& r) {
  return {{"uas", r.uas},
          {"las", r.las},
          {"upos_acc", r.upos_acc},
          {"xpos_acc", r.xpos_acc},
          {"feats_acc", r.feats_acc},
          {"lemma_acc", r.lemma_acc},
          {"mlas_style", r.mlas_style},
          {"blex_style", r.blex_style},
          {"cycle_rate", r.cycle_rate},
          {"tokens", r.tokens},
          {"sentences", r.sentences},
          {"content_tokens", r.content_tokens}};
}

namespace {

std::string pct(double v) {
  char buf[32];
  std::snprintf(buf, sizeof buf, "%6.2f", 100.0 * v);
  return buf;
}

}  // namespace

std::string format_report(const ScoreReport& r) {
  std::ostringstream out;
  out << "Metric      | Score\n"
      << "------------+-------\n"
      << "UAS         | " << pct(r.uas) << "\n"
      << "LAS         | " << pct(r.las) << "\n"
      << "MLAS-style  | " << pct(r.mlas_style) << "\n"
      << "BLEX-style  | " << pct(r.blex_style) << "\n"
      << "UPOS        | " << pct(r.upos_acc) << "\n"
      << "XPOS        | " << pct(r.xpos_acc) << "\n"
      << "UFeats      | " << pct(r.feats_acc) << "\n"
      << "Lemmas      | " << pct(r.lemma_acc) << "\n"
      << "Sentences   | " << r.sentences << "\n"
      << "Tokens      | " << r.tokens << "\n";
  return out.str();
}

std::string format_ablation(const std::vector<AblationRow>& rows) {
  std::size_t width = 8;
  for (const auto& r : rows) width = std::max(width, r.label.size());
  auto pad = [&](const std::string& s) { return s + std::string(width - s.size(), ' '); };
  std::ostringstream out;
  out << pad("") << " |          UAS          |       % Cycles\n";
  out << pad("Treebank") << " | without  |   with     | without  |   with\n";
  out << std::string(width, '-') << "-+----------+------------+----------+---------\n";
  for (const auto& r : rows) {
    out << pad(r.label) << " |  " << pct(r.uas_without) << "  |   " << pct(r.uas_with) << "   |  "
        << pct(r.cycles_without) << "  |  " << pct(r.cycles_with) << "\n";
  }
  return out.str();
}

}  // namespace jointud::eval
