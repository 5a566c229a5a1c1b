#include "oracles.hpp"

#include <algorithm>
#include <cmath>
#include <functional>
#include <limits>
#include <string>

namespace jointud::testing {

Matrix random_matrix(std::size_t rows, std::size_t cols, Rng& rng, double lo, double hi) {
  Matrix m(rows, cols);
  for (double& v : m.storage()) v = lo + (hi - lo) * rng.uniform();
  return m;
}

Matrix naive_matmul(const Matrix& a, const Matrix& b) {
  Matrix out(a.rows(), b.cols());
  for (std::size_t i = 0; i < a.rows(); ++i)
    for (std::size_t j = 0; j < b.cols(); ++j)
      for (std::size_t k = 0; k < a.cols(); ++k) out(i, j) += a(i, k) * b(k, j);
  return out;
}

Matrix identity_matrix(std::size_t n) {
  Matrix m(n, n);
  for (std::size_t i = 0; i < n; ++i) m(i, i) = 1;
  return m;
}

double closed_walks(const Matrix& a, int k) {
  const std::size_t n = a.rows();
  double total = 0;
  std::vector<std::size_t> walk(static_cast<std::size_t>(k), 0);
  while (true) {
    double product = 1;
    for (int step = 0; step < k; ++step) product *= a(walk[step], walk[(step + 1) % k]);
    total += product;
    int pos = 0;
    while (pos < k && ++walk[pos] == n) walk[pos++] = 0;
    if (pos == k) break;
  }
  return total;
}

Matrix trace_powers_gradient(const Matrix& a, int K) {
  const std::size_t n = a.rows();
  Matrix out(n, n);
  Matrix power = identity_matrix(n);
  for (int k = 1; k <= K; ++k) {
    for (std::size_t i = 0; i < n; ++i)
      for (std::size_t j = 0; j < n; ++j) out(i, j) += k * power(j, i);
    power = naive_matmul(power, a);
  }
  return out;
}

namespace {

// Walks up from every token; a tree reaches 0 within n steps from everywhere.
bool reaches_root(const std::vector<int>& heads) {
  const int n = static_cast<int>(heads.size());
  for (int i = 1; i <= n; ++i) {
    int node = i;
    for (int steps = 0; node != 0 && steps <= n; ++steps) node = heads[node - 1];
    if (node != 0) return false;
  }
  return true;
}

}  // namespace

double best_tree_weight(const Weights& w, bool single_root) {
  const int n = static_cast<int>(w.size()) - 1;
  std::vector<int> heads(n, 0);
  double best = -std::numeric_limits<double>::infinity();
  std::function<void(int, double)> rec = [&](int i, double total) {
    if (i == n) {
      if (single_root && std::count(heads.begin(), heads.end(), 0) != 1) return;
      if (reaches_root(heads)) best = std::max(best, total);
      return;
    }
    for (int h = 0; h <= n; ++h) {
      if (h == i + 1 || std::isinf(w[i + 1][h])) continue;
      heads[i] = h;
      rec(i + 1, total + w[i + 1][h]);
    }
  };
  rec(0, 0.0);
  return best;
}

Weights random_integer_weights(std::size_t n, Rng& rng, int range) {
  Weights w(n + 1, std::vector<double>(n + 1, -std::numeric_limits<double>::infinity()));
  for (std::size_t d = 1; d <= n; ++d)
    for (std::size_t h = 0; h <= n; ++h)
      if (h != d) w[d][h] = static_cast<double>(static_cast<int>(rng.next() % (2 * range + 1)) - range);
  return w;
}

namespace {

std::string pick(Rng& rng, std::initializer_list<const char*> items) {
  return *(items.begin() + rng.next() % items.size());
}

}  // namespace

conllu::Treebank random_treebank(Rng& rng) {
  conllu::Treebank tb;
  const std::size_t sentences = rng.next() % 5;
  for (std::size_t s = 0; s < sentences; ++s) {
    conllu::Sentence sent;
    if (rng.uniform() < 0.7) sent.comments.push_back("# sent_id = " + std::to_string(rng.next() % 1000));
    if (rng.uniform() < 0.3) sent.comments.push_back("# note: x=1 #2");
    const int n = 1 + static_cast<int>(rng.next() % 7);
    for (int i = 1; i <= n; ++i) {
      conllu::Token t;
      t.id = i;
      t.form = pick(rng, {"dog", "Köln", "naïve", "x", "\"", "ça", "日本", "a_b", "3.5"});
      t.lemma = rng.uniform() < 0.2 ? "" : pick(rng, {"dog", "köln", "be", "x"});
      t.upos = rng.uniform() < 0.1 ? "" : pick(rng, {"NOUN", "VERB", "DET", "X"});
      t.xpos = rng.uniform() < 0.3 ? "" : pick(rng, {"NN", "VB", "DT"});
      if (rng.uniform() < 0.6) {
        t.feats = conllu::MorphFeatureSet::parse(
            pick(rng, {"Number=Sing", "Case=Nom|Number=Plur", "Tense=Past|Mood=Ind", "PronType=Prs|Person=3"}));
      }
      if (rng.uniform() < 0.9) {
        const int h = static_cast<int>(rng.next() % static_cast<std::uint64_t>(n));
        t.head = h >= t.id ? h + 1 : h;
      }
      t.deprel = t.head ? pick(rng, {"nsubj", "obj", "root", "nmod:poss"}) : "";
      t.deps = rng.uniform() < 0.2 ? "2:nsubj|3:obj" : "";
      t.misc = rng.uniform() < 0.3 ? pick(rng, {"SpaceAfter=No", "Gloss=a b|Translit=x"}) : "";
      sent.tokens.push_back(t);
    }
    if (n >= 2 && rng.uniform() < 0.4) {
      const int first = 1 + static_cast<int>(rng.next() % static_cast<std::uint64_t>(n - 1));
      sent.mwt_lines.push_back(
          {first, first + 1, std::to_string(first) + "-" + std::to_string(first + 1) + "\tdel\t_\t_\t_\t_\t_\t_\t_\t_"});
    }
    tb.sentences.push_back(std::move(sent));
  }
  return tb;
}

conllu::Treebank corrupt_treebank(const conllu::Treebank& gold, Rng& rng) {
  conllu::Treebank pred = gold;
  for (auto& s : pred.sentences) {
    const int n = static_cast<int>(s.tokens.size());
    for (auto& t : s.tokens) {
      if (rng.uniform() < 0.15) t.head = static_cast<int>(rng.next() % static_cast<std::uint64_t>(n + 1));
      if (rng.uniform() < 0.15) t.deprel = rng.uniform() < 0.5 ? "dep" : "det";
      if (rng.uniform() < 0.1) t.upos = "X";
      if (rng.uniform() < 0.1) t.xpos = "XX";
      if (rng.uniform() < 0.1) t.lemma += "s";
      if (rng.uniform() < 0.1) t.feats = conllu::MorphFeatureSet::parse("Foo=Bar");
      if (rng.uniform() < 0.1 && t.feats.pairs.size() > 1) std::swap(t.feats.pairs[0], t.feats.pairs[1]);
    }
  }
  return pred;
}

namespace {

std::vector<std::string> feature_items(const conllu::MorphFeatureSet& f) {
  std::vector<std::string> items;
  for (const auto& [k, v] : f.pairs) items.push_back(k + "=" + v);
  std::sort(items.begin(), items.end());
  return items;
}

}  // namespace

TokenCounts recount(const conllu::Treebank& gold, const conllu::Treebank& pred) {
  const std::vector<std::string> function_words = {"aux", "cop", "mark", "det", "clf", "case", "cc", "punct"};
  TokenCounts c;
  for (std::size_t s = 0; s < gold.sentences.size(); ++s) {
    for (std::size_t i = 0; i < gold.sentences[s].tokens.size(); ++i) {
      const auto& g = gold.sentences[s].tokens[i];
      const auto& p = pred.sentences[s].tokens[i];
      const bool head = g.head == p.head;
      const bool label = head && g.deprel == p.deprel;
      const bool feats = feature_items(g.feats) == feature_items(p.feats);
      c.tokens += 1;
      c.heads += head;
      c.labels += label;
      c.upos += g.upos == p.upos;
      c.xpos += g.xpos == p.xpos;
      c.feats += feats;
      c.lemma += g.lemma == p.lemma;
      const std::string base = g.deprel.substr(0, g.deprel.find(':'));
      if (std::find(function_words.begin(), function_words.end(), base) != function_words.end()) continue;
      c.content += 1;
      c.mlas += label && g.upos == p.upos && feats;
      c.blex += label && g.lemma == p.lemma;
    }
  }
  return c;
}

}  // namespace jointud::testing
