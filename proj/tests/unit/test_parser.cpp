#include <cmath>

#include "doctest.h"
#include "jointud/conllu.hpp"
#include "jointud/parser.hpp"
#include "oracles.hpp"

using namespace jointud;
using namespace jointud::parser;

namespace {

using Matrix = std::vector<std::vector<double>>;

Matrix forbidden(std::size_t n) { return Matrix(n + 1, std::vector<double>(n + 1, kForbidden)); }

double best_single_root(const Matrix& w) { return testing::best_tree_weight(w, true); }

Tensor<double> one_hot(const std::vector<int>& heads) {
  const std::size_t m = heads.size() + 1;
  Tensor<double> a(m, m);
  a(0, 0) = 1;
  for (std::size_t i = 0; i < heads.size(); ++i) a(i + 1, static_cast<std::size_t>(heads[i])) = 1;
  return a;
}

}  // namespace

TEST_CASE("chu_liu_edmonds examples") {
  Matrix w = forbidden(2);
  w[1][0] = 10;
  w[2][0] = 1;
  w[2][1] = 5;
  w[1][2] = 8;
  CHECK(chu_liu_edmonds(w) == std::vector<int>{0, 1});
  CHECK(tree_weight(w, chu_liu_edmonds(w)) == 15);
  CHECK(best_single_root(w) == 15);

  Matrix c = forbidden(2);
  c[2][1] = 9;
  c[1][2] = 9;
  c[1][0] = 3;
  c[2][0] = 2;
  CHECK(chu_liu_edmonds(c) == std::vector<int>{0, 1});
  CHECK(tree_weight(c, chu_liu_edmonds(c)) == 12);
  CHECK(best_single_root(c) == 12);

  Matrix one = forbidden(1);
  one[1][0] = -3;
  CHECK(chu_liu_edmonds(one) == std::vector<int>{0});
}

TEST_CASE("single-root restriction changes the unrestricted optimum") {
  Matrix w = forbidden(2);
  w[1][0] = 10;
  w[2][0] = 10;
  w[2][1] = 1;
  w[1][2] = 2;
  CHECK(max_arborescence(w) == std::vector<int>{0, 0});
  CHECK(chu_liu_edmonds(w) == std::vector<int>{2, 0});
}

TEST_CASE("chu_liu_edmonds matches exhaustive search for n <= 4") {
  Rng rng(17);
  for (std::size_t n = 1; n <= 4; ++n) {
    for (int draw = 0; draw < 500; ++draw) {
      const Matrix w = testing::random_integer_weights(n, rng, 9);
      const std::vector<int> heads = chu_liu_edmonds(w);
      const auto report = conllu::validate_heads(heads);
      CHECK(report.valid());
      CHECK(report.root_children == 1);
      CHECK(tree_weight(w, heads) == best_single_root(w));
    }
  }
}

TEST_CASE("chu_liu_edmonds matches exhaustive search for n in {5, 6}") {
  Rng rng(18);
  for (int draw = 0; draw < 200; ++draw) {
    const std::size_t n = draw % 2 ? 6 : 5;
    const Matrix w = testing::random_integer_weights(n, rng, 20);
    const std::vector<int> heads = chu_liu_edmonds(w);
    CHECK(conllu::validate_heads(heads).valid());
    CHECK(tree_weight(w, heads) == best_single_root(w));
  }
}

TEST_CASE("max_arborescence matches exhaustive search without the root restriction") {
  Rng rng(19);
  for (int draw = 0; draw < 300; ++draw) {
    const std::size_t n = 1 + draw % 4;
    const Matrix w = testing::random_integer_weights(n, rng, 9);
    const std::vector<int> heads = max_arborescence(w);
    CHECK(conllu::validate_heads(heads).is_tree);
    CHECK(tree_weight(w, heads) == testing::best_tree_weight(w, false));
  }
}

TEST_CASE("greedy_decode") {
  GreedyResult tree = greedy_decode(one_hot({2, 0, 2}));
  CHECK(tree.heads == std::vector<int>{2, 0, 2});
  CHECK_FALSE(tree.cycle);

  GreedyResult mutual = greedy_decode(one_hot({2, 1}));
  CHECK(mutual.heads == std::vector<int>{2, 1});
  CHECK(mutual.cycle);

  GreedyResult self = greedy_decode(one_hot({0, 2}));
  CHECK(self.cycle);

  Tensor<double> tie(3, 3, 1.0 / 3);
  CHECK(greedy_decode(tie).heads == std::vector<int>{0, 0});
}

TEST_CASE("greedy and CLE agree on one-hot trees") {
  Rng rng(23);
  int trees = 0;
  while (trees < 200) {
    const std::size_t n = 1 + rng.next() % 7;
    std::vector<int> heads(n);
    for (std::size_t i = 0; i < n; ++i) heads[i] = static_cast<int>(rng.next() % (n + 1));
    if (!conllu::validate_heads(heads).valid()) continue;
    ++trees;
    Tensor<double> a = one_hot(heads);
    CHECK(greedy_decode(a).heads == heads);
    CHECK(decode_tree(a) == heads);
  }
}

TEST_CASE("decode_tree always returns a single-root tree") {
  Rng rng(29);
  for (int trial = 0; trial < 300; ++trial) {
    const std::size_t m = 2 + rng.next() % 9;
    Tensor<float> a(m, m);
    for (std::size_t i = 0; i < m; ++i) {
      float total = 0;
      for (std::size_t j = 0; j < m; ++j) {
        const float v = rng.uniform() < 0.3 ? 0.0f : static_cast<float>(rng.uniform());
        a(i, j) = v;
        total += v;
      }
      for (std::size_t j = 0; j < m; ++j) a(i, j) = total > 0 ? a(i, j) / total : 1.0f / static_cast<float>(m);
    }
    CHECK(conllu::validate_heads(decode_tree(a)).valid());
  }
}

TEST_CASE("arc loss on one-hot matrices") {
  auto arcs_for = [](Tape<double>& tape, const std::vector<int>& heads) {
    Tensor<double> logits(heads.size() + 1, heads.size() + 1, -1000.0);
    logits(0, 0) = 0;
    for (std::size_t i = 0; i < heads.size(); ++i) logits(i + 1, static_cast<std::size_t>(heads[i])) = 0;
    ArcScores<double> arcs;
    arcs.scores = tape.constant(logits);
    arcs.adjacency = ad::softmax_rows(arcs.scores);
    return arcs;
  };

  Tape<double> tape;
  ArcLoss<double> tree = arc_loss(arcs_for(tape, {2, 0, 2}), {2, 0, 2}, 3, true);
  CHECK(tree.cross_entropy.value().item() == doctest::Approx(0.0));
  CHECK(tree.cycle.value().item() == doctest::Approx(0.0));

  ArcLoss<double> cycle = arc_loss(arcs_for(tape, {2, 1}), {2, 0}, 3, true);
  CHECK(cycle.cycle.value().item() == doctest::Approx(2.0));
  CHECK(cycle.total.value().item() ==
        doctest::Approx(cycle.cross_entropy.value().item() + cycle.cycle.value().item()));

  ArcLoss<double> off = arc_loss(arcs_for(tape, {2, 1}), {2, 0}, 3, false);
  CHECK(off.total.value().item() == doctest::Approx(off.cross_entropy.value().item()));

  Rng rng(31);
  for (int trial = 0; trial < 100; ++trial) {
    const std::size_t n = 1 + rng.next() % 8;
    std::vector<int> heads(n);
    for (std::size_t i = 0; i < n; ++i) heads[i] = static_cast<int>(rng.next() % (n + 1));
    if (!conllu::validate_heads(heads).is_tree) continue;
    Tape<double> t;
    CHECK(cycle_penalty(t.constant(one_hot(heads)), 1 + trial % 4).value().item() == 0.0);
  }
}

TEST_CASE("score_arcs rows are distributions") {
  ad::ParameterStore<double> store;
  ParserConfig cfg;
  cfg.arc_dim = 4;
  cfg.label_dim = 3;
  Rng init(3);
  Parser p = make_parser(store, cfg, nn::RegularizationConfig{}, 6, 5, init);
  Rng rng(1);
  Tensor<double> f(4, 6);
  for (double& v : f.storage()) v = rng.normal(0, 1);
  ad::Tape<double> tape(&store);
  ArcScores<double> arcs = score_arcs(p, tape, tape.constant(f), false, rng);
  CHECK(arcs.adjacency.rows() == 4);
  CHECK(arcs.adjacency.cols() == 4);
  for (std::size_t i = 0; i < 4; ++i) {
    double total = 0;
    for (std::size_t j = 0; j < 4; ++j) total += arcs.adjacency.value()(i, j);
    CHECK(total == doctest::Approx(1.0).epsilon(1e-9));
  }
  ad::Var<double> labels = label_logits(p, tape, tape.constant(f), arcs.adjacency, false, rng);
  CHECK(labels.rows() == 3);
  CHECK(labels.cols() == 5);

  for (auto& param : store) param.value.fill(0);
  ad::Tape<double> zero(&store);
  Tensor<double> uniform = score_arcs(p, zero, zero.constant(f), false, rng).adjacency.value();
  for (double v : uniform.storage()) CHECK(v == doctest::Approx(0.25));
}

TEST_CASE("label logits use the soft head average") {
  ad::ParameterStore<double> store;
  ParserConfig cfg;
  cfg.arc_dim = 4;
  cfg.label_dim = 3;
  Rng init(5);
  Parser p = make_parser(store, cfg, nn::RegularizationConfig{}, 6, 4, init);
  Rng rng(2);
  Tensor<double> f(3, 6);
  for (double& v : f.storage()) v = rng.normal(0, 1);
  ad::Tape<double> tape(&store);
  ad::Var<double> feats = tape.constant(f);
  // With a one-hot A the label input is the chosen head's projection itself.
  Tensor<double> a = one_hot({0, 1});
  Tensor<double> mixed(3, 3);
  mixed(1, 0) = 1;
  mixed(2, 1) = 1;
  CHECK(label_logits(p, tape, feats, tape.constant(a), false, rng).value() ==
        label_logits(p, tape, feats, tape.constant(mixed), false, rng).value());
  Tensor<double> other = one_hot({2, 0});
  CHECK(label_logits(p, tape, feats, tape.constant(a), false, rng).value() !=
        label_logits(p, tape, feats, tape.constant(other), false, rng).value());
}
