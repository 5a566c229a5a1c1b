#include <algorithm>
#include <cmath>

#include "doctest.h"
#include "fixtures.hpp"
#include "jointud/eval.hpp"
#include "jointud/rng.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace jointud;
using namespace jointud::eval;

TEST_CASE("hand-counted fixture") {
  const auto gold = conllu::read_conllu_file(fixture("metrics_gold.conllu"));
  const auto pred = conllu::read_conllu_file(fixture("metrics_pred.conllu"));
  const ScoreReport r = score(gold, pred);
  CHECK(r.sentences == 3);
  CHECK(r.tokens == 10);
  CHECK(r.uas == doctest::Approx(0.8));
  CHECK(r.las == doctest::Approx(0.7));
  CHECK(r.upos_acc == doctest::Approx(0.9));
  CHECK(r.xpos_acc == doctest::Approx(1.0));
  CHECK(r.feats_acc == doctest::Approx(0.9));
  CHECK(r.lemma_acc == doctest::Approx(0.9));
  CHECK(r.content_tokens == 7);
  CHECK(r.mlas_style == doctest::Approx(4.0 / 7));
  CHECK(r.blex_style == doctest::Approx(4.0 / 7));
}

TEST_CASE("content-word fixture") {
  const auto gold = conllu::read_conllu_file(fixture("content_gold.conllu"));
  const auto pred = conllu::read_conllu_file(fixture("content_pred.conllu"));
  const ScoreReport r = score(gold, pred);
  CHECK(r.content_tokens == 6);
  CHECK(r.tokens == 10);
  CHECK(r.las == 1.0);
  CHECK(r.mlas_style == doctest::Approx(5.0 / 6));
  CHECK(r.blex_style == 1.0);
}

TEST_CASE("metrics agree with a per-token recount on corrupted treebanks") {
  Rng rng(77);
  for (int i = 0; i < 100; ++i) {
    const auto gold = testing::synthetic_treebank({8, static_cast<std::uint64_t>(100 + i), 25});
    const auto pred = testing::corrupt_treebank(gold, rng);
    const testing::TokenCounts c = testing::recount(gold, pred);
    const ScoreReport r = score(gold, pred);
    CHECK(r.uas == doctest::Approx(c.heads / c.tokens).epsilon(1e-12));
    CHECK(r.las == doctest::Approx(c.labels / c.tokens).epsilon(1e-12));
    CHECK(r.upos_acc == doctest::Approx(c.upos / c.tokens).epsilon(1e-12));
    CHECK(r.xpos_acc == doctest::Approx(c.xpos / c.tokens).epsilon(1e-12));
    CHECK(r.feats_acc == doctest::Approx(c.feats / c.tokens).epsilon(1e-12));
    CHECK(r.lemma_acc == doctest::Approx(c.lemma / c.tokens).epsilon(1e-12));
    CHECK(r.content_tokens == static_cast<std::size_t>(c.content));
    CHECK(r.mlas_style == doctest::Approx(c.mlas / c.content).epsilon(1e-12));
    CHECK(r.blex_style == doctest::Approx(c.blex / c.content).epsilon(1e-12));
    CHECK(r.las <= r.uas);
    CHECK(c.mlas <= c.labels);
    CHECK(c.blex <= c.labels);
  }
}

TEST_CASE("identity and simple cases") {
  const auto gold = testing::synthetic_treebank({20, 3, 30});
  const ScoreReport r = score(gold, gold);
  for (double v : {r.uas, r.las, r.upos_acc, r.xpos_acc, r.feats_acc, r.lemma_acc, r.mlas_style, r.blex_style})
    CHECK(v == 1.0);

  auto relabelled = gold;
  for (auto& s : relabelled.sentences)
    for (auto& t : s.tokens) t.deprel = "orphan";
  const Attachment a = attachment_scores(gold, relabelled);
  CHECK(a.uas == 1.0);
  CHECK(a.las == 0.0);

  auto lower = gold;
  lower.sentences[0].tokens[0].lemma = "THE";
  CHECK(tagging_scores(gold, lower).lemma < 1.0);

  auto no_feats = gold;
  for (auto& s : no_feats.sentences)
    for (auto& t : s.tokens) t.feats = conllu::MorphFeatureSet::parse("Foo=Bar");
  CHECK(mlas_style(gold, no_feats) == 0.0);
  CHECK(blex_style(gold, no_feats) == 1.0);
}

TEST_CASE("misaligned treebanks are rejected") {
  const auto gold = testing::synthetic_treebank({4, 3, 20});
  auto fewer = gold;
  fewer.sentences.pop_back();
  CHECK_THROWS_AS(score(gold, fewer), AlignmentError);
  auto shorter = gold;
  shorter.sentences[1].tokens.pop_back();
  CHECK_THROWS_AS(attachment_scores(gold, shorter), AlignmentError);
  CHECK_THROWS_AS(tagging_scores(gold, shorter), AlignmentError);
  CHECK_THROWS_AS(mlas_style(gold, shorter), AlignmentError);
}

TEST_CASE("previous-word baseline") {
  const auto train = conllu::parse_conllu(
      "1\ta\ta\tX\t_\t_\t0\troot\t_\t_\n2\tb\tb\tX\t_\t_\t1\tdep\t_\t_\n3\tc\tc\tX\t_\t_\t2\tdep\t_\t_\n\n");
  CHECK(most_frequent_deprel(train) == "dep");
  const auto base = baseline_prev_word(train, train);
  CHECK(attachment_scores(train, base).uas == 1.0);
  CHECK(base.sentences[0].tokens[2].deprel == "dep");

  const auto single = conllu::load_raw_corpus("word\n");
  CHECK(baseline_prev_word(single, train).sentences[0].tokens[0].head == 0);

  const auto tb = testing::synthetic_treebank({30, 9, 40});
  for (const auto& s : baseline_prev_word(tb, tb).sentences) CHECK(conllu::validate_tree(s).valid());
}

TEST_CASE("content relations") {
  CHECK(is_content_deprel("nsubj"));
  CHECK(is_content_deprel("nmod:poss"));
  CHECK(is_content_deprel("root"));
  CHECK_FALSE(is_content_deprel("det"));
  CHECK_FALSE(is_content_deprel("aux:pass"));
  CHECK(function_deprels().size() == 8);
}

TEST_CASE("report formats") {
  const auto gold = conllu::read_conllu_file(fixture("metrics_gold.conllu"));
  const auto pred = conllu::read_conllu_file(fixture("metrics_pred.conllu"));
  const ScoreReport r = score(gold, pred);
  const nlohmann::json j = to_json(r);
  CHECK(j.at("uas").get<double>() == r.uas);
  CHECK(j.at("mlas_style").get<double>() == r.mlas_style);
  CHECK(j.at("tokens").get<std::size_t>() == 10);
  const std::string text = format_report(r);
  CHECK(text.find("UAS         |  80.00") != std::string::npos);
  CHECK(text.find("LAS         |  70.00") != std::string::npos);

  AblationRow row{"synthetic", 0.9, 0.8, 0.05, 0.25};
  const std::string table = format_ablation({row});
  CHECK(table.find("without") < table.find("with "));
  CHECK(table.find(" 80.00") < table.find(" 90.00"));
  CHECK(table.find(" 25.00") < table.find("  5.00"));
  CHECK(format_ablation({row, row}).find("synthetic") != format_ablation({row, row}).rfind("synthetic"));
}
