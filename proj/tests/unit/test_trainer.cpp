#include <cmath>
#include <set>
#include <sstream>

#include "doctest.h"
#include "jointud/model_file.hpp"
#include "jointud/trainer.hpp"
#include "synthetic.hpp"

using namespace jointud;
using namespace jointud::trainer;

namespace {

std::string serialize(const Model& m) {
  std::ostringstream out;
  save_model(m, out);
  return out.str();
}

TrainConfig quick(std::size_t epochs) {
  TrainConfig c = desk_train_config();
  c.max_epochs = epochs;
  return c;
}

}  // namespace

TEST_CASE("batches") {
  auto sizes = [](const std::vector<Batch>& batches) {
    std::multiset<std::size_t> s;
    for (const auto& b : batches) s.insert(b.size());
    return s;
  };
  CHECK(sizes(make_batches(std::vector<std::size_t>{10, 10, 10, 10}, 20, 1, 1)) == std::multiset<std::size_t>{2, 2});
  CHECK(make_batches(std::vector<std::size_t>{5000}, 2500, 1, 1) == std::vector<Batch>{{0}});
  CHECK(make_batches(std::vector<std::size_t>{}, 10, 1, 1).empty());

  std::vector<std::size_t> lengths;
  Rng rng(3);
  for (int i = 0; i < 200; ++i) lengths.push_back(1 + rng.next() % 40);
  const auto a = make_batches(lengths, 120, 7, 3);
  CHECK(a == make_batches(lengths, 120, 7, 3));
  CHECK(a != make_batches(lengths, 120, 7, 4));

  std::vector<int> seen(lengths.size(), 0);
  for (const auto& batch : a) {
    std::size_t words = 0, lo = 1000, hi = 0;
    for (std::size_t i : batch) {
      ++seen[i];
      words += lengths[i];
      lo = std::min(lo, lengths[i]);
      hi = std::max(hi, lengths[i]);
    }
    CHECK((words <= 120 || batch.size() == 1));
    CHECK(hi - lo <= 40);
  }
  for (int c : seen) CHECK(c == 1);
}

TEST_CASE("sentence weights") {
  CHECK(sentence_weight(7) == doctest::Approx(1.9459).epsilon(1e-4));
  CHECK(sentence_weight(1) == doctest::Approx(std::log(2.0)));
  CHECK(sentence_weight(2) == doctest::Approx(std::log(2.0)));
}

TEST_CASE("empty training set is rejected") {
  const auto tb = testing::synthetic_treebank({4, 1, 20});
  Model model = create_model(desk_model_config(), tb, nullptr, 1);
  CHECK_THROWS(fit(model, conllu::Treebank{}, quick(1)));
}

TEST_CASE("learning rate halves twice on a plateau, then training stops") {
  // A single relation and one-word sentences make dev LAS constant.
  const auto tb = conllu::parse_conllu(
      "1\tHello\thello\tINTJ\tUH\t_\t0\troot\t_\t_\n\n"
      "1\tStop\tstop\tVERB\tVB\tMood=Imp\t0\troot\t_\t_\n\n");
  Model model = create_model(desk_model_config(), tb, nullptr, 1);
  TrainConfig cfg = quick(50);
  cfg.plateau_patience = 2;
  FitOptions opts;
  opts.dev = &tb;
  const FitResult r = fit(model, tb, cfg, opts);
  CHECK(r.lr_reductions == 2);
  CHECK(r.early_stopped);
  REQUIRE(r.history.size() == 7);
  CHECK(r.history.front().lr == doctest::Approx(cfg.lr));
  CHECK(r.history.back().lr == doctest::Approx(cfg.lr / 4));
  CHECK(paper_train_config().lr / 4 == doctest::Approx(0.0005));
}

TEST_CASE("training is deterministic") {
  const auto tb = testing::synthetic_treebank({12, 4, 15});
  Model a = create_model(desk_model_config(), tb, nullptr, 3);
  Model b = create_model(desk_model_config(), tb, nullptr, 3);
  CHECK(serialize(a) == serialize(b));
  fit(a, tb, quick(2));
  fit(b, tb, quick(2));
  CHECK(serialize(a) == serialize(b));
  const std::string before = serialize(a);
  fine_tune(a, tb, quick(1));
  fine_tune(b, tb, quick(1));
  CHECK(serialize(a) == serialize(b));
  CHECK(serialize(a) != before);
}

TEST_CASE("fine_tune with zero epochs leaves the model unchanged") {
  const auto tb = testing::synthetic_treebank({6, 4, 15});
  Model model = create_model(desk_model_config(), tb, nullptr, 3);
  fit(model, tb, quick(1));
  const std::string before = serialize(model);
  const FitResult r = fine_tune(model, tb, quick(0));
  CHECK(r.history.empty());
  CHECK(serialize(model) == before);
}

TEST_CASE("overfitting three sentences") {
  const auto tb = conllu::parse_conllu(
      "1\tThe\tthe\tDET\tDT\tDefinite=Def|PronType=Art\t2\tdet\t_\t_\n"
      "2\tcars\tcar\tNOUN\tNNS\tNumber=Plur\t3\tnsubj\t_\t_\n"
      "3\tstopped\tstop\tVERB\tVBD\tTense=Past|VerbForm=Fin\t0\troot\t_\t_\n"
      "4\tsuddenly\tsuddenly\tADV\tRB\t_\t3\tadvmod\t_\t_\n"
      "5\t.\t.\tPUNCT\t.\t_\t3\tpunct\t_\t_\n"
      "\n"
      "1\tShe\tshe\tPRON\tPRP\tCase=Nom|Number=Sing|Person=3\t2\tnsubj\t_\t_\n"
      "2\tsaw\tsee\tVERB\tVBD\tTense=Past|VerbForm=Fin\t0\troot\t_\t_\n"
      "3\tthe\tthe\tDET\tDT\tDefinite=Def|PronType=Art\t4\tdet\t_\t_\n"
      "4\tdogs\tdog\tNOUN\tNNS\tNumber=Plur\t2\tobj\t_\t_\n"
      "5\tin\tin\tADP\tIN\t_\t7\tcase\t_\t_\n"
      "6\ta\ta\tDET\tDT\tDefinite=Ind|PronType=Art\t7\tdet\t_\t_\n"
      "7\tpark\tpark\tNOUN\tNN\tNumber=Sing\t2\tobl\t_\t_\n"
      "\n"
      "1\tDogs\tdog\tNOUN\tNNS\tNumber=Plur\t2\tnsubj\t_\t_\n"
      "2\tchase\tchase\tVERB\tVBP\tTense=Pres|VerbForm=Fin\t0\troot\t_\t_\n"
      "3\tcars\tcar\tNOUN\tNNS\tNumber=Plur\t2\tobj\t_\t_\n"
      "\n");
  Model model = create_model(desk_model_config(), tb, nullptr, 11);
  TrainConfig cfg = quick(200);
  cfg.plateau_patience = cfg.max_epochs;
  const FitResult r = fit(model, tb, cfg);
  CHECK(r.history.size() <= 200);
  const conllu::Treebank pred = predict(model, testing::strip_annotation(tb));
  const eval::ScoreReport s = eval::score(tb, pred);
  CHECK(s.upos_acc == 1.0);
  CHECK(s.feats_acc == 1.0);
  CHECK(s.las == 1.0);
  CHECK(s.lemma_acc == 1.0);
  CHECK(pred.sentences[0].tokens[1].lemma == "car");
  CHECK(r.history.back().train_loss < r.history.front().train_loss);
}

TEST_CASE("fine_tune does not degrade the dev score") {
  const auto train = testing::synthetic_treebank({60, 21, 20});
  const auto dev = testing::synthetic_treebank({20, 22, 20});
  Model model = create_model(desk_model_config(), train, nullptr, 2);
  FitOptions opts;
  opts.dev = &dev;
  TrainConfig cfg = quick(20);
  cfg.batch_words = 100;
  fit(model, train, cfg, opts);
  const double before = eval::score(dev, predict(model, testing::strip_annotation(dev))).las;
  cfg.max_epochs = 3;
  fine_tune(model, train, cfg, opts);
  const double after = eval::score(dev, predict(model, testing::strip_annotation(dev))).las;
  MESSAGE("dev LAS before " << before << ", after fine-tuning " << after);
  CHECK(after >= before - 0.005);
}
