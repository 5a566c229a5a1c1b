#include <sys/wait.h>
#include <unistd.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "jointud/eval.hpp"
#include "jointud/model_file.hpp"
#include "synthetic.hpp"

using namespace jointud;
namespace fs = std::filesystem;

namespace {

class Workdir {
 public:
  Workdir() : path_(fs::temp_directory_path() / ("jointud-cli-" + std::to_string(::getpid()))) {
    fs::create_directories(path_);
  }
  ~Workdir() { fs::remove_all(path_); }
  std::string operator/(const std::string& name) const { return (path_ / name).string(); }

 private:
  fs::path path_;
};

int run(const std::string& args) {
  const std::string cmd = std::string(JOINTUD_CLI) + " " + args + " >/dev/null 2>&1";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

int run_capture(const std::string& args, const std::string& out) {
  const std::string cmd = std::string(JOINTUD_CLI) + " " + args + " >" + out + " 2>/dev/null";
  const int status = std::system(cmd.c_str());
  return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::stringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void spit(const std::string& path, const std::string& text) { std::ofstream(path, std::ios::binary) << text; }

}  // namespace

TEST_CASE("usage errors exit with 2") {
  Workdir dir;
  CHECK(run("train --train " + dir / "missing.conllu" + " --model " + dir / "m.bin") == 2);
  CHECK(run("train --model " + dir / "m.bin") == 2);
  CHECK(run("train --train " + fixture("overfit8.conllu") + " --model " + dir / "m.bin" + " --profile huge") == 2);
  spit(dir / "bad.json", "{ not json");
  CHECK(run("train --train " + fixture("overfit8.conllu") + " --model " + dir / "m.bin" + " --config " +
            dir / "bad.json") == 2);
  CHECK(run("evaluate --gold " + dir / "missing.conllu" + " --pred " + fixture("metrics_pred.conllu")) == 2);
  CHECK(run("predict --model " + dir / "missing.bin" + " --input " + fixture("overfit8.conllu")) == 2);
}

TEST_CASE("evaluate") {
  Workdir dir;
  CHECK(run("evaluate --gold " + fixture("metrics_gold.conllu") + " --pred " + fixture("content_gold.conllu")) == 3);

  REQUIRE(run_capture("evaluate --gold " + fixture("metrics_gold.conllu") + " --pred " +
                          fixture("metrics_gold.conllu") + " --json -",
                      dir / "self.txt") == 0);
  const std::string self = slurp(dir / "self.txt");
  const nlohmann::json j = nlohmann::json::parse(self.substr(self.find('{')));
  for (const char* key : {"uas", "las", "upos_acc", "xpos_acc", "feats_acc", "lemma_acc", "mlas_style", "blex_style"})
    CHECK(j.at(key).get<double>() == 1.0);

  REQUIRE(run_capture("evaluate --gold " + fixture("metrics_gold.conllu") + " --pred " +
                          fixture("metrics_pred.conllu") + " --json " + dir / "r.json",
                      dir / "r.txt") == 0);
  const nlohmann::json r = nlohmann::json::parse(slurp(dir / "r.json"));
  eval::ScoreReport report;
  report.uas = r.at("uas");
  report.las = r.at("las");
  report.upos_acc = r.at("upos_acc");
  report.xpos_acc = r.at("xpos_acc");
  report.feats_acc = r.at("feats_acc");
  report.lemma_acc = r.at("lemma_acc");
  report.mlas_style = r.at("mlas_style");
  report.blex_style = r.at("blex_style");
  report.tokens = r.at("tokens");
  report.sentences = r.at("sentences");
  auto trim = [](std::string t) {
    while (!t.empty() && t.back() == '\n') t.pop_back();
    return t;
  };
  CHECK(trim(slurp(dir / "r.txt")) == trim(eval::format_report(report)));
  CHECK(report.uas == doctest::Approx(0.8));
  CHECK(report.las == doctest::Approx(0.7));
}

TEST_CASE("gradcheck exit status") {
  CHECK(run("gradcheck --instances 2") == 0);
  CHECK(run("gradcheck --instances 2 --inject-fault tanh") == 1);
  CHECK(run("gradcheck --instances 2 --inject-fault matmul") == 1);
}

TEST_CASE("train, predict and selftrain") {
  Workdir dir;
  spit(dir / "cfg.json", R"({"profile": "desk", "train": {"max_epochs": 2}})");
  const std::string model = dir / "m.bin";
  REQUIRE(run("train --train " + fixture("overfit8.conllu") + " --config " + dir / "cfg.json" + " --model " + model +
              " --quiet") == 0);
  const Model loaded = load_model_file(model);
  CHECK(loaded.epochs_trained == 2);
  CHECK(loaded.config.profile == "desk");

  spit(dir / "raw.txt", "the car\n\nThe dog saw cats .\n");
  REQUIRE(run("predict --model " + model + " --raw --input " + dir / "raw.txt" + " --output " + dir / "raw.conllu") ==
          0);
  const conllu::Treebank raw = conllu::read_conllu_file(dir / "raw.conllu");
  REQUIRE(raw.sentences.size() == 2);
  CHECK(raw.sentences[0].size() == 2);
  for (const auto& s : raw.sentences) CHECK(conllu::validate_tree(s).valid());

  REQUIRE(run_capture("predict --model " + model + " --input " + fixture("overfit8.conllu"), dir / "p.conllu") == 0);
  const conllu::Treebank pred = conllu::read_conllu_file(dir / "p.conllu");
  CHECK(pred.sentences.size() == 8);
  CHECK(run("evaluate --gold " + fixture("overfit8.conllu") + " --pred " + dir / "p.conllu") == 0);

  spit(dir / "corpus.txt", testing::raw_text(testing::strip_annotation(testing::synthetic_treebank({5, 41, 12}))));
  REQUIRE(run("selftrain --train " + fixture("overfit8.conllu") + " --config " + dir / "cfg.json" + " --raw " +
              dir / "corpus.txt" + " --base-model " + model + " --model " + dir / "s.bin" + " --quiet") == 0);
  const conllu::Treebank silver = conllu::read_conllu_file(dir / "s.bin.silver.conllu");
  CHECK(silver.sentences.size() == 5);
  for (const auto& s : silver.sentences) CHECK(conllu::validate_tree(s).valid());
  CHECK_NOTHROW(load_model_file(dir / "s.bin"));

  spit(dir / "empty.txt", "\n");
  CHECK(run("selftrain --train " + fixture("overfit8.conllu") + " --config " + dir / "cfg.json" + " --raw " +
            dir / "empty.txt" + " --base-model " + model + " --model " + dir / "e.bin" + " --quiet") != 0);
}
