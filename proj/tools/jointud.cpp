// jointud: train, predict, evaluate, self-train and gradient-check from the command line.
//
// Exit codes: 0 success, 1 failure, 2 bad path or configuration, 3 gold/prediction misalignment.

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include "CLI11.hpp"
#include "json.hpp"
#include "jointud/config.hpp"
#include "jointud/eval.hpp"
#include "jointud/gradient_suite.hpp"
#include "jointud/model_file.hpp"
#include "jointud/trainer.hpp"

namespace {

using namespace jointud;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

struct Paths {
  std::string train, dev, test, raw, embeddings, model, input, output, gold, pred, silver, base_model, json;
};

struct RunOptions {
  Paths paths;
  std::string config_file;
  std::string profile = "paper";
  std::uint64_t seed = kDefaultSeed;
  std::optional<int> K;
  bool no_cycle_loss = false;
  bool raw_input = false;
  bool quiet = false;
  std::size_t instances = 20;
  std::string fault;
};

void require_file(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError("missing " + what + " path");
  if (!std::filesystem::is_regular_file(path)) throw UsageError(what + " file not found: " + path);
}

void require_writable(const std::string& path, const std::string& what) {
  if (path.empty()) throw UsageError("missing " + what + " path");
  const auto parent = std::filesystem::path(path).parent_path();
  if (!parent.empty() && !std::filesystem::is_directory(parent)) {
    throw UsageError(what + " directory does not exist: " + parent.string());
  }
}

std::string read_text(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw UsageError("cannot read " + path);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

void set_path(const nlohmann::json& paths, const char* key, std::string& field) {
  if (field.empty() && paths.contains(key)) field = paths.at(key).get<std::string>();
}

// Profile defaults, then the config file, then command-line flags.
std::pair<ModelConfig, TrainConfig> resolve(RunOptions& o, const CLI::App& cmd) {
  nlohmann::json file = nlohmann::json::object();
  if (!o.config_file.empty()) {
    require_file(o.config_file, "config");
    try {
      file = nlohmann::json::parse(read_text(o.config_file));
    } catch (const nlohmann::json::exception& e) {
      throw UsageError(std::string("malformed config: ") + e.what());
    }
  }
  try {
    if (cmd.count("--profile") == 0 && file.contains("profile")) o.profile = file.at("profile").get<std::string>();
    if (cmd.count("--seed") == 0 && file.contains("seed")) o.seed = file.at("seed").get<std::uint64_t>();
    ModelConfig mc;
    TrainConfig tc;
    try {
      mc = model_config_for(o.profile);
      tc = train_config_for(o.profile);
    } catch (const std::invalid_argument& e) {
      throw UsageError(e.what());
    }
    if (file.contains("model")) merge_json(file.at("model"), mc);
    if (file.contains("train")) merge_json(file.at("train"), tc);
    if (file.contains("paths")) {
      const auto& p = file.at("paths");
      set_path(p, "train", o.paths.train);
      set_path(p, "dev", o.paths.dev);
      set_path(p, "test", o.paths.test);
      set_path(p, "raw", o.paths.raw);
      set_path(p, "embeddings", o.paths.embeddings);
      set_path(p, "model", o.paths.model);
    }
    if (o.K) mc.parser.cycle_k = *o.K;
    if (o.no_cycle_loss) mc.parser.cycle_loss = false;
    tc.seed = o.seed;
    if (mc.parser.cycle_k < 1) throw UsageError("K must be at least 1");
    return {mc, tc};
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(std::string("malformed config: ") + e.what());
  }
}

trainer::FitOptions fit_options(const RunOptions& o, const conllu::Treebank* dev) {
  trainer::FitOptions f;
  f.dev = dev;
  if (!o.quiet) f.log = [](const std::string& line) { std::cerr << line << std::endl; };
  return f;
}

Model train_model(const RunOptions& o, const ModelConfig& mc, const TrainConfig& tc, const conllu::Treebank& train,
                  const conllu::Treebank* dev) {
  std::optional<vocab::EmbeddingMatrix> external;
  if (!o.paths.embeddings.empty()) {
    require_file(o.paths.embeddings, "embeddings");
    std::vector<std::string> warnings;
    external = vocab::load_embeddings(o.paths.embeddings, o.seed, &warnings);
    for (const auto& w : warnings) std::cerr << "warning: " << w << "\n";
  }
  Model model = create_model(mc, train, external ? &*external : nullptr, o.seed);
  trainer::fit(model, train, tc, fit_options(o, dev));
  return model;
}

int cmd_train(RunOptions& o, const CLI::App& cmd) {
  auto [mc, tc] = resolve(o, cmd);
  require_file(o.paths.train, "train");
  require_writable(o.paths.model, "model");
  std::optional<conllu::Treebank> dev;
  if (!o.paths.dev.empty()) {
    require_file(o.paths.dev, "dev");
    dev = conllu::read_conllu_file(o.paths.dev);
  }
  const conllu::Treebank train = conllu::read_conllu_file(o.paths.train);
  Model model = train_model(o, mc, tc, train, dev ? &*dev : nullptr);
  save_model_file(model, o.paths.model);
  if (!o.quiet) std::cerr << "model written to " << o.paths.model << "\n";
  return 0;
}

int cmd_predict(RunOptions& o, const CLI::App&) {
  require_file(o.paths.model, "model");
  require_file(o.paths.input, "input");
  if (!o.paths.output.empty()) require_writable(o.paths.output, "output");
  const Model model = load_model_file(o.paths.model);
  const std::string text = read_text(o.paths.input);
  const conllu::Treebank input = o.raw_input ? conllu::load_raw_corpus(text) : conllu::parse_conllu(text);
  const std::string out = conllu::write_conllu(predict(model, input));
  if (o.paths.output.empty()) {
    std::cout << out;
  } else {
    std::ofstream f(o.paths.output, std::ios::binary);
    f << out;
    if (!f) throw UsageError("cannot write " + o.paths.output);
  }
  return 0;
}

void write_json(const std::string& path, const nlohmann::json& j) {
  if (path == "-") {
    std::cout << j.dump(2) << "\n";
    return;
  }
  std::ofstream f(path);
  f << j.dump(2) << "\n";
  if (!f) throw UsageError("cannot write " + path);
}

int cmd_evaluate(RunOptions& o, const CLI::App&) {
  require_file(o.paths.gold, "gold");
  require_file(o.paths.pred, "prediction");
  if (!o.paths.json.empty() && o.paths.json != "-") require_writable(o.paths.json, "json");
  const conllu::Treebank gold = conllu::read_conllu_file(o.paths.gold);
  const conllu::Treebank pred = conllu::read_conllu_file(o.paths.pred);
  eval::ScoreReport report;
  try {
    report = eval::score(gold, pred);
  } catch (const eval::AlignmentError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 3;
  }
  std::cout << eval::format_report(report) << "\n";
  if (!o.paths.json.empty()) write_json(o.paths.json, eval::to_json(report));
  return 0;
}

int cmd_selftrain(RunOptions& o, const CLI::App& cmd) {
  auto [mc, tc] = resolve(o, cmd);
  require_file(o.paths.train, "train");
  require_file(o.paths.raw, "raw");
  require_writable(o.paths.model, "model");
  if (o.paths.silver.empty()) o.paths.silver = o.paths.model + ".silver.conllu";
  require_writable(o.paths.silver, "silver");
  std::optional<conllu::Treebank> dev;
  if (!o.paths.dev.empty()) {
    require_file(o.paths.dev, "dev");
    dev = conllu::read_conllu_file(o.paths.dev);
  }
  const conllu::Treebank gold = conllu::read_conllu_file(o.paths.train);
  const conllu::Treebank raw = conllu::load_raw_corpus(read_text(o.paths.raw));
  if (raw.sentences.empty()) throw std::invalid_argument("raw corpus " + o.paths.raw + " has no sentences");

  Model model = [&] {
    if (!o.paths.base_model.empty()) {
      require_file(o.paths.base_model, "base model");
      return load_model_file(o.paths.base_model);
    }
    if (!o.quiet) std::cerr << "training the standard model\n";
    return train_model(o, mc, tc, gold, dev ? &*dev : nullptr);
  }();
  std::optional<eval::Attachment> before;
  if (dev) before = eval::attachment_scores(*dev, predict(model, *dev));

  const trainer::SelfTrainResult result = trainer::self_train(model, gold, raw, tc, fit_options(o, dev ? &*dev : nullptr));
  conllu::write_conllu_file(o.paths.silver, result.silver);
  save_model_file(model, o.paths.model);
  if (!o.quiet) std::cerr << "silver annotation written to " << o.paths.silver << "\n";

  if (dev) {
    const eval::Attachment after = eval::attachment_scores(*dev, predict(model, *dev));
    std::printf("%-6s | %7s | %7s\n", "", "std", "self");
    std::printf("-------+---------+--------\n");
    std::printf("%-6s | %7.2f | %7.2f\n", "UAS", 100 * before->uas, 100 * after.uas);
    std::printf("%-6s | %7.2f | %7.2f\n", "LAS", 100 * before->las, 100 * after.las);
  }
  return 0;
}

int cmd_gradcheck(RunOptions& o, const CLI::App&) {
  if (!o.fault.empty()) ad::inject_fault(o.fault);
  GradientSuiteOptions options;
  options.instances = o.instances;
  options.seed = o.seed;
  const auto reports = run_gradient_suite(options);
  std::cout << format_gradient_report(reports);
  std::size_t failed = 0;
  for (const auto& r : reports) failed += !r.passed();
  std::cout << (failed == 0 ? "all checks passed" : std::to_string(failed) + " check(s) failed") << "\n";
  return failed == 0 ? 0 : 1;
}

void add_config_flags(CLI::App* cmd, RunOptions& o) {
  cmd->add_option("--config", o.config_file, "JSON configuration file");
  cmd->add_option("--profile", o.profile, "paper or desk");
  cmd->add_option("--seed", o.seed, "random seed");
  cmd->add_option("--K", o.K, "highest matrix power in the cycle penalty");
  cmd->add_flag("--no-cycle-loss", o.no_cycle_loss, "train without the cycle penalty");
  cmd->add_option("--train", o.paths.train, "gold CoNLL-U training treebank");
  cmd->add_option("--dev", o.paths.dev, "gold CoNLL-U development treebank");
  cmd->add_option("--embeddings", o.paths.embeddings, "pretrained word embeddings (text format)");
  cmd->add_option("--model", o.paths.model, "output model file");
  cmd->add_flag("--quiet", o.quiet, "no training log");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Joint UD tagger, lemmatizer and dependency parser"};
  app.require_subcommand(1);
  RunOptions o;

  CLI::App* train = app.add_subcommand("train", "train a model");
  add_config_flags(train, o);

  CLI::App* predict_cmd = app.add_subcommand("predict", "annotate CoNLL-U or raw text");
  predict_cmd->add_option("--model", o.paths.model, "model file");
  predict_cmd->add_option("--input", o.paths.input, "input file");
  predict_cmd->add_option("--output", o.paths.output, "output file (default: standard output)");
  predict_cmd->add_flag("--raw", o.raw_input, "input is one whitespace-tokenized sentence per line");
  predict_cmd->add_option("--seed", o.seed, "random seed (unused at prediction time)");

  CLI::App* evaluate = app.add_subcommand("evaluate", "score predictions against gold");
  evaluate->add_option("--gold", o.paths.gold, "gold CoNLL-U")->required();
  evaluate->add_option("--pred", o.paths.pred, "predicted CoNLL-U")->required();
  evaluate->add_option("--json", o.paths.json, "also write the report as JSON ('-' for standard output)");
  evaluate->add_option("--seed", o.seed, "random seed (unused)");

  CLI::App* selftrain = app.add_subcommand("selftrain", "self-train on a raw corpus");
  add_config_flags(selftrain, o);
  selftrain->add_option("--raw", o.paths.raw, "raw corpus, one tokenized sentence per line");
  selftrain->add_option("--silver", o.paths.silver, "silver CoNLL-U output (default: <model>.silver.conllu)");
  selftrain->add_option("--base-model", o.paths.base_model, "annotate with this model instead of training one");

  CLI::App* gradcheck = app.add_subcommand("gradcheck", "finite-difference gradient checks");
  gradcheck->add_option("--instances", o.instances, "random instances per check");
  gradcheck->add_option("--seed", o.seed, "random seed");
  gradcheck->add_option("--inject-fault", o.fault)->group("");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*train) return cmd_train(o, *train);
    if (*predict_cmd) return cmd_predict(o, *predict_cmd);
    if (*evaluate) return cmd_evaluate(o, *evaluate);
    if (*selftrain) return cmd_selftrain(o, *selftrain);
    if (*gradcheck) return cmd_gradcheck(o, *gradcheck);
  } catch (const UsageError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 2;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
