// Writes a synthetic treebank (or its raw text) to standard output.
#include <iostream>

#include "CLI11.hpp"
#include "synthetic.hpp"

int main(int argc, char** argv) {
  CLI::App app{"synthetic UD-style treebank"};
  jointud::testing::SyntheticOptions options;
  bool raw = false;
  app.add_option("--sentences", options.sentences);
  app.add_option("--seed", options.seed);
  app.add_option("--max-length", options.max_length);
  app.add_flag("--raw", raw, "one tokenized sentence per line");
  CLI11_PARSE(app, argc, argv);
  const auto tb = jointud::testing::synthetic_treebank(options);
  std::cout << (raw ? jointud::testing::raw_text(tb) : jointud::conllu::write_conllu(tb));
  return 0;
}
