#include <fstream>
#include <numeric>
#include <sstream>

#include "doctest.h"
#include "fixtures.hpp"
#include "jointud/conllu.hpp"
#include "jointud/rng.hpp"
#include "oracles.hpp"
#include "synthetic.hpp"

using namespace jointud;
using namespace jointud::conllu;

namespace {

std::string slurp(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  std::ostringstream s;
  s << in.rdbuf();
  return s.str();
}

const char* kTwoTokens =
    "1\tThe\tthe\tDET\tDT\t_\t2\tdet\t_\t_\n"
    "2\tcar\tcar\tNOUN\tNN\t_\t0\troot\t_\t_\n"
    "\n";

// Independent tree check: union-find over nodes 0..n, one edge per token.
struct UnionFind {
  std::vector<int> parent;
  explicit UnionFind(int n) : parent(n) { std::iota(parent.begin(), parent.end(), 0); }
  int find(int x) { return parent[x] == x ? x : parent[x] = find(parent[x]); }
  bool unite(int a, int b) {
    a = find(a);
    b = find(b);
    if (a == b) return false;
    parent[a] = b;
    return true;
  }
};

bool union_find_is_tree(const std::vector<int>& heads) {
  const int n = static_cast<int>(heads.size());
  UnionFind uf(n + 1);
  for (int i = 1; i <= n; ++i) {
    if (!uf.unite(i, heads[i - 1])) return false;
  }
  return true;
}

}  // namespace

TEST_CASE("two-token sentence parses") {
  const Treebank tb = parse_conllu(kTwoTokens);
  REQUIRE(tb.sentences.size() == 1);
  REQUIRE(tb.sentences[0].tokens.size() == 2);
  CHECK(tb.sentences[0].tokens[0].form == "The");
  CHECK(tb.sentences[0].tokens[0].head == 2);
  CHECK(tb.sentences[0].tokens[1].deprel == "root");
  CHECK(tb.token_count() == 2);
}

TEST_CASE("empty document and empty treebank") {
  CHECK(parse_conllu("").sentences.empty());
  CHECK(write_conllu(Treebank{}).empty());
}

TEST_CASE("malformed lines report their line number") {
  auto line_of = [](const std::string& text) {
    try {
      parse_conllu(text);
    } catch (const ParseError& e) {
      return static_cast<long>(e.line());
    }
    return -1L;
  };
  CHECK(line_of("# c\n1\tThe\tthe\tDET\tDT\t_\t0\troot\t_\n\n") == 2);
  CHECK(line_of("1\ta\ta\tX\t_\t_\t0\troot\t_\t_\n3\tb\tb\tX\t_\t_\t1\tdep\t_\t_\n\n") == 2);
  CHECK(line_of("1\ta\ta\tX\t_\t_\t5\troot\t_\t_\n\n") == 1);
  CHECK(line_of("1\ta\ta\tX\t_\t_\t0\troot\t_\t_\n1.1\te\te\tX\t_\t_\t_\t_\t_\t_\n\n") == 2);
}

TEST_CASE("unset fields are written as underscore") {
  Treebank tb;
  Sentence s;
  Token t;
  t.id = 1;
  t.form = "car";
  s.tokens.push_back(t);
  tb.sentences.push_back(s);
  CHECK(write_conllu(tb) == "1\tcar\t_\t_\t_\t_\t_\t_\t_\t_\n\n");
}

TEST_CASE("validator-clean fixtures are write fixpoints") {
  for (const char* name : {"roundtrip.conllu", "metrics_gold.conllu", "metrics_pred.conllu", "content_gold.conllu",
                           "overfit8.conllu"}) {
    CAPTURE(name);
    const std::string text = slurp(fixture(name));
    const Treebank tb = parse_conllu(text);
    CHECK(write_conllu(tb) == text);
    for (const auto& s : tb.sentences) CHECK(validate_tree(s).valid());
  }
}

TEST_CASE("comments and multiword lines survive") {
  const Treebank tb = read_conllu_file(fixture("roundtrip.conllu"));
  REQUIRE(tb.sentences.size() == 3);
  CHECK(tb.sentences[0].comments.size() == 3);
  REQUIRE(tb.sentences[0].mwt_lines.size() == 1);
  CHECK(tb.sentences[0].mwt_lines[0].first == 2);
  CHECK(tb.sentences[0].mwt_lines[0].last == 3);
  CHECK(tb.sentences[0].tokens[0].deps == "4:nsubj");
  CHECK(tb.sentences[1].tokens[4].misc == "SpaceAfter=No|Translit=Koeln");
  CHECK(tb.sentences[2].comments.size() == 1);
}

TEST_CASE("feats are written sorted") {
  const Treebank tb = parse_conllu("1\ta\ta\tX\t_\tTense=Past|Mood=Ind\t0\troot\t_\t_\n\n");
  CHECK(tb.sentences[0].tokens[0].feats.str() == "Mood=Ind|Tense=Past");
  CHECK(MorphFeatureSet::parse("B=1|a=2").str() == "a=2|B=1");
  CHECK(MorphFeatureSet::parse("A=1|B=2").same_as(MorphFeatureSet::parse("B=2|A=1")));
}

TEST_CASE("randomized treebanks re-parse losslessly") {
  Rng rng(2024);
  for (int i = 0; i < 100; ++i) {
    const Treebank tb = testing::random_treebank(rng);
    const std::string text = write_conllu(tb);
    const Treebank back = parse_conllu(text);
    CHECK(back == tb);
    CHECK(write_conllu(back) == text);
  }
}

TEST_CASE("validate_heads examples") {
  const auto ok = validate_heads({2, 0});
  CHECK(ok.valid());
  const auto cyc = validate_heads({2, 1});
  CHECK_FALSE(cyc.is_tree);
  CHECK(cyc.cycle == std::vector<int>{1, 2});
  const auto multi = validate_heads({0, 0});
  CHECK(multi.is_tree);
  CHECK_FALSE(multi.single_root);
  CHECK(multi.root_children == 2);
  const auto self = validate_heads({0, 2});
  CHECK_FALSE(self.is_tree);
  CHECK(self.cycle == std::vector<int>{2});
}

TEST_CASE("validate_heads agrees with union-find on random head vectors") {
  Rng rng(7);
  for (int trial = 0; trial < 2000; ++trial) {
    const int n = 1 + static_cast<int>(rng.next() % 8);
    std::vector<int> heads(n);
    for (int& h : heads) h = static_cast<int>(rng.next() % static_cast<std::uint64_t>(n + 1));
    const auto r = validate_heads(heads);
    CHECK(r.is_tree == union_find_is_tree(heads));
    CHECK(r.root_children == static_cast<int>(std::count(heads.begin(), heads.end(), 0)));
  }
}

TEST_CASE("validate_tree rejects unset heads") {
  Sentence s;
  Token t;
  t.id = 1;
  t.form = "x";
  s.tokens.push_back(t);
  CHECK_FALSE(s.fully_headed());
  CHECK_THROWS(validate_tree(s));
}

TEST_CASE("raw corpus loading") {
  const Treebank one = load_raw_corpus("the car\n");
  REQUIRE(one.sentences.size() == 1);
  REQUIRE(one.sentences[0].tokens.size() == 2);
  CHECK(one.sentences[0].tokens[1].form == "car");
  CHECK(one.sentences[0].tokens[1].id == 2);
  CHECK(write_conllu(one) == "1\tthe\t_\t_\t_\t_\t_\t_\t_\t_\n2\tcar\t_\t_\t_\t_\t_\t_\t_\t_\n\n");
  CHECK(load_raw_corpus("a\nb c\n\nd\n").sentences.size() == 3);
  CHECK(load_raw_corpus("a\tb\n").sentences[0].tokens.size() == 2);
  CHECK_THROWS(load_raw_corpus(""));
}

TEST_CASE("synthetic treebanks are valid single-root trees") {
  const Treebank tb = testing::synthetic_treebank({300, 3, 40});
  CHECK(tb.sentences.size() == 300);
  for (const auto& s : tb.sentences) CHECK(validate_tree(s).valid());
  CHECK(parse_conllu(write_conllu(tb)) == tb);
  CHECK(testing::synthetic_treebank({300, 3, 40}) == tb);
}
