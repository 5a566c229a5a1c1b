// CoNLL-U treebank reading, writing and tree validation.
#pragma once

#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>
#include <utility>
#include <vector>

namespace jointud::conllu {

class ParseError : public std::runtime_error {
 public:
  ParseError(std::size_t line, const std::string& message);
  std::size_t line() const { return line_; }

 private:
  std::size_t line_;
};

// Attribute=Value pairs. Attributes are unique within a set.
struct MorphFeatureSet {
  std::vector<std::pair<std::string, std::string>> pairs;

  static MorphFeatureSet parse(std::string_view text);
  // Serialized form with attributes sorted case-insensitively; "_" when empty.
  std::string str() const;
  bool empty() const { return pairs.empty(); }
  const std::string* find(std::string_view attribute) const;

  // Set semantics: order of pairs is irrelevant.
  bool same_as(const MorphFeatureSet& other) const;
  friend bool operator==(const MorphFeatureSet&, const MorphFeatureSet&) = default;
};

struct Token {
  int id = 0;
  std::string form;
  std::string lemma;
  std::string upos;
  std::string xpos;
  MorphFeatureSet feats;
  std::optional<int> head;
  std::string deprel;
  std::string deps;  // verbatim, not modeled
  std::string misc;  // verbatim

  friend bool operator==(const Token&, const Token&) = default;
};

struct MultiwordLine {
  int first = 0;
  int last = 0;
  std::string line;  // verbatim

  friend bool operator==(const MultiwordLine&, const MultiwordLine&) = default;
};

struct Sentence {
  std::vector<Token> tokens;
  std::vector<std::string> comments;  // verbatim, including the leading '#'
  std::vector<MultiwordLine> mwt_lines;

  std::size_t size() const { return tokens.size(); }
  bool fully_headed() const;
  // Head indices for tokens 1..n; throws if any head is unset.
  std::vector<int> heads() const;

  friend bool operator==(const Sentence&, const Sentence&) = default;
};

struct Treebank {
  std::vector<Sentence> sentences;

  std::size_t token_count() const;
  friend bool operator==(const Treebank&, const Treebank&) = default;
};

Treebank parse_conllu(std::string_view text);
std::string write_conllu(const Treebank& tb);

Treebank read_conllu_file(const std::string& path);
void write_conllu_file(const std::string& path, const Treebank& tb);

// One whitespace-tokenized sentence per line; blank lines are skipped.
Treebank load_raw_corpus(std::string_view text);

struct ValidationReport {
  bool is_tree = false;        // acyclic and every node reachable from 0
  bool single_root = false;    // exactly one token attached to 0
  int root_children = 0;
  std::vector<int> cycle;      // nodes of one detected cycle, ascending
  std::vector<int> unreachable;

  bool valid() const { return is_tree && single_root; }
};

ValidationReport validate_heads(const std::vector<int>& heads);
ValidationReport validate_tree(const Sentence& s);

}  // namespace jointud::conllu
