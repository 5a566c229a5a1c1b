// Index spaces, external embeddings and sentence numericalization.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <unordered_map>
#include <vector>

#include "json.hpp"
#include "jointud/conllu.hpp"
#include "jointud/tensor.hpp"

namespace jointud::vocab {

// Bidirectional string <-> index map; indices follow insertion order.
class StringIndex {
 public:
  StringIndex() = default;
  explicit StringIndex(std::vector<std::string> items);

  int add(const std::string& item);
  int find(std::string_view item) const;  // -1 when absent
  const std::string& at(int index) const { return items_.at(static_cast<std::size_t>(index)); }
  std::size_t size() const { return items_.size(); }
  const std::vector<std::string>& items() const { return items_; }

  friend bool operator==(const StringIndex& a, const StringIndex& b) { return a.items_ == b.items_; }

 private:
  std::vector<std::string> items_;
  std::unordered_map<std::string, int> index_;
};

// Reserved character indices.
inline constexpr int kPad = 0;
inline constexpr int kUnk = 1;
inline constexpr int kBow = 2;
inline constexpr int kEow = 3;

// The reserved "not applicable" value of every feature attribute.
inline constexpr std::string_view kNotApplicable = "<NA>";

struct Annotation {
  bool xpos = false;
  bool lemma = false;
  bool feats = false;
  friend bool operator==(const Annotation&, const Annotation&) = default;
};

struct Lexicon {
  StringIndex upos;
  StringIndex xpos;
  StringIndex deprel;
  StringIndex chars;  // starts with PAD, UNK, BOW, EOW
  StringIndex words;  // training forms, used when embeddings are trained from scratch
  Annotation annotated;

  friend bool operator==(const Lexicon&, const Lexicon&) = default;
};

struct FeatureAttribute {
  std::string name;
  StringIndex values;  // index 0 is kNotApplicable
  friend bool operator==(const FeatureAttribute&, const FeatureAttribute&) = default;
};

struct FeatureSchema {
  std::vector<FeatureAttribute> attributes;

  int attribute_index(std::string_view name) const;
  friend bool operator==(const FeatureSchema&, const FeatureSchema&) = default;
};

struct EmbeddingMatrix {
  StringIndex words;
  Tensor<float> rows;  // words.size() x dim
  std::vector<float> unknown_vector;
  bool trainable = false;

  std::size_t dim() const { return unknown_vector.size(); }
  // Exact match, then lowercased match, then -1 (the unknown vector).
  int lookup(std::string_view word) const;
};

std::vector<std::string> utf8_chars(std::string_view text);
std::string lowercase_ascii(std::string_view text);

std::pair<Lexicon, FeatureSchema> build_lexicon(const conllu::Treebank& tb);

// Text format: optional "count dim" header, then "word v1 ... vd" per line.
EmbeddingMatrix load_embeddings(const std::string& path, std::uint64_t seed,
                                std::vector<std::string>* warnings = nullptr);

// Per-coordinate Normal(mean_i, var_i) over the columns of rows.
std::vector<float> unknown_vector_init(const Tensor<float>& rows, std::uint64_t seed);

// Randomly initialized, trainable embedding over the lexicon's training forms.
EmbeddingMatrix make_trainable_embeddings(const Lexicon& lex, std::size_t dim, std::uint64_t seed);

struct EncodedSentence {
  std::vector<int> word_rows;                   // -1 = unknown vector
  std::vector<std::vector<int>> chars;          // [BOW, c1..cm, EOW]
  std::vector<std::vector<int>> lemma_input;    // chars right-padded with PAD
  std::vector<std::vector<int>> lemma_target;   // [BOW, lemma, EOW, PAD...]; empty when unannotated
  std::vector<int> upos, xpos, deprel, heads;   // -1 = missing or unseen
  std::vector<std::vector<int>> feats;          // [token][attribute]; -1 = unseen value

  std::size_t size() const { return word_rows.size(); }
};

struct EncodeOptions {
  std::size_t lemma_slack = 5;
  bool training = false;  // lemma overflow is an error only when training
};

EncodedSentence encode_sentence(const conllu::Sentence& s, const Lexicon& lex, const FeatureSchema& schema,
                                const EmbeddingMatrix& emb, const EncodeOptions& options = {});

std::size_t lemma_padded_length(std::string_view form, std::size_t slack);

// Greedy decode of predicted lemma characters: skip BOW, stop at EOW or PAD.
std::string decode_lemma(const std::vector<int>& predicted, const Lexicon& lex);

void to_json(nlohmann::json& j, const StringIndex& s);
void from_json(const nlohmann::json& j, StringIndex& s);
void to_json(nlohmann::json& j, const Lexicon& lex);
void from_json(const nlohmann::json& j, Lexicon& lex);
void to_json(nlohmann::json& j, const FeatureSchema& schema);
void from_json(const nlohmann::json& j, FeatureSchema& schema);

}  // namespace jointud::vocab
