#include "jointud/vocab.hpp"

#include <cctype>
#include <cmath>
#include <fstream>
#include <sstream>
#include <stdexcept>

#include "jointud/rng.hpp"

namespace jointud::vocab {

StringIndex::StringIndex(std::vector<std::string> items) {
  for (auto& item : items) add(item);
}

int StringIndex::add(const std::string& item) {
  auto it = index_.find(item);
  if (it != index_.end()) return it->second;
  const int id = static_cast<int>(items_.size());
  items_.push_back(item);
  index_.emplace(item, id);
  return id;
}

int StringIndex::find(std::string_view item) const {
  auto it = index_.find(std::string(item));
  return it == index_.end() ? -1 : it->second;
}

int FeatureSchema::attribute_index(std::string_view name) const {
  for (std::size_t i = 0; i < attributes.size(); ++i) {
    if (attributes[i].name == name) return static_cast<int>(i);
  }
  return -1;
}

int EmbeddingMatrix::lookup(std::string_view word) const {
  int row = words.find(word);
  if (row >= 0) return row;
  return words.find(lowercase_ascii(word));
}

std::vector<std::string> utf8_chars(std::string_view text) {
  std::vector<std::string> out;
  std::size_t i = 0;
  while (i < text.size()) {
    const auto lead = static_cast<unsigned char>(text[i]);
    std::size_t len = 1;
    if ((lead & 0xE0) == 0xC0) {
      len = 2;
    } else if ((lead & 0xF0) == 0xE0) {
      len = 3;
    } else if ((lead & 0xF8) == 0xF0) {
      len = 4;
    }
    if (i + len > text.size()) len = text.size() - i;  // truncated sequence: keep the bytes
    out.emplace_back(text.substr(i, len));
    i += len;
  }
  return out;
}

std::string lowercase_ascii(std::string_view text) {
  std::string out(text);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

std::pair<Lexicon, FeatureSchema> build_lexicon(const conllu::Treebank& tb) {
  Lexicon lex;
  for (const char* reserved : {"<PAD>", "<UNK>", "<BOW>", "<EOW>"}) lex.chars.add(reserved);
  FeatureSchema schema;
  for (const auto& s : tb.sentences) {
    for (const auto& t : s.tokens) {
      lex.words.add(t.form);
      for (const auto& c : utf8_chars(t.form)) lex.chars.add(c);
      if (!t.lemma.empty()) {
        lex.annotated.lemma = true;
        for (const auto& c : utf8_chars(t.lemma)) lex.chars.add(c);
      }
      if (!t.upos.empty()) lex.upos.add(t.upos);
      if (!t.xpos.empty()) {
        lex.annotated.xpos = true;
        lex.xpos.add(t.xpos);
      }
      if (!t.deprel.empty()) lex.deprel.add(t.deprel);
      for (const auto& [attr, value] : t.feats.pairs) {
        lex.annotated.feats = true;
        int a = schema.attribute_index(attr);
        if (a < 0) {
          FeatureAttribute fa;
          fa.name = attr;
          fa.values.add(std::string(kNotApplicable));
          schema.attributes.push_back(std::move(fa));
          a = static_cast<int>(schema.attributes.size()) - 1;
        }
        schema.attributes[a].values.add(value);
      }
    }
  }
  return {std::move(lex), std::move(schema)};
}

std::vector<float> unknown_vector_init(const Tensor<float>& rows, std::uint64_t seed) {
  if (rows.rows() == 0 || rows.size() == 0) throw std::invalid_argument("unknown_vector_init: no embedding rows");
  const std::size_t n = rows.rows(), d = rows.cols();
  std::vector<double> mean(d, 0.0), var(d, 0.0);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) mean[j] += rows(i, j);
  for (double& m : mean) m /= static_cast<double>(n);
  for (std::size_t i = 0; i < n; ++i)
    for (std::size_t j = 0; j < d; ++j) {
      const double diff = rows(i, j) - mean[j];
      var[j] += diff * diff;
    }
  Rng rng = Rng(seed).split("unknown_vector");
  std::vector<float> out(d);
  for (std::size_t j = 0; j < d; ++j) {
    var[j] /= static_cast<double>(n);
    out[j] = static_cast<float>(rng.normal(mean[j], std::sqrt(var[j])));
  }
  return out;
}

EmbeddingMatrix load_embeddings(const std::string& path, std::uint64_t seed, std::vector<std::string>* warnings) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open embedding file " + path);
  EmbeddingMatrix emb;
  std::vector<std::vector<float>> vectors;
  std::string line;
  std::size_t dim = 0;
  std::size_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    std::istringstream fields(line);
    std::string word;
    if (!(fields >> word)) continue;
    std::vector<float> values;
    std::string tok;
    while (fields >> tok) {
      try {
        values.push_back(std::stof(tok));
      } catch (const std::exception&) {
        throw std::runtime_error(path + ":" + std::to_string(line_no) + ": malformed value '" + tok + "'");
      }
    }
    if (line_no == 1 && values.size() == 1 && word.find_first_not_of("0123456789") == std::string::npos) {
      continue;  // "count dim" header
    }
    if (values.empty()) throw std::runtime_error(path + ":" + std::to_string(line_no) + ": word without vector");
    if (dim == 0) dim = values.size();
    if (values.size() != dim) {
      throw std::runtime_error(path + ":" + std::to_string(line_no) + ": dimension " +
                               std::to_string(values.size()) + " differs from " + std::to_string(dim));
    }
    const int existing = emb.words.find(word);
    if (existing >= 0) {
      if (warnings) warnings->push_back("duplicate embedding for '" + word + "'; last occurrence kept");
      vectors[existing] = std::move(values);
    } else {
      emb.words.add(word);
      vectors.push_back(std::move(values));
    }
  }
  if (vectors.empty()) throw std::runtime_error("embedding file " + path + " contains no vectors");
  emb.rows = Tensor<float>(vectors.size(), dim);
  for (std::size_t i = 0; i < vectors.size(); ++i) std::copy(vectors[i].begin(), vectors[i].end(), emb.rows.row(i).begin());
  emb.unknown_vector = unknown_vector_init(emb.rows, seed);
  emb.trainable = false;
  return emb;
}

EmbeddingMatrix make_trainable_embeddings(const Lexicon& lex, std::size_t dim, std::uint64_t seed) {
  EmbeddingMatrix emb;
  emb.words = lex.words;
  emb.rows = Tensor<float>(lex.words.size(), dim);
  Rng rng = Rng(seed).split("trainable_embeddings");
  const double scale = 1.0 / std::sqrt(static_cast<double>(dim));
  for (float& v : emb.rows.storage()) v = static_cast<float>(rng.normal(0.0, scale));
  if (emb.rows.rows() > 0) {
    emb.unknown_vector = unknown_vector_init(emb.rows, seed);
  } else {
    emb.unknown_vector.assign(dim, 0.0f);
  }
  emb.trainable = true;
  return emb;
}

std::size_t lemma_padded_length(std::string_view form, std::size_t slack) {
  return utf8_chars(form).size() + 2 + slack;
}

namespace {

std::vector<int> char_indices(std::string_view text, const Lexicon& lex) {
  std::vector<int> out;
  for (const auto& c : utf8_chars(text)) {
    const int id = lex.chars.find(c);
    out.push_back(id < 0 ? kUnk : id);
  }
  return out;
}

int index_or_miss(const StringIndex& idx, const std::string& value) {
  return value.empty() ? -1 : idx.find(value);
}

}  // namespace

EncodedSentence encode_sentence(const conllu::Sentence& s, const Lexicon& lex, const FeatureSchema& schema,
                                const EmbeddingMatrix& emb, const EncodeOptions& options) {
  EncodedSentence out;
  for (const auto& t : s.tokens) {
    out.word_rows.push_back(emb.lookup(t.form));

    std::vector<int> chars = char_indices(t.form, lex);
    std::vector<int> wrapped;
    wrapped.reserve(chars.size() + 2);
    wrapped.push_back(kBow);
    wrapped.insert(wrapped.end(), chars.begin(), chars.end());
    wrapped.push_back(kEow);
    out.chars.push_back(wrapped);

    const std::size_t padded = chars.size() + 2 + options.lemma_slack;
    std::vector<int> lemma_in = wrapped;
    lemma_in.resize(padded, kPad);
    out.lemma_input.push_back(std::move(lemma_in));

    std::vector<int> target;
    if (!t.lemma.empty()) {
      std::vector<int> lc = char_indices(t.lemma, lex);
      if (lc.size() + 2 > padded) {
        if (options.training) {
          throw std::invalid_argument("lemma '" + t.lemma + "' of form '" + t.form + "' is longer than the padded " +
                                      "input; increase the lemma slack (currently " +
                                      std::to_string(options.lemma_slack) + ")");
        }
        lc.resize(padded - 2);
      }
      target.push_back(kBow);
      target.insert(target.end(), lc.begin(), lc.end());
      target.push_back(kEow);
      target.resize(padded, kPad);
    }
    out.lemma_target.push_back(std::move(target));

    out.upos.push_back(index_or_miss(lex.upos, t.upos));
    out.xpos.push_back(index_or_miss(lex.xpos, t.xpos));
    out.deprel.push_back(index_or_miss(lex.deprel, t.deprel));
    out.heads.push_back(t.head ? *t.head : -1);

    std::vector<int> feats(schema.attributes.size(), 0);
    for (const auto& [attr, value] : t.feats.pairs) {
      const int a = schema.attribute_index(attr);
      if (a < 0) continue;  // attribute never seen in training: nothing to predict
      feats[a] = schema.attributes[a].values.find(value);
    }
    out.feats.push_back(std::move(feats));
  }
  return out;
}

std::string decode_lemma(const std::vector<int>& predicted, const Lexicon& lex) {
  std::string out;
  for (int c : predicted) {
    if (c == kBow) continue;
    if (c == kEow || c == kPad) break;
    if (c == kUnk || c < 0 || static_cast<std::size_t>(c) >= lex.chars.size()) continue;
    out += lex.chars.at(c);
  }
  return out;
}

void to_json(nlohmann::json& j, const StringIndex& s) { j = s.items(); }

void from_json(const nlohmann::json& j, StringIndex& s) { s = StringIndex(j.get<std::vector<std::string>>()); }

void to_json(nlohmann::json& j, const Lexicon& lex) {
  j = nlohmann::json{{"upos", lex.upos},
                     {"xpos", lex.xpos},
                     {"deprel", lex.deprel},
                     {"chars", lex.chars},
                     {"words", lex.words},
                     {"annotated",
                      {{"xpos", lex.annotated.xpos}, {"lemma", lex.annotated.lemma}, {"feats", lex.annotated.feats}}}};
}

void from_json(const nlohmann::json& j, Lexicon& lex) {
  j.at("upos").get_to(lex.upos);
  j.at("xpos").get_to(lex.xpos);
  j.at("deprel").get_to(lex.deprel);
  j.at("chars").get_to(lex.chars);
  j.at("words").get_to(lex.words);
  const auto& a = j.at("annotated");
  lex.annotated.xpos = a.at("xpos").get<bool>();
  lex.annotated.lemma = a.at("lemma").get<bool>();
  lex.annotated.feats = a.at("feats").get<bool>();
}

void to_json(nlohmann::json& j, const FeatureSchema& schema) {
  j = nlohmann::json::array();
  for (const auto& a : schema.attributes) j.push_back({{"name", a.name}, {"values", a.values}});
}

void from_json(const nlohmann::json& j, FeatureSchema& schema) {
  schema.attributes.clear();
  for (const auto& item : j) {
    FeatureAttribute a;
    a.name = item.at("name").get<std::string>();
    item.at("values").get_to(a.values);
    schema.attributes.push_back(std::move(a));
  }
}

}  // namespace jointud::vocab
