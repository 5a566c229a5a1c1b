// Tagging, morphological-feature and lemmatization heads.
#pragma once

#include <optional>
#include <vector>

#include "jointud/config.hpp"
#include "jointud/layers.hpp"
#include "jointud/vocab.hpp"

namespace jointud::heads {

using ad::ParamId;
using ad::ParameterStore;
using ad::Tape;
using ad::Var;

// tanh hidden layer followed by a softmax output (kept as logits here).
struct Classifier {
  nn::Dense hidden;
  nn::Dense output;
};

struct Lemmatizer {
  nn::Dense reduce;
  ParamId char_table = 0;
  nn::ConvStack convs;
  ParamId out_kernel = 0;  // 1 x channels x char vocabulary
  ParamId out_bias = 0;
};

struct Heads {
  std::optional<Classifier> upos;
  std::optional<Classifier> xpos;
  std::vector<Classifier> feats;  // one per schema attribute; empty when disabled
  std::optional<Lemmatizer> lemmatizer;
};

template <typename Real>
Heads make_heads(ParameterStore<Real>& store, const HeadsConfig& config, const nn::RegularizationConfig& reg,
                 const vocab::Lexicon& lex, const vocab::FeatureSchema& schema, std::size_t feature_dim, Rng& init);

template <typename Real>
struct HeadOutputs {
  std::optional<Var<Real>> upos;  // n x |upos| logits
  std::optional<Var<Real>> xpos;
  std::vector<Var<Real>> feats;   // per attribute, n x |values|
  std::vector<Var<Real>> lemma;   // per word, padded length x |chars|
};

template <typename Real>
Var<Real> classifier_logits(const Classifier& c, Tape<Real>& tape, Var<Real> words, bool train, Rng& rng);

// Character distributions for one word: chars is the padded input, feature the word's 1 x F row.
template <typename Real>
Var<Real> lemmatize(const Lemmatizer& lem, Tape<Real>& tape, const std::vector<int>& chars, Var<Real> feature);

// words: n x F features with the ROOT row removed.
template <typename Real>
HeadOutputs<Real> heads_forward(const Heads& heads, Tape<Real>& tape, Var<Real> words,
                                const vocab::EncodedSentence& sentence, bool train, Rng& rng);

template <typename Real>
struct HeadLosses {
  std::optional<Var<Real>> upos;
  std::optional<Var<Real>> xpos;
  std::optional<Var<Real>> feats;
  std::optional<Var<Real>> lemma;
};

// Mean cross-entropy per word (tags), per (word, attribute) pair (feats) and
// per non-PAD target position (lemma). Missing gold targets are skipped.
template <typename Real>
HeadLosses<Real> heads_loss(const HeadOutputs<Real>& out, const vocab::EncodedSentence& gold);

// Row-wise argmax, ties to the lower index.
std::vector<int> argmax_rows(const Tensor<float>& scores);

// Drops attributes predicted as NA.
conllu::MorphFeatureSet decode_feats(const std::vector<int>& value_per_attribute, const vocab::FeatureSchema& schema);

}  // namespace jointud::heads
