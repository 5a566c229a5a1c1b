// The joint network: encoder, heads and parser over one parameter store.
#pragma once

#include <array>
#include <cstdint>
#include <optional>

#include "jointud/conllu.hpp"
#include "jointud/encoder.hpp"
#include "jointud/heads.hpp"
#include "jointud/parser.hpp"

namespace jointud {

enum class Task { upos = 0, xpos, feats, lemma, arc, label };
inline constexpr std::size_t kTaskCount = 6;
inline constexpr std::array<const char*, kTaskCount> kTaskNames = {"upos", "xpos", "feats", "lemma", "arc", "label"};

using TaskWeights = std::array<double, kTaskCount>;
using TaskMask = std::array<bool, kTaskCount>;

// Configured weights with the mass of inactive tasks spread proportionally over the active ones.
TaskWeights effective_weights(const LossWeights& weights, const TaskMask& active);

// Weighted sum over the tasks that have a value, plus l2.
double joint_loss(const std::array<std::optional<double>, kTaskCount>& losses, const LossWeights& weights,
                  double l2 = 0.0);

struct Network {
  encoder::Encoder encoder;
  heads::Heads heads;
  parser::Parser parser;

  TaskMask active() const;
};

template <typename Real>
Network build_network(ad::ParameterStore<Real>& store, const ModelConfig& config, const vocab::Lexicon& lex,
                      const vocab::FeatureSchema& schema, const vocab::EmbeddingMatrix& embeddings, std::uint64_t seed);

struct Model {
  ModelConfig config;
  vocab::Lexicon lexicon;
  vocab::FeatureSchema schema;
  vocab::EmbeddingMatrix word_index;  // words and trainable flag only; values live in params
  std::uint64_t seed = kDefaultSeed;
  ad::ParameterStore<float> params;
  Network net;
  std::size_t epochs_trained = 0;
  double best_dev = -1.0;  // -1 when no dev score was measured

  vocab::EncodedSentence encode(const conllu::Sentence& s, bool training) const;
  // Current word rows and unknown vector, as an EmbeddingMatrix.
  vocab::EmbeddingMatrix embeddings() const;
};

// Lexicon and schema from train; external embeddings when given, otherwise a trainable table.
Model create_model(const ModelConfig& config, const conllu::Treebank& train, const vocab::EmbeddingMatrix* external,
                   std::uint64_t seed);
Model create_model(const ModelConfig& config, vocab::Lexicon lex, vocab::FeatureSchema schema,
                   const vocab::EmbeddingMatrix& embeddings, std::uint64_t seed);

template <typename Real>
struct SentenceOutput {
  ad::Var<Real> features;
  heads::HeadOutputs<Real> heads;
  parser::ArcScores<Real> arcs;
  ad::Var<Real> labels;
};

template <typename Real>
SentenceOutput<Real> forward(const Network& net, ad::Tape<Real>& tape, const vocab::EncodedSentence& s, bool train,
                             Rng& rng);

template <typename Real>
struct SentenceLoss {
  std::array<std::optional<ad::Var<Real>>, kTaskCount> tasks;
  ad::Var<Real> cycle;  // reported even when it is not part of the loss
  ad::Var<Real> joint;
};

template <typename Real>
SentenceLoss<Real> sentence_loss(const Network& net, ad::Tape<Real>& tape, const vocab::EncodedSentence& s,
                                 const TaskWeights& weights, bool train, Rng& rng);

struct Prediction {
  conllu::Sentence sentence;
  Tensor<float> adjacency;
  bool greedy_cycle = false;
};

// Fills lemma, upos, xpos, feats, head and deprel; other columns are kept.
Prediction predict_sentence(const Model& model, const conllu::Sentence& input);
conllu::Treebank predict(const Model& model, const conllu::Treebank& input);

// Fraction of sentences whose greedy decode contains a cycle.
double cycle_rate(const Model& model, const conllu::Treebank& tb);

}  // namespace jointud
