// Word-level, character-level and sentence-level feature extraction.
#pragma once

#include <span>
#include <vector>

#include "jointud/config.hpp"
#include "jointud/layers.hpp"
#include "jointud/vocab.hpp"

namespace jointud::encoder {

using ad::ParamId;
using ad::ParameterStore;
using ad::Tape;
using ad::Var;

struct Encoder {
  EncoderConfig config;
  nn::RegularizationConfig regularization;
  ParamId word_table = 0;    // external rows (frozen) or a trainable table
  ParamId word_unknown = 0;  // always frozen
  nn::Dense word_transform;
  ParamId char_table = 0;
  nn::ConvStack char_cnn;
  ParamId root = 0;
  nn::BiLstmStack bilstm;
};

template <typename Real>
Encoder make_encoder(ParameterStore<Real>& store, const EncoderConfig& config, const nn::RegularizationConfig& reg,
                     const vocab::EmbeddingMatrix& embeddings, std::size_t char_vocab_size, Rng& init);

// n x word_dim: tanh(dense(row)), where row -1 is the unknown vector.
template <typename Real>
Var<Real> embed_word_level(const Encoder& enc, Tape<Real>& tape, std::span<const int> word_rows, bool train, Rng& rng);

// 1 x char_out: char embeddings -> dilated CNN -> max over positions.
template <typename Real>
Var<Real> embed_char_level(const Encoder& enc, Tape<Real>& tape, const std::vector<int>& chars);

// (n+1) x 2*lstm_hidden; row 0 is ROOT.
template <typename Real>
Var<Real> encode_sentence(const Encoder& enc, Tape<Real>& tape, const vocab::EncodedSentence& sentence, bool train,
                          Rng& rng);

}  // namespace jointud::encoder
