#include "jointud/encoder.hpp"

#include <cmath>
#include <stdexcept>

namespace jointud::encoder {

namespace {

template <typename Real>
Tensor<Real> normal_table(std::size_t rows, std::size_t cols, Rng rng) {
  Tensor<Real> t(Shape{rows, cols});
  const double stddev = 1.0 / std::sqrt(static_cast<double>(cols));
  for (Real& v : t.storage()) v = static_cast<Real>(rng.normal(0.0, stddev));
  return t;
}

}  // namespace

template <typename Real>
Encoder make_encoder(ParameterStore<Real>& store, const EncoderConfig& config, const nn::RegularizationConfig& reg,
                     const vocab::EmbeddingMatrix& embeddings, std::size_t char_vocab_size, Rng& init) {
  if (config.char_convs.empty()) throw std::invalid_argument("encoder needs at least one character convolution");
  Encoder enc;
  enc.config = config;
  enc.regularization = reg;
  const std::size_t d_in = embeddings.dim();
  const double emb_l2 = embeddings.trainable ? reg.l2_embeddings : 0.0;
  Tensor<Real> rows(Shape{embeddings.rows.rows(), d_in});
  for (std::size_t i = 0; i < embeddings.rows.size(); ++i) rows[i] = static_cast<Real>(embeddings.rows[i]);
  enc.word_table = store.add("encoder.word.table", std::move(rows), embeddings.trainable, emb_l2);
  Tensor<Real> unknown(Shape{1, d_in});
  for (std::size_t i = 0; i < d_in; ++i) unknown[i] = static_cast<Real>(embeddings.unknown_vector[i]);
  enc.word_unknown = store.add("encoder.word.unknown", std::move(unknown), false);
  enc.word_transform = nn::make_dense(store, "encoder.word.transform", d_in, config.word_dim, nn::Activation::tanh,
                                      reg.dense_dropout, init);

  enc.char_table = store.add("encoder.char.table",
                             normal_table<Real>(char_vocab_size, config.char_embedding_dim, init.split("char.table")),
                             true, reg.l2_embeddings);
  enc.char_cnn = nn::make_conv_stack(store, "encoder.char.cnn", config.char_embedding_dim, config.char_convs,
                                     reg.l2_network, init);

  const std::size_t root_dim = config.root_at_input ? config.concat_dim() : config.feature_dim();
  enc.root = store.add("encoder.root", normal_table<Real>(1, root_dim, init.split("root")));
  enc.bilstm = nn::make_bilstm(store, "encoder.bilstm", config.concat_dim(), config.lstm_hidden, config.lstm_layers,
                               reg.l2_network, init);
  return enc;
}

template <typename Real>
Var<Real> embed_word_level(const Encoder& enc, Tape<Real>& tape, std::span<const int> word_rows, bool train,
                           Rng& rng) {
  Var<Real> rows = ad::gather_rows_with_fallback(tape.param(enc.word_table), tape.param(enc.word_unknown), word_rows);
  return nn::dense_forward(enc.word_transform, tape, rows, train, rng);
}

template <typename Real>
Var<Real> embed_char_level(const Encoder& enc, Tape<Real>& tape, const std::vector<int>& chars) {
  Var<Real> emb = ad::gather_rows(tape.param(enc.char_table), std::span<const int>(chars));
  return ad::global_max_pool(nn::conv_stack_forward(enc.char_cnn, tape, emb));
}

template <typename Real>
Var<Real> encode_sentence(const Encoder& enc, Tape<Real>& tape, const vocab::EncodedSentence& sentence, bool train,
                          Rng& rng) {
  const std::size_t n = sentence.size();
  if (n == 0) throw std::invalid_argument("encode_sentence: empty sentence");
  Var<Real> words = embed_word_level(enc, tape, std::span<const int>(sentence.word_rows), train, rng);
  std::vector<Var<Real>> char_rows;
  char_rows.reserve(n);
  for (const auto& chars : sentence.chars) char_rows.push_back(embed_char_level(enc, tape, chars));
  Var<Real> x = ad::concat(std::vector<Var<Real>>{words, ad::concat(char_rows, 0)}, 1);
  x = ad::gaussian_dropout(x, enc.regularization.gaussian_dropout_rate, train, rng);
  x = ad::gaussian_noise(x, enc.regularization.gaussian_noise_std, train, rng);
  if (enc.config.root_at_input) {
    x = ad::concat(std::vector<Var<Real>>{tape.param(enc.root), x}, 0);
    return nn::bilstm_forward(enc.bilstm, tape, x, train, rng, enc.regularization);
  }
  Var<Real> h = nn::bilstm_forward(enc.bilstm, tape, x, train, rng, enc.regularization);
  return ad::concat(std::vector<Var<Real>>{tape.param(enc.root), h}, 0);
}

#define JOINTUD_INSTANTIATE(Real)                                                                                 \
  template Encoder make_encoder<Real>(ParameterStore<Real>&, const EncoderConfig&,                                \
                                      const nn::RegularizationConfig&, const vocab::EmbeddingMatrix&, std::size_t, \
                                      Rng&);                                                                      \
  template Var<Real> embed_word_level<Real>(const Encoder&, Tape<Real>&, std::span<const int>, bool, Rng&);         \
  template Var<Real> embed_char_level<Real>(const Encoder&, Tape<Real>&, const std::vector<int>&);                 \
  template Var<Real> encode_sentence<Real>(const Encoder&, Tape<Real>&, const vocab::EncodedSentence&, bool, Rng&);

JOINTUD_INSTANTIATE(float)
JOINTUD_INSTANTIATE(double)

#undef JOINTUD_INSTANTIATE

}  // namespace jointud::encoder
