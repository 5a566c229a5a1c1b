#include "jointud/model.hpp"

#include <stdexcept>

namespace jointud {

TaskWeights effective_weights(const LossWeights& weights, const TaskMask& active) {
  const TaskWeights base = {weights.upos, weights.xpos, weights.feats, weights.lemma, weights.arc, weights.label};
  double all = 0.0, live = 0.0;
  for (std::size_t t = 0; t < kTaskCount; ++t) {
    all += base[t];
    if (active[t]) live += base[t];
  }
  TaskWeights out{};
  if (live <= 0.0) return out;
  for (std::size_t t = 0; t < kTaskCount; ++t) out[t] = active[t] ? base[t] * all / live : 0.0;
  return out;
}

double joint_loss(const std::array<std::optional<double>, kTaskCount>& losses, const LossWeights& weights,
                  double l2) {
  TaskMask active{};
  for (std::size_t t = 0; t < kTaskCount; ++t) active[t] = losses[t].has_value();
  const TaskWeights w = effective_weights(weights, active);
  double total = l2;
  for (std::size_t t = 0; t < kTaskCount; ++t) {
    if (losses[t]) total += w[t] * *losses[t];
  }
  return total;
}

TaskMask Network::active() const {
  TaskMask m{};
  m[static_cast<std::size_t>(Task::upos)] = heads.upos.has_value();
  m[static_cast<std::size_t>(Task::xpos)] = heads.xpos.has_value();
  m[static_cast<std::size_t>(Task::feats)] = !heads.feats.empty();
  m[static_cast<std::size_t>(Task::lemma)] = heads.lemmatizer.has_value();
  m[static_cast<std::size_t>(Task::arc)] = true;
  m[static_cast<std::size_t>(Task::label)] = true;
  return m;
}

template <typename Real>
Network build_network(ad::ParameterStore<Real>& store, const ModelConfig& config, const vocab::Lexicon& lex,
                      const vocab::FeatureSchema& schema, const vocab::EmbeddingMatrix& embeddings,
                      std::uint64_t seed) {
  if (lex.deprel.size() == 0) throw std::invalid_argument("training data has no dependency relations");
  Rng init = Rng(seed).split("init");
  Network net;
  net.encoder = encoder::make_encoder(store, config.encoder, config.regularization, embeddings, lex.chars.size(), init);
  const std::size_t features = config.encoder.feature_dim();
  net.heads = heads::make_heads(store, config.heads, config.regularization, lex, schema, features, init);
  net.parser = parser::make_parser(store, config.parser, config.regularization, features, lex.deprel.size(), init);
  return net;
}

vocab::EncodedSentence Model::encode(const conllu::Sentence& s, bool training) const {
  vocab::EncodeOptions options;
  options.lemma_slack = config.heads.lemma_slack;
  options.training = training;
  return vocab::encode_sentence(s, lexicon, schema, word_index, options);
}

vocab::EmbeddingMatrix Model::embeddings() const {
  vocab::EmbeddingMatrix emb;
  emb.words = word_index.words;
  emb.rows = params[net.encoder.word_table].value;
  const auto& unknown = params[net.encoder.word_unknown].value;
  emb.unknown_vector.assign(unknown.data().begin(), unknown.data().end());
  emb.trainable = word_index.trainable;
  return emb;
}

Model create_model(const ModelConfig& config, vocab::Lexicon lex, vocab::FeatureSchema schema,
                   const vocab::EmbeddingMatrix& embeddings, std::uint64_t seed) {
  Model m;
  m.config = config;
  m.lexicon = std::move(lex);
  m.schema = std::move(schema);
  m.word_index.words = embeddings.words;
  m.word_index.trainable = embeddings.trainable;
  m.seed = seed;
  m.net = build_network(m.params, config, m.lexicon, m.schema, embeddings, seed);
  return m;
}

Model create_model(const ModelConfig& config, const conllu::Treebank& train, const vocab::EmbeddingMatrix* external,
                   std::uint64_t seed) {
  if (train.sentences.empty()) throw std::invalid_argument("empty training treebank");
  auto [lex, schema] = vocab::build_lexicon(train);
  if (external != nullptr) return create_model(config, std::move(lex), std::move(schema), *external, seed);
  const vocab::EmbeddingMatrix emb = vocab::make_trainable_embeddings(lex, config.encoder.trainable_embedding_dim, seed);
  return create_model(config, std::move(lex), std::move(schema), emb, seed);
}

template <typename Real>
SentenceOutput<Real> forward(const Network& net, ad::Tape<Real>& tape, const vocab::EncodedSentence& s, bool train,
                             Rng& rng) {
  SentenceOutput<Real> out;
  out.features = encoder::encode_sentence(net.encoder, tape, s, train, rng);
  ad::Var<Real> words = ad::slice_rows(out.features, 1, out.features.rows());
  out.heads = heads::heads_forward(net.heads, tape, words, s, train, rng);
  out.arcs = parser::score_arcs(net.parser, tape, out.features, train, rng);
  out.labels = parser::label_logits(net.parser, tape, out.features, out.arcs.adjacency, train, rng);
  return out;
}

template <typename Real>
SentenceLoss<Real> sentence_loss(const Network& net, ad::Tape<Real>& tape, const vocab::EncodedSentence& s,
                                 const TaskWeights& weights, bool train, Rng& rng) {
  SentenceOutput<Real> out = forward(net, tape, s, train, rng);
  SentenceLoss<Real> loss;
  heads::HeadLosses<Real> h = heads::heads_loss(out.heads, s);
  loss.tasks[static_cast<std::size_t>(Task::upos)] = h.upos;
  loss.tasks[static_cast<std::size_t>(Task::xpos)] = h.xpos;
  loss.tasks[static_cast<std::size_t>(Task::feats)] = h.feats;
  loss.tasks[static_cast<std::size_t>(Task::lemma)] = h.lemma;
  parser::ArcLoss<Real> arc = parser::arc_loss(out.arcs, s.heads, net.parser.config.cycle_k,
                                               net.parser.config.cycle_loss);
  loss.tasks[static_cast<std::size_t>(Task::arc)] = arc.total;
  loss.tasks[static_cast<std::size_t>(Task::label)] = parser::label_loss(out.labels, s.deprel);
  loss.cycle = arc.cycle;
  std::vector<ad::Var<Real>> terms;
  for (std::size_t t = 0; t < kTaskCount; ++t) {
    if (loss.tasks[t] && weights[t] != 0.0) terms.push_back(ad::scale(*loss.tasks[t], weights[t]));
  }
  loss.joint = terms.empty() ? ad::scale(arc.total, 0.0) : nn::add_all(terms);
  return loss;
}

Prediction predict_sentence(const Model& model, const conllu::Sentence& input) {
  Prediction pred;
  pred.sentence = input;
  if (input.tokens.empty()) return pred;
  const vocab::EncodedSentence enc = model.encode(input, false);
  ad::Tape<float> tape(&model.params, false);
  Rng rng(model.seed);
  SentenceOutput<float> out = forward(model.net, tape, enc, false, rng);

  const std::size_t n = input.tokens.size();
  std::vector<int> upos, xpos;
  if (out.heads.upos) upos = heads::argmax_rows(out.heads.upos->value());
  if (out.heads.xpos) xpos = heads::argmax_rows(out.heads.xpos->value());
  std::vector<std::vector<int>> feats;
  for (const auto& f : out.heads.feats) feats.push_back(heads::argmax_rows(f.value()));
  pred.adjacency = out.arcs.adjacency.value();
  const std::vector<int> tree = parser::decode_tree(pred.adjacency);
  pred.greedy_cycle = parser::greedy_decode(pred.adjacency).cycle;
  const std::vector<int> labels = heads::argmax_rows(out.labels.value());

  for (std::size_t i = 0; i < n; ++i) {
    conllu::Token& t = pred.sentence.tokens[i];
    t.upos = upos.empty() ? "" : model.lexicon.upos.at(upos[i]);
    t.xpos = xpos.empty() ? "" : model.lexicon.xpos.at(xpos[i]);
    std::vector<int> values;
    for (const auto& f : feats) values.push_back(f[i]);
    t.feats = heads::decode_feats(values, model.schema);
    t.lemma = out.heads.lemma.empty()
                  ? ""
                  : vocab::decode_lemma(heads::argmax_rows(out.heads.lemma[i].value()), model.lexicon);
    t.head = tree[i];
    t.deprel = model.lexicon.deprel.at(labels[i]);
  }
  return pred;
}

conllu::Treebank predict(const Model& model, const conllu::Treebank& input) {
  conllu::Treebank out;
  out.sentences.reserve(input.sentences.size());
  for (const auto& s : input.sentences) out.sentences.push_back(predict_sentence(model, s).sentence);
  return out;
}

double cycle_rate(const Model& model, const conllu::Treebank& tb) {
  if (tb.sentences.empty()) return 0.0;
  std::size_t cyclic = 0;
  for (const auto& s : tb.sentences) {
    if (!s.tokens.empty() && predict_sentence(model, s).greedy_cycle) ++cyclic;
  }
  return static_cast<double>(cyclic) / static_cast<double>(tb.sentences.size());
}

#define JOINTUD_INSTANTIATE(Real)                                                                                   \
  template Network build_network<Real>(ad::ParameterStore<Real>&, const ModelConfig&, const vocab::Lexicon&,        \
                                       const vocab::FeatureSchema&, const vocab::EmbeddingMatrix&, std::uint64_t); \
  template SentenceOutput<Real> forward<Real>(const Network&, ad::Tape<Real>&, const vocab::EncodedSentence&, bool, \
                                              Rng&);                                                                \
  template SentenceLoss<Real> sentence_loss<Real>(const Network&, ad::Tape<Real>&, const vocab::EncodedSentence&,   \
                                                  const TaskWeights&, bool, Rng&);

JOINTUD_INSTANTIATE(float)
JOINTUD_INSTANTIATE(double)

#undef JOINTUD_INSTANTIATE

}  // namespace jointud
