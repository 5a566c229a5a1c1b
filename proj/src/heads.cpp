#include "jointud/heads.hpp"

#include <algorithm>
#include <cmath>

namespace jointud::heads {

namespace {

template <typename Real>
Classifier make_classifier(ParameterStore<Real>& store, const std::string& name, std::size_t in, std::size_t hidden,
                           std::size_t classes, double dropout, Rng& init) {
  Classifier c;
  c.hidden = nn::make_dense(store, name + ".hidden", in, hidden, nn::Activation::tanh, dropout, init);
  c.output = nn::make_dense(store, name + ".output", hidden, classes, nn::Activation::softmax, dropout, init);
  return c;
}

// Mean softmax cross-entropy over rows with a valid target; 0 when there are none.
template <typename Real>
std::optional<Var<Real>> mean_ce(Var<Real> logits, const std::vector<int>& targets) {
  const auto valid = std::count_if(targets.begin(), targets.end(), [](int t) { return t >= 0; });
  Var<Real> total = ad::softmax_cross_entropy_rows(logits, std::span<const int>(targets), std::span<const double>());
  if (valid == 0) return ad::scale(total, 0.0);
  return ad::scale(total, 1.0 / static_cast<double>(valid));
}

}  // namespace

template <typename Real>
Heads make_heads(ParameterStore<Real>& store, const HeadsConfig& config, const nn::RegularizationConfig& reg,
                 const vocab::Lexicon& lex, const vocab::FeatureSchema& schema, std::size_t feature_dim, Rng& init) {
  Heads h;
  const double dropout = reg.dense_dropout;
  if (lex.upos.size() > 0) {
    h.upos = make_classifier(store, "heads.upos", feature_dim, config.upos_hidden, lex.upos.size(), dropout, init);
  }
  if (lex.annotated.xpos && lex.xpos.size() > 0) {
    h.xpos = make_classifier(store, "heads.xpos", feature_dim, config.xpos_hidden, lex.xpos.size(), dropout, init);
  }
  if (lex.annotated.feats) {
    for (const auto& attr : schema.attributes) {
      h.feats.push_back(make_classifier(store, "heads.feats." + attr.name, feature_dim, config.feats_hidden,
                                        attr.values.size(), dropout, init));
    }
  }
  if (lex.annotated.lemma) {
    Lemmatizer lem;
    lem.reduce = nn::make_dense(store, "heads.lemma.reduce", feature_dim, config.lemma_feature_dim,
                                nn::Activation::tanh, dropout, init);
    Tensor<Real> table(Shape{lex.chars.size(), config.lemma_char_embedding_dim});
    Rng r = init.split("heads.lemma.chars");
    const double sd = 1.0 / std::sqrt(static_cast<double>(config.lemma_char_embedding_dim));
    for (Real& v : table.storage()) v = static_cast<Real>(r.normal(0.0, sd));
    lem.char_table = store.add("heads.lemma.chars", std::move(table), true, reg.l2_embeddings);
    lem.convs = nn::make_conv_stack(store, "heads.lemma.cnn",
                                    config.lemma_char_embedding_dim + config.lemma_feature_dim, config.lemma_convs,
                                    reg.l2_network, init);
    Rng ro = init.split("heads.lemma.out");
    lem.out_kernel = store.add("heads.lemma.out.kernel",
                               nn::glorot_normal<Real>({1, lem.convs.out, lex.chars.size()}, lem.convs.out,
                                                       lex.chars.size(), ro),
                               true, reg.l2_network);
    lem.out_bias = store.add("heads.lemma.out.bias", Tensor<Real>(Shape{1, lex.chars.size()}));
    h.lemmatizer = lem;
  }
  return h;
}

template <typename Real>
Var<Real> classifier_logits(const Classifier& c, Tape<Real>& tape, Var<Real> words, bool train, Rng& rng) {
  return nn::dense_logits(c.output, tape, nn::dense_forward(c.hidden, tape, words, train, rng), train, rng);
}

template <typename Real>
Var<Real> lemmatize(const Lemmatizer& lem, Tape<Real>& tape, const std::vector<int>& chars, Var<Real> feature) {
  Var<Real> emb = ad::gather_rows(tape.param(lem.char_table), std::span<const int>(chars));
  Var<Real> x = ad::concat(std::vector<Var<Real>>{emb, ad::broadcast_rows(feature, chars.size())}, 1);
  Var<Real> h = nn::conv_stack_forward(lem.convs, tape, x);
  return ad::add(ad::dilated_conv1d(h, tape.param(lem.out_kernel), 1), tape.param(lem.out_bias));
}

template <typename Real>
HeadOutputs<Real> heads_forward(const Heads& heads, Tape<Real>& tape, Var<Real> words,
                                const vocab::EncodedSentence& sentence, bool train, Rng& rng) {
  HeadOutputs<Real> out;
  if (heads.upos) out.upos = classifier_logits(*heads.upos, tape, words, train, rng);
  if (heads.xpos) out.xpos = classifier_logits(*heads.xpos, tape, words, train, rng);
  for (const auto& c : heads.feats) out.feats.push_back(classifier_logits(c, tape, words, train, rng));
  if (heads.lemmatizer) {
    Var<Real> reduced = nn::dense_forward(heads.lemmatizer->reduce, tape, words, train, rng);
    for (std::size_t i = 0; i < sentence.size(); ++i) {
      out.lemma.push_back(lemmatize(*heads.lemmatizer, tape, sentence.lemma_input[i],
                                    ad::slice_rows(reduced, i, i + 1)));
    }
  }
  return out;
}

template <typename Real>
HeadLosses<Real> heads_loss(const HeadOutputs<Real>& out, const vocab::EncodedSentence& gold) {
  HeadLosses<Real> loss;
  if (out.upos) loss.upos = mean_ce(*out.upos, gold.upos);
  if (out.xpos) loss.xpos = mean_ce(*out.xpos, gold.xpos);
  if (!out.feats.empty()) {
    std::size_t pairs = 0;
    std::vector<Var<Real>> terms;
    for (std::size_t a = 0; a < out.feats.size(); ++a) {
      std::vector<int> targets(gold.size());
      for (std::size_t i = 0; i < gold.size(); ++i) {
        targets[i] = gold.feats[i].empty() ? -1 : gold.feats[i][a];
        if (targets[i] >= 0) ++pairs;
      }
      terms.push_back(ad::softmax_cross_entropy_rows(out.feats[a], std::span<const int>(targets),
                                                     std::span<const double>()));
    }
    Var<Real> total = nn::add_all(terms);
    loss.feats = ad::scale(total, pairs == 0 ? 0.0 : 1.0 / static_cast<double>(pairs));
  }
  if (!out.lemma.empty()) {
    std::size_t positions = 0;
    std::vector<Var<Real>> terms;
    for (std::size_t i = 0; i < out.lemma.size(); ++i) {
      if (gold.lemma_target[i].empty()) continue;
      std::vector<int> targets = gold.lemma_target[i];
      for (int& t : targets) {
        if (t == vocab::kPad) t = -1;
        if (t >= 0) ++positions;
      }
      terms.push_back(ad::softmax_cross_entropy_rows(out.lemma[i], std::span<const int>(targets),
                                                     std::span<const double>()));
    }
    if (terms.empty()) {
      loss.lemma = ad::scale(ad::sum(out.lemma.front()), 0.0);
    } else {
      loss.lemma = ad::scale(nn::add_all(terms), 1.0 / static_cast<double>(positions));
    }
  }
  return loss;
}

std::vector<int> argmax_rows(const Tensor<float>& scores) {
  std::vector<int> out(scores.rows());
  for (std::size_t r = 0; r < scores.rows(); ++r) {
    auto row = scores.row(r);
    out[r] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

conllu::MorphFeatureSet decode_feats(const std::vector<int>& value_per_attribute, const vocab::FeatureSchema& schema) {
  std::string text;
  for (std::size_t a = 0; a < value_per_attribute.size() && a < schema.attributes.size(); ++a) {
    const int v = value_per_attribute[a];
    if (v <= 0) continue;
    if (!text.empty()) text += '|';
    text += schema.attributes[a].name + "=" + schema.attributes[a].values.at(v);
  }
  return conllu::MorphFeatureSet::parse(text);
}

#define JOINTUD_INSTANTIATE(Real)                                                                                   \
  template Heads make_heads<Real>(ParameterStore<Real>&, const HeadsConfig&, const nn::RegularizationConfig&,       \
                                  const vocab::Lexicon&, const vocab::FeatureSchema&, std::size_t, Rng&);           \
  template Var<Real> classifier_logits<Real>(const Classifier&, Tape<Real>&, Var<Real>, bool, Rng&);                \
  template Var<Real> lemmatize<Real>(const Lemmatizer&, Tape<Real>&, const std::vector<int>&, Var<Real>);          \
  template HeadOutputs<Real> heads_forward<Real>(const Heads&, Tape<Real>&, Var<Real>, const vocab::EncodedSentence&, \
                                                 bool, Rng&);                                                       \
  template HeadLosses<Real> heads_loss<Real>(const HeadOutputs<Real>&, const vocab::EncodedSentence&);

JOINTUD_INSTANTIATE(float)
JOINTUD_INSTANTIATE(double)

#undef JOINTUD_INSTANTIATE

}  // namespace jointud::heads
