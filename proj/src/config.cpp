#include "jointud/config.hpp"

#include <stdexcept>

namespace jointud {

ModelConfig paper_model_config() { return ModelConfig{}; }

ModelConfig desk_model_config() {
  ModelConfig c;
  c.profile = "desk";
  c.encoder.trainable_embedding_dim = 32;
  c.encoder.word_dim = 32;
  c.encoder.char_embedding_dim = 16;
  c.encoder.char_convs = {{32, 3, 1}, {32, 3, 2}, {32, 3, 4}};
  c.encoder.lstm_hidden = 64;
  c.heads.upos_hidden = 32;
  c.heads.xpos_hidden = 32;
  c.heads.feats_hidden = 32;
  c.heads.lemma_feature_dim = 16;
  c.heads.lemma_char_embedding_dim = 32;
  c.heads.lemma_convs = {{32, 3, 1}, {32, 3, 2}, {32, 3, 4}};
  c.parser.arc_dim = 64;
  c.parser.label_dim = 32;
  return c;
}

TrainConfig paper_train_config() { return TrainConfig{}; }

TrainConfig desk_train_config() {
  TrainConfig c;
  c.lr = 0.005;
  c.batch_words = 500;
  c.max_epochs = 50;
  return c;
}

ModelConfig model_config_for(const std::string& profile) {
  if (profile == "paper") return paper_model_config();
  if (profile == "desk") return desk_model_config();
  throw std::invalid_argument("unknown profile '" + profile + "' (expected paper or desk)");
}

TrainConfig train_config_for(const std::string& profile) {
  if (profile == "paper") return paper_train_config();
  if (profile == "desk") return desk_train_config();
  throw std::invalid_argument("unknown profile '" + profile + "' (expected paper or desk)");
}

namespace {

nlohmann::json convs_json(const std::vector<nn::ConvSpec>& specs) {
  nlohmann::json j = nlohmann::json::array();
  for (const auto& s : specs) j.push_back({{"filters", s.filters}, {"width", s.width}, {"dilation", s.dilation}});
  return j;
}

std::vector<nn::ConvSpec> convs_from(const nlohmann::json& j) {
  std::vector<nn::ConvSpec> out;
  for (const auto& item : j) {
    out.push_back({item.at("filters").get<std::size_t>(), item.at("width").get<std::size_t>(),
                   item.at("dilation").get<std::size_t>()});
  }
  return out;
}

template <typename T>
void maybe(const nlohmann::json& j, const char* key, T& field) {
  if (j.contains(key)) j.at(key).get_to(field);
}

}  // namespace

void to_json(nlohmann::json& j, const ModelConfig& c) {
  const auto& e = c.encoder;
  const auto& h = c.heads;
  const auto& p = c.parser;
  const auto& r = c.regularization;
  j = nlohmann::json{
      {"profile", c.profile},
      {"encoder",
       {{"trainable_embedding_dim", e.trainable_embedding_dim},
        {"word_dim", e.word_dim},
        {"char_embedding_dim", e.char_embedding_dim},
        {"char_convs", convs_json(e.char_convs)},
        {"lstm_hidden", e.lstm_hidden},
        {"lstm_layers", e.lstm_layers},
        {"root_at_input", e.root_at_input}}},
      {"heads",
       {{"upos_hidden", h.upos_hidden},
        {"xpos_hidden", h.xpos_hidden},
        {"feats_hidden", h.feats_hidden},
        {"lemma_feature_dim", h.lemma_feature_dim},
        {"lemma_char_embedding_dim", h.lemma_char_embedding_dim},
        {"lemma_convs", convs_json(h.lemma_convs)},
        {"lemma_slack", h.lemma_slack}}},
      {"parser",
       {{"arc_dim", p.arc_dim}, {"label_dim", p.label_dim}, {"cycle_k", p.cycle_k}, {"cycle_loss", p.cycle_loss}}},
      {"regularization",
       {{"gaussian_dropout_rate", r.gaussian_dropout_rate},
        {"gaussian_noise_std", r.gaussian_noise_std},
        {"dense_dropout", r.dense_dropout},
        {"lstm_dropout", r.lstm_dropout},
        {"lstm_recurrent_dropout", r.lstm_recurrent_dropout},
        {"l2_network", r.l2_network},
        {"l2_embeddings", r.l2_embeddings}}}};
}

void merge_json(const nlohmann::json& j, ModelConfig& c) {
  maybe(j, "profile", c.profile);
  if (j.contains("encoder")) {
    const auto& e = j.at("encoder");
    maybe(e, "trainable_embedding_dim", c.encoder.trainable_embedding_dim);
    maybe(e, "word_dim", c.encoder.word_dim);
    maybe(e, "char_embedding_dim", c.encoder.char_embedding_dim);
    if (e.contains("char_convs")) c.encoder.char_convs = convs_from(e.at("char_convs"));
    maybe(e, "lstm_hidden", c.encoder.lstm_hidden);
    maybe(e, "lstm_layers", c.encoder.lstm_layers);
    maybe(e, "root_at_input", c.encoder.root_at_input);
  }
  if (j.contains("heads")) {
    const auto& h = j.at("heads");
    maybe(h, "upos_hidden", c.heads.upos_hidden);
    maybe(h, "xpos_hidden", c.heads.xpos_hidden);
    maybe(h, "feats_hidden", c.heads.feats_hidden);
    maybe(h, "lemma_feature_dim", c.heads.lemma_feature_dim);
    maybe(h, "lemma_char_embedding_dim", c.heads.lemma_char_embedding_dim);
    if (h.contains("lemma_convs")) c.heads.lemma_convs = convs_from(h.at("lemma_convs"));
    maybe(h, "lemma_slack", c.heads.lemma_slack);
  }
  if (j.contains("parser")) {
    const auto& p = j.at("parser");
    maybe(p, "arc_dim", c.parser.arc_dim);
    maybe(p, "label_dim", c.parser.label_dim);
    maybe(p, "cycle_k", c.parser.cycle_k);
    maybe(p, "cycle_loss", c.parser.cycle_loss);
  }
  if (j.contains("regularization")) {
    const auto& r = j.at("regularization");
    maybe(r, "gaussian_dropout_rate", c.regularization.gaussian_dropout_rate);
    maybe(r, "gaussian_noise_std", c.regularization.gaussian_noise_std);
    maybe(r, "dense_dropout", c.regularization.dense_dropout);
    maybe(r, "lstm_dropout", c.regularization.lstm_dropout);
    maybe(r, "lstm_recurrent_dropout", c.regularization.lstm_recurrent_dropout);
    maybe(r, "l2_network", c.regularization.l2_network);
    maybe(r, "l2_embeddings", c.regularization.l2_embeddings);
  }
}

void from_json(const nlohmann::json& j, ModelConfig& c) {
  c = ModelConfig{};
  merge_json(j, c);
}

void to_json(nlohmann::json& j, const TrainConfig& c) {
  const auto& w = c.weights;
  j = nlohmann::json{{"weights",
                      {{"upos", w.upos},
                       {"xpos", w.xpos},
                       {"feats", w.feats},
                       {"lemma", w.lemma},
                       {"arc", w.arc},
                       {"label", w.label}}},
                     {"lr", c.lr},
                     {"beta1", c.beta1},
                     {"beta2", c.beta2},
                     {"adam_eps", c.adam_eps},
                     {"batch_words", c.batch_words},
                     {"max_epochs", c.max_epochs},
                     {"plateau_patience", c.plateau_patience},
                     {"lr_reductions_max", c.lr_reductions_max},
                     {"lr_reduction_factor", c.lr_reduction_factor},
                     {"seed", c.seed}};
}

void merge_json(const nlohmann::json& j, TrainConfig& c) {
  if (j.contains("weights")) {
    const auto& w = j.at("weights");
    maybe(w, "upos", c.weights.upos);
    maybe(w, "xpos", c.weights.xpos);
    maybe(w, "feats", c.weights.feats);
    maybe(w, "lemma", c.weights.lemma);
    maybe(w, "arc", c.weights.arc);
    maybe(w, "label", c.weights.label);
  }
  maybe(j, "lr", c.lr);
  maybe(j, "beta1", c.beta1);
  maybe(j, "beta2", c.beta2);
  maybe(j, "adam_eps", c.adam_eps);
  maybe(j, "batch_words", c.batch_words);
  maybe(j, "max_epochs", c.max_epochs);
  maybe(j, "plateau_patience", c.plateau_patience);
  maybe(j, "lr_reductions_max", c.lr_reductions_max);
  maybe(j, "lr_reduction_factor", c.lr_reduction_factor);
  maybe(j, "seed", c.seed);
}

}  // namespace jointud
