// Model and training configuration with the two built-in profiles.
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "jointud/layers.hpp"

namespace jointud {

struct EncoderConfig {
  std::size_t trainable_embedding_dim = 100;  // used when no external embedding is given
  std::size_t word_dim = 100;
  std::size_t char_embedding_dim = 64;
  std::vector<nn::ConvSpec> char_convs = {{512, 3, 1}, {128, 3, 2}, {64, 3, 4}};
  std::size_t lstm_hidden = 512;
  std::size_t lstm_layers = 2;
  // true: trainable ROOT vector enters the biLSTM as position 0;
  // false: a trainable ROOT feature row is prepended after the biLSTM.
  bool root_at_input = true;

  std::size_t char_out() const { return char_convs.empty() ? 0 : char_convs.back().filters; }
  std::size_t concat_dim() const { return word_dim + char_out(); }
  std::size_t feature_dim() const { return 2 * lstm_hidden; }
};

struct HeadsConfig {
  std::size_t upos_hidden = 64;
  std::size_t xpos_hidden = 64;
  std::size_t feats_hidden = 128;
  std::size_t lemma_feature_dim = 32;
  std::size_t lemma_char_embedding_dim = 256;
  std::vector<nn::ConvSpec> lemma_convs = {{256, 3, 1}, {256, 3, 2}, {256, 3, 4}};
  std::size_t lemma_slack = 5;
};

struct ParserConfig {
  std::size_t arc_dim = 512;
  std::size_t label_dim = 128;
  int cycle_k = 3;
  bool cycle_loss = true;
};

struct LossWeights {
  double upos = 0.05;
  double xpos = 0.05;
  double feats = 0.2;
  double lemma = 0.05;
  double arc = 0.2;
  double label = 0.8;
};

struct ModelConfig {
  std::string profile = "paper";
  EncoderConfig encoder;
  HeadsConfig heads;
  ParserConfig parser;
  nn::RegularizationConfig regularization;
};

struct TrainConfig {
  LossWeights weights;
  double lr = 0.002;
  double beta1 = 0.9;
  double beta2 = 0.9;
  double adam_eps = 1e-8;
  std::size_t batch_words = 2500;
  std::size_t max_epochs = 400;
  std::size_t plateau_patience = 10;
  std::size_t lr_reductions_max = 2;
  double lr_reduction_factor = 2.0;
  std::uint64_t seed = 94;
};

inline constexpr std::uint64_t kDefaultSeed = 94;

ModelConfig paper_model_config();
ModelConfig desk_model_config();
TrainConfig paper_train_config();
TrainConfig desk_train_config();
// "paper" or "desk"; throws on anything else.
ModelConfig model_config_for(const std::string& profile);
TrainConfig train_config_for(const std::string& profile);

void to_json(nlohmann::json& j, const ModelConfig& c);
void from_json(const nlohmann::json& j, ModelConfig& c);
void to_json(nlohmann::json& j, const TrainConfig& c);
// Missing keys keep their current values, so a partial document overrides a profile.
void merge_json(const nlohmann::json& j, ModelConfig& c);
void merge_json(const nlohmann::json& j, TrainConfig& c);

}  // namespace jointud
