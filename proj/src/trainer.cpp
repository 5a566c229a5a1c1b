#include "jointud/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <numeric>
#include <sstream>
#include <stdexcept>

#include "jointud/optim.hpp"

namespace jointud::trainer {

std::vector<Batch> make_batches(const std::vector<std::size_t>& lengths, std::size_t batch_words, std::uint64_t seed,
                                std::size_t epoch) {
  if (batch_words == 0) throw std::invalid_argument("batch_words must be at least 1");
  std::vector<std::size_t> order(lengths.size());
  std::iota(order.begin(), order.end(), 0);
  std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return lengths[a] < lengths[b]; });
  std::vector<Batch> batches;
  Batch current;
  std::size_t words = 0;
  for (std::size_t i : order) {
    if (!current.empty() && words + lengths[i] > batch_words) {
      batches.push_back(std::move(current));
      current.clear();
      words = 0;
    }
    current.push_back(i);
    words += lengths[i];
  }
  if (!current.empty()) batches.push_back(std::move(current));

  Rng rng = Rng(seed).split("batches").split(static_cast<std::uint64_t>(epoch));
  for (std::size_t i = batches.size(); i > 1; --i) {
    const std::size_t j = static_cast<std::size_t>(rng.next() % i);
    std::swap(batches[i - 1], batches[j]);
  }
  return batches;
}

std::vector<Batch> make_batches(const conllu::Treebank& tb, std::size_t batch_words, std::uint64_t seed,
                                std::size_t epoch) {
  std::vector<std::size_t> lengths;
  lengths.reserve(tb.sentences.size());
  for (const auto& s : tb.sentences) lengths.push_back(s.tokens.size());
  return make_batches(lengths, batch_words, seed, epoch);
}

double sentence_weight(std::size_t n) {
  if (n == 0) throw std::invalid_argument("sentence_weight: empty sentence");
  return std::max(std::log(static_cast<double>(n)), std::log(2.0));
}

double probe_cycle_term(const Model& model, const std::vector<vocab::EncodedSentence>& sentences) {
  if (sentences.empty()) return 0.0;
  double total = 0.0;
  Rng rng(model.seed);
  for (const auto& s : sentences) {
    ad::Tape<float> tape(&model.params, false);
    SentenceOutput<float> out = forward(model.net, tape, s, false, rng);
    total += parser::cycle_penalty(out.arcs.adjacency, model.net.parser.config.cycle_k).value().item();
  }
  return total / static_cast<double>(sentences.size());
}

namespace {

std::vector<vocab::EncodedSentence> encode_training(const Model& model, const conllu::Treebank& tb) {
  std::vector<vocab::EncodedSentence> out;
  out.reserve(tb.sentences.size());
  for (std::size_t i = 0; i < tb.sentences.size(); ++i) {
    const auto& s = tb.sentences[i];
    if (s.tokens.empty()) throw std::invalid_argument("training sentence " + std::to_string(i + 1) + " is empty");
    if (!s.fully_headed()) {
      throw std::invalid_argument("training sentence " + std::to_string(i + 1) + " has tokens without a head");
    }
    out.push_back(model.encode(s, true));
  }
  return out;
}

std::vector<Tensor<float>> snapshot(const Model& model) {
  std::vector<Tensor<float>> out;
  out.reserve(model.params.size());
  for (const auto& p : model.params) out.push_back(p.value);
  return out;
}

void restore(Model& model, const std::vector<Tensor<float>>& values) {
  std::size_t i = 0;
  for (auto& p : model.params) p.value = values[i++];
}

std::string describe(const EpochRecord& r) {
  std::ostringstream out;
  out << "epoch " << r.epoch << " loss " << r.train_loss << " lr " << r.lr;
  if (r.dev_las) out << " dev_uas " << *r.dev_uas << " dev_las " << *r.dev_las;
  if (r.probe_cycle) out << " probe_cycle " << *r.probe_cycle;
  out << " (" << r.seconds << "s)";
  return out.str();
}

}  // namespace

FitResult fit(Model& model, const conllu::Treebank& train, const TrainConfig& config, const FitOptions& options) {
  if (train.sentences.empty()) throw std::invalid_argument("empty training set");
  const std::vector<vocab::EncodedSentence> data = encode_training(model, train);
  std::vector<std::size_t> lengths;
  for (const auto& s : data) lengths.push_back(s.size());
  std::vector<vocab::EncodedSentence> probe;
  for (std::size_t i : options.probe) probe.push_back(data.at(i));

  const TaskWeights weights = effective_weights(config.weights, model.net.active());
  ad::AdamState<float> adam = ad::make_adam(model.params, config.lr, config.beta1, config.beta2, config.adam_eps);
  FitResult result;
  if (!probe.empty()) result.probe_cycle_initial = probe_cycle_term(model, probe);
  if (config.max_epochs == 0) return result;

  std::vector<Tensor<float>> best = snapshot(model);
  bool have_best = false;
  std::size_t since_best = 0;
  std::vector<double> recent_losses;
  const Rng train_rng = Rng(config.seed).split("train");

  for (std::size_t epoch = 1; epoch <= config.max_epochs; ++epoch) {
    const auto start = std::chrono::steady_clock::now();
    const std::vector<Batch> batches = make_batches(lengths, config.batch_words, config.seed, epoch);
    Rng epoch_rng = train_rng.split(static_cast<std::uint64_t>(epoch));
    double epoch_loss = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
      const Batch& batch = batches[b];
      ad::Gradients<float> grads;
      for (std::size_t s : batch) {
        Rng rng = epoch_rng.split(static_cast<std::uint64_t>(s));
        ad::Tape<float> tape(&model.params);
        SentenceLoss<float> loss = sentence_loss(model.net, tape, data[s], weights, true, rng);
        const double w = sentence_weight(data[s].size());
        epoch_loss += w * loss.joint.value().item();
        tape.backward(ad::scale(loss.joint, w / static_cast<double>(batch.size())));
        ad::accumulate(grads, tape.take_param_grads());
      }
      ad::adam_step(model.params, grads, adam);
    }
    ++model.epochs_trained;

    EpochRecord rec;
    rec.epoch = epoch;
    rec.train_loss = epoch_loss / static_cast<double>(data.size());
    rec.lr = adam.lr;
    if (!probe.empty()) rec.probe_cycle = probe_cycle_term(model, probe);
    double score;
    if (options.dev != nullptr && !options.dev->sentences.empty()) {
      const eval::Attachment a = eval::attachment_scores(*options.dev, predict(model, *options.dev));
      rec.dev_uas = a.uas;
      rec.dev_las = a.las;
      score = a.las;
    } else {
      recent_losses.push_back(rec.train_loss);
      if (recent_losses.size() > 3) recent_losses.erase(recent_losses.begin());
      score = -std::accumulate(recent_losses.begin(), recent_losses.end(), 0.0) /
              static_cast<double>(recent_losses.size());
    }
    rec.seconds = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    result.history.push_back(rec);
    if (options.log) options.log(describe(rec));
    if (options.on_epoch) options.on_epoch(rec);

    if (!have_best || score > result.best_score) {
      have_best = true;
      result.best_score = score;
      result.best_epoch = epoch;
      best = snapshot(model);
      since_best = 0;
      if (rec.dev_las) model.best_dev = *rec.dev_las;
    } else if (++since_best >= config.plateau_patience) {
      if (result.lr_reductions >= config.lr_reductions_max) {
        result.early_stopped = true;
        if (options.log) options.log("early stop after epoch " + std::to_string(epoch));
        break;
      }
      adam.lr /= config.lr_reduction_factor;
      ++result.lr_reductions;
      since_best = 0;
      if (options.log) options.log("learning rate reduced to " + std::to_string(adam.lr));
    }
  }
  restore(model, best);
  return result;
}

FitResult fine_tune(Model& model, const conllu::Treebank& train, const TrainConfig& config,
                    const FitOptions& options) {
  return fit(model, train, config, options);
}

SelfTrainResult self_train(Model& model, const conllu::Treebank& gold, const conllu::Treebank& raw,
                           const TrainConfig& config, const FitOptions& options) {
  if (raw.sentences.empty()) throw std::invalid_argument("self-training needs a non-empty raw corpus");
  SelfTrainResult result;
  result.silver = predict(model, raw);

  conllu::Treebank both = gold;
  both.sentences.insert(both.sentences.end(), result.silver.sentences.begin(), result.silver.sentences.end());
  auto [lex, schema] = vocab::build_lexicon(both);
  const std::uint64_t seed = Rng(config.seed).split("selftrain").next();
  vocab::EmbeddingMatrix emb;
  if (model.word_index.trainable) {
    emb = vocab::make_trainable_embeddings(lex, model.config.encoder.trainable_embedding_dim, seed);
  } else {
    emb = model.embeddings();
  }
  Model fresh = create_model(model.config, std::move(lex), std::move(schema), emb, seed);

  TrainConfig silver_config = config;
  silver_config.max_epochs = 1;
  FitOptions silver_options;
  silver_options.log = options.log;
  if (options.log) options.log("self-training: one epoch on " + std::to_string(raw.sentences.size()) + " silver sentences");
  result.silver_phase = fit(fresh, result.silver, silver_config, silver_options);
  if (options.log) options.log("self-training: fine-tuning on gold");
  result.gold_phase = fine_tune(fresh, gold, config, options);
  model = std::move(fresh);
  return result;
}

eval::AblationRow ablation_row(const std::string& label, const Model& with_penalty, const Model& without_penalty,
                               const conllu::Treebank& tb) {
  eval::AblationRow row;
  row.label = label;
  row.uas_with = eval::attachment_scores(tb, predict(with_penalty, tb)).uas;
  row.uas_without = eval::attachment_scores(tb, predict(without_penalty, tb)).uas;
  row.cycles_with = cycle_rate(with_penalty, tb);
  row.cycles_without = cycle_rate(without_penalty, tb);
  return row;
}

}  // namespace jointud::trainer
