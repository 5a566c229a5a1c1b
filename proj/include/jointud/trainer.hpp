// Joint training loop, learning-rate schedule, fine-tuning and self-training.
#pragma once

#include <functional>
#include <optional>
#include <vector>

#include "jointud/eval.hpp"
#include "jointud/model.hpp"

namespace jointud::trainer {

using Batch = std::vector<std::size_t>;

// Sentences sorted by length (stable), packed greedily up to batch_words tokens,
// batch order shuffled by (seed, epoch).
std::vector<Batch> make_batches(const std::vector<std::size_t>& lengths, std::size_t batch_words, std::uint64_t seed,
                                std::size_t epoch);
std::vector<Batch> make_batches(const conllu::Treebank& tb, std::size_t batch_words, std::uint64_t seed,
                                std::size_t epoch);

// max(ln n, ln 2)
double sentence_weight(std::size_t n);

struct EpochRecord {
  std::size_t epoch = 0;
  double train_loss = 0;  // mean of sentence_weight * joint loss, train mode
  double lr = 0;
  std::optional<double> dev_uas, dev_las;
  std::optional<double> probe_cycle;  // mean cycle term over the probe sentences, eval mode
  double seconds = 0;
};

struct FitOptions {
  const conllu::Treebank* dev = nullptr;
  // Sentences of the training set on which the cycle term is tracked.
  std::vector<std::size_t> probe;
  std::function<void(const EpochRecord&)> on_epoch;
  std::function<void(const std::string&)> log;
};

struct FitResult {
  std::vector<EpochRecord> history;
  std::optional<double> probe_cycle_initial;
  std::size_t best_epoch = 0;
  double best_score = 0;
  std::size_t lr_reductions = 0;
  bool early_stopped = false;
};

// Mean cycle term of the given sentences, eval mode.
double probe_cycle_term(const Model& model, const std::vector<vocab::EncodedSentence>& sentences);

// Trains in place and leaves the best-scoring parameters in the model.
// The score is dev LAS, or the negated 3-epoch mean training loss without dev.
FitResult fit(Model& model, const conllu::Treebank& train, const TrainConfig& config, const FitOptions& options = {});

// fit with fresh optimizer state; max_epochs = 0 leaves the model unchanged.
FitResult fine_tune(Model& model, const conllu::Treebank& train, const TrainConfig& config,
                    const FitOptions& options = {});

struct SelfTrainResult {
  conllu::Treebank silver;
  FitResult silver_phase;
  FitResult gold_phase;
};

// Silver annotation of raw by model, a fresh model (lexicon over gold and
// silver, same word-embedding source) trained one epoch on it, then
// fine-tuned on gold. The result replaces model.
SelfTrainResult self_train(Model& model, const conllu::Treebank& gold, const conllu::Treebank& raw,
                           const TrainConfig& config, const FitOptions& options = {});

// UAS and greedy cycle rate of both models on tb.
eval::AblationRow ablation_row(const std::string& label, const Model& with_penalty, const Model& without_penalty,
                               const conllu::Treebank& tb);

}  // namespace jointud::trainer
