// Arc scoring, cycle-penalty arc loss, tree decoding and arc labelling.
//
// Matrices are indexed [dependent][head] with index 0 the ROOT, so row i of
// the adjacency matrix is the head distribution of token i.
#pragma once

#include <limits>
#include <vector>

#include "jointud/config.hpp"
#include "jointud/layers.hpp"

namespace jointud::parser {

using ad::ParameterStore;
using ad::Tape;
using ad::Var;

struct ArcScorer {
  nn::Dense head;
  nn::Dense dep;
};

struct Labeler {
  nn::Dense head;
  nn::Dense dep;
  nn::Dense output;
};

struct Parser {
  ParserConfig config;
  ArcScorer arcs;
  Labeler labels;
};

template <typename Real>
Parser make_parser(ParameterStore<Real>& store, const ParserConfig& config, const nn::RegularizationConfig& reg,
                   std::size_t feature_dim, std::size_t deprel_count, Rng& init);

template <typename Real>
struct ArcScores {
  Var<Real> scores;     // (n+1) x (n+1) dot products
  Var<Real> adjacency;  // row softmax of scores
};

template <typename Real>
ArcScores<Real> score_arcs(const Parser& parser, Tape<Real>& tape, Var<Real> features, bool train, Rng& rng);

template <typename Real>
struct ArcLoss {
  Var<Real> cross_entropy;  // mean over tokens 1..n
  Var<Real> cycle;          // trace_powers with the ROOT row zeroed
  Var<Real> total;          // cross_entropy (+ cycle when enabled)
};

// gold_heads[i] is the head of token i+1; negative entries are skipped.
template <typename Real>
ArcLoss<Real> arc_loss(const ArcScores<Real>& arcs, const std::vector<int>& gold_heads, int K, bool cycle_loss);

// The cycle term alone on a given adjacency matrix.
template <typename Real>
Var<Real> cycle_penalty(Var<Real> adjacency, int K);

// n x |deprels| logits from concat(dep_i, sum_j A[i,j] head_j) for tokens 1..n.
template <typename Real>
Var<Real> label_logits(const Parser& parser, Tape<Real>& tape, Var<Real> features, Var<Real> adjacency, bool train,
                       Rng& rng);

template <typename Real>
Var<Real> label_loss(Var<Real> logits, const std::vector<int>& gold_deprels);

struct GreedyResult {
  std::vector<int> heads;  // head of token i+1
  bool cycle = false;
};

// Row argmax for rows 1..n, ties to the lower index; flags any cycle including self-loops.
GreedyResult greedy_decode(const Tensor<float>& adjacency);
GreedyResult greedy_decode(const Tensor<double>& adjacency);

inline constexpr double kForbidden = -std::numeric_limits<double>::infinity();

// weights[d][h] is the score of arc h -> d. Returns heads of tokens 1..n of the
// maximum-weight arborescence rooted at 0 that has exactly one ROOT child.
// Diagonal and column-0-into-ROOT entries are ignored.
std::vector<int> chu_liu_edmonds(const std::vector<std::vector<double>>& weights);

// Maximum spanning arborescence without the single-root restriction.
std::vector<int> max_arborescence(const std::vector<std::vector<double>>& weights);

// Total weight of heads under weights.
double tree_weight(const std::vector<std::vector<double>>& weights, const std::vector<int>& heads);

// CLE on log A with finite clamping.
std::vector<int> decode_tree(const Tensor<float>& adjacency);
std::vector<int> decode_tree(const Tensor<double>& adjacency);

}  // namespace jointud::parser
