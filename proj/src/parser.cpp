#include "jointud/parser.hpp"

#include <cmath>
#include <stdexcept>

namespace jointud::parser {

template <typename Real>
Parser make_parser(ParameterStore<Real>& store, const ParserConfig& config, const nn::RegularizationConfig& reg,
                   std::size_t feature_dim, std::size_t deprel_count, Rng& init) {
  if (config.cycle_k < 1) throw std::invalid_argument("cycle-penalty K must be at least 1");
  Parser p;
  p.config = config;
  const double dropout = reg.dense_dropout;
  p.arcs.head = nn::make_dense(store, "parser.arc.head", feature_dim, config.arc_dim, nn::Activation::tanh, dropout,
                               init);
  p.arcs.dep = nn::make_dense(store, "parser.arc.dep", feature_dim, config.arc_dim, nn::Activation::tanh, dropout,
                              init);
  p.labels.head = nn::make_dense(store, "parser.label.head", feature_dim, config.label_dim, nn::Activation::tanh,
                                 dropout, init);
  p.labels.dep = nn::make_dense(store, "parser.label.dep", feature_dim, config.label_dim, nn::Activation::tanh,
                                dropout, init);
  p.labels.output = nn::make_dense(store, "parser.label.output", 2 * config.label_dim, deprel_count,
                                   nn::Activation::softmax, dropout, init);
  return p;
}

template <typename Real>
ArcScores<Real> score_arcs(const Parser& parser, Tape<Real>& tape, Var<Real> features, bool train, Rng& rng) {
  Var<Real> dep = nn::dense_forward(parser.arcs.dep, tape, features, train, rng);
  Var<Real> head = nn::dense_forward(parser.arcs.head, tape, features, train, rng);
  ArcScores<Real> out;
  out.scores = ad::matmul(dep, ad::transpose(head));
  out.adjacency = ad::softmax_rows(out.scores);
  return out;
}

template <typename Real>
Var<Real> cycle_penalty(Var<Real> adjacency, int K) {
  const std::size_t size = adjacency.rows();
  Tape<Real>& tape = *adjacency.tape();
  Var<Real> zero_row = tape.constant(Tensor<Real>(Shape{1, size}));
  Var<Real> rest = ad::slice_rows(adjacency, 1, size);
  return ad::trace_powers(ad::concat(std::vector<Var<Real>>{zero_row, rest}, 0), K);
}

template <typename Real>
ArcLoss<Real> arc_loss(const ArcScores<Real>& arcs, const std::vector<int>& gold_heads, int K, bool cycle_loss) {
  const std::size_t size = arcs.scores.rows();
  if (gold_heads.size() + 1 != size) {
    throw ad::ShapeError("arc_loss", std::to_string(gold_heads.size()) + " gold heads for a " + std::to_string(size) +
                                         "-row adjacency matrix");
  }
  std::vector<int> targets(size, -1);
  std::size_t valid = 0;
  for (std::size_t i = 0; i < gold_heads.size(); ++i) {
    targets[i + 1] = gold_heads[i];
    if (gold_heads[i] >= 0) ++valid;
  }
  ArcLoss<Real> out;
  Var<Real> ce = ad::softmax_cross_entropy_rows(arcs.scores, std::span<const int>(targets), std::span<const double>());
  out.cross_entropy = ad::scale(ce, valid == 0 ? 0.0 : 1.0 / static_cast<double>(valid));
  out.cycle = cycle_penalty(arcs.adjacency, K);
  out.total = cycle_loss ? ad::add(out.cross_entropy, out.cycle) : out.cross_entropy;
  return out;
}

template <typename Real>
Var<Real> label_logits(const Parser& parser, Tape<Real>& tape, Var<Real> features, Var<Real> adjacency, bool train,
                       Rng& rng) {
  const std::size_t size = features.rows();
  Var<Real> dep = nn::dense_forward(parser.labels.dep, tape, features, train, rng);
  Var<Real> head = nn::dense_forward(parser.labels.head, tape, features, train, rng);
  Var<Real> soft_head = ad::matmul(ad::slice_rows(adjacency, 1, size), head);
  Var<Real> x = ad::concat(std::vector<Var<Real>>{ad::slice_rows(dep, 1, size), soft_head}, 1);
  return nn::dense_logits(parser.labels.output, tape, x, train, rng);
}

template <typename Real>
Var<Real> label_loss(Var<Real> logits, const std::vector<int>& gold_deprels) {
  std::size_t valid = 0;
  for (int t : gold_deprels) valid += t >= 0 ? 1 : 0;
  Var<Real> ce = ad::softmax_cross_entropy_rows(logits, std::span<const int>(gold_deprels), std::span<const double>());
  return ad::scale(ce, valid == 0 ? 0.0 : 1.0 / static_cast<double>(valid));
}

namespace {

bool has_cycle(const std::vector<int>& heads) {
  // heads[i] is the head of node i+1; a walk longer than n steps never reaches ROOT.
  const std::size_t n = heads.size();
  for (std::size_t start = 1; start <= n; ++start) {
    std::size_t v = start;
    std::size_t steps = 0;
    while (v != 0 && steps <= n) {
      const int h = heads[v - 1];
      if (h < 0 || static_cast<std::size_t>(h) > n) break;
      v = static_cast<std::size_t>(h);
      ++steps;
    }
    if (v != 0 && steps > n) return true;
  }
  return false;
}

template <typename Real>
GreedyResult greedy_impl(const Tensor<Real>& a) {
  if (a.shape().size() != 2 || a.rows() != a.cols() || a.rows() == 0) {
    throw ad::ShapeError("greedy_decode", "expected a square matrix, got " + shape_str(a.shape()));
  }
  GreedyResult out;
  for (std::size_t i = 1; i < a.rows(); ++i) {
    std::size_t best = 0;
    for (std::size_t j = 1; j < a.cols(); ++j) {
      if (a(i, j) > a(i, best)) best = j;
    }
    out.heads.push_back(static_cast<int>(best));
  }
  out.cycle = has_cycle(out.heads);
  return out;
}

using Matrix = std::vector<std::vector<double>>;

// Recursive contraction; head[0] stays -1.
std::vector<int> arborescence(const Matrix& w) {
  const std::size_t m = w.size();
  std::vector<int> head(m, -1);
  for (std::size_t d = 1; d < m; ++d) {
    int arg = -1;
    for (std::size_t h = 0; h < m; ++h) {
      if (h == d) continue;
      if (arg < 0 || w[d][h] > w[d][static_cast<std::size_t>(arg)]) arg = static_cast<int>(h);
    }
    head[d] = arg;
  }

  // Find one cycle.
  std::vector<int> state(m, 0);
  state[0] = 2;
  std::vector<std::size_t> cycle;
  for (std::size_t start = 1; start < m && cycle.empty(); ++start) {
    std::vector<std::size_t> path;
    std::size_t v = start;
    while (state[v] == 0) {
      state[v] = 1;
      path.push_back(v);
      v = static_cast<std::size_t>(head[v]);
    }
    if (state[v] == 1) {
      std::size_t u = v;
      do {
        cycle.push_back(u);
        u = static_cast<std::size_t>(head[u]);
      } while (u != v);
    }
    for (std::size_t u : path) state[u] = 2;
  }
  if (cycle.empty()) return head;

  std::vector<bool> in_cycle(m, false);
  for (std::size_t v : cycle) in_cycle[v] = true;
  std::vector<std::size_t> old_of;  // new index -> old node
  std::vector<std::size_t> new_of(m, 0);
  for (std::size_t v = 0; v < m; ++v) {
    if (in_cycle[v]) continue;
    new_of[v] = old_of.size();
    old_of.push_back(v);
  }
  const std::size_t c = old_of.size();
  const std::size_t mm = c + 1;

  Matrix w2(mm, std::vector<double>(mm, kForbidden));
  std::vector<std::size_t> enter_from(m, 0);  // for d outside: best cycle node acting as head
  std::vector<std::size_t> enter_at(m, 0);    // for h outside: cycle node whose head becomes h
  for (std::size_t nd = 1; nd < c; ++nd) {
    const std::size_t d = old_of[nd];
    for (std::size_t nh = 0; nh < c; ++nh) {
      if (nh != nd) w2[nd][nh] = w[d][old_of[nh]];
    }
    double best = kForbidden;
    std::size_t arg = cycle.front();
    bool first = true;
    for (std::size_t v = 0; v < m; ++v) {
      if (!in_cycle[v]) continue;
      if (first || w[d][v] > best) {
        best = w[d][v];
        arg = v;
        first = false;
      }
    }
    w2[nd][c] = best;
    enter_from[d] = arg;
  }
  for (std::size_t nh = 0; nh < c; ++nh) {
    const std::size_t h = old_of[nh];
    double best = kForbidden;
    std::size_t arg = cycle.front();
    bool first = true;
    for (std::size_t v = 0; v < m; ++v) {
      if (!in_cycle[v]) continue;
      const double inner = w[v][static_cast<std::size_t>(head[v])];
      const double gain = std::isinf(w[v][h]) && w[v][h] < 0 ? kForbidden : w[v][h] - inner;
      if (first || gain > best) {
        best = gain;
        arg = v;
        first = false;
      }
    }
    w2[c][nh] = best;
    enter_at[h] = arg;
  }

  const std::vector<int> sub = arborescence(w2);
  std::vector<int> out = head;
  for (std::size_t nd = 1; nd < c; ++nd) {
    const std::size_t d = old_of[nd];
    const auto nh = static_cast<std::size_t>(sub[nd]);
    out[d] = static_cast<int>(nh == c ? enter_from[d] : old_of[nh]);
  }
  const std::size_t h = old_of[static_cast<std::size_t>(sub[c])];
  out[enter_at[h]] = static_cast<int>(h);
  return out;
}

void check_square(const Matrix& w) {
  if (w.empty()) throw std::invalid_argument("chu_liu_edmonds: empty weight matrix");
  for (const auto& row : w) {
    if (row.size() != w.size()) throw std::invalid_argument("chu_liu_edmonds: weight matrix is not square");
  }
}

std::vector<int> drop_root(const std::vector<int>& heads) { return {heads.begin() + 1, heads.end()}; }

template <typename Real>
std::vector<int> decode_impl(const Tensor<Real>& a) {
  if (a.shape().size() != 2 || a.rows() != a.cols() || a.rows() == 0) {
    throw ad::ShapeError("decode_tree", "expected a square matrix, got " + shape_str(a.shape()));
  }
  const std::size_t m = a.rows();
  Matrix w(m, std::vector<double>(m, kForbidden));
  for (std::size_t d = 1; d < m; ++d) {
    for (std::size_t h = 0; h < m; ++h) {
      if (h == d) continue;
      w[d][h] = std::log(std::max(static_cast<double>(a(d, h)), std::numeric_limits<double>::min()));
    }
  }
  return chu_liu_edmonds(w);
}

}  // namespace

GreedyResult greedy_decode(const Tensor<float>& adjacency) { return greedy_impl(adjacency); }
GreedyResult greedy_decode(const Tensor<double>& adjacency) { return greedy_impl(adjacency); }

std::vector<int> max_arborescence(const std::vector<std::vector<double>>& weights) {
  check_square(weights);
  Matrix w = weights;
  for (std::size_t i = 0; i < w.size(); ++i) {
    w[i][i] = kForbidden;
    w[0][i] = kForbidden;
  }
  return drop_root(arborescence(w));
}

double tree_weight(const std::vector<std::vector<double>>& weights, const std::vector<int>& heads) {
  double total = 0.0;
  for (std::size_t i = 0; i < heads.size(); ++i) total += weights[i + 1][static_cast<std::size_t>(heads[i])];
  return total;
}

std::vector<int> chu_liu_edmonds(const std::vector<std::vector<double>>& weights) {
  std::vector<int> best = max_arborescence(weights);
  std::size_t root_children = 0;
  for (int h : best) root_children += h == 0 ? 1 : 0;
  if (root_children <= 1) return best;

  // The optimal single-root tree has some ROOT child r; forcing each r in turn is exact.
  double best_weight = kForbidden;
  bool found = false;
  const std::size_t n = weights.size() - 1;
  for (std::size_t r = 1; r <= n; ++r) {
    Matrix w = weights;
    for (std::size_t d = 1; d <= n; ++d) {
      if (d != r) w[d][0] = kForbidden;
    }
    std::vector<int> heads = max_arborescence(w);
    const double total = tree_weight(weights, heads);
    std::size_t children = 0;
    for (int h : heads) children += h == 0 ? 1 : 0;
    if (children != 1) continue;
    if (!found || total > best_weight) {
      best = heads;
      best_weight = total;
      found = true;
    }
  }
  return best;
}

std::vector<int> decode_tree(const Tensor<float>& adjacency) { return decode_impl(adjacency); }
std::vector<int> decode_tree(const Tensor<double>& adjacency) { return decode_impl(adjacency); }

#define JOINTUD_INSTANTIATE(Real)                                                                                  \
  template Parser make_parser<Real>(ParameterStore<Real>&, const ParserConfig&, const nn::RegularizationConfig&,   \
                                    std::size_t, std::size_t, Rng&);                                               \
  template ArcScores<Real> score_arcs<Real>(const Parser&, Tape<Real>&, Var<Real>, bool, Rng&);                    \
  template Var<Real> cycle_penalty<Real>(Var<Real>, int);                                                          \
  template ArcLoss<Real> arc_loss<Real>(const ArcScores<Real>&, const std::vector<int>&, int, bool);              \
  template Var<Real> label_logits<Real>(const Parser&, Tape<Real>&, Var<Real>, Var<Real>, bool, Rng&);            \
  template Var<Real> label_loss<Real>(Var<Real>, const std::vector<int>&);

JOINTUD_INSTANTIATE(float)
JOINTUD_INSTANTIATE(double)

#undef JOINTUD_INSTANTIATE

}  // namespace jointud::parser
