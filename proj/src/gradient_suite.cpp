#include "jointud/gradient_suite.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <functional>
#include <memory>
#include <tuple>
#include <sstream>

#include "jointud/model.hpp"

namespace jointud {

namespace {

using ad::Tape;
using ad::Var;
using T = Tensor<double>;

T randn(const Shape& shape, Rng& rng, double sd = 1.0) {
  T t(shape);
  for (double& v : t.storage()) v = rng.normal(0.0, sd);
  return t;
}

T uniform(const Shape& shape, Rng& rng, double lo, double hi) {
  T t(shape);
  for (double& v : t.storage()) v = lo + (hi - lo) * rng.uniform();
  return t;
}

// Entries pushed away from zero so that kinks stay outside the difference step.
T away_from_zero(T t, double margin) {
  for (double& v : t.storage()) {
    if (std::abs(v) < margin) v = v < 0 ? v - margin : v + margin;
  }
  return t;
}

// Zero biases put ReLU units fed by all-zero windows exactly on the kink.
void randomize_biases(ad::ParameterStore<double>& store, Rng& rng) {
  for (auto& p : store) {
    if (p.name.ends_with(".bias") || p.name.ends_with(".b")) p.value = randn(p.value.shape(), rng, 0.3);
  }
}

Var<double> project(Tape<double>& tape, Var<double> v, const T& weights) {
  return ad::sum(ad::mul(v, tape.constant(weights)));
}

struct InputCase {
  std::vector<T> point;
  ad::InputFunction f;
};
using InputCaseFactory = std::function<InputCase(Rng&, std::size_t)>;

struct ParamCase {
  ad::ParameterStore<double> store;
  ad::ParamFunction f;
  std::size_t max_entries = 0;
};
using ParamCaseFactory = std::function<void(ParamCase&, Rng&, std::size_t)>;

class Suite {
 public:
  explicit Suite(const GradientSuiteOptions& o) : options_(o), base_(Rng(o.seed).split("gradient-suite")) {}

  void inputs(const std::string& name, const InputCaseFactory& factory) {
    ad::GradCheckReport total{name, 0.0, 0, options_.tolerance};
    for (std::size_t i = 0; i < options_.instances; ++i) {
      Rng rng = base_.split(name).split(static_cast<std::uint64_t>(i));
      InputCase c = factory(rng, i);
      merge(total, ad::grad_check(name, c.f, c.point, options_.tolerance));
    }
    reports_.push_back(total);
  }

  void params(const std::string& name, const ParamCaseFactory& factory) {
    ad::GradCheckReport total{name, 0.0, 0, options_.tolerance};
    for (std::size_t i = 0; i < options_.instances; ++i) {
      Rng rng = base_.split(name).split(static_cast<std::uint64_t>(i));
      ParamCase c;
      factory(c, rng, i);
      merge(total, ad::grad_check_params(name, c.f, c.store, options_.tolerance, c.max_entries));
    }
    reports_.push_back(total);
  }

  std::vector<ad::GradCheckReport> take() { return std::move(reports_); }

 private:
  static void merge(ad::GradCheckReport& into, const ad::GradCheckReport& r) {
    into.max_rel_error = std::max(into.max_rel_error, r.max_rel_error);
    into.entries_checked += r.entries_checked;
  }

  GradientSuiteOptions options_;
  Rng base_;
  std::vector<ad::GradCheckReport> reports_;
};

InputCase unary(Rng& rng, const Shape& shape, std::function<Var<double>(Var<double>)> op, const Shape& out_shape,
                double margin = 0.0) {
  T x = randn(shape, rng);
  if (margin > 0) x = away_from_zero(std::move(x), margin);
  T w = randn(out_shape, rng);
  return {{x}, [op, w](Tape<double>& tape, const std::vector<Var<double>>& in) { return project(tape, op(in[0]), w); }};
}

void primitive_checks(Suite& suite) {
  suite.inputs("matmul", [](Rng& rng, std::size_t) {
    T w = randn({3, 2}, rng);
    return InputCase{{randn({3, 4}, rng), randn({4, 2}, rng)}, [w](Tape<double>& tape, const auto& in) {
                       return project(tape, ad::matmul(in[0], in[1]), w);
                     }};
  });
  suite.inputs("transpose", [](Rng& rng, std::size_t) {
    return unary(rng, {3, 4}, [](Var<double> x) { return ad::transpose(x); }, {4, 3});
  });
  suite.inputs("add", [](Rng& rng, std::size_t i) {
    const Shape second = i % 2 == 0 ? Shape{3, 4} : Shape{1, 4};
    T w = randn({3, 4}, rng);
    return InputCase{{randn({3, 4}, rng), randn(second, rng)},
                     [w](Tape<double>& tape, const auto& in) { return project(tape, ad::add(in[0], in[1]), w); }};
  });
  suite.inputs("mul", [](Rng& rng, std::size_t) {
    T w = randn({3, 4}, rng);
    return InputCase{{randn({3, 4}, rng), randn({3, 4}, rng)},
                     [w](Tape<double>& tape, const auto& in) { return project(tape, ad::mul(in[0], in[1]), w); }};
  });
  suite.inputs("scale", [](Rng& rng, std::size_t) {
    const double factor = rng.normal(0.0, 2.0);
    return unary(rng, {3, 4}, [factor](Var<double> x) { return ad::scale(x, factor); }, {3, 4});
  });
  suite.inputs("sum", [](Rng& rng, std::size_t) {
    return InputCase{{randn({3, 4}, rng)}, [](Tape<double>&, const auto& in) { return ad::sum(in[0]); }};
  });
  suite.inputs("concat", [](Rng& rng, std::size_t i) {
    const int axis = static_cast<int>(i % 2);
    const Shape a = axis == 0 ? Shape{2, 3} : Shape{3, 2};
    const Shape b = axis == 0 ? Shape{3, 3} : Shape{3, 4};
    const Shape out = axis == 0 ? Shape{5, 3} : Shape{3, 6};
    T w = randn(out, rng);
    return InputCase{{randn(a, rng), randn(b, rng)}, [w, axis](Tape<double>& tape, const auto& in) {
                       return project(tape, ad::concat<double>({in[0], in[1]}, axis), w);
                     }};
  });
  suite.inputs("slice_rows", [](Rng& rng, std::size_t) {
    return unary(rng, {5, 3}, [](Var<double> x) { return ad::slice_rows(x, 1, 4); }, {3, 3});
  });
  suite.inputs("broadcast_rows", [](Rng& rng, std::size_t) {
    return unary(rng, {1, 4}, [](Var<double> x) { return ad::broadcast_rows(x, 3); }, {3, 4});
  });
  suite.inputs("tanh", [](Rng& rng, std::size_t) {
    return unary(rng, {3, 4}, [](Var<double> x) { return ad::tanh(x); }, {3, 4});
  });
  suite.inputs("relu", [](Rng& rng, std::size_t) {
    return unary(rng, {3, 4}, [](Var<double> x) { return ad::relu(x); }, {3, 4}, 0.05);
  });
  suite.inputs("sigmoid", [](Rng& rng, std::size_t) {
    return unary(rng, {3, 4}, [](Var<double> x) { return ad::sigmoid(x); }, {3, 4});
  });
  suite.inputs("softmax_rows", [](Rng& rng, std::size_t) {
    return unary(rng, {3, 5}, [](Var<double> x) { return ad::softmax_rows(x); }, {3, 5});
  });

  auto targets_and_weights = [](Rng& rng, std::vector<int>& targets, std::vector<double>& weights) {
    targets = {static_cast<int>(rng.next() % 5), -1, static_cast<int>(rng.next() % 5), static_cast<int>(rng.next() % 5)};
    weights.clear();
    for (int k = 0; k < 4; ++k) weights.push_back(0.5 + 1.5 * rng.uniform());
  };
  suite.inputs("cross_entropy_rows", [&](Rng& rng, std::size_t) {
    std::vector<int> targets;
    std::vector<double> weights;
    targets_and_weights(rng, targets, weights);
    return InputCase{{uniform({4, 5}, rng, 0.05, 1.0)}, [targets, weights](Tape<double>&, const auto& in) {
                       return ad::cross_entropy_rows(in[0], std::span<const int>(targets),
                                                     std::span<const double>(weights));
                     }};
  });
  suite.inputs("softmax_cross_entropy_rows", [&](Rng& rng, std::size_t) {
    std::vector<int> targets;
    std::vector<double> weights;
    targets_and_weights(rng, targets, weights);
    return InputCase{{randn({4, 5}, rng, 2.0)}, [targets, weights](Tape<double>&, const auto& in) {
                       return ad::softmax_cross_entropy_rows(in[0], std::span<const int>(targets),
                                                             std::span<const double>(weights));
                     }};
  });
  suite.inputs("global_max_pool", [](Rng& rng, std::size_t) {
    return unary(rng, {6, 3}, [](Var<double> x) { return ad::global_max_pool(x); }, {1, 3});
  });
  suite.inputs("dilated_conv1d", [](Rng& rng, std::size_t i) {
    const std::size_t dilation = 1 + i % 3;
    T w = randn({7, 2}, rng);
    return InputCase{{randn({7, 3}, rng), randn({3, 3, 2}, rng)}, [w, dilation](Tape<double>& tape, const auto& in) {
                       return project(tape, ad::dilated_conv1d(in[0], in[1], dilation), w);
                     }};
  });
  suite.inputs("dropout", [](Rng& rng, std::size_t) {
    const std::uint64_t seed = rng.next();
    return unary(rng, {4, 5}, [seed](Var<double> x) {
      Rng r(seed);
      return ad::dropout(x, 0.3, true, r);
    }, {4, 5});
  });
  suite.inputs("gaussian_dropout", [](Rng& rng, std::size_t) {
    const std::uint64_t seed = rng.next();
    return unary(rng, {4, 5}, [seed](Var<double> x) {
      Rng r(seed);
      return ad::gaussian_dropout(x, 0.25, true, r);
    }, {4, 5});
  });
  suite.inputs("gaussian_noise", [](Rng& rng, std::size_t) {
    const std::uint64_t seed = rng.next();
    return unary(rng, {4, 5}, [seed](Var<double> x) {
      Rng r(seed);
      return ad::gaussian_noise(x, 0.2, true, r);
    }, {4, 5});
  });
  suite.inputs("trace_powers", [](Rng& rng, std::size_t i) {
    const int K = static_cast<int>(i % 4) + 1;
    return InputCase{{uniform({5, 5}, rng, 0.0, 0.5)},
                     [K](Tape<double>&, const auto& in) { return ad::trace_powers(in[0], K); }};
  });
  suite.inputs("gather_rows", [](Rng& rng, std::size_t) {
    const std::vector<int> idx = {0, 2, 2, 4};
    return unary(rng, {5, 3}, [idx](Var<double> x) { return ad::gather_rows(x, std::span<const int>(idx)); },
                 {4, 3});
  });
  suite.inputs("gather_rows_with_fallback", [](Rng& rng, std::size_t) {
    const std::vector<int> idx = {0, -1, 3, -1, 4};
    T w = randn({5, 3}, rng);
    return InputCase{{randn({5, 3}, rng), randn({1, 3}, rng)}, [idx, w](Tape<double>& tape, const auto& in) {
                       return project(tape, ad::gather_rows_with_fallback(in[0], in[1], std::span<const int>(idx)), w);
                     }};
  });
  suite.inputs("lstm", [](Rng& rng, std::size_t i) {
    const bool reverse = i % 2 == 1;
    ad::LstmMasks masks;
    for (int k = 0; k < 3; ++k) masks.input.push_back(rng.uniform() < 0.25 ? 0.0 : 1.0 / 0.75);
    for (int k = 0; k < 2; ++k) masks.recurrent.push_back(rng.uniform() < 0.25 ? 0.0 : 1.0 / 0.75);
    T w = randn({5, 2}, rng);
    return InputCase{{randn({5, 3}, rng), randn({3, 8}, rng, 0.7), randn({2, 8}, rng, 0.7), randn({1, 8}, rng, 0.5)},
                     [w, reverse, masks](Tape<double>& tape, const auto& in) {
                       return project(tape, ad::lstm(in[0], in[1], in[2], in[3], reverse, masks), w);
                     }};
  });
}

const char* kSuiteTreebank =
    "1\tThe\tthe\tDET\tDT\tDefinite=Def|PronType=Art\t2\tdet\t_\t_\n"
    "2\tdogs\tdog\tNOUN\tNNS\tNumber=Plur\t3\tnsubj\t_\t_\n"
    "3\tran\trun\tVERB\tVBD\tTense=Past\t0\troot\t_\t_\n"
    "4\t.\t.\tPUNCT\t.\t_\t3\tpunct\t_\t_\n"
    "\n"
    "1\tA\ta\tDET\tDT\tDefinite=Ind|PronType=Art\t2\tdet\t_\t_\n"
    "2\tcat\tcat\tNOUN\tNN\tNumber=Sing\t3\tnsubj\t_\t_\n"
    "3\tsees\tsee\tVERB\tVBZ\tNumber=Sing|Tense=Pres\t0\troot\t_\t_\n"
    "4\tbirds\tbird\tNOUN\tNNS\tNumber=Plur\t3\tobj\t_\t_\n"
    "\n";

const char* kSuiteSentence =
    "1\tThe\tthe\tDET\tDT\tDefinite=Def|PronType=Art\t2\tdet\t_\t_\n"
    "2\tcat\tcat\tNOUN\tNN\tNumber=Sing\t3\tnsubj\t_\t_\n"
    "3\tchased\tchase\tVERB\tVBD\tTense=Past\t0\troot\t_\t_\n"
    "4\tdogs\tdog\tNOUN\tNNS\tNumber=Plur\t3\tobj\t_\t_\n"
    "5\t.\t.\tPUNCT\t.\t_\t3\tpunct\t_\t_\n"
    "\n";

ModelConfig tiny_config() {
  ModelConfig c;
  c.profile = "gradcheck";
  c.encoder.trainable_embedding_dim = 4;
  c.encoder.word_dim = 4;
  c.encoder.char_embedding_dim = 3;
  c.encoder.char_convs = {{4, 3, 1}, {4, 3, 2}};
  c.encoder.lstm_hidden = 3;
  c.heads.upos_hidden = 3;
  c.heads.xpos_hidden = 3;
  c.heads.feats_hidden = 3;
  c.heads.lemma_feature_dim = 3;
  c.heads.lemma_char_embedding_dim = 3;
  c.heads.lemma_convs = {{4, 3, 1}, {4, 3, 2}};
  c.parser.arc_dim = 4;
  c.parser.label_dim = 3;
  return c;
}

struct SuiteData {
  ModelConfig config = tiny_config();
  vocab::Lexicon lex;
  vocab::FeatureSchema schema;
  vocab::EmbeddingMatrix emb;
  vocab::EncodedSentence sentence;  // contains the unseen form "chased"
};

SuiteData suite_data(std::uint64_t seed) {
  SuiteData d;
  std::tie(d.lex, d.schema) = vocab::build_lexicon(conllu::parse_conllu(kSuiteTreebank));
  d.emb = vocab::make_trainable_embeddings(d.lex, d.config.encoder.trainable_embedding_dim, seed);
  const conllu::Treebank s = conllu::parse_conllu(kSuiteSentence);
  d.sentence = vocab::encode_sentence(s.sentences.at(0), d.lex, d.schema, d.emb, {d.config.heads.lemma_slack, true});
  return d;
}

void layer_checks(Suite& suite) {
  suite.params("dense", [](ParamCase& c, Rng& rng, std::size_t) {
    Rng init = rng.split("init");
    const nn::Dense layer = nn::make_dense<double>(c.store, "dense", 4, 3, nn::Activation::tanh, 0.25, init);
    T x = randn({3, 4}, rng);
    T w = randn({3, 3}, rng);
    const std::uint64_t seed = rng.next();
    c.f = [=](Tape<double>& tape) {
      Rng r(seed);
      return project(tape, nn::dense_forward(layer, tape, tape.constant(x), true, r), w);
    };
  });
  suite.params("conv_stack", [](ParamCase& c, Rng& rng, std::size_t) {
    Rng init = rng.split("init");
    const nn::ConvStack stack = nn::make_conv_stack<double>(c.store, "conv", 3, {{4, 3, 1}, {3, 3, 2}}, 0.0, init);
    randomize_biases(c.store, rng);
    T x = randn({6, 3}, rng);
    T w = randn({6, 3}, rng);
    c.f = [=](Tape<double>& tape) { return project(tape, nn::conv_stack_forward(stack, tape, tape.constant(x)), w); };
  });
  suite.params("bilstm", [](ParamCase& c, Rng& rng, std::size_t) {
    Rng init = rng.split("init");
    const nn::BiLstmStack stack = nn::make_bilstm<double>(c.store, "bilstm", 3, 2, 2, 0.0, init);
    T x = randn({5, 3}, rng);
    T w = randn({5, 4}, rng);
    const std::uint64_t seed = rng.next();
    c.f = [=](Tape<double>& tape) {
      Rng r(seed);
      return project(tape, nn::bilstm_forward(stack, tape, tape.constant(x), true, r, nn::RegularizationConfig{}), w);
    };
  });
}

void model_checks(Suite& suite, std::uint64_t seed) {
  const auto data = std::make_shared<SuiteData>(suite_data(seed));
  const std::size_t n = data->sentence.size();
  const std::size_t feature_dim = data->config.encoder.feature_dim();

  suite.params("encoder", [data, n](ParamCase& c, Rng& rng, std::size_t) {
    Rng init = rng.split("init");
    const encoder::Encoder enc = encoder::make_encoder<double>(c.store, data->config.encoder,
                                                               data->config.regularization, data->emb,
                                                               data->lex.chars.size(), init);
    randomize_biases(c.store, rng);
    T w = randn({n + 1, 2 * data->config.encoder.lstm_hidden}, rng);
    const std::uint64_t s = rng.next();
    c.max_entries = 6;
    c.f = [=](Tape<double>& tape) {
      Rng r(s);
      return project(tape, encoder::encode_sentence(enc, tape, data->sentence, true, r), w);
    };
  });
  suite.params("heads", [data, n, feature_dim](ParamCase& c, Rng& rng, std::size_t) {
    Rng init = rng.split("init");
    const heads::Heads h = heads::make_heads<double>(c.store, data->config.heads, data->config.regularization,
                                                     data->lex, data->schema, feature_dim, init);
    randomize_biases(c.store, rng);
    T x = randn({n, feature_dim}, rng);
    const std::uint64_t s = rng.next();
    c.max_entries = 6;
    c.f = [=](Tape<double>& tape) {
      Rng r(s);
      const auto out = heads::heads_forward(h, tape, tape.constant(x), data->sentence, true, r);
      const auto loss = heads::heads_loss(out, data->sentence);
      std::vector<Var<double>> parts;
      for (const auto& part : {loss.upos, loss.xpos, loss.feats, loss.lemma}) {
        if (part) parts.push_back(*part);
      }
      return nn::add_all(parts);
    };
  });
  suite.params("parser", [data, n, feature_dim](ParamCase& c, Rng& rng, std::size_t i) {
    Rng init = rng.split("init");
    ParserConfig pc = data->config.parser;
    pc.cycle_k = static_cast<int>(i % 4) + 1;
    const parser::Parser p = parser::make_parser<double>(c.store, pc, data->config.regularization, feature_dim,
                                                         data->lex.deprel.size(), init);
    T x = randn({n + 1, feature_dim}, rng);
    const std::uint64_t s = rng.next();
    c.f = [=](Tape<double>& tape) {
      Rng r(s);
      Var<double> features = tape.constant(x);
      const auto arcs = parser::score_arcs(p, tape, features, true, r);
      const auto arc = parser::arc_loss(arcs, data->sentence.heads, pc.cycle_k, true);
      const auto labels = parser::label_logits(p, tape, features, arcs.adjacency, true, r);
      return ad::add(arc.total, parser::label_loss(labels, data->sentence.deprel));
    };
  });
  suite.params("network", [data](ParamCase& c, Rng& rng, std::size_t) {
    const Network net = build_network<double>(c.store, data->config, data->lex, data->schema, data->emb, rng.next());
    randomize_biases(c.store, rng);
    const TaskWeights weights = effective_weights(LossWeights{}, net.active());
    const std::uint64_t s = rng.next();
    c.max_entries = 3;
    c.f = [=](Tape<double>& tape) {
      Rng r(s);
      return sentence_loss(net, tape, data->sentence, weights, true, r).joint;
    };
  });
}

}  // namespace

std::vector<ad::GradCheckReport> run_gradient_suite(const GradientSuiteOptions& options) {
  Suite suite(options);
  primitive_checks(suite);
  layer_checks(suite);
  model_checks(suite, options.seed);
  return suite.take();
}

std::string format_gradient_report(const std::vector<ad::GradCheckReport>& reports) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof line, "%-28s %14s %9s  %s\n", "check", "max rel error", "entries", "result");
  out << line;
  for (const auto& r : reports) {
    std::snprintf(line, sizeof line, "%-28s %14.3e %9zu  %s\n", r.name.c_str(), r.max_rel_error, r.entries_checked,
                  r.passed() ? "ok" : "FAIL");
    out << line;
  }
  return out.str();
}

}  // namespace jointud
