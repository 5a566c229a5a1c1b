#include "jointud/conllu.hpp"

#include <algorithm>
#include <cctype>
#include <charconv>
#include <fstream>
#include <sstream>

namespace jointud::conllu {

namespace {

std::string field_or_underscore(const std::string& value) {
  return value.empty() ? std::string("_") : value;
}

std::string empty_if_underscore(std::string_view value) {
  return value == "_" ? std::string() : std::string(value);
}

std::vector<std::string_view> split(std::string_view text, char sep) {
  std::vector<std::string_view> out;
  std::size_t start = 0;
  while (true) {
    std::size_t pos = text.find(sep, start);
    if (pos == std::string_view::npos) {
      out.push_back(text.substr(start));
      return out;
    }
    out.push_back(text.substr(start, pos - start));
    start = pos + 1;
  }
}

bool parse_int(std::string_view text, int& value) {
  if (text.empty()) return false;
  auto [ptr, ec] = std::from_chars(text.data(), text.data() + text.size(), value);
  return ec == std::errc() && ptr == text.data() + text.size();
}

std::string lower(std::string_view s) {
  std::string out(s);
  for (char& c : out) c = static_cast<char>(std::tolower(static_cast<unsigned char>(c)));
  return out;
}

bool attribute_less(const std::string& a, const std::string& b) {
  std::string la = lower(a), lb = lower(b);
  if (la != lb) return la < lb;
  return a < b;
}

struct PendingSentence {
  Sentence sentence;
  std::vector<std::size_t> head_lines;  // line number of each token, for range errors
};

void finish_sentence(PendingSentence& pending, Treebank& tb) {
  Sentence& s = pending.sentence;
  if (s.tokens.empty()) {
    if (!s.comments.empty() || !s.mwt_lines.empty()) {
      std::size_t line = pending.head_lines.empty() ? 0 : pending.head_lines.back();
      throw ParseError(line, "sentence without tokens");
    }
    return;
  }
  const int n = static_cast<int>(s.tokens.size());
  for (std::size_t i = 0; i < s.tokens.size(); ++i) {
    const Token& t = s.tokens[i];
    if (t.head && (*t.head < 0 || *t.head > n)) {
      throw ParseError(pending.head_lines[i],
                       "head " + std::to_string(*t.head) + " out of range 0.." + std::to_string(n));
    }
  }
  for (const MultiwordLine& m : s.mwt_lines) {
    if (m.last > n) throw ParseError(0, "multiword range beyond sentence end: " + m.line);
  }
  tb.sentences.push_back(std::move(s));
}

}  // namespace

ParseError::ParseError(std::size_t line, const std::string& message)
    : std::runtime_error("line " + std::to_string(line) + ": " + message), line_(line) {}

MorphFeatureSet MorphFeatureSet::parse(std::string_view text) {
  MorphFeatureSet set;
  if (text.empty() || text == "_") return set;
  for (std::string_view item : split(text, '|')) {
    std::size_t eq = item.find('=');
    if (eq == std::string_view::npos || eq == 0) {
      throw std::invalid_argument("malformed feature '" + std::string(item) + "'");
    }
    std::string attr(item.substr(0, eq));
    if (set.find(attr) != nullptr) {
      throw std::invalid_argument("duplicate feature attribute '" + attr + "'");
    }
    set.pairs.emplace_back(std::move(attr), std::string(item.substr(eq + 1)));
  }
  // Parsed sets are kept in output order so that write/parse is a fixpoint.
  std::stable_sort(set.pairs.begin(), set.pairs.end(),
                   [](const auto& a, const auto& b) { return attribute_less(a.first, b.first); });
  return set;
}

std::string MorphFeatureSet::str() const {
  if (pairs.empty()) return "_";
  std::vector<const std::pair<std::string, std::string>*> sorted;
  for (const auto& p : pairs) sorted.push_back(&p);
  std::stable_sort(sorted.begin(), sorted.end(),
                   [](const auto* a, const auto* b) { return attribute_less(a->first, b->first); });
  std::string out;
  for (const auto* p : sorted) {
    if (!out.empty()) out += '|';
    out += p->first;
    out += '=';
    out += p->second;
  }
  return out;
}

const std::string* MorphFeatureSet::find(std::string_view attribute) const {
  for (const auto& p : pairs) {
    if (p.first == attribute) return &p.second;
  }
  return nullptr;
}

bool MorphFeatureSet::same_as(const MorphFeatureSet& other) const {
  if (pairs.size() != other.pairs.size()) return false;
  for (const auto& p : pairs) {
    const std::string* v = other.find(p.first);
    if (v == nullptr || *v != p.second) return false;
  }
  return true;
}

bool Sentence::fully_headed() const {
  return std::all_of(tokens.begin(), tokens.end(), [](const Token& t) { return t.head.has_value(); });
}

std::vector<int> Sentence::heads() const {
  std::vector<int> out;
  out.reserve(tokens.size());
  for (const Token& t : tokens) {
    if (!t.head) throw std::invalid_argument("token " + std::to_string(t.id) + " has no head");
    out.push_back(*t.head);
  }
  return out;
}

std::size_t Treebank::token_count() const {
  std::size_t n = 0;
  for (const Sentence& s : sentences) n += s.size();
  return n;
}

Treebank parse_conllu(std::string_view text) {
  Treebank tb;
  PendingSentence pending;
  std::size_t line_no = 0;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;
    ++line_no;

    if (line.empty()) {
      finish_sentence(pending, tb);
      pending = PendingSentence{};
      continue;
    }
    if (line.front() == '#') {
      if (!pending.sentence.tokens.empty() || !pending.sentence.mwt_lines.empty()) {
        throw ParseError(line_no, "comment line inside sentence body");
      }
      pending.sentence.comments.emplace_back(line);
      continue;
    }

    std::vector<std::string_view> cols = split(line, '\t');
    if (cols.size() != 10) {
      throw ParseError(line_no, "expected 10 tab-separated columns, found " + std::to_string(cols.size()));
    }
    std::string_view id = cols[0];
    if (id.find('.') != std::string_view::npos) {
      throw ParseError(line_no, "empty nodes are not supported (id " + std::string(id) + ")");
    }
    std::size_t dash = id.find('-');
    if (dash != std::string_view::npos) {
      MultiwordLine m;
      if (!parse_int(id.substr(0, dash), m.first) || !parse_int(id.substr(dash + 1), m.last) ||
          m.first < 1 || m.last < m.first) {
        throw ParseError(line_no, "malformed multiword range '" + std::string(id) + "'");
      }
      if (m.first != static_cast<int>(pending.sentence.tokens.size()) + 1) {
        throw ParseError(line_no, "multiword range does not start at the next token");
      }
      m.line = std::string(line);
      pending.sentence.mwt_lines.push_back(std::move(m));
      continue;
    }

    Token t;
    if (!parse_int(id, t.id)) throw ParseError(line_no, "malformed token id '" + std::string(id) + "'");
    if (t.id != static_cast<int>(pending.sentence.tokens.size()) + 1) {
      throw ParseError(line_no, "non-contiguous token id " + std::to_string(t.id));
    }
    t.form = std::string(cols[1]);
    t.lemma = empty_if_underscore(cols[2]);
    t.upos = empty_if_underscore(cols[3]);
    t.xpos = empty_if_underscore(cols[4]);
    try {
      t.feats = MorphFeatureSet::parse(cols[5]);
    } catch (const std::invalid_argument& e) {
      throw ParseError(line_no, e.what());
    }
    if (cols[6] != "_") {
      int head = 0;
      if (!parse_int(cols[6], head)) throw ParseError(line_no, "malformed head '" + std::string(cols[6]) + "'");
      if (head == t.id) throw ParseError(line_no, "token is its own head");
      t.head = head;
    }
    t.deprel = empty_if_underscore(cols[7]);
    t.deps = empty_if_underscore(cols[8]);
    t.misc = empty_if_underscore(cols[9]);
    pending.sentence.tokens.push_back(std::move(t));
    pending.head_lines.push_back(line_no);
  }
  finish_sentence(pending, tb);
  return tb;
}

std::string write_conllu(const Treebank& tb) {
  std::string out;
  for (const Sentence& s : tb.sentences) {
    for (const std::string& c : s.comments) {
      out += c;
      out += '\n';
    }
    std::size_t mwt = 0;
    for (const Token& t : s.tokens) {
      while (mwt < s.mwt_lines.size() && s.mwt_lines[mwt].first == t.id) {
        out += s.mwt_lines[mwt++].line;
        out += '\n';
      }
      out += std::to_string(t.id);
      out += '\t';
      out += t.form;
      out += '\t';
      out += field_or_underscore(t.lemma);
      out += '\t';
      out += field_or_underscore(t.upos);
      out += '\t';
      out += field_or_underscore(t.xpos);
      out += '\t';
      out += t.feats.str();
      out += '\t';
      out += t.head ? std::to_string(*t.head) : std::string("_");
      out += '\t';
      out += field_or_underscore(t.deprel);
      out += '\t';
      out += field_or_underscore(t.deps);
      out += '\t';
      out += field_or_underscore(t.misc);
      out += '\n';
    }
    out += '\n';
  }
  return out;
}

Treebank read_conllu_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open " + path);
  std::ostringstream buf;
  buf << in.rdbuf();
  return parse_conllu(buf.str());
}

void write_conllu_file(const std::string& path, const Treebank& tb) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write " + path);
  out << write_conllu(tb);
}

Treebank load_raw_corpus(std::string_view text) {
  Treebank tb;
  std::size_t pos = 0;
  while (pos < text.size()) {
    std::size_t end = text.find('\n', pos);
    if (end == std::string_view::npos) end = text.size();
    std::string_view line = text.substr(pos, end - pos);
    pos = end + 1;

    Sentence s;
    std::size_t i = 0;
    while (i < line.size()) {
      while (i < line.size() && std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      std::size_t start = i;
      while (i < line.size() && !std::isspace(static_cast<unsigned char>(line[i]))) ++i;
      if (i > start) {
        Token t;
        t.id = static_cast<int>(s.tokens.size()) + 1;
        t.form = std::string(line.substr(start, i - start));
        s.tokens.push_back(std::move(t));
      }
    }
    if (!s.tokens.empty()) tb.sentences.push_back(std::move(s));
  }
  if (tb.sentences.empty()) throw std::invalid_argument("raw corpus contains no sentences");
  return tb;
}

ValidationReport validate_heads(const std::vector<int>& heads) {
  const int n = static_cast<int>(heads.size());
  ValidationReport report;
  for (int i = 0; i < n; ++i) {
    if (heads[i] < 0 || heads[i] > n) throw std::invalid_argument("head index out of range");
    if (heads[i] == 0) ++report.root_children;
  }
  report.single_root = report.root_children == 1;

  // 0 = unvisited, 1 = on current path, 2 = reaches root
  std::vector<int> state(n + 1, 0);
  state[0] = 2;
  for (int start = 1; start <= n; ++start) {
    std::vector<int> path;
    int v = start;
    while (state[v] == 0) {
      state[v] = 1;
      path.push_back(v);
      v = heads[v - 1];
    }
    if (state[v] == 1 && report.cycle.empty()) {
      auto it = std::find(path.begin(), path.end(), v);
      report.cycle.assign(it, path.end());
      std::sort(report.cycle.begin(), report.cycle.end());
    }
    const int mark = state[v] == 2 ? 2 : 3;  // 3 = hangs off a cycle
    for (int p : path) state[p] = mark;
  }
  for (int i = 1; i <= n; ++i) {
    if (state[i] != 2) report.unreachable.push_back(i);
  }
  report.is_tree = report.unreachable.empty();
  return report;
}

ValidationReport validate_tree(const Sentence& s) { return validate_heads(s.heads()); }

}  // namespace jointud::conllu
