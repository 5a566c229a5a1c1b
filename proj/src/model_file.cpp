#include "jointud/model_file.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <istream>
#include <map>
#include <ostream>
#include <vector>

namespace jointud {

namespace {

constexpr char kMagic[4] = {'C', 'M', 'B', 'K'};

template <typename T>
void put_le(std::ostream& out, T value) {
  unsigned char bytes[sizeof(T)];
  std::memcpy(bytes, &value, sizeof(T));
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  out.write(reinterpret_cast<const char*>(bytes), sizeof(T));
}

template <typename T>
bool get_le(std::istream& in, T& value) {
  unsigned char bytes[sizeof(T)];
  if (!in.read(reinterpret_cast<char*>(bytes), sizeof(T))) return false;
  if constexpr (std::endian::native == std::endian::big) std::reverse(bytes, bytes + sizeof(T));
  std::memcpy(&value, bytes, sizeof(T));
  return true;
}

template <typename T>
T need_le(std::istream& in, const char* what) {
  T value{};
  if (!get_le(in, value)) throw ModelFormatError(std::string("truncated model file while reading ") + what);
  return value;
}

std::string need_bytes(std::istream& in, std::size_t n, const char* what) {
  std::string s(n, '\0');
  if (n > 0 && !in.read(s.data(), static_cast<std::streamsize>(n))) {
    throw ModelFormatError(std::string("truncated model file while reading ") + what);
  }
  return s;
}

nlohmann::json header_of(const Model& m) {
  nlohmann::json cfg = m.config;
  return {{"config", cfg},
          {"lexicon", m.lexicon},
          {"schema", m.schema},
          {"embedding",
           {{"words", m.word_index.words},
            {"trainable", m.word_index.trainable},
            {"dim", m.params[m.net.encoder.word_unknown].value.cols()}}},
          {"seed", m.seed},
          {"epochs_trained", m.epochs_trained},
          {"best_dev", m.best_dev}};
}

}  // namespace

void save_model(const Model& model, std::ostream& out) {
  out.write(kMagic, 4);
  put_le<std::uint16_t>(out, kModelFormatVersion);
  const std::string header = header_of(model).dump();
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(header.size()));
  out.write(header.data(), static_cast<std::streamsize>(header.size()));
  for (const auto& p : model.params) {
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(p.name.size()));
    out.write(p.name.data(), static_cast<std::streamsize>(p.name.size()));
    const Shape& shape = p.value.shape();
    put_le<std::uint8_t>(out, static_cast<std::uint8_t>(shape.size()));
    for (std::size_t e : shape) put_le<std::uint32_t>(out, static_cast<std::uint32_t>(e));
    for (float v : p.value.data()) put_le<float>(out, v);
  }
  if (!out) throw std::runtime_error("failed to write model");
}

void save_model_file(const Model& model, const std::string& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot open " + path + " for writing");
  save_model(model, out);
}

Model load_model(std::istream& in) {
  char magic[4];
  if (!in.read(magic, 4) || std::memcmp(magic, kMagic, 4) != 0) throw ModelFormatError("not a model file (bad magic)");
  const auto version = need_le<std::uint16_t>(in, "version");
  if (version != kModelFormatVersion) {
    throw ModelFormatError("unsupported model format version " + std::to_string(version) + " (expected " +
                           std::to_string(kModelFormatVersion) + ")");
  }
  const auto header_len = need_le<std::uint32_t>(in, "header length");
  nlohmann::json header;
  try {
    header = nlohmann::json::parse(need_bytes(in, header_len, "header"));
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(std::string("malformed model header: ") + e.what());
  }

  std::map<std::string, Tensor<float>> blobs;
  while (true) {
    std::uint32_t name_len = 0;
    if (!get_le(in, name_len)) break;
    std::string name = need_bytes(in, name_len, "parameter name");
    const auto rank = need_le<std::uint8_t>(in, "parameter rank");
    Shape shape(rank);
    for (auto& e : shape) e = need_le<std::uint32_t>(in, "parameter extent");
    Tensor<float> t(shape);
    for (float& v : t.storage()) v = need_le<float>(in, "parameter data");
    if (!blobs.emplace(name, std::move(t)).second) throw ModelFormatError("duplicate parameter " + name);
  }

  try {
    ModelConfig config = header.at("config").get<ModelConfig>();
    vocab::Lexicon lex = header.at("lexicon").get<vocab::Lexicon>();
    vocab::FeatureSchema schema = header.at("schema").get<vocab::FeatureSchema>();
    const auto& e = header.at("embedding");
    vocab::EmbeddingMatrix emb;
    e.at("words").get_to(emb.words);
    emb.trainable = e.at("trainable").get<bool>();
    const auto dim = e.at("dim").get<std::size_t>();
    emb.rows = Tensor<float>(Shape{emb.words.size(), dim});
    emb.unknown_vector.assign(dim, 0.0f);
    Model m = create_model(config, std::move(lex), std::move(schema), emb, header.at("seed").get<std::uint64_t>());
    m.epochs_trained = header.at("epochs_trained").get<std::size_t>();
    m.best_dev = header.at("best_dev").get<double>();
    if (blobs.size() != m.params.size()) {
      throw ModelFormatError("model file has " + std::to_string(blobs.size()) + " parameters, configuration needs " +
                             std::to_string(m.params.size()));
    }
    for (auto& p : m.params) {
      auto it = blobs.find(p.name);
      if (it == blobs.end()) throw ModelFormatError("missing parameter " + p.name);
      if (it->second.shape() != p.value.shape()) {
        throw ModelFormatError("parameter " + p.name + " has shape " + shape_str(it->second.shape()) + ", expected " +
                               shape_str(p.value.shape()));
      }
      p.value = std::move(it->second);
    }
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw ModelFormatError(std::string("malformed model header: ") + e.what());
  }
}

Model load_model_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot open model file " + path);
  return load_model(in);
}

}  // namespace jointud
