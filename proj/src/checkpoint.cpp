#include "matmamba/checkpoint.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>
#include <map>

#include "json.hpp"

namespace matmamba {

namespace {

constexpr char kMagic[4] = {'M', 'M', 'C', 'K'};
constexpr uint32_t kVersion = 1;
constexpr uint8_t kDtypeF32 = 0;

uint32_t crc_table_entry(uint32_t i) {
  uint32_t c = i;
  for (int k = 0; k < 8; ++k) {
    c = (c & 1) ? 0xedb88320u ^ (c >> 1) : (c >> 1);
  }
  return c;
}

const uint32_t* crc_table() {
  static uint32_t table[256];
  static bool init = [] {
    for (uint32_t i = 0; i < 256; ++i) table[i] = crc_table_entry(i);
    return true;
  }();
  (void)init;
  return table;
}

}  // namespace

uint32_t crc32(const uint8_t* data, size_t len, uint32_t seed) {
  const uint32_t* table = crc_table();
  uint32_t c = seed ^ 0xffffffffu;
  for (size_t i = 0; i < len; ++i) {
    c = table[(c ^ data[i]) & 0xffu] ^ (c >> 8);
  }
  return c ^ 0xffffffffu;
}

namespace {

class Writer {
 public:
  void bytes(const void* p, size_t n) {
    const auto* b = static_cast<const uint8_t*>(p);
    buf_.insert(buf_.end(), b, b + n);
  }
  template <typename T>
  void pod(const T& v) {
    bytes(&v, sizeof(T));
  }
  void str(const std::string& s) {
    pod(static_cast<uint32_t>(s.size()));
    bytes(s.data(), s.size());
  }
  const std::vector<uint8_t>& data() const { return buf_; }

 private:
  std::vector<uint8_t> buf_;
};

class Reader {
 public:
  Reader(const uint8_t* p, size_t n) : p_(p), n_(n) {}
  void bytes(void* out, size_t n) {
    if (pos_ + n > n_) throw IntegrityError("checkpoint truncated");
    std::memcpy(out, p_ + pos_, n);
    pos_ += n;
  }
  template <typename T>
  T pod() {
    T v;
    bytes(&v, sizeof(T));
    return v;
  }
  std::string str() {
    const auto len = pod<uint32_t>();
    std::string s(len, '\0');
    bytes(s.data(), len);
    return s;
  }
  void skip(size_t n) {
    if (pos_ + n > n_) throw IntegrityError("checkpoint truncated");
    pos_ += n;
  }
  size_t pos() const { return pos_; }

 private:
  const uint8_t* p_;
  size_t n_;
  size_t pos_ = 0;
};

}  // namespace

std::string model_config_to_json(const ModelConfig& cfg) {
  nlohmann::json j;
  j["kind"] = cfg.kind == ModelKind::kLm ? "lm" : "vision";
  j["n_layers"] = cfg.n_layers;
  j["d_model"] = cfg.d_model;
  j["vocab_size"] = cfg.vocab_size;
  j["patch_size"] = cfg.patch_size;
  j["image_size"] = cfg.image_size;
  j["channels"] = cfg.channels;
  j["num_classes"] = cfg.num_classes;
  j["expand"] = cfg.expand;
  j["d_head"] = cfg.d_head;
  j["d_state"] = cfg.d_state;
  j["chunk"] = cfg.chunk;
  j["granularities"] = cfg.granularities;
  j["layer_dims"] = cfg.layer_dims;
  return j.dump();
}

ModelConfig model_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad config JSON: ") + e.what());
  }
  static const std::vector<std::string> known = {
      "kind",       "n_layers",  "d_model",     "vocab_size",
      "patch_size", "image_size", "channels",   "num_classes",
      "expand",     "d_head",    "d_state",     "chunk",
      "granularities", "layer_dims"};
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw SchemaError("unknown model config key: " + it.key());
    }
  }
  ModelConfig cfg;
  try {
    const std::string kind = j.at("kind").get<std::string>();
    if (kind == "lm") {
      cfg.kind = ModelKind::kLm;
    } else if (kind == "vision") {
      cfg.kind = ModelKind::kVision;
    } else {
      throw SchemaError("model kind must be 'lm' or 'vision'");
    }
    cfg.n_layers = j.at("n_layers").get<int64_t>();
    cfg.d_model = j.at("d_model").get<int64_t>();
    if (j.contains("vocab_size")) cfg.vocab_size = j["vocab_size"].get<int64_t>();
    if (j.contains("patch_size")) cfg.patch_size = j["patch_size"].get<int64_t>();
    if (j.contains("image_size")) cfg.image_size = j["image_size"].get<int64_t>();
    if (j.contains("channels")) cfg.channels = j["channels"].get<int64_t>();
    if (j.contains("num_classes")) cfg.num_classes = j["num_classes"].get<int64_t>();
    if (j.contains("expand")) cfg.expand = j["expand"].get<int64_t>();
    if (j.contains("d_head")) cfg.d_head = j["d_head"].get<int64_t>();
    if (j.contains("d_state")) cfg.d_state = j["d_state"].get<int64_t>();
    if (j.contains("chunk")) cfg.chunk = j["chunk"].get<int64_t>();
    if (j.contains("granularities")) {
      cfg.granularities = j["granularities"].get<std::vector<int64_t>>();
    }
    if (j.contains("layer_dims")) {
      cfg.layer_dims = j["layer_dims"].get<std::vector<int64_t>>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad model config field: ") + e.what());
  }
  cfg.finalize();
  return cfg;
}

void save_checkpoint(const ModelConfig& cfg, ModelParams& params,
                     const std::string& path) {
  Writer w;
  w.bytes(kMagic, 4);
  w.pod(kVersion);
  w.str(model_config_to_json(cfg));

  ModelParams& mut = params;
  auto named = named_parameters(cfg, mut);
  w.pod(static_cast<uint64_t>(named.size()));
  for (const NamedParam& p : named) {
    w.str(p.name);
    w.pod(kDtypeF32);
    const auto& shape = p.tensor->shape();
    w.pod(static_cast<uint32_t>(shape.size()));
    for (int64_t d : shape) w.pod(static_cast<uint64_t>(d));
    w.bytes(p.tensor->data(),
            static_cast<size_t>(p.tensor->numel()) * sizeof(float));
  }
  const uint32_t crc = crc32(w.data().data(), w.data().size());
  w.pod(crc);

  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write checkpoint: " + tmp);
    f.write(reinterpret_cast<const char*>(w.data().data()),
            static_cast<std::streamsize>(w.data().size()));
    if (!f) throw IoError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("cannot rename " + tmp + " to " + path);
  }
}

std::pair<ModelConfig, ModelParams> load_checkpoint(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open checkpoint: " + path);
  std::vector<uint8_t> blob((std::istreambuf_iterator<char>(f)),
                            std::istreambuf_iterator<char>());
  if (blob.size() < 4 + sizeof(uint32_t) * 2) {
    throw IntegrityError("checkpoint file too small");
  }
  uint32_t stored_crc = 0;
  std::memcpy(&stored_crc, blob.data() + blob.size() - sizeof(uint32_t),
              sizeof(uint32_t));
  const uint32_t actual =
      crc32(blob.data(), blob.size() - sizeof(uint32_t));
  if (stored_crc != actual) {
    throw IntegrityError("checkpoint checksum mismatch (corrupt or truncated)");
  }

  Reader r(blob.data(), blob.size() - sizeof(uint32_t));
  char magic[4];
  r.bytes(magic, 4);
  if (std::memcmp(magic, kMagic, 4) != 0) {
    throw FormatError("not a checkpoint file: " + path);
  }
  const auto version = r.pod<uint32_t>();
  if (version != kVersion) {
    throw FormatError("unsupported checkpoint version " +
                      std::to_string(version));
  }
  ModelConfig cfg = model_config_from_json(r.str());

  const auto count = r.pod<uint64_t>();
  struct Rec {
    std::vector<int64_t> shape;
    size_t data_pos;
  };
  std::map<std::string, Rec> recs;
  for (uint64_t i = 0; i < count; ++i) {
    const std::string name = r.str();
    if (recs.count(name)) throw SchemaError("duplicate tensor: " + name);
    const auto dtype = r.pod<uint8_t>();
    if (dtype != kDtypeF32) throw FormatError("unsupported dtype tag");
    const auto ndim = r.pod<uint32_t>();
    Rec rec;
    int64_t numel = 1;
    for (uint32_t d = 0; d < ndim; ++d) {
      rec.shape.push_back(static_cast<int64_t>(r.pod<uint64_t>()));
      numel *= rec.shape.back();
    }
    rec.data_pos = r.pos();
    r.skip(static_cast<size_t>(numel) * sizeof(float));
    recs.emplace(name, std::move(rec));
  }

  // Allocate tensors with the declared model structure, then fill by name.
  ModelParams params = init_params(cfg, /*seed=*/0);
  auto named = named_parameters(cfg, params);
  if (named.size() != recs.size()) {
    throw SchemaError("checkpoint tensor set does not match the model");
  }
  for (NamedParam& p : named) {
    auto it = recs.find(p.name);
    if (it == recs.end()) throw SchemaError("missing tensor: " + p.name);
    if (it->second.shape != p.tensor->shape()) {
      throw SchemaError("shape mismatch for tensor: " + p.name);
    }
    std::memcpy(p.tensor->data(), blob.data() + it->second.data_pos,
                static_cast<size_t>(p.tensor->numel()) * sizeof(float));
  }
  return {cfg, std::move(params)};
}

}  // namespace matmamba
