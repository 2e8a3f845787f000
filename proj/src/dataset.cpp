#include "matmamba/dataset.hpp"

#include <cstring>
#include <fstream>

namespace matmamba {

namespace {

constexpr char kImageMagic[4] = {'M', 'M', 'I', 'D'};
constexpr uint32_t kImageVersion = 1;

template <typename T>
void write_pod(std::ostream& os, const T& v) {
  os.write(reinterpret_cast<const char*>(&v), sizeof(T));
}

template <typename T>
bool read_pod(std::istream& is, T* v) {
  is.read(reinterpret_cast<char*>(v), sizeof(T));
  return static_cast<bool>(is);
}

}  // namespace

std::vector<uint8_t> ingest_text(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open text file: " + path);
  std::vector<uint8_t> bytes((std::istreambuf_iterator<char>(f)),
                             std::istreambuf_iterator<char>());
  if (bytes.empty()) throw FormatError("text file is empty: " + path);
  return bytes;
}

TextData::TextData(std::vector<uint8_t> tokens, double val_fraction)
    : tokens_(std::move(tokens)) {
  const auto n = static_cast<int64_t>(tokens_.size());
  int64_t val = static_cast<int64_t>(static_cast<double>(n) * val_fraction);
  if (val < 1) val = 1;
  train_size_ = n - val;
  if (train_size_ < 2) throw FormatError("text corpus too small to split");
}

LmBatch TextData::sample_train(Rng& rng, int64_t batch, int64_t seq_len) const {
  if (train_size_ <= seq_len + 1) {
    throw RangeError("training split shorter than one sequence window");
  }
  LmBatch out;
  out.b = batch;
  out.l = seq_len;
  out.inputs.resize(static_cast<size_t>(batch * seq_len));
  out.targets.resize(static_cast<size_t>(batch * seq_len));
  for (int64_t bi = 0; bi < batch; ++bi) {
    const int64_t start = rng.uniform_int(train_size_ - seq_len - 1);
    for (int64_t t = 0; t < seq_len; ++t) {
      out.inputs[static_cast<size_t>(bi * seq_len + t)] =
          tokens_[static_cast<size_t>(start + t)];
      out.targets[static_cast<size_t>(bi * seq_len + t)] =
          tokens_[static_cast<size_t>(start + t + 1)];
    }
  }
  return out;
}

bool TextData::val_batch(int64_t k, int64_t batch, int64_t seq_len,
                         LmBatch* out) const {
  const int64_t avail = (val_size() - 1) / seq_len;  // windows in the split
  if ((k + 1) * batch > avail) return false;
  out->b = batch;
  out->l = seq_len;
  out->inputs.resize(static_cast<size_t>(batch * seq_len));
  out->targets.resize(static_cast<size_t>(batch * seq_len));
  for (int64_t bi = 0; bi < batch; ++bi) {
    const int64_t start = train_size_ + (k * batch + bi) * seq_len;
    for (int64_t t = 0; t < seq_len; ++t) {
      out->inputs[static_cast<size_t>(bi * seq_len + t)] =
          tokens_[static_cast<size_t>(start + t)];
      out->targets[static_cast<size_t>(bi * seq_len + t)] =
          tokens_[static_cast<size_t>(start + t + 1)];
    }
  }
  return true;
}

Tensor ImageDataset::decode(const std::vector<int64_t>& indices, float mean,
                            float stddev) const {
  const int64_t b = static_cast<int64_t>(indices.size());
  Tensor out = Tensor::zeros({b, h, w, c});
  const int64_t rp = record_pixels();
  float* dst = out.data();
  for (int64_t i = 0; i < b; ++i) {
    const int64_t idx = indices[static_cast<size_t>(i)];
    if (idx < 0 || idx >= count()) throw IndexError("image index out of range");
    const uint8_t* src = pixels.data() + idx * rp;
    float* drow = dst + i * rp;
    for (int64_t j = 0; j < rp; ++j) {
      drow[j] = (static_cast<float>(src[j]) / 255.0f - mean) / stddev;
    }
  }
  return out;
}

ImageDataset ingest_images(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw IoError("cannot open image dataset: " + path);
  char magic[4];
  f.read(magic, 4);
  if (!f || std::memcmp(magic, kImageMagic, 4) != 0) {
    throw FormatError("bad image dataset magic: " + path);
  }
  uint32_t version = 0, h = 0, w = 0, c = 0;
  uint64_t count = 0;
  if (!read_pod(f, &version) || version != kImageVersion) {
    throw FormatError("unsupported image dataset version");
  }
  if (!read_pod(f, &h) || !read_pod(f, &w) || !read_pod(f, &c) ||
      !read_pod(f, &count)) {
    throw FormatError("truncated image dataset header");
  }
  if (h == 0 || w == 0 || c == 0) {
    throw FormatError("image dataset header has zero dimensions");
  }
  ImageDataset ds;
  ds.h = h;
  ds.w = w;
  ds.c = c;
  const uint64_t rp = static_cast<uint64_t>(h) * w * c;
  ds.labels.resize(count);
  ds.pixels.resize(count * rp);
  for (uint64_t i = 0; i < count; ++i) {
    uint16_t label = 0;
    if (!read_pod(f, &label)) {
      throw FormatError("image dataset payload shorter than declared count");
    }
    ds.labels[i] = label;
    f.read(reinterpret_cast<char*>(ds.pixels.data() + i * rp),
           static_cast<std::streamsize>(rp));
    if (!f) {
      throw FormatError("image dataset payload shorter than declared count");
    }
  }
  // Anything left over means the header undercounts.
  f.peek();
  if (!f.eof()) throw FormatError("image dataset payload larger than declared");
  return ds;
}

void write_image_dataset(const std::string& path, const ImageDataset& ds) {
  if (static_cast<int64_t>(ds.pixels.size()) !=
      ds.count() * ds.record_pixels()) {
    throw FormatError("image dataset pixels do not match label count");
  }
  const std::string tmp = path + ".tmp";
  {
    std::ofstream f(tmp, std::ios::binary | std::ios::trunc);
    if (!f) throw IoError("cannot write image dataset: " + tmp);
    f.write(kImageMagic, 4);
    write_pod(f, kImageVersion);
    write_pod(f, static_cast<uint32_t>(ds.h));
    write_pod(f, static_cast<uint32_t>(ds.w));
    write_pod(f, static_cast<uint32_t>(ds.c));
    write_pod(f, static_cast<uint64_t>(ds.count()));
    const int64_t rp = ds.record_pixels();
    for (int64_t i = 0; i < ds.count(); ++i) {
      write_pod(f, ds.labels[static_cast<size_t>(i)]);
      f.write(reinterpret_cast<const char*>(ds.pixels.data() + i * rp),
              static_cast<std::streamsize>(rp));
    }
    if (!f) throw IoError("short write to " + tmp);
  }
  if (std::rename(tmp.c_str(), path.c_str()) != 0) {
    throw IoError("cannot rename " + tmp + " to " + path);
  }
}

}  // namespace matmamba
