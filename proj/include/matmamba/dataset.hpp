#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "matmamba/tensor.hpp"

namespace matmamba {

// Byte-level text ingestion: one token per byte, identity mapping.
std::vector<uint8_t> ingest_text(const std::string& path);

struct LmBatch {
  std::vector<int32_t> inputs;   // b * l
  std::vector<int32_t> targets;  // b * l, shifted by one
  int64_t b = 0;
  int64_t l = 0;
};

// Token stream with a fixed validation split (final 5%, never shuffled).
class TextData {
 public:
  explicit TextData(std::vector<uint8_t> tokens, double val_fraction = 0.05);

  int64_t train_size() const { return train_size_; }
  int64_t val_size() const {
    return static_cast<int64_t>(tokens_.size()) - train_size_;
  }

  // Random training windows, deterministic under the caller's RNG.
  LmBatch sample_train(Rng& rng, int64_t batch, int64_t seq_len) const;
  // k-th fixed validation batch; returns false past the end of the split.
  bool val_batch(int64_t k, int64_t batch, int64_t seq_len, LmBatch* out) const;

 private:
  std::vector<uint8_t> tokens_;
  int64_t train_size_ = 0;
};

// Fixed-size labeled images: header (H, W, C, count), then per record a
// uint16 label followed by H*W*C raw bytes.
struct ImageDataset {
  int64_t h = 0;
  int64_t w = 0;
  int64_t c = 0;
  std::vector<uint16_t> labels;
  std::vector<uint8_t> pixels;  // count * h * w * c

  int64_t count() const { return static_cast<int64_t>(labels.size()); }
  int64_t record_pixels() const { return h * w * c; }

  // Pixels scaled to [0,1] then normalized by (x - mean) / stddev.
  Tensor decode(const std::vector<int64_t>& indices, float mean,
                float stddev) const;
};

ImageDataset ingest_images(const std::string& path);
void write_image_dataset(const std::string& path, const ImageDataset& ds);

}  // namespace matmamba
