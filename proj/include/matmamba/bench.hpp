#pragma once

#include <vector>

#include "matmamba/model.hpp"

namespace matmamba {

struct BenchRow {
  int64_t m = 0;  // uniform granularity
  int64_t seq_len = 0;
  double items_per_sec = 0.0;  // tokens/sec (lm) or images/sec (vision)
  int64_t peak_bytes = 0;      // tensor-allocation watermark around the run
};

// Forward-pass throughput at each (granularity, seq_len) pair. Warmup runs
// excluded; the median of `runs` timed passes is reported.
std::vector<BenchRow> run_bench(const ModelConfig& cfg,
                                const ModelParams& params,
                                const std::vector<int64_t>& granularities,
                                const std::vector<int64_t>& seq_lens,
                                int64_t batch, int64_t runs, uint64_t seed);

}  // namespace matmamba
