#pragma once

#include <fstream>
#include <string>
#include <vector>

#include "matmamba/train.hpp"

namespace matmamba {

// Newline-delimited JSON metrics. Only deterministic fields go to the file
// (step, lr, losses); wall time is streamed to the console sink so seeded
// runs produce byte-identical metrics files.
class JsonlMetricsWriter : public MetricsSink {
 public:
  explicit JsonlMetricsWriter(const std::string& path, bool echo = false);
  void on_step(const StepRecord& rec) override;
  void on_val(const ValRecord& rec) override;

 private:
  std::ofstream out_;
  bool echo_;
};

struct MetricsLine {
  bool is_val = false;
  int64_t step = 0;
  double lr = 0.0;
  std::vector<double> losses;
};

// Parses a metrics file; throws FormatError on any unparsable line.
std::vector<MetricsLine> parse_metrics(const std::string& path);

}  // namespace matmamba
