#include "matmamba/metrics.hpp"

#include <cinttypes>
#include <cstdio>
#include <iostream>

#include "json.hpp"

namespace matmamba {

namespace {

// Shortest round-trip decimal so rewritten files stay byte-stable.
std::string fmt_double(double v) {
  char buf[48];
  std::snprintf(buf, sizeof(buf), "%.17g", v);
  double back = 0.0;
  std::sscanf(buf, "%lf", &back);
  for (int prec = 1; prec < 17; ++prec) {
    char t[48];
    std::snprintf(t, sizeof(t), "%.*g", prec, v);
    std::sscanf(t, "%lf", &back);
    if (back == v) return t;
  }
  return buf;
}

std::string losses_json(const std::vector<double>& losses) {
  std::string s = "[";
  for (size_t i = 0; i < losses.size(); ++i) {
    if (i) s += ",";
    s += fmt_double(losses[i]);
  }
  s += "]";
  return s;
}

}  // namespace

JsonlMetricsWriter::JsonlMetricsWriter(const std::string& path, bool echo)
    : out_(path, std::ios::trunc), echo_(echo) {
  if (!out_) throw IoError("cannot open metrics file: " + path);
}

void JsonlMetricsWriter::on_step(const StepRecord& rec) {
  out_ << "{\"step\":" << rec.step << ",\"lr\":" << fmt_double(rec.lr)
       << ",\"losses\":" << losses_json(rec.losses) << "}\n";
  out_.flush();
  if (echo_) {
    std::cout << "step " << rec.step << "  lr " << rec.lr << "  losses";
    for (double l : rec.losses) std::cout << ' ' << l;
    std::cout << "  (" << rec.wall_ms << " ms)\n";
  }
}

void JsonlMetricsWriter::on_val(const ValRecord& rec) {
  out_ << "{\"step\":" << rec.step
       << ",\"val_losses\":" << losses_json(rec.losses) << "}\n";
  out_.flush();
  if (echo_) {
    std::cout << "val @ step " << rec.step << " losses";
    for (double l : rec.losses) std::cout << ' ' << l;
    std::cout << '\n';
  }
}

std::vector<MetricsLine> parse_metrics(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open metrics file: " + path);
  std::vector<MetricsLine> out;
  std::string line;
  size_t lineno = 0;
  while (std::getline(f, line)) {
    ++lineno;
    if (line.empty()) continue;
    nlohmann::json j;
    try {
      j = nlohmann::json::parse(line);
    } catch (const nlohmann::json::exception& e) {
      throw FormatError("metrics line " + std::to_string(lineno) +
                        " unparsable: " + e.what());
    }
    MetricsLine ml;
    ml.step = j.at("step").get<int64_t>();
    if (j.contains("val_losses")) {
      ml.is_val = true;
      ml.losses = j["val_losses"].get<std::vector<double>>();
    } else {
      ml.lr = j.at("lr").get<double>();
      ml.losses = j.at("losses").get<std::vector<double>>();
    }
    out.push_back(std::move(ml));
  }
  return out;
}

}  // namespace matmamba
