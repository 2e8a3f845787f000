#include <cinttypes>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "matmamba/bench.hpp"
#include "matmamba/checkpoint.hpp"
#include "matmamba/elastic.hpp"
#include "matmamba/metrics.hpp"
#include "matmamba/runconfig.hpp"
#include "matmamba/train.hpp"

namespace mm = matmamba;

namespace {

std::vector<int64_t> parse_dims(const std::string& csv) {
  std::vector<int64_t> out;
  std::stringstream ss(csv);
  std::string item;
  while (std::getline(ss, item, ',')) {
    if (item.empty()) continue;
    out.push_back(std::stoll(item));
  }
  if (out.empty()) throw mm::RangeError("empty dims list");
  return out;
}

mm::GranularityConfig resolve_gc(const mm::ModelConfig& cfg,
                                 const std::string& dims_csv,
                                 int64_t granularity) {
  if (!dims_csv.empty() && granularity > 0) {
    throw mm::RangeError("--dims and --granularity conflict; pass one");
  }
  if (!dims_csv.empty()) {
    mm::GranularityConfig gc = parse_dims(dims_csv);
    if (static_cast<int64_t>(gc.size()) != cfg.n_layers) {
      std::ostringstream os;
      os << "--dims has " << gc.size() << " entries but the model has "
         << cfg.n_layers << " layers";
      throw mm::RangeError(os.str());
    }
    return gc;
  }
  if (granularity > 0) return mm::uniform_gc(cfg, granularity);
  return cfg.layer_dims;  // full materialized width
}

int cmd_count_params(const std::string& preset, const std::string& config_path,
                     int64_t block_m) {
  mm::ModelConfig cfg;
  if (!preset.empty()) {
    cfg = mm::model_preset(preset);
  } else if (!config_path.empty()) {
    cfg = mm::load_run_config(config_path).model;
  } else {
    throw mm::RangeError("count-params needs --preset or --config");
  }
  mm::ParamCount pc = mm::model_param_count(cfg);
  std::cout << "embed " << pc.embed << "\n";
  std::cout << "non-embed " << pc.non_embed << "\n";
  if (block_m > 0) {
    const int64_t wo =
        mm::block_param_count(cfg.block(), block_m, mm::CountMode::kWeightsOnly);
    const int64_t full =
        mm::block_param_count(cfg.block(), block_m, mm::CountMode::kFull);
    std::cout << "block m=" << block_m << " weights-only " << wo << "\n";
    std::cout << "block m=" << block_m << " full " << full << "\n";
  }
  return 0;
}

int cmd_train(const std::string& config_path, int64_t seed, int64_t steps,
              const std::string& out_dir) {
  mm::RunConfig rc = mm::load_run_config(config_path);
  if (seed >= 0) rc.train.seed = static_cast<uint64_t>(seed);
  if (steps > 0) rc.train.total_steps = steps;
  if (!out_dir.empty()) rc.out_dir = out_dir;
  std::filesystem::create_directories(rc.out_dir);

  if (rc.model.kind != mm::ModelKind::kLm) {
    throw mm::StateError("train: only lm runs are driven from the CLI");
  }
  mm::TextData data(mm::ingest_text(rc.data_path));
  mm::ModelParams params = mm::init_params(rc.model, rc.train.seed);
  mm::JsonlMetricsWriter sink(rc.out_dir + "/metrics.jsonl", /*echo=*/true);
  const std::string ckpt_path = rc.out_dir + "/model.ckpt";
  mm::TrainReport report =
      mm::train_lm(rc.model, params, data, rc.train, sink, [&](int64_t) {
        mm::save_checkpoint(rc.model, params, ckpt_path);
      });
  std::cout << "trained " << report.steps_run << " steps\n";
  for (size_t i = 0; i < report.final_val.size(); ++i) {
    std::cout << "val m=" << rc.model.granularities[i] << " initial "
              << report.initial_val[i] << " final " << report.final_val[i]
              << "\n";
  }
  std::cout << "checkpoint " << ckpt_path << "\n";
  return 0;
}

int cmd_eval(const std::string& ckpt, const std::string& data_path,
             const std::string& dims_csv, int64_t granularity, int64_t batch,
             int64_t seq_len) {
  auto [cfg, params] = mm::load_checkpoint(ckpt);
  mm::GranularityConfig gc = resolve_gc(cfg, dims_csv, granularity);
  mm::TextData data(mm::ingest_text(data_path));
  const double loss = mm::eval_lm_loss(cfg, params, data, gc, batch, seq_len,
                                       1'000'000);
  std::cout << "val-loss " << loss << "\n";
  return 0;
}

int cmd_extract(const std::string& ckpt, const std::string& dims_csv,
                const std::string& out_path) {
  auto [cfg, params] = mm::load_checkpoint(ckpt);
  mm::GranularityConfig gc = parse_dims(dims_csv);
  if (static_cast<int64_t>(gc.size()) != cfg.n_layers) {
    std::ostringstream os;
    os << "--dims has " << gc.size() << " entries but the model has "
       << cfg.n_layers << " layers";
    throw mm::RangeError(os.str());
  }
  auto violations = mm::validate_gc(cfg, gc);
  if (!violations.empty()) {
    std::ostringstream os;
    os << "invalid granularity config:";
    for (const auto& v : violations) os << "\n  " << v;
    throw mm::GranularityError(os.str());
  }
  auto [sub_cfg, sub_params] = mm::extract_submodel(cfg, params, gc);
  mm::save_checkpoint(sub_cfg, sub_params, out_path);
  mm::ParamCount pc = mm::model_param_count(sub_cfg);
  std::cout << "extracted " << out_path << " params "
            << (pc.embed + pc.non_embed) << "\n";
  return 0;
}

int cmd_generate(const std::string& ckpt, const std::string& prompt,
                 int64_t max_new, const std::string& dims_csv,
                 int64_t granularity, double temperature, bool greedy,
                 int64_t seed) {
  auto [cfg, params] = mm::load_checkpoint(ckpt);
  mm::GranularityConfig gc = resolve_gc(cfg, dims_csv, granularity);
  std::vector<int32_t> tokens;
  for (unsigned char ch : prompt) tokens.push_back(static_cast<int32_t>(ch));
  mm::GenerateOptions opts;
  opts.max_new = max_new;
  opts.greedy = greedy;
  opts.temperature = temperature;
  opts.seed = static_cast<uint64_t>(seed < 0 ? 0 : seed);
  std::vector<int32_t> out = mm::generate(cfg, params, tokens, gc, opts);
  std::string text;
  for (int32_t t : out) text.push_back(static_cast<char>(t & 0xff));
  std::cout << text << "\n";
  return 0;
}

int cmd_sweep(const std::string& ckpt, const std::string& data_path,
              int64_t samples, const std::string& ratios_csv, int64_t seed,
              int64_t batch, int64_t seq_len, int64_t max_batches) {
  auto [cfg, params] = mm::load_checkpoint(ckpt);
  mm::TextData data(mm::ingest_text(data_path));
  std::vector<mm::SubmodelSpec> specs;
  for (int64_t m : cfg.granularities) {
    specs.push_back(mm::make_submodel_spec(cfg, mm::uniform_gc(cfg, m)));
  }
  if (!ratios_csv.empty()) {
    std::stringstream ss(ratios_csv);
    std::string item;
    int64_t k = 0;
    while (std::getline(ss, item, ',')) {
      const double ratio = std::stod(item);
      specs.push_back(mm::make_submodel_spec(
          cfg, mm::sample_gc(cfg, ratio, static_cast<uint64_t>(seed) + k)));
      ++k;
    }
  }
  for (int64_t i = 0; i < samples; ++i) {
    const double ratio = 0.25 + 0.75 * (static_cast<double>(i) /
                                        std::max<int64_t>(1, samples - 1));
    specs.push_back(mm::make_submodel_spec(
        cfg, mm::sample_gc(cfg, ratio, static_cast<uint64_t>(seed) + 1000 + i)));
  }
  auto rows =
      mm::pareto_sweep(cfg, params, data, specs, batch, seq_len, max_batches);
  std::cout << "ratio,params,loss,dims\n";
  for (const auto& row : rows) {
    std::cout << row.ratio << ',' << row.params << ',';
    if (row.error.empty()) {
      std::cout << row.loss;
    } else {
      std::cout << "error:" << row.error;
    }
    std::cout << ',';
    for (size_t i = 0; i < row.gc.size(); ++i) {
      std::cout << (i ? " " : "") << row.gc[i];
    }
    std::cout << "\n";
  }
  return 0;
}

int cmd_retrieve(const std::string& ckpt, const std::string& db_path,
                 const std::string& query_path, int64_t granularity,
                 const std::string& dims_csv) {
  auto [cfg, params] = mm::load_checkpoint(ckpt);
  mm::ImageDataset db = mm::ingest_images(db_path);
  mm::ImageDataset queries = mm::ingest_images(query_path);
  mm::RetrievalIndex index =
      mm::build_index(cfg, params, db, cfg.layer_dims);
  mm::GranularityConfig gc = resolve_gc(cfg, dims_csv, granularity);
  mm::RetrievalResult res = mm::query_1nn(index, cfg, params, queries, gc);
  int64_t correct = 0;
  for (size_t i = 0; i < res.predicted.size(); ++i) {
    if (res.predicted[i] == static_cast<int32_t>(queries.labels[i])) ++correct;
  }
  std::cout << "queries " << res.predicted.size() << "\n";
  std::cout << "label-accuracy "
            << static_cast<double>(correct) /
                   static_cast<double>(res.predicted.size())
            << "\n";
  std::cout << "agreement-with-full " << res.agreement_with_full << "\n";
  return 0;
}

int cmd_bench(const std::string& ckpt, const std::string& config_path,
              const std::string& dims_csv, const std::string& seq_lens_csv,
              int64_t batch, int64_t runs, int64_t seed) {
  mm::ModelConfig cfg;
  mm::ModelParams params;
  if (!ckpt.empty()) {
    std::tie(cfg, params) = mm::load_checkpoint(ckpt);
  } else if (!config_path.empty()) {
    cfg = mm::load_run_config(config_path).model;
    params = mm::init_params(cfg, static_cast<uint64_t>(seed < 0 ? 0 : seed));
  } else {
    throw mm::RangeError("bench needs --ckpt or --config");
  }
  std::vector<int64_t> gran =
      dims_csv.empty() ? cfg.granularities : parse_dims(dims_csv);
  std::vector<int64_t> seq_lens = parse_dims(seq_lens_csv);
  auto rows = mm::run_bench(cfg, params, gran, seq_lens, batch, runs,
                            static_cast<uint64_t>(seed < 0 ? 0 : seed));
  std::cout << "granularity,seq_len,items_per_sec,peak_bytes\n";
  for (const auto& row : rows) {
    std::cout << row.m << ',' << row.seq_len << ',' << row.items_per_sec << ','
              << row.peak_bytes << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"nested state space model toolkit"};
  app.require_subcommand(1);

  std::string preset, config_path, ckpt, data_path, out_path, dims_csv,
      prompt, ratios_csv, seq_lens_csv, db_path, query_path;
  int64_t seed = -1, steps = 0, block_m = 0, granularity = 0, max_new = 64,
          batch = 8, seq_len = 128, samples = 0, max_batches = 8, runs = 5;
  double temperature = 1.0;
  bool greedy = false;

  auto* c_count = app.add_subcommand("count-params", "exact parameter counts");
  c_count->add_option("--preset", preset,
                      "lm-130m|lm-370m|lm-790m|lm-1.4b|vision-35m|vision-135m");
  c_count->add_option("--config", config_path, "run config JSON");
  c_count->add_option("--block-m", block_m, "also print per-block counts at m");

  auto* c_train = app.add_subcommand("train", "joint multi-granularity training");
  c_train->add_option("--config", config_path, "run config JSON")->required();
  c_train->add_option("--seed", seed, "RNG seed override");
  c_train->add_option("--steps", steps, "step count override");
  c_train->add_option("--out", out_path, "output directory override");

  auto* c_eval = app.add_subcommand("eval", "validation loss at a granularity");
  c_eval->add_option("--ckpt", ckpt)->required();
  c_eval->add_option("--data", data_path)->required();
  c_eval->add_option("--dims", dims_csv, "per-layer dims, comma separated");
  c_eval->add_option("--granularity", granularity, "uniform granularity");
  c_eval->add_option("--batch", batch);
  c_eval->add_option("--seq-len", seq_len);

  auto* c_extract = app.add_subcommand("extract", "materialize a submodel");
  c_extract->add_option("--ckpt", ckpt)->required();
  c_extract->add_option("--dims", dims_csv, "per-layer dims, comma separated")
      ->required();
  c_extract->add_option("--out", out_path)->required();

  auto* c_gen = app.add_subcommand("generate", "autoregressive sampling");
  c_gen->add_option("--ckpt", ckpt)->required();
  c_gen->add_option("--prompt", prompt)->required();
  c_gen->add_option("--max-new", max_new);
  c_gen->add_option("--dims", dims_csv);
  c_gen->add_option("--granularity", granularity);
  c_gen->add_option("--temperature", temperature);
  c_gen->add_flag("--greedy", greedy, "deterministic argmax decoding");
  c_gen->add_option("--seed", seed);

  auto* c_sweep = app.add_subcommand("sweep", "loss-vs-compute table");
  c_sweep->add_option("--ckpt", ckpt)->required();
  c_sweep->add_option("--data", data_path)->required();
  c_sweep->add_option("--samples", samples, "sampled mix'n'match configs");
  c_sweep->add_option("--ratios", ratios_csv, "target ratios, comma separated");
  c_sweep->add_option("--seed", seed);
  c_sweep->add_option("--batch", batch);
  c_sweep->add_option("--seq-len", seq_len);
  c_sweep->add_option("--max-batches", max_batches);

  auto* c_retr = app.add_subcommand("retrieve", "1-NN retrieval harness");
  c_retr->add_option("--ckpt", ckpt)->required();
  c_retr->add_option("--db", db_path)->required();
  c_retr->add_option("--query", query_path)->required();
  c_retr->add_option("--granularity", granularity);
  c_retr->add_option("--dims", dims_csv);

  auto* c_bench = app.add_subcommand("bench", "forward throughput table");
  c_bench->add_option("--ckpt", ckpt);
  c_bench->add_option("--config", config_path);
  c_bench->add_option("--dims", dims_csv, "uniform granularities to time");
  c_bench->add_option("--seq-lens", seq_lens_csv)->required();
  c_bench->add_option("--batch", batch);
  c_bench->add_option("--runs", runs);
  c_bench->add_option("--seed", seed);

  CLI11_PARSE(app, argc, argv);

  try {
    if (c_count->parsed()) return cmd_count_params(preset, config_path, block_m);
    if (c_train->parsed()) return cmd_train(config_path, seed, steps, out_path);
    if (c_eval->parsed()) {
      return cmd_eval(ckpt, data_path, dims_csv, granularity, batch, seq_len);
    }
    if (c_extract->parsed()) return cmd_extract(ckpt, dims_csv, out_path);
    if (c_gen->parsed()) {
      return cmd_generate(ckpt, prompt, max_new, dims_csv, granularity,
                          temperature, greedy, seed);
    }
    if (c_sweep->parsed()) {
      return cmd_sweep(ckpt, data_path, samples, ratios_csv, seed, batch,
                       seq_len, max_batches);
    }
    if (c_retr->parsed()) {
      return cmd_retrieve(ckpt, db_path, query_path, granularity, dims_csv);
    }
    if (c_bench->parsed()) {
      return cmd_bench(ckpt, config_path, dims_csv, seq_lens_csv, batch, runs,
                       seed);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return 1;
  }
  return 1;
}
