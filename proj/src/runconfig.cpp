#include "matmamba/runconfig.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "matmamba/checkpoint.hpp"

namespace matmamba {

namespace {

void check_keys(const nlohmann::json& j, const std::vector<std::string>& known,
                const std::string& where) {
  for (auto it = j.begin(); it != j.end(); ++it) {
    if (std::find(known.begin(), known.end(), it.key()) == known.end()) {
      throw SchemaError("unknown " + where + " key: " + it.key());
    }
  }
}

TrainConfig train_config_from_json(const nlohmann::json& j) {
  static const std::vector<std::string> known = {
      "g",           "lambdas",        "lr",
      "weight_decay", "beta1",         "beta2",
      "eps",         "warmup_steps",   "total_steps",
      "grad_clip",   "batch_size",     "seq_len",
      "label_smoothing", "seed",       "val_every",
      "val_batches", "checkpoint_every"};
  check_keys(j, known, "train config");
  TrainConfig t;
  try {
    if (j.contains("g")) t.g = j["g"].get<int64_t>();
    if (j.contains("lambdas")) t.lambdas = j["lambdas"].get<std::vector<double>>();
    if (j.contains("lr")) t.lr = j["lr"].get<double>();
    if (j.contains("weight_decay")) t.weight_decay = j["weight_decay"].get<double>();
    if (j.contains("beta1")) t.beta1 = j["beta1"].get<double>();
    if (j.contains("beta2")) t.beta2 = j["beta2"].get<double>();
    if (j.contains("eps")) t.eps = j["eps"].get<double>();
    if (j.contains("warmup_steps")) t.warmup_steps = j["warmup_steps"].get<int64_t>();
    if (j.contains("total_steps")) t.total_steps = j["total_steps"].get<int64_t>();
    if (j.contains("grad_clip")) t.grad_clip = j["grad_clip"].get<double>();
    if (j.contains("batch_size")) t.batch_size = j["batch_size"].get<int64_t>();
    if (j.contains("seq_len")) t.seq_len = j["seq_len"].get<int64_t>();
    if (j.contains("label_smoothing")) {
      t.label_smoothing = j["label_smoothing"].get<double>();
    }
    if (j.contains("seed")) t.seed = j["seed"].get<uint64_t>();
    if (j.contains("val_every")) t.val_every = j["val_every"].get<int64_t>();
    if (j.contains("val_batches")) t.val_batches = j["val_batches"].get<int64_t>();
    if (j.contains("checkpoint_every")) {
      t.checkpoint_every = j["checkpoint_every"].get<int64_t>();
    }
  } catch (const nlohmann::json::exception& e) {
    throw SchemaError(std::string("bad train config field: ") + e.what());
  }
  t.finalize();
  return t;
}

}  // namespace

RunConfig run_config_from_json(const std::string& text) {
  nlohmann::json j;
  try {
    j = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw FormatError(std::string("bad run config JSON: ") + e.what());
  }
  static const std::vector<std::string> known = {"model", "train", "data_path",
                                                 "out_dir"};
  check_keys(j, known, "run config");
  RunConfig rc;
  if (!j.contains("model")) throw SchemaError("run config needs a 'model' object");
  rc.model = model_config_from_json(j["model"].dump());
  if (j.contains("train")) {
    rc.train = train_config_from_json(j["train"]);
  } else {
    rc.train.finalize();
  }
  if (j.contains("data_path")) rc.data_path = j["data_path"].get<std::string>();
  if (j.contains("out_dir")) rc.out_dir = j["out_dir"].get<std::string>();
  return rc;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream f(path);
  if (!f) throw IoError("cannot open run config: " + path);
  std::string text((std::istreambuf_iterator<char>(f)),
                   std::istreambuf_iterator<char>());
  return run_config_from_json(text);
}

std::string run_config_to_json(const RunConfig& rc) {
  nlohmann::json j;
  j["model"] = nlohmann::json::parse(model_config_to_json(rc.model));
  nlohmann::json t;
  t["g"] = rc.train.g;
  t["lambdas"] = rc.train.lambdas;
  t["lr"] = rc.train.lr;
  t["weight_decay"] = rc.train.weight_decay;
  t["beta1"] = rc.train.beta1;
  t["beta2"] = rc.train.beta2;
  t["eps"] = rc.train.eps;
  t["warmup_steps"] = rc.train.warmup_steps;
  t["total_steps"] = rc.train.total_steps;
  t["grad_clip"] = rc.train.grad_clip;
  t["batch_size"] = rc.train.batch_size;
  t["seq_len"] = rc.train.seq_len;
  t["label_smoothing"] = rc.train.label_smoothing;
  t["seed"] = rc.train.seed;
  t["val_every"] = rc.train.val_every;
  t["val_batches"] = rc.train.val_batches;
  t["checkpoint_every"] = rc.train.checkpoint_every;
  j["train"] = t;
  j["data_path"] = rc.data_path;
  j["out_dir"] = rc.out_dir;
  return j.dump(2);
}

}  // namespace matmamba
