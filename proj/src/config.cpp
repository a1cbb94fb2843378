#include "dud/config.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>

namespace dud {

using nlohmann::json;

void RunConfig::validate() const {
  dataset.validate();
  vae.validate();
  unet.validate();
  if (noise_sigma && !(*noise_sigma > 0.0)) throw ConfigError("noise_model.sigma", "must be > 0");
  if (!noise_sigma && !(dataset.noise_sigma > 0.0)) {
    throw ConfigError("noise_model.sigma", "required (dataset.noise_sigma is 0)");
  }
  if (loss_kinds.empty()) throw ConfigError("direct.loss_kinds", "at least one loss kind required");
  const auto& t = training;
  if (t.batch_size < 1) throw ConfigError("training.batch_size", "must be positive");
  if (t.patch_size < 1) throw ConfigError("training.patch_size", "must be positive");
  if (t.patch_size % unet.size_multiple() != 0) {
    throw ConfigError("training.patch_size", "must be divisible by 2^direct.unet.depth = " + std::to_string(unet.size_multiple()));
  }
  if (t.patch_size % vae.size_multiple() != 0) {
    throw ConfigError("training.patch_size", "must be divisible by 2^vae.levels = " + std::to_string(vae.size_multiple()));
  }
  if (t.total_steps < 1) throw ConfigError("training.total_steps", "must be positive");
  if (t.validation_interval < 1) throw ConfigError("training.validation_interval", "must be positive");
  if (!(t.lr_vae >= 0.0)) throw ConfigError("training.lr_vae", "must be >= 0");
  if (!(t.lr_direct >= 0.0)) throw ConfigError("training.lr_direct", "must be >= 0");
  if (!(t.lr_factor > 0.0 && t.lr_factor < 1.0)) throw ConfigError("training.lr_factor", "must be in (0, 1)");
  if (!(t.patience_epochs > 0.0)) throw ConfigError("training.patience_epochs", "must be positive");
  if (!(t.grad_clip > 0.0)) throw ConfigError("training.grad_clip", "must be positive");
  if (!(t.kl_weight >= 0.0)) throw ConfigError("training.kl_weight", "must be >= 0");
  if (!(t.kl_warmup_fraction >= 0.0 && t.kl_warmup_fraction <= 1.0)) {
    throw ConfigError("training.kl_warmup_fraction", "must be in [0, 1]");
  }
  if (inference.n_samples < 1) throw ConfigError("inference.n_samples", "must be >= 1");
  if (inference.aggregator != "mean" && inference.aggregator != "median") {
    throw ConfigError("inference.aggregator", "must be 'mean' or 'median'");
  }
  for (int n : bench.n_list) {
    if (n < 1) throw ConfigError("bench.n_list", "entries must be >= 1");
  }
}

void to_json(json& j, const RunConfig& c) {
  json kinds = json::array();
  for (auto k : c.loss_kinds) kinds.push_back(to_string(k));
  const auto& t = c.training;
  j = {{"dataset", c.dataset},
       {"dataset_path", c.dataset_path},
       {"noise_model", {{"sigma", c.raw_noise_sigma()}}},
       {"vae", c.vae},
       {"direct", {{"unet", c.unet}, {"loss_kinds", kinds}}},
       {"training",
        {{"batch_size", t.batch_size},
         {"patch_size", t.patch_size},
         {"total_steps", t.total_steps},
         {"validation_interval", t.validation_interval},
         {"lr_vae", t.lr_vae},
         {"lr_direct", t.lr_direct},
         {"lr_factor", t.lr_factor},
         {"patience_epochs", t.patience_epochs},
         {"plateau_threshold", t.plateau_threshold},
         {"min_lr", t.min_lr},
         {"grad_clip", t.grad_clip},
         {"kl_weight", t.kl_weight},
         {"kl_warmup_fraction", t.kl_warmup_fraction}}},
       {"seeds",
        {{"init", c.seeds.init}, {"train", c.seeds.train}, {"validation", c.seeds.validation}, {"inference", c.seeds.inference}}},
       {"inference",
        {{"n_samples", c.inference.n_samples},
         {"aggregator", c.inference.aggregator},
         {"median_memory_budget_mb", c.inference.median_memory_budget_mb}}},
       {"bench", {{"n_list", c.bench.n_list}, {"include_1000", c.bench.include_1000}}},
       {"output_dir", c.output_dir}};
}

namespace {

template <class T>
void read(const json& j, const char* key, T& out, const std::string& path) {
  if (!j.contains(key)) return;
  try {
    out = j.at(key).get<T>();
  } catch (const json::exception& e) {
    throw ConfigError(path + key, e.what());
  }
}

const json& section(const json& j, const char* key) {
  static const json empty = json::object();
  if (!j.contains(key)) return empty;
  if (!j.at(key).is_object()) throw ConfigError(key, "expected an object");
  return j.at(key);
}

}  // namespace

namespace {

void merge_schema(json& schema, const json& sample) {
  for (const auto& [key, value] : sample.items()) {
    if (value.is_object()) {
      merge_schema(schema[key], value);
    } else if (!schema.contains(key)) {
      schema[key] = nullptr;
    }
  }
}

const json& config_schema() {
  static const json schema = [] {
    json s = json::object();
    RunConfig c;
    json j;
    to_json(j, c);
    merge_schema(s, j);
    c.dataset.kind = SignalKind::blobs;
    to_json(j, c);
    merge_schema(s, j);
    return s;
  }();
  return schema;
}

void reject_unknown_keys(const json& j, const json& schema, const std::string& prefix) {
  for (const auto& [key, value] : j.items()) {
    const std::string path = prefix.empty() ? key : prefix + "." + key;
    if (!schema.contains(key)) throw ConfigError(path, "unknown config key");
    if (schema.at(key).is_object()) {
      if (!value.is_object()) throw ConfigError(path, "expected an object");
      reject_unknown_keys(value, schema.at(key), path);
    }
  }
}

}  // namespace

RunConfig config_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("<root>", "config must be a JSON object");
  reject_unknown_keys(j, config_schema(), "");
  RunConfig c;
  try {
    if (j.contains("dataset")) c.dataset = j.at("dataset").get<DatasetSpec>();
    if (j.contains("vae")) c.vae = j.at("vae").get<VaeSpec>();
    const json& direct = section(j, "direct");
    if (direct.contains("unet")) c.unet = direct.at("unet").get<UNetSpec>();
    if (direct.contains("loss_kinds")) {
      c.loss_kinds.clear();
      for (const auto& k : direct.at("loss_kinds")) c.loss_kinds.push_back(loss_kind_from_string(k.get<std::string>()));
    }
  } catch (const json::exception& e) {
    throw ConfigError("config", e.what());
  }
  read(j, "dataset_path", c.dataset_path, "");
  read(j, "output_dir", c.output_dir, "");
  const json& nm = section(j, "noise_model");
  if (nm.contains("sigma")) {
    double sigma = 0.0;
    read(nm, "sigma", sigma, "noise_model.");
    c.noise_sigma = sigma;
  }
  const json& t = section(j, "training");
  const std::string tp = "training.";
  read(t, "batch_size", c.training.batch_size, tp);
  read(t, "patch_size", c.training.patch_size, tp);
  read(t, "total_steps", c.training.total_steps, tp);
  read(t, "validation_interval", c.training.validation_interval, tp);
  read(t, "lr_vae", c.training.lr_vae, tp);
  read(t, "lr_direct", c.training.lr_direct, tp);
  read(t, "lr_factor", c.training.lr_factor, tp);
  read(t, "patience_epochs", c.training.patience_epochs, tp);
  read(t, "plateau_threshold", c.training.plateau_threshold, tp);
  read(t, "min_lr", c.training.min_lr, tp);
  read(t, "grad_clip", c.training.grad_clip, tp);
  read(t, "kl_weight", c.training.kl_weight, tp);
  read(t, "kl_warmup_fraction", c.training.kl_warmup_fraction, tp);
  const json& s = section(j, "seeds");
  read(s, "init", c.seeds.init, "seeds.");
  read(s, "train", c.seeds.train, "seeds.");
  read(s, "validation", c.seeds.validation, "seeds.");
  read(s, "inference", c.seeds.inference, "seeds.");
  const json& inf = section(j, "inference");
  read(inf, "n_samples", c.inference.n_samples, "inference.");
  read(inf, "aggregator", c.inference.aggregator, "inference.");
  read(inf, "median_memory_budget_mb", c.inference.median_memory_budget_mb, "inference.");
  const json& b = section(j, "bench");
  read(b, "n_list", c.bench.n_list, "bench.");
  read(b, "include_1000", c.bench.include_1000, "bench.");
  return c;
}

void apply_overrides(json& j, const std::vector<std::string>& assignments) {
  for (const auto& a : assignments) {
    const auto eq = a.find('=');
    if (eq == std::string::npos || eq == 0) throw ConfigError(a, "override must look like key.path=value");
    const std::string key = a.substr(0, eq);
    const std::string text = a.substr(eq + 1);
    json value;
    try {
      value = json::parse(text);
    } catch (const json::exception&) {
      value = text;
    }
    std::string pointer = "/" + key;
    for (auto& ch : pointer) {
      if (ch == '.') ch = '/';
    }
    try {
      j[json::json_pointer(pointer)] = value;
    } catch (const json::exception& e) {
      throw ConfigError(key, e.what());
    }
  }
}

void override_seeds(RunConfig& cfg, std::uint64_t value) {
  cfg.dataset.seed = value;
  cfg.seeds = {value, value, value, value};
}

RunConfig load_config(const std::filesystem::path& path, const std::vector<std::string>& overrides) {
  json j;
  if (path.empty()) {
    to_json(j, RunConfig{});
  } else {
    std::ifstream is(path);
    if (!is) throw IoError("cannot read config " + path.string());
    try {
      j = json::parse(is);
    } catch (const json::exception& e) {
      throw ConfigError(path.string(), std::string("invalid JSON: ") + e.what());
    }
  }
  apply_overrides(j, overrides);
  RunConfig cfg = config_from_json(j);
  if (const char* env = std::getenv("DUD_SEED_OVERRIDE")) {
    char* end = nullptr;
    const unsigned long long v = std::strtoull(env, &end, 10);
    if (end == env || *end != '\0') throw ConfigError("DUD_SEED_OVERRIDE", "must be an integer");
    override_seeds(cfg, v);
  }
  cfg.validate();
  return cfg;
}

}  // namespace dud
