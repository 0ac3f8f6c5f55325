#pragma once

#include <cmath>
#include <filesystem>
#include <functional>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "estkit/bench/drivers.hpp"
#include "estkit/cli/toml.hpp"

namespace estkit::cli {

using nlohmann::json;

// Every accepted key with its default. Training defaults: T=40, L=20, batch 16, 10 epochs, lr 1e-4, weight decay 1e-5.
inline json default_config() {
  return json::parse(R"({
    "seed": 0,
    "data": {
      "system": "selkov",
      "dir": "",
      "n_traj": 100,
      "traj_len": 200,
      "ocer": 1.0,
      "split": "test"
    },
    "filter": {
      "method": "enkf",
      "ensemble_size": 1000,
      "particles": 1000,
      "inflation": 1.0,
      "tune_inflation": true,
      "inflation_grid": [1.0, 2.0, 5.0, 10.0, 20.0]
    },
    "neural": {
      "variant": "llm-filter",
      "checkpoint": "",
      "window": 40,
      "segment": 20,
      "head_hidden": 512,
      "max_context": 512,
      "stats_embedding": true,
      "backbone": {"kind": "transformer", "d_model": 256, "layers": 4, "heads": 4, "ffn_mult": 4},
      "train": {
        "epochs": 10,
        "batch": 16,
        "stride": 1,
        "lr": 0.0001,
        "weight_decay": 0.00001,
        "freeze_backbone": false,
        "max_windows_per_epoch": 0,
        "resample_context": true
      },
      "context": {"examples": 2, "example_steps": 3, "max_tokens": 512, "template_file": ""}
    },
    "bench": {
      "suite": "canonical",
      "systems": ["tracking", "selkov", "oscillator", "hopf", "pendulum", "lorenz96", "vl20"],
      "methods": ["kf", "ekf", "enkf", "pf", "llm-filter-o", "llm-filter"],
      "seeds": [0, 1, 2],
      "ocer_grid": [1.0, 10.0, 100.0],
      "train_system": "oscillator",
      "eval_system": "hopf",
      "variants": ["llm-filter", "llm-filter-o"],
      "backbones": ["transformer", "mlp", "rnn", "identity"],
      "neural_method": "llm-filter-o",
      "window_grid": [],
      "segment_grid": [20, 10, 5],
      "hidden_grid": [],
      "layers_grid": [],
      "rmse": "per_element",
      "resume": true,
      "save_checkpoints": false
    }
  })");
}

// Sections each subcommand reads; the snapshot still carries every key.
inline std::vector<std::string> sections_for(const std::string& command) {
  if (command == "generate") return {"seed", "data"};
  if (command == "filter") return {"seed", "data", "filter"};
  if (command == "train") return {"seed", "data", "neural"};
  if (command == "estimate") return {"data", "neural"};
  return {"seed", "data", "filter", "neural", "bench"};
}

namespace detail {

inline bool compatible(const json& def, const json& v) {
  if (def.is_boolean()) return v.is_boolean();
  if (def.is_number_float()) return v.is_number();
  if (def.is_number_integer()) return v.is_number_integer() || (v.is_number_float() && std::floor(v.get<double>()) == v.get<double>());
  if (def.is_string()) return v.is_string();
  if (def.is_array()) return v.is_array();
  if (def.is_object()) return v.is_object();
  return false;
}

inline std::string type_name(const json& def) {
  if (def.is_boolean()) return "a boolean";
  if (def.is_number_float()) return "a number";
  if (def.is_number_integer()) return "an integer";
  if (def.is_string()) return "a string";
  if (def.is_array()) return "an array";
  return "a table";
}

}  // namespace detail

// Overlays `v` onto `base`, rejecting keys absent from the defaults and
// values of the wrong type.
inline void merge_checked(json& base, const json& overlay, const std::string& prefix = "") {
  if (!overlay.is_object()) throw ConfigError("configuration root must be a table");
  for (const auto& [k, v] : overlay.items()) {
    const std::string key = prefix.empty() ? k : prefix + "." + k;
    if (!base.contains(k)) throw ConfigError("unknown configuration key '" + key + "'");
    json& slot = base[k];
    if (!detail::compatible(slot, v))
      throw ConfigError("configuration key '" + key + "' must be " + detail::type_name(slot));
    if (slot.is_object()) {
      merge_checked(slot, v, key);
    } else if (slot.is_number_integer()) {
      slot = static_cast<long long>(v.get<double>());
    } else if (slot.is_number_float()) {
      slot = v.get<double>();
    } else {
      slot = v;
    }
  }
}

inline json parse_config_text(const std::string& text, const std::string& origin, bool as_json) {
  if (as_json) {
    try {
      return json::parse(text);
    } catch (const json::exception& e) {
      throw ConfigError(origin + ": " + e.what());
    }
  }
  return parse_toml(text, origin);
}

inline json load_config_file(const std::filesystem::path& path) {
  if (!std::filesystem::exists(path)) throw ConfigError("config file not found: '" + path.string() + "'");
  const auto bytes = binio::read_file(path);
  return parse_config_text(std::string(bytes.begin(), bytes.end()), path.string(), path.extension() == ".json");
}

// key=value with a TOML value; unparsable values are taken as strings.
inline std::pair<std::string, json> parse_override(const std::string& text) {
  const auto eq = text.find('=');
  if (eq == std::string::npos || eq == 0) throw ConfigError("override '" + text + "' is not key=value");
  const std::string key = text.substr(0, eq), raw = text.substr(eq + 1);
  json value;
  try {
    value = parse_toml_value(raw, "--set " + key);
  } catch (const ConfigError&) {
    value = raw;
  }
  return {key, value};
}

inline json dotted_to_tree(const std::string& key, json value) {
  json tree = json::object();
  json* node = &tree;
  std::size_t start = 0;
  for (;;) {
    const auto dot = key.find('.', start);
    const std::string part = key.substr(start, dot == std::string::npos ? std::string::npos : dot - start);
    if (part.empty()) throw ConfigError("malformed key '" + key + "'");
    if (dot == std::string::npos) {
      (*node)[part] = std::move(value);
      return tree;
    }
    node = &(*node)[part];
    *node = json::object();
    start = dot + 1;
  }
}

// Defaults < config file < overrides (in order).
inline json resolve_config(const std::string& command, const std::optional<std::filesystem::path>& file,
                           const std::vector<std::pair<std::string, json>>& overrides) {
  json cfg = default_config();
  if (file) {
    json loaded = load_config_file(*file);
    if (loaded.contains("command")) {
      if (!loaded["command"].is_string() || loaded["command"] != command)
        throw ConfigError("config file is for command '" + loaded["command"].dump() + "', not '" + command + "'");
      loaded.erase("command");
    }
    merge_checked(cfg, loaded);
  }
  for (const auto& [k, v] : overrides) merge_checked(cfg, dotted_to_tree(k, v));
  return cfg;
}

// "key = default" lines for the given sections.
inline std::string describe_keys(const std::vector<std::string>& sections) {
  std::string out;
  const json def = default_config();
  std::function<void(const json&, const std::string&)> walk = [&](const json& node, const std::string& prefix) {
    for (const auto& [k, v] : node.items()) {
      const std::string key = prefix.empty() ? k : prefix + "." + k;
      if (v.is_object()) {
        walk(v, key);
      } else {
        out += "  " + key + " = " + v.dump() + "\n";
      }
    }
  };
  for (const auto& s : sections) {
    if (def[s].is_object()) {
      walk(def[s], s);
    } else {
      out += "  " + s + " = " + def[s].dump() + "\n";
    }
  }
  return out;
}

inline std::string read_template(const json& cfg) {
  const std::string file = cfg["neural"]["context"]["template_file"].get<std::string>();
  if (file.empty()) return neural::kDefaultInstructionTemplate;
  if (!std::filesystem::exists(file)) throw ConfigError("context template file not found: '" + file + "'");
  return neural::load_template(file);
}

inline bench::NeuralSettings neural_settings(const json& cfg) {
  const json& n = cfg["neural"];
  bench::NeuralSettings s;
  s.model.window = n["window"].get<Index>();
  s.model.segment = n["segment"].get<Index>();
  s.model.head_hidden = n["head_hidden"].get<Index>();
  s.model.max_context = n["max_context"].get<Index>();
  s.model.stats_embedding = n["stats_embedding"].get<bool>();
  const json& b = n["backbone"];
  s.model.backbone.kind = b["kind"].get<std::string>();
  s.model.backbone.d_model = b["d_model"].get<Index>();
  s.model.backbone.layers = b["layers"].get<Index>();
  s.model.backbone.heads = b["heads"].get<Index>();
  s.model.backbone.ffn_mult = b["ffn_mult"].get<Index>();
  const json& t = n["train"];
  s.train.epochs = t["epochs"].get<int>();
  s.train.batch = t["batch"].get<Index>();
  s.train.stride = t["stride"].get<Index>();
  s.train.optimizer.lr = t["lr"].get<double>();
  s.train.optimizer.weight_decay = t["weight_decay"].get<double>();
  s.train.freeze_backbone = t["freeze_backbone"].get<bool>();
  s.train.max_windows_per_epoch = t["max_windows_per_epoch"].get<std::size_t>();
  s.train.resample_context = t["resample_context"].get<bool>();
  const json& c = n["context"];
  s.context.examples = c["examples"].get<std::size_t>();
  s.context.example_steps = c["example_steps"].get<Index>();
  s.context.max_tokens = c["max_tokens"].get<std::size_t>();
  s.context.instruction_template = read_template(cfg);
  return s;
}

inline FilterConfig filter_config(const json& cfg) {
  const json& f = cfg["filter"];
  FilterConfig fc;
  fc.ensemble_size = f["ensemble_size"].get<Index>();
  fc.particles = f["particles"].get<Index>();
  fc.inflation = f["inflation"].get<double>();
  return fc;
}

inline bench::BenchSettings bench_settings(const json& cfg) {
  bench::BenchSettings s;
  const json& d = cfg["data"];
  s.n_traj = d["n_traj"].get<std::size_t>();
  s.traj_len = d["traj_len"].get<std::size_t>();
  s.data_seed = cfg["seed"].get<std::uint64_t>();
  if (!d["dir"].get<std::string>().empty()) s.data_dir = d["dir"].get<std::string>();
  s.filter = filter_config(cfg);
  s.inflation_grid = cfg["filter"]["inflation_grid"].get<std::vector<double>>();
  s.tune_inflation = cfg["filter"]["tune_inflation"].get<bool>();
  s.neural = neural_settings(cfg);
  s.rmse = bench::parse_rmse_convention(cfg["bench"]["rmse"].get<std::string>());
  return s;
}

}  // namespace estkit::cli
