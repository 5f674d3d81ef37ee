// SPDX-License-Identifier: Apache-2.0
//
// JSON run configuration:
//
//   {
//     "preset": "toy-lw1x",             // optional starting point
//     "model":    { "d": 64, "k": 2, "weight_sharing": true, ... },
//     "task":     { "kind": "copy", "n_q": 8, "n_v": 8, ... },
//     "training": { "steps": 3000, "lr": 0.001, ... }
//   }
//
// Unknown keys and wrongly typed values are rejected with their JSON
// pointer, e.g. "/model/dd".

#pragma once

#include <filesystem>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>

#include <json.hpp>

#include "lwt/config.hpp"
#include "lwt/toytrain.hpp"

namespace lwt {

struct RunConfig {
  ModelConfig model;
  TaskSpec task;
  TrainOptions training;
};

/// Configuration error that names the offending key.
struct ConfigKeyError : ConfigError {
  ConfigKeyError(const std::string& key_path, const std::string& msg)
      : ConfigError(key_path + ": " + msg), path(key_path) {}
  std::string path;
};

namespace detail {

using json = nlohmann::json;

inline std::size_t get_size(const json& v, const std::string& path) {
  if (!v.is_number_unsigned()) throw ConfigKeyError(path, "expected a non-negative integer");
  return v.get<std::size_t>();
}

inline double get_double(const json& v, const std::string& path) {
  if (!v.is_number()) throw ConfigKeyError(path, "expected a number");
  return v.get<double>();
}

inline bool get_bool(const json& v, const std::string& path) {
  if (!v.is_boolean()) throw ConfigKeyError(path, "expected true or false");
  return v.get<bool>();
}

using FieldSetter = std::function<void(const json&, const std::string&)>;

inline void apply_object(const json& obj, const std::string& path, const std::map<std::string, FieldSetter>& fields) {
  if (!obj.is_object()) throw ConfigKeyError(path.empty() ? "/" : path, "expected an object");
  for (const auto& [key, value] : obj.items()) {
    const std::string key_path = path + "/" + key;
    auto it = fields.find(key);
    if (it == fields.end()) throw ConfigKeyError(key_path, "unknown key");
    it->second(value, key_path);
  }
}

}  // namespace detail

inline RunConfig parse_run_config(const std::string& text) {
  using detail::json;
  json root;
  try {
    root = json::parse(text);
  } catch (const json::parse_error& e) {
    throw ConfigKeyError("/", std::string("invalid JSON: ") + e.what());
  }
  RunConfig rc;
  bool task_vocab_set = false;
  if (!root.is_object()) throw ConfigKeyError("/", "expected an object");
  if (auto it = root.find("preset"); it != root.end()) {
    if (!it->is_string()) throw ConfigKeyError("/preset", "expected a string");
    auto preset = find_preset(it->get<std::string>());
    if (!preset) throw ConfigKeyError("/preset", "unknown preset '" + it->get<std::string>() + "'");
    rc.model = *preset;
  }

  ModelConfig& m = rc.model;
  auto sz = [](std::size_t& dst) {
    return [&dst](const json& v, const std::string& p) { dst = detail::get_size(v, p); };
  };
  auto flag = [](bool& dst) { return [&dst](const json& v, const std::string& p) { dst = detail::get_bool(v, p); }; };
  auto num = [](double& dst) {
    return [&dst](const json& v, const std::string& p) { dst = detail::get_double(v, p); };
  };
  auto u64 = [](std::uint64_t& dst) {
    return [&dst](const json& v, const std::string& p) { dst = detail::get_size(v, p); };
  };

  const std::map<std::string, detail::FieldSetter> model_fields = {
      {"d", sz(m.d)},
      {"d_f", sz(m.d_f)},
      {"d_h", sz(m.d_h)},
      {"h", sz(m.h)},
      {"k", sz(m.k)},
      {"e", sz(m.e)},
      {"n_enc", sz(m.n_enc)},
      {"n_dec", sz(m.n_dec)},
      {"use_gmha", flag(m.use_gmha)},
      {"use_gffn", flag(m.use_gffn)},
      {"weight_sharing", flag(m.weight_sharing)},
      {"use_glml", flag(m.use_glml)},
      {"use_gil", flag(m.use_gil)},
      {"vocab", sz(m.vocab)},
      {"max_len", sz(m.max_len)},
  };
  TaskSpec& t = rc.task;
  const std::map<std::string, detail::FieldSetter> task_fields = {
      {"kind",
       [&t](const json& v, const std::string& p) {
         if (!v.is_string()) throw ConfigKeyError(p, "expected a string");
         try {
           t.kind = parse_task_kind(v.get<std::string>());
         } catch (const ConfigError& e) {
           throw ConfigKeyError(p, e.what());
         }
       }},
      {"vocab",
       [&t, &task_vocab_set](const json& v, const std::string& p) {
         t.vocab = detail::get_size(v, p);
         task_vocab_set = true;
       }},
      {"n_q", sz(t.n_q)},
      {"n_v", sz(t.n_v)},
      {"dataset_size", sz(t.dataset_size)},
      {"seed", u64(t.seed)},
  };
  TrainOptions& o = rc.training;
  const std::map<std::string, detail::FieldSetter> training_fields = {
      {"steps", sz(o.steps)},
      {"batch_size", sz(o.batch_size)},
      {"lr", num(o.base_lr)},
      {"warmup_frac", num(o.warmup_frac)},
      {"eval_interval", sz(o.eval_interval)},
      {"eval_size", sz(o.eval_size)},
      {"seed", u64(o.seed)},
      {"stop_accuracy", num(o.stop_accuracy)},
  };
  const std::map<std::string, detail::FieldSetter> root_fields = {
      {"preset", [](const json&, const std::string&) {}},
      {"model", [&](const json& v, const std::string& p) { detail::apply_object(v, p, model_fields); }},
      {"task", [&](const json& v, const std::string& p) { detail::apply_object(v, p, task_fields); }},
      {"training", [&](const json& v, const std::string& p) { detail::apply_object(v, p, training_fields); }},
  };
  detail::apply_object(root, "", root_fields);

  try {
    m.validate();
  } catch (const ConfigError& e) {
    throw ConfigKeyError("/model", e.what());
  }
  if (!task_vocab_set) t.vocab = m.vocab;
  if (t.vocab != m.vocab) throw ConfigKeyError("/task/vocab", "must equal /model/vocab");
  try {
    t.validate(m.max_len);
  } catch (const ConfigError& e) {
    throw ConfigKeyError("/task", e.what());
  }
  return rc;
}

inline RunConfig load_run_config(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigKeyError("/", "cannot read config file " + path.string());
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config(ss.str());
}

}  // namespace lwt
