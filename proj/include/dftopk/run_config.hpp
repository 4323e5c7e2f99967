// Copyright 2026 The DFTopK Authors
// SPDX-License-Identifier: Apache-2.0

#pragma once

/// \file run_config.hpp
/// Flat key-value run configuration: a JSON object whose keys are the training
/// parameters plus benchmark and sweep settings. Unknown keys are rejected.
/// Overrides use `key=value`, where value is JSON (`0.5`, `[1,2]`, `"x"`) or a
/// bare string; list keys also accept comma-separated bare values (`5,10,50`).

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "dftopk/cascade/config.hpp"
#include "dftopk/numeric.hpp"

namespace dftopk {

struct RunConfig {
  cascade::TrainConfig train;
  std::vector<cascade::LossKind> loss_kinds{cascade::kAllLossKinds[0], cascade::kAllLossKinds[1],
                                            cascade::kAllLossKinds[2], cascade::kAllLossKinds[3]};
  // bench
  std::vector<std::size_t> bench_sizes{5, 10, 50, 100, 500, 1000};
  std::size_t bench_reps = 200;
  std::size_t bench_warmup = 20;
  std::vector<std::string> bench_ops{"dftopk", "neuralsort", "softsort", "strict_bisect"};
  std::size_t bench_batch = 1;
  // tau sweep: reduced-size training runs
  std::vector<double> sweep_taus{1e-4, 1e-3, 1e-2, 1e-1, 1.0, 1e1, 1e2, 1e3, 1e4};
  std::size_t sweep_days = 15;
  std::size_t sweep_pvs_per_day = 2048;
};

namespace run_config_detail {

using nlohmann::json;

inline std::string type_error(const std::string& key, const char* want) {
  return "config key '" + key + "': expected " + want;
}

inline std::size_t as_count(const json& v, const std::string& key) {
  if (!v.is_number_integer() || v.get<std::int64_t>() < 0) {
    throw ValidationError(type_error(key, "a non-negative integer"));
  }
  return v.get<std::size_t>();
}

inline double as_real(const json& v, const std::string& key) {
  if (!v.is_number()) throw ValidationError(type_error(key, "a number"));
  return v.get<double>();
}

inline std::string as_string(const json& v, const std::string& key) {
  if (!v.is_string()) throw ValidationError(type_error(key, "a string"));
  return v.get<std::string>();
}

inline json as_list(const json& v, const std::string& key) {
  if (v.is_array()) return v;
  // a single scalar or a comma-separated bare string
  if (v.is_string()) {
    json out = json::array();
    std::stringstream ss(v.get<std::string>());
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      try {
        out.push_back(json::parse(item));
      } catch (const json::exception&) {
        out.push_back(item);
      }
    }
    return out;
  }
  if (v.is_number()) return json::array({v});
  throw ValidationError(type_error(key, "a list"));
}

using Setter = std::function<void(RunConfig&, const json&, const std::string&)>;

inline const std::map<std::string, Setter>& setters() {
  static const std::map<std::string, Setter> table = [] {
    std::map<std::string, Setter> t;
    auto count = [&](const char* key, auto member) {
      t[key] = [member](RunConfig& c, const json& v, const std::string& k) {
        member(c) = as_count(v, k);
      };
    };
    auto real = [&](const char* key, auto member) {
      t[key] = [member](RunConfig& c, const json& v, const std::string& k) {
        member(c) = as_real(v, k);
      };
    };
    count("k_retrieval", [](RunConfig& c) -> std::size_t& { return c.train.k_retrieval; });
    count("k_ranking", [](RunConfig& c) -> std::size_t& { return c.train.k_ranking; });
    count("batch_pvs", [](RunConfig& c) -> std::size_t& { return c.train.batch_pvs; });
    count("days", [](RunConfig& c) -> std::size_t& { return c.train.days; });
    count("pvs_per_day", [](RunConfig& c) -> std::size_t& { return c.train.pvs_per_day; });
    count("base_candidates", [](RunConfig& c) -> std::size_t& { return c.train.base_candidates; });
    count("n_neg", [](RunConfig& c) -> std::size_t& { return c.train.n_neg; });
    count("k_pos", [](RunConfig& c) -> std::size_t& { return c.train.k_pos; });
    count("m_retrieval", [](RunConfig& c) -> std::size_t& { return c.train.m_retrieval; });
    count("m_ranking", [](RunConfig& c) -> std::size_t& { return c.train.m_ranking; });
    count("user_dim", [](RunConfig& c) -> std::size_t& { return c.train.user_dim; });
    count("item_dim", [](RunConfig& c) -> std::size_t& { return c.train.item_dim; });
    count("latent_dim", [](RunConfig& c) -> std::size_t& { return c.train.latent_dim; });
    count("hidden", [](RunConfig& c) -> std::size_t& { return c.train.hidden; });
    count("embed", [](RunConfig& c) -> std::size_t& { return c.train.embed; });
    count("threads", [](RunConfig& c) -> std::size_t& { return c.train.threads; });
    count("bench_reps", [](RunConfig& c) -> std::size_t& { return c.bench_reps; });
    count("bench_warmup", [](RunConfig& c) -> std::size_t& { return c.bench_warmup; });
    count("bench_batch", [](RunConfig& c) -> std::size_t& { return c.bench_batch; });
    count("sweep_days", [](RunConfig& c) -> std::size_t& { return c.sweep_days; });
    count("sweep_pvs_per_day", [](RunConfig& c) -> std::size_t& { return c.sweep_pvs_per_day; });
    real("tau", [](RunConfig& c) -> double& { return c.train.tau; });
    real("baseline_tau", [](RunConfig& c) -> double& { return c.train.baseline_tau; });
    real("learning_rate", [](RunConfig& c) -> double& { return c.train.learning_rate; });
    real("noise", [](RunConfig& c) -> double& { return c.train.noise; });
    real("drift", [](RunConfig& c) -> double& { return c.train.drift; });
    real("base_shift", [](RunConfig& c) -> double& { return c.train.base_shift; });
    t["seed"] = [](RunConfig& c, const json& v, const std::string& k) {
      c.train.seed = static_cast<std::uint64_t>(as_count(v, k));
    };
    t["loss_kind"] = [](RunConfig& c, const json& v, const std::string& k) {
      c.train.loss_kind = cascade::parse_loss_kind(as_string(v, k));
      c.loss_kinds = {c.train.loss_kind};
    };
    t["loss_kinds"] = [](RunConfig& c, const json& v, const std::string& k) {
      c.loss_kinds.clear();
      for (const auto& e : as_list(v, k)) {
        c.loss_kinds.push_back(cascade::parse_loss_kind(as_string(e, k)));
      }
    };
    t["bench_sizes"] = [](RunConfig& c, const json& v, const std::string& k) {
      c.bench_sizes.clear();
      for (const auto& e : as_list(v, k)) c.bench_sizes.push_back(as_count(e, k));
    };
    t["bench_ops"] = [](RunConfig& c, const json& v, const std::string& k) {
      c.bench_ops.clear();
      for (const auto& e : as_list(v, k)) c.bench_ops.push_back(as_string(e, k));
    };
    t["sweep_taus"] = [](RunConfig& c, const json& v, const std::string& k) {
      c.sweep_taus.clear();
      for (const auto& e : as_list(v, k)) c.sweep_taus.push_back(as_real(e, k));
    };
    return t;
  }();
  return table;
}

}  // namespace run_config_detail

/// All recognised keys, sorted.
inline std::vector<std::string> run_config_keys() {
  std::vector<std::string> keys;
  for (const auto& [k, _] : run_config_detail::setters()) keys.push_back(k);
  return keys;
}

inline void apply_setting(RunConfig& c, const std::string& key, const nlohmann::json& value) {
  const auto& table = run_config_detail::setters();
  const auto it = table.find(key);
  if (it == table.end()) throw ValidationError("unknown config key '" + key + "'");
  it->second(c, value, key);
}

/// Applies one `key=value` override.
inline void apply_override(RunConfig& c, const std::string& assignment) {
  const auto eq = assignment.find('=');
  if (eq == std::string::npos || eq == 0) {
    throw ValidationError("override '" + assignment + "' is not of the form key=value");
  }
  const std::string key = assignment.substr(0, eq);
  const std::string text = assignment.substr(eq + 1);
  nlohmann::json value;
  try {
    value = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception&) {
    value = text;
  }
  apply_setting(c, key, value);
}

/// Checks every value, including cross-field constraints.
inline void validate(const RunConfig& c) {
  cascade::validate(c.train);
  auto fail = [](const std::string& key, const std::string& why) {
    throw ValidationError("config key '" + key + "': " + why);
  };
  if (c.loss_kinds.empty()) fail("loss_kinds", "must not be empty");
  if (c.bench_sizes.empty()) fail("bench_sizes", "must not be empty");
  for (auto n : c.bench_sizes) {
    if (n < 2) fail("bench_sizes", "every size must be >= 2");
  }
  if (c.bench_reps < 1) fail("bench_reps", "must be >= 1");
  if (c.bench_batch < 1) fail("bench_batch", "must be >= 1");
  if (c.bench_ops.empty()) fail("bench_ops", "must not be empty");
  for (const auto& op : c.bench_ops) {
    if (op != "dftopk" && op != "neuralsort" && op != "softsort" && op != "strict_bisect") {
      fail("bench_ops", "unknown operator '" + op + "'");
    }
  }
  if (c.sweep_taus.empty()) fail("sweep_taus", "must not be empty");
  for (double t : c.sweep_taus) {
    if (!(std::isfinite(t) && t > 0.0)) fail("sweep_taus", "every tau must be positive");
  }
  if (c.sweep_days < 2) fail("sweep_days", "must be >= 2");
  if (c.sweep_pvs_per_day < 1) fail("sweep_pvs_per_day", "must be >= 1");
}

inline RunConfig parse_run_config(const nlohmann::json& obj) {
  if (!obj.is_object()) throw ValidationError("config must be a JSON object");
  RunConfig c;
  // loss_kind narrows loss_kinds; apply it before an explicit loss_kinds list
  if (obj.contains("loss_kind")) apply_setting(c, "loss_kind", obj.at("loss_kind"));
  for (const auto& [key, value] : obj.items()) {
    if (key == "loss_kind") continue;
    apply_setting(c, key, value);
  }
  return c;
}

inline RunConfig parse_run_config_text(const std::string& text) {
  nlohmann::json obj;
  try {
    obj = nlohmann::json::parse(text);
  } catch (const nlohmann::json::exception& e) {
    throw ValidationError(std::string("config is not valid JSON: ") + e.what());
  }
  return parse_run_config(obj);
}

inline RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw ValidationError("cannot open config file '" + path + "'");
  std::stringstream ss;
  ss << in.rdbuf();
  return parse_run_config_text(ss.str());
}

/// Every key with its current value, as a JSON object (a valid config file).
inline nlohmann::json to_json(const RunConfig& c) {
  const auto& t = c.train;
  nlohmann::json o;
  std::vector<std::string> kinds;
  for (auto k : c.loss_kinds) kinds.emplace_back(cascade::to_string(k));
  o["loss_kinds"] = kinds;
  o["k_retrieval"] = t.k_retrieval;
  o["k_ranking"] = t.k_ranking;
  o["tau"] = t.tau;
  o["baseline_tau"] = t.baseline_tau;
  o["learning_rate"] = t.learning_rate;
  o["batch_pvs"] = t.batch_pvs;
  o["seed"] = t.seed;
  o["days"] = t.days;
  o["pvs_per_day"] = t.pvs_per_day;
  o["base_candidates"] = t.base_candidates;
  o["n_neg"] = t.n_neg;
  o["k_pos"] = t.k_pos;
  o["m_retrieval"] = t.m_retrieval;
  o["m_ranking"] = t.m_ranking;
  o["user_dim"] = t.user_dim;
  o["item_dim"] = t.item_dim;
  o["latent_dim"] = t.latent_dim;
  o["noise"] = t.noise;
  o["drift"] = t.drift;
  o["base_shift"] = t.base_shift;
  o["hidden"] = t.hidden;
  o["embed"] = t.embed;
  o["threads"] = t.threads;
  o["bench_sizes"] = c.bench_sizes;
  o["bench_reps"] = c.bench_reps;
  o["bench_warmup"] = c.bench_warmup;
  o["bench_ops"] = c.bench_ops;
  o["bench_batch"] = c.bench_batch;
  o["sweep_taus"] = c.sweep_taus;
  o["sweep_days"] = c.sweep_days;
  o["sweep_pvs_per_day"] = c.sweep_pvs_per_day;
  return o;
}

}  // namespace dftopk
