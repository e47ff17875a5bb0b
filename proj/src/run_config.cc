// Copyright 2026 The linkserve Authors
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     https://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#include "linkserve/run_config.h"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <limits>
#include <set>

namespace linkserve {

using nlohmann::json;
namespace fs = std::filesystem;

namespace {

void reject_unknown(const json& j, const std::set<std::string>& allowed,
                    const std::string& where) {
  for (const auto& [key, value] : j.items()) {
    if (!allowed.contains(key)) {
      throw ConfigError(where + ": unknown key '" + key + "'");
    }
  }
}

const json& object_at(const json& j, const char* key, const std::string& where) {
  const json& v = j.at(key);
  if (!v.is_object()) throw ConfigError(where + "." + key + " must be an object");
  return v;
}

template <typename T>
T typed(const json& j, const char* key, const std::string& where) {
  const json& v = j.at(key);
  if constexpr (std::is_same_v<T, std::string>) {
    if (!v.is_string()) throw ConfigError(where + "." + key + " must be a string");
  } else if constexpr (std::is_integral_v<T>) {
    if (!v.is_number_integer()) {
      throw ConfigError(where + "." + key + " must be an integer");
    }
  } else {
    if (!v.is_number()) throw ConfigError(where + "." + key + " must be a number");
  }
  return v.get<T>();
}

template <typename T>
void maybe(const json& j, const char* key, const std::string& where, T& out) {
  if (j.contains(key)) out = typed<T>(j, key, where);
}

std::string resolve(const std::string& base_dir, const std::string& path) {
  if (path.empty() || fs::path(path).is_absolute() || base_dir.empty()) return path;
  return (fs::path(base_dir) / path).lexically_normal().string();
}

std::string lower(std::string s) {
  std::transform(s.begin(), s.end(), s.begin(),
                 [](unsigned char c) { return static_cast<char>(std::tolower(c)); });
  return s;
}

// Splits "12.5Mbps" into 12.5 and "mbps".
std::pair<double, std::string> number_and_unit(const std::string& text,
                                               const std::string& what) {
  size_t used = 0;
  double value = 0;
  try {
    value = std::stod(text, &used);
  } catch (const std::exception&) {
    throw ConfigError("cannot parse " + what + " '" + text + "'");
  }
  std::string unit = lower(text.substr(used));
  unit.erase(std::remove(unit.begin(), unit.end(), ' '), unit.end());
  return {value, unit};
}

double parse_double(const std::string& text, const std::string& what) {
  auto [value, unit] = number_and_unit(text, what);
  if (!unit.empty()) throw ConfigError("cannot parse " + what + " '" + text + "'");
  return value;
}

}  // namespace

double parse_bandwidth(const std::string& text) {
  if (lower(text) == "inf") return kInfinity;
  auto [value, unit] = number_and_unit(text, "bandwidth");
  double scale = 1;
  if (unit.empty() || unit == "bps") {
    scale = 1;
  } else if (unit == "kbps") {
    scale = 1e3;
  } else if (unit == "mbps") {
    scale = 1e6;
  } else if (unit == "gbps") {
    scale = 1e9;
  } else {
    throw ConfigError("unknown bandwidth unit in '" + text + "'");
  }
  const double bits = value * scale;
  if (!(bits > 0)) throw ConfigError("bandwidth must be > 0");
  return bits / 8.0;
}

int64_t parse_chunk_size(const std::string& text) {
  if (lower(text) == "inf") return kUnboundedChunk;
  auto [value, unit] = number_and_unit(text, "chunk_size");
  double scale = 1;
  if (unit.empty() || unit == "b") {
    scale = 1;
  } else if (unit == "kib") {
    scale = 1024;
  } else if (unit == "mib") {
    scale = 1024.0 * 1024.0;
  } else {
    throw ConfigError("unknown chunk_size unit in '" + text + "'");
  }
  const double bytes = value * scale;
  if (!(bytes >= 1) || bytes != std::floor(bytes)) {
    throw ConfigError("chunk_size must be a whole number of bytes >= 1");
  }
  return static_cast<int64_t>(bytes);
}

void parse_n_policy(const std::string& text, EngineConfig& engine) {
  if (text == "dynamic") {
    engine.n_policy = NPolicy::kDynamic;
    return;
  }
  if (text.rfind("fixed:", 0) == 0) {
    const std::string rest = text.substr(6);
    char* end = nullptr;
    const long long n = std::strtoll(rest.c_str(), &end, 10);
    if (!rest.empty() && *end == '\0' && n >= 1) {
      engine.n_policy = NPolicy::kFixed;
      engine.fixed_n = n;
      return;
    }
  }
  throw ConfigError("n_policy must be 'dynamic' or 'fixed:<n>', got '" + text + "'");
}

std::string n_policy_string(const EngineConfig& engine) {
  if (engine.n_policy == NPolicy::kDynamic) return "dynamic";
  return "fixed:" + std::to_string(engine.fixed_n);
}

RunConfig parse_run_config(const json& j, const std::string& base_dir,
                           const std::string& source) {
  if (!j.is_object()) throw ConfigError(source + ": run config must be an object");
  reject_unknown(j,
                 {"version", "cluster", "model", "placement", "profiles",
                  "synthetic_compute", "trace", "workload", "links", "controller",
                  "engine", "seed", "out", "cost"},
                 source);
  RunConfig cfg;
  cfg.source = source;
  const std::string w = source;
  if (j.contains("version") && typed<int64_t>(j, "version", w) != 1) {
    throw ConfigError(source + ": unsupported config version");
  }
  if (!j.contains("cluster")) throw ConfigError(source + ": 'cluster' is required");
  cfg.cluster_path = resolve(base_dir, typed<std::string>(j, "cluster", w));

  if (j.contains("model")) {
    if (j.at("model").is_string()) {
      cfg.model_name = j.at("model").get<std::string>();
    } else {
      cfg.model = model_from_json(j.at("model"));
      cfg.model_name = cfg.model->name;
    }
  }
  if (j.contains("placement")) {
    const json& p = object_at(j, "placement", w);
    reject_unknown(p, {"gpu_type", "gpu_count"}, w + ".placement");
    maybe(p, "gpu_type", w + ".placement", cfg.gpu_type);
    maybe(p, "gpu_count", w + ".placement", cfg.gpu_count);
    if (cfg.gpu_count < 1) throw ConfigError("placement.gpu_count must be >= 1");
  }
  if (j.contains("profiles")) {
    cfg.profiles_path = resolve(base_dir, typed<std::string>(j, "profiles", w));
  }
  if (j.contains("synthetic_compute")) {
    const json& s = object_at(j, "synthetic_compute", w);
    const std::string sw = w + ".synthetic_compute";
    reject_unknown(s, {"per_layer_token_s", "overhead_s"}, sw);
    maybe(s, "per_layer_token_s", sw, cfg.synthetic.per_layer_token_s);
    maybe(s, "overhead_s", sw, cfg.synthetic.overhead_s);
  }
  if (j.contains("trace")) {
    cfg.trace_path = resolve(base_dir, typed<std::string>(j, "trace", w));
  }
  if (j.contains("workload")) {
    const json& wl = object_at(j, "workload", w);
    const std::string ww = w + ".workload";
    reject_unknown(wl, {"rate", "duration_s", "lengths"}, ww);
    maybe(wl, "rate", ww, cfg.workload.rate);
    maybe(wl, "duration_s", ww, cfg.workload.duration_s);
    maybe(wl, "lengths", ww, cfg.workload.lengths);
  }
  if (j.contains("links")) {
    const json& l = object_at(j, "links", w);
    reject_unknown(l, {"latency_s", "bandwidth_bps"}, w + ".links");
    if (l.contains("latency_s")) {
      cfg.link_latency_s = typed<double>(l, "latency_s", w + ".links");
    }
    if (l.contains("bandwidth_bps")) {
      const json& b = l.at("bandwidth_bps");
      if (b.is_string()) {
        cfg.link_bandwidth_Bps = parse_bandwidth(b.get<std::string>());
      } else if (b.is_number()) {
        cfg.link_bandwidth_Bps = parse_bandwidth(std::to_string(b.get<double>()));
      } else {
        throw ConfigError("links.bandwidth_bps must be a number or string");
      }
    }
  }
  ControllerConfig& c = cfg.engine.controller;
  if (j.contains("controller")) {
    const json& cj = object_at(j, "controller", w);
    const std::string cw = w + ".controller";
    reject_unknown(cj,
                   {"max_batched_tokens", "max_batch_size", "n_max", "bubble_epsilon",
                    "gain_delta", "compute_mode"},
                   cw);
    maybe(cj, "max_batched_tokens", cw, c.max_batched_tokens);
    maybe(cj, "max_batch_size", cw, c.max_batch_size);
    maybe(cj, "n_max", cw, c.n_max);
    maybe(cj, "bubble_epsilon", cw, c.bubble_epsilon);
    maybe(cj, "gain_delta", cw, c.gain_delta);
    if (cj.contains("compute_mode")) {
      c.compute_mode = parse_compute_mode(typed<std::string>(cj, "compute_mode", cw));
    }
  }
  if (j.contains("engine")) {
    const json& e = object_at(j, "engine", w);
    const std::string ew = w + ".engine";
    reject_unknown(e,
                   {"n_policy", "decision_stride", "chunk_size", "scheduling_policy",
                    "batching"},
                   ew);
    if (e.contains("n_policy")) {
      parse_n_policy(typed<std::string>(e, "n_policy", ew), cfg.engine);
    }
    maybe(e, "decision_stride", ew, cfg.engine.decision_stride);
    if (e.contains("chunk_size")) {
      const json& cs = e.at("chunk_size");
      if (cs.is_string()) {
        cfg.engine.chunk_size = parse_chunk_size(cs.get<std::string>());
      } else {
        cfg.engine.chunk_size = typed<int64_t>(e, "chunk_size", ew);
      }
    }
    if (e.contains("scheduling_policy")) {
      cfg.engine.scheduling_policy =
          parse_scheduling_policy(typed<std::string>(e, "scheduling_policy", ew));
    }
    if (e.contains("batching")) {
      cfg.engine.batching = parse_batching_mode(typed<std::string>(e, "batching", ew));
    }
  }
  if (j.contains("seed")) {
    const int64_t seed = typed<int64_t>(j, "seed", w);
    if (seed < 0) throw ConfigError("seed must be >= 0");
    cfg.engine.seed = static_cast<uint64_t>(seed);
  }
  if (j.contains("out")) cfg.out_dir = resolve(base_dir, typed<std::string>(j, "out", w));
  if (j.contains("cost")) cfg.cost = cost_model_from_json(j.at("cost"));
  c.validate();
  return cfg;
}

RunConfig load_run_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path, 0, "config not found");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError(path, 0, std::string("invalid JSON: ") + e.what());
  }
  return parse_run_config(j, fs::path(path).parent_path().string(), path);
}

void apply_env_overrides(RunConfig& cfg) {
  auto env = [](const char* name) -> std::optional<std::string> {
    const char* v = std::getenv(name);
    if (!v || !*v) return std::nullopt;
    return std::string(v);
  };
  if (auto v = env("LINKSERVE_SEED")) {
    const double seed = parse_double(*v, "LINKSERVE_SEED");
    if (seed < 0 || seed != std::floor(seed)) {
      throw ConfigError("LINKSERVE_SEED must be a non-negative integer");
    }
    cfg.engine.seed = static_cast<uint64_t>(seed);
  }
  if (auto v = env("LINKSERVE_OUT")) cfg.out_dir = *v;
  if (auto v = env("LINKSERVE_CHUNK_SIZE")) cfg.engine.chunk_size = parse_chunk_size(*v);
  if (auto v = env("LINKSERVE_N_POLICY")) parse_n_policy(*v, cfg.engine);
  if (auto v = env("LINKSERVE_LATENCY_S")) {
    cfg.link_latency_s = parse_double(*v, "LINKSERVE_LATENCY_S");
  }
  if (auto v = env("LINKSERVE_BANDWIDTH_BPS")) cfg.link_bandwidth_Bps = parse_bandwidth(*v);
}

RunInputs materialize(const RunConfig& cfg) {
  RunInputs in;
  in.cluster = load_cluster(cfg.cluster_path);
  in.cluster.for_each_link([&](LinkProfile& link) {
    if (cfg.link_latency_s) link.latency_s = *cfg.link_latency_s;
    if (cfg.link_bandwidth_Bps) link.bandwidth_Bps = *cfg.link_bandwidth_Bps;
    link.validate();
  });

  EngineConfig& e = in.engine;
  e = cfg.engine;
  e.model = cfg.model ? *cfg.model : model_preset(cfg.model_name);
  e.partition = plan_deployment(in.cluster, e.model, cfg.gpu_type, cfg.gpu_count);
  const auto& stages = e.partition.stages;

  e.stage_profiles.clear();
  if (!cfg.profiles_path.empty()) {
    std::vector<StageProfile> profiles = load_stage_profiles(cfg.profiles_path);
    if (profiles.size() != stages.size()) {
      throw ConfigError(cfg.profiles_path + ": " + std::to_string(profiles.size()) +
                        " stage profiles for a " + std::to_string(stages.size()) +
                        "-stage plan");
    }
    std::sort(profiles.begin(), profiles.end(),
              [](const StageProfile& a, const StageProfile& b) {
                return a.stage_id() < b.stage_id();
              });
    e.stage_profiles = std::move(profiles);
  } else {
    for (size_t i = 0; i < stages.size(); ++i) {
      e.stage_profiles.push_back(synth_profile(stages[i].layers(),
                                               cfg.synthetic.per_layer_token_s,
                                               cfg.synthetic.overhead_s,
                                               static_cast<int64_t>(i)));
    }
  }

  if (!cfg.trace_path.empty()) {
    if (!fs::exists(cfg.trace_path)) {
      throw LoadError(cfg.trace_path, 0, "trace not found");
    }
    in.trace = load_trace(cfg.trace_path);
  } else {
    in.trace = generate_trace(cfg.workload.rate, cfg.workload.duration_s,
                              length_preset(cfg.workload.lengths), e.seed);
  }
  e.validate();
  return in;
}

std::vector<std::string> sweep_axes() {
  return {"bandwidth", "latency", "rate", "chunk_size", "n_policy"};
}

void apply_sweep_value(RunConfig& cfg, const std::string& axis, const std::string& value) {
  if (axis == "bandwidth") {
    cfg.link_bandwidth_Bps = parse_bandwidth(value);
  } else if (axis == "latency") {
    const double latency = parse_double(value, "latency");
    if (!(latency >= 0)) throw ConfigError("latency must be >= 0");
    cfg.link_latency_s = latency;
  } else if (axis == "rate") {
    if (!cfg.trace_path.empty()) {
      throw ConfigError("the rate axis needs a generated workload, not a trace file");
    }
    const double rate = parse_double(value, "rate");
    if (!(rate > 0)) throw ConfigError("rate must be > 0");
    cfg.workload.rate = rate;
  } else if (axis == "chunk_size") {
    cfg.engine.chunk_size = parse_chunk_size(value);
  } else if (axis == "n_policy") {
    parse_n_policy(value, cfg.engine);
  } else {
    throw ConfigError("unknown sweep axis '" + axis + "'");
  }
}

}  // namespace linkserve
