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

#ifndef LINKSERVE_RUN_CONFIG_H_
#define LINKSERVE_RUN_CONFIG_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "linkserve/engine.h"

namespace linkserve {

// Synthetic stage timing used when no profile file is given.
struct SyntheticCompute {
  double per_layer_token_s = 2e-6;
  double overhead_s = 0.005;
};

// Poisson workload generated in place of a trace file.
struct GeneratedWorkload {
  double rate = 1.0;
  double duration_s = 60.0;
  // Length preset name: "conversation-synthetic" or "fixed:<in>:<out>".
  std::string lengths = "conversation-synthetic";
};

// Parsed run configuration. Relative paths are resolved against the
// directory holding the config file.
struct RunConfig {
  std::string source;  // path of the config file, for messages
  std::string cluster_path;
  std::string profiles_path;  // empty: use `synthetic`
  std::string trace_path;     // empty: use `workload`
  std::string model_name = "llama2-7b";
  std::optional<ModelSpec> model;  // inline model overrides the preset
  std::string gpu_type;
  int64_t gpu_count = 1;
  SyntheticCompute synthetic;
  GeneratedWorkload workload;
  std::optional<double> link_latency_s;     // applied to every link
  std::optional<double> link_bandwidth_Bps;
  std::string out_dir = "out";
  std::optional<CostModel> cost;  // adds a cost block to report.json
  EngineConfig engine;  // partition/model/profiles filled by materialize()
};

// Throws ConfigError (bad values) or LoadError (unreadable file).
RunConfig parse_run_config(const nlohmann::json& j, const std::string& base_dir,
                           const std::string& source = "<inline>");
RunConfig load_run_config(const std::string& path);

// Applies LINKSERVE_SEED, LINKSERVE_OUT, LINKSERVE_CHUNK_SIZE,
// LINKSERVE_N_POLICY, LINKSERVE_LATENCY_S and LINKSERVE_BANDWIDTH_BPS when set.
void apply_env_overrides(RunConfig& cfg);

// Everything a run needs, with files loaded and the placement planned.
struct RunInputs {
  EngineConfig engine;
  ClusterSpec cluster;
  Trace trace;
};

RunInputs materialize(const RunConfig& cfg);

// Sweepable axes: bandwidth, latency, rate, chunk_size, n_policy.
std::vector<std::string> sweep_axes();
// Applies one textual value to `cfg`. Throws ConfigError on an unknown axis or
// a value that does not parse.
void apply_sweep_value(RunConfig& cfg, const std::string& axis, const std::string& value);

// "100Mbps", "1Gbps", "2.5e6" (bits per second) -> bytes per second.
double parse_bandwidth(const std::string& text);
// "inf", "256KiB", "1MiB", "4096" -> bytes.
int64_t parse_chunk_size(const std::string& text);
// "dynamic" or "fixed:<n>".
void parse_n_policy(const std::string& text, EngineConfig& engine);
std::string n_policy_string(const EngineConfig& engine);

}  // namespace linkserve

#endif  // LINKSERVE_RUN_CONFIG_H_
