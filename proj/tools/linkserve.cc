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

// linkserve: simulate, sweep, plan and serve.
//
// Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.

#include <pthread.h>
#include <signal.h>

#include <cstdio>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>
#include <thread>

#include "CLI11.hpp"
#include "json.hpp"
#include "linkserve/control_api.h"
#include "linkserve/engine.h"
#include "linkserve/live_engine.h"
#include "linkserve/run_config.h"

namespace fs = std::filesystem;
using nlohmann::json;

namespace linkserve {
namespace {

constexpr char kVersion[] = "0.1.0";
constexpr int kExitOk = 0;
constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

std::string version_json() {
  return json{{"name", "linkserve"},
              {"version", kVersion},
              {"run_config_schema", 1},
              {"control_api_schema", 1}}
      .dump();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error("cannot write " + path.string());
  out << content;
  if (!out) throw Error("write failed for " + path.string());
}

std::string requests_csv(const std::vector<Request>& requests) {
  std::ostringstream out;
  out << "id,arrival_s,input_tokens,output_tokens,tokens_emitted,first_token_s,"
         "finish_s\n";
  auto opt = [](const std::optional<double>& v) {
    return v ? format_seconds(*v, 6) : std::string();
  };
  for (const Request& r : requests) {
    out << r.id() << ',' << format_seconds(r.arrival_time(), 6) << ',' << r.input_len()
        << ',' << r.output_len() << ',' << r.tokens_emitted() << ','
        << opt(r.first_token_time()) << ',' << opt(r.finish_time()) << '\n';
  }
  return out.str();
}

json report_document(const RunConfig& cfg, const RunInputs& inputs,
                     const MetricsReport& report) {
  json doc = to_json(report);
  doc["n_policy"] = n_policy_string(inputs.engine);
  doc["seed"] = inputs.engine.seed;
  doc["stages"] = inputs.engine.partition.stages.size();
  if (cfg.cost) {
    json cost{{"cost_per_hour", cost_per_hour(*cfg.cost)},
              {"profit_per_hour", profit_per_hour(report.throughput_tok_s, *cfg.cost)}};
    try {
      cost["margin"] = cost_profit_margin(report.throughput_tok_s, *cfg.cost);
    } catch (const MarginError&) {
      cost["margin"] = nullptr;
    }
    doc["cost"] = cost;
  }
  return doc;
}

// Runs one configuration and writes every output file into `dir`.
MetricsReport simulate_into(const RunConfig& cfg, const fs::path& dir, bool live,
                            double time_scale) {
  const RunInputs inputs = materialize(cfg);
  fs::create_directories(dir);
  if (live) {
    LiveOptions options;
    options.time_scale = time_scale;
    const LiveRunResult r = run_live(inputs.engine, inputs.cluster, inputs.trace, options);
    write_file(dir / "report.json", report_document(cfg, inputs, r.report).dump(2) + "\n");
    write_file(dir / "requests.csv", requests_csv(r.requests));
    return r.report;
  }
  const RunResult r = run(inputs.engine, inputs.cluster, inputs.trace);
  write_file(dir / "report.json", report_document(cfg, inputs, r.report).dump(2) + "\n");
  std::ostringstream events, compute, links, decisions;
  write_event_log(r.events, events);
  write_compute_log(r.compute, compute);
  write_link_log(r.link_log, links);
  write_decision_log(r.decisions, decisions);
  write_file(dir / "events.csv", events.str());
  write_file(dir / "compute.csv", compute.str());
  write_file(dir / "links.csv", links.str());
  write_file(dir / "decisions.csv", decisions.str());
  write_file(dir / "requests.csv", requests_csv(r.requests));
  return r.report;
}

RunConfig load_with_overrides(const std::string& path, const std::optional<int64_t>& seed,
                              const std::string& out) {
  RunConfig cfg = load_run_config(path);
  apply_env_overrides(cfg);
  if (seed) {
    if (*seed < 0) throw ConfigError("--seed must be >= 0");
    cfg.engine.seed = static_cast<uint64_t>(*seed);
  }
  if (!out.empty()) cfg.out_dir = out;
  return cfg;
}

std::vector<std::string> split_values(const std::string& text) {
  std::vector<std::string> values;
  std::stringstream ss(text);
  std::string item;
  while (std::getline(ss, item, ',')) {
    item.erase(0, item.find_first_not_of(' '));
    item.erase(item.find_last_not_of(' ') + 1);
    if (!item.empty()) values.push_back(item);
  }
  return values;
}

std::string dir_safe(std::string s) {
  for (char& c : s) {
    if (!std::isalnum(static_cast<unsigned char>(c)) && c != '.' && c != '-') c = '_';
  }
  return s;
}

int cmd_simulate(const std::string& config, const std::optional<int64_t>& seed,
                 const std::string& out, bool live, double time_scale) {
  const RunConfig cfg = load_with_overrides(config, seed, out);
  const MetricsReport report = simulate_into(cfg, cfg.out_dir, live, time_scale);
  std::cout << report_table(report);
  std::cout << "outputs written to " << cfg.out_dir << "\n";
  return kExitOk;
}

int cmd_sweep(const std::string& config, const std::string& axis,
              const std::string& values_text, const std::optional<int64_t>& seed,
              const std::string& out) {
  const RunConfig base = load_with_overrides(config, seed, out);
  const std::vector<std::string> values = split_values(values_text);
  if (values.empty()) throw ConfigError("--sweep-values is empty");
  const auto axes = sweep_axes();
  if (std::find(axes.begin(), axes.end(), axis) == axes.end()) {
    throw ConfigError("unknown sweep axis '" + axis + "'");
  }
  // Validate every value before running anything.
  std::vector<RunConfig> runs;
  for (const std::string& v : values) {
    RunConfig cfg = base;
    apply_sweep_value(cfg, axis, v);
    runs.push_back(std::move(cfg));
  }
  std::ostringstream csv;
  csv << "axis,value," << report_csv_header() << '\n';
  for (size_t i = 0; i < runs.size(); ++i) {
    const fs::path dir = fs::path(base.out_dir) / (axis + "=" + dir_safe(values[i]));
    const MetricsReport report = simulate_into(runs[i], dir, false, 0);
    csv << axis << ',' << values[i] << ',' << report_csv_row(report) << '\n';
    std::cout << axis << '=' << values[i] << ": "
              << format_seconds(report.throughput_tok_s, 6) << " tok/s\n";
  }
  fs::create_directories(base.out_dir);
  write_file(fs::path(base.out_dir) / "sweep.csv", csv.str());
  std::cout << "sweep written to " << (fs::path(base.out_dir) / "sweep.csv").string()
            << "\n";
  return kExitOk;
}

int cmd_plan(const std::string& cluster_path, const std::string& model_name,
             const std::string& gpu_type, int64_t gpu_count, bool as_json) {
  const ClusterSpec cluster = load_cluster(cluster_path);
  const ModelSpec model = model_preset(model_name);
  const PartitionPlan plan = plan_deployment(cluster, model, gpu_type, gpu_count);
  if (as_json) {
    std::cout << to_json(plan).dump(2) << "\n";
  } else {
    std::cout << plan_table(plan);
    std::cout << "layers " << json(plan.layer_counts()).dump() << "\n";
  }
  return kExitOk;
}

int cmd_serve(const std::string& listen, const std::string& cluster_path,
              const std::string& journal, const std::optional<int64_t>& key_seed) {
  const auto colon = listen.rfind(':');
  if (colon == std::string::npos) throw ConfigError("--listen must be host:port");
  const std::string host = listen.substr(0, colon);
  int port = 0;
  try {
    port = std::stoi(listen.substr(colon + 1));
  } catch (const std::exception&) {
    throw ConfigError("--listen port is not a number");
  }
  if (port < 0 || port > 65535) throw ConfigError("--listen port out of range");

  ClusterSpec cluster;
  if (!cluster_path.empty()) cluster = load_cluster(cluster_path);
  ControlPlaneOptions options;
  options.journal_path = journal;
  if (key_seed) options.key_seed = static_cast<uint64_t>(*key_seed);

  // Block the shutdown signals in every thread; a dedicated waiter stops the
  // server so nothing runs inside a signal handler.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  ControlPlane plane(std::move(cluster), std::move(options));
  ControlServer server(&plane);
  const int bound = server.bind(host, port);
  std::cout << "listening on " << host << ":" << bound << std::endl;

  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    std::cerr << "shutting down\n";
    server.stop();
  });
  server.listen();
  // listen() can also return on its own (e.g. a socket error); wake the waiter.
  pthread_kill(waiter.native_handle(), SIGTERM);
  waiter.join();
  return kExitOk;
}

int run_main(int argc, char** argv) {
  CLI::App app{"linkserve: pipeline-parallel LLM serving over constrained links"};
  app.require_subcommand(0, 1);
  bool show_version = false;
  app.add_flag("--version", show_version, "Print version information as JSON");

  std::string config, out, axis, values, listen, cluster_path;
  std::string model = "llama2-7b", gpu_type, journal;
  std::optional<int64_t> seed, key_seed;
  int64_t gpu_count = 1;
  bool live = false, plan_json = false;
  double time_scale = 0.02;

  CLI::App* simulate = app.add_subcommand("simulate", "Run one simulation");
  simulate->add_option("--config", config, "Run config JSON")->required();
  simulate->add_option("--seed", seed, "Override the seed");
  simulate->add_option("--out", out, "Output directory");
  simulate->add_flag("--live", live, "Run over loopback sockets instead of virtual time");
  simulate->add_option("--time-scale", time_scale,
                       "Wall seconds per simulated second in --live mode")
      ->check(CLI::PositiveNumber);

  CLI::App* sweep = app.add_subcommand("sweep", "Run one simulation per value");
  sweep->add_option("--config", config, "Run config JSON")->required();
  sweep->add_option("--sweep-axis", axis,
                    "bandwidth | latency | rate | chunk_size | n_policy")
      ->required();
  sweep->add_option("--sweep-values", values, "Comma-separated values")->required();
  sweep->add_option("--seed", seed, "Override the seed");
  sweep->add_option("--out", out, "Output directory");

  CLI::App* plan = app.add_subcommand("plan", "Print the placement plan");
  plan->add_option("--cluster", cluster_path, "Cluster JSON")->required();
  plan->add_option("--model", model, "Model preset");
  plan->add_option("--gpu-type", gpu_type, "Required GPU type (empty: any)");
  plan->add_option("--gpu-count", gpu_count, "GPUs per node")->check(CLI::PositiveNumber);
  plan->add_flag("--json", plan_json, "Print the plan as JSON");

  CLI::App* serve = app.add_subcommand("serve", "Serve the control API");
  serve->add_option("--listen", listen,
                    "host:port, port 0 picks one (default $LINKSERVE_LISTEN or "
                    "127.0.0.1:8080)");
  serve->add_option("--cluster", cluster_path, "Initial cluster JSON");
  serve->add_option("--journal", journal, "Append-only state journal");
  serve->add_option("--key-seed", key_seed, "Seed for API key generation");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int code = app.exit(e);
    return code == 0 ? kExitOk : kExitUsage;
  }
  if (show_version) {
    std::cout << version_json() << "\n";
    return kExitOk;
  }
  try {
    if (*simulate) return cmd_simulate(config, seed, out, live, time_scale);
    if (*sweep) return cmd_sweep(config, axis, values, seed, out);
    if (*plan) return cmd_plan(cluster_path, model, gpu_type, gpu_count, plan_json);
    if (*serve) {
      if (listen.empty()) {
        const char* env = std::getenv("LINKSERVE_LISTEN");
        listen = env && *env ? env : "127.0.0.1:8080";
      }
      return cmd_serve(listen, cluster_path, journal, key_seed);
    }
    std::cerr << app.help();
    return kExitUsage;
  } catch (const ConfigError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const LoadError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitRuntime;
  }
}

}  // namespace
}  // namespace linkserve

int main(int argc, char** argv) { return linkserve::run_main(argc, argv); }
