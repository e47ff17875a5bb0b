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

#ifndef LINKSERVE_CONTROL_API_H_
#define LINKSERVE_CONTROL_API_H_

#include <cstdint>
#include <fstream>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include "json.hpp"
#include "linkserve/cluster_scheduler.h"
#include "linkserve/metrics_cost.h"
#include "linkserve/transport.h"

namespace linkserve {

enum class ServiceState { kDeploying, kRunning, kDeleted };

std::string_view to_string(ServiceState state);

// Request schemas, version 1 (see docs/control_api.md).
struct ResourceSpec {
  std::string gpu_type;  // empty matches any node
  int64_t gpu_count = 1;

  void validate() const;
};

struct InferenceParams {
  int64_t max_batched_tokens = 2048;
  int64_t chunk_size = kDefaultChunkSize;

  void validate() const;
};

ResourceSpec resource_spec_from_json(const nlohmann::json& j);
InferenceParams inference_params_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ResourceSpec& spec);
nlohmann::json to_json(const InferenceParams& params);

// Handle on whatever executes a deployed service. The registry stops it
// before a service is torn down.
class EngineContext {
 public:
  virtual ~EngineContext() = default;
  virtual void stop() = 0;
  virtual bool running() const = 0;
};

struct ServiceRecord {
  std::string service_name;
  ModelSpec model;
  ResourceSpec resources;
  InferenceParams params;
  PartitionPlan plan;
  ServiceState state = ServiceState::kDeploying;
  std::string api_key;
  double created_at = 0;  // wall-clock seconds since the epoch
  int64_t request_count = 0;
  int64_t token_count = 0;
  std::optional<MetricsReport> last_report;
};

nlohmann::json to_json(const ServiceRecord& record);

struct ServiceStatus {
  std::string service_name;
  ServiceState state = ServiceState::kRunning;
  double uptime_s = 0;
  int64_t request_count = 0;
  int64_t token_count = 0;
  std::optional<MetricsReport> last_report;
};

nlohmann::json to_json(const ServiceStatus& status);

struct NodeStatusReport {
  NodeDescriptor node;
  std::string hosting_service;  // empty when free
  // Simulated figures derived from the last reported run, not measured.
  double cpu_load = 0;
  double gpu_load = 0;
  double link_throughput_Bps = 0;
};

nlohmann::json to_json(const NodeStatusReport& report);

struct ControlPlaneOptions {
  // Seeded key generator for reproducible tests; system randomness otherwise.
  std::optional<uint64_t> key_seed;
  // Append-only JSON-lines journal; replayed on construction when present.
  std::string journal_path;
  std::function<double()> wall_clock;
  std::function<std::unique_ptr<EngineContext>(const ServiceRecord&)> engine_factory;
};

// Service and node registry. Every mutation runs under one lock, so the
// registry behaves as a single-writer state machine; reads return copies.
class ControlPlane {
 public:
  explicit ControlPlane(ClusterSpec cluster = {}, ControlPlaneOptions options = {});
  ~ControlPlane();

  ServiceRecord deploy_llm_service(const std::string& name,
                                   const std::string& model_name,
                                   const ResourceSpec& resources,
                                   const InferenceParams& params);
  std::string get_api_key(const std::string& name) const;
  ServiceStatus check_service_status(const std::string& name) const;
  void delete_llm_service(const std::string& name);

  void node_access(const NodeDescriptor& node);
  NodeStatusReport check_node_status(const std::string& name) const;
  // Refuses with ConflictError while the node hosts a Running service,
  // unless `cascade` deletes that service first.
  void node_exit(const std::string& name, bool cascade = false);
  void add_link(const LinkProfile& link);

  // Folds a finished run into the service's counters and status.
  void attach_report(const std::string& name, const MetricsReport& report);

  ClusterSpec cluster() const;
  std::vector<ServiceRecord> services() const;
  // Node -> service it is allocated to.
  std::map<std::string, std::string> allocations() const;
  // Ordered record of engine stops and teardown steps.
  std::vector<std::string> audit_log() const;
  // Throws Error when a Running plan names an unregistered node or a node is
  // allocated to more than one Running service.
  void check_invariants() const;

 private:
  ServiceRecord deploy_locked(const std::string& name, const std::string& model_name,
                              const ResourceSpec& resources, const InferenceParams& params,
                              std::optional<std::string> api_key,
                              std::optional<double> created_at);
  void delete_locked(const std::string& name);
  void node_exit_locked(const std::string& name, bool cascade);
  const ServiceRecord& live_record(const std::string& name) const;
  std::string new_api_key();
  double now() const;
  void journal(const nlohmann::json& entry);
  void replay();

  mutable std::mutex mu_;
  ClusterSpec cluster_;
  ControlPlaneOptions options_;
  std::map<std::string, ServiceRecord> services_;
  std::map<std::string, std::unique_ptr<EngineContext>> engines_;
  std::map<std::string, std::string> allocations_;
  std::vector<std::string> audit_;
  std::mt19937_64 key_rng_;
  std::ofstream journal_;
  bool replaying_ = false;
};

// HTTP front end for ControlPlane.
class ControlServer {
 public:
  explicit ControlServer(ControlPlane* plane);
  ~ControlServer();

  // Binds host:port (port 0 picks one). Throws Error when the port is taken.
  int bind(const std::string& host, int port);
  // Serves until stop() is called.
  void listen();
  void stop();
  bool running() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace linkserve

#endif  // LINKSERVE_CONTROL_API_H_
