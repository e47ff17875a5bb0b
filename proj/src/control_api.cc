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

#include "linkserve/control_api.h"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <set>

#include "httplib.h"

namespace linkserve {

using nlohmann::json;

std::string_view to_string(ServiceState state) {
  switch (state) {
    case ServiceState::kDeploying:
      return "deploying";
    case ServiceState::kRunning:
      return "running";
    case ServiceState::kDeleted:
      return "deleted";
  }
  return "?";
}

void ResourceSpec::validate() const {
  if (gpu_count < 1) throw ConfigError("resource_spec.gpu_count must be >= 1");
}

void InferenceParams::validate() const {
  if (max_batched_tokens < 1) {
    throw ConfigError("inference_params.max_batched_tokens must be >= 1");
  }
  if (chunk_size < 1) throw ConfigError("inference_params.chunk_size must be >= 1");
}

namespace {

int64_t int_field(const json& j, const char* key, int64_t fallback, const char* where) {
  if (!j.contains(key)) return fallback;
  const json& v = j.at(key);
  if (!v.is_number_integer()) {
    throw ConfigError(std::string(where) + "." + key + " must be an integer");
  }
  return v.get<int64_t>();
}

}  // namespace

ResourceSpec resource_spec_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("resource_spec must be an object");
  ResourceSpec r;
  if (j.contains("gpu_type")) {
    if (!j.at("gpu_type").is_string()) {
      throw ConfigError("resource_spec.gpu_type must be a string");
    }
    r.gpu_type = j.at("gpu_type").get<std::string>();
  }
  r.gpu_count = int_field(j, "gpu_count", 1, "resource_spec");
  r.validate();
  return r;
}

InferenceParams inference_params_from_json(const json& j) {
  InferenceParams p;
  if (j.is_null()) return p;
  if (!j.is_object()) throw ConfigError("inference_params must be an object");
  p.max_batched_tokens =
      int_field(j, "max_batched_tokens", p.max_batched_tokens, "inference_params");
  p.chunk_size = int_field(j, "chunk_size", p.chunk_size, "inference_params");
  p.validate();
  return p;
}

json to_json(const ResourceSpec& spec) {
  return json{{"gpu_type", spec.gpu_type}, {"gpu_count", spec.gpu_count}};
}

json to_json(const InferenceParams& params) {
  return json{{"max_batched_tokens", params.max_batched_tokens},
              {"chunk_size", params.chunk_size}};
}

json to_json(const ServiceRecord& r) {
  json j{{"service_name", r.service_name},
         {"model", to_json(r.model)},
         {"resource_spec", to_json(r.resources)},
         {"inference_params", to_json(r.params)},
         {"plan", to_json(r.plan)},
         {"state", std::string(to_string(r.state))},
         {"created_at", r.created_at},
         {"request_count", r.request_count},
         {"token_count", r.token_count}};
  return j;
}

json to_json(const ServiceStatus& s) {
  json j{{"service_name", s.service_name},
         {"state", std::string(to_string(s.state))},
         {"uptime_s", std::round(s.uptime_s * 1e6) / 1e6},
         {"request_count", s.request_count},
         {"token_count", s.token_count}};
  j["metrics"] = s.last_report ? to_json(*s.last_report) : json(nullptr);
  return j;
}

json to_json(const NodeStatusReport& r) {
  json j = to_json(r.node);
  j["hosting_service"] = r.hosting_service;
  j["utilization"] = {{"simulated", true},
                      {"cpu_load", r.cpu_load},
                      {"gpu_load", r.gpu_load},
                      {"link_throughput_Bps", r.link_throughput_Bps}};
  return j;
}

namespace {

class IdleEngine : public EngineContext {
 public:
  void stop() override { running_ = false; }
  bool running() const override { return running_; }

 private:
  bool running_ = true;
};

}  // namespace

ControlPlane::ControlPlane(ClusterSpec cluster, ControlPlaneOptions options)
    : cluster_(std::move(cluster)), options_(std::move(options)) {
  if (options_.key_seed) {
    key_rng_.seed(*options_.key_seed);
  } else {
    std::random_device rd;
    key_rng_.seed((static_cast<uint64_t>(rd()) << 32) ^ rd());
  }
  if (!options_.journal_path.empty()) {
    replay();
    journal_.open(options_.journal_path, std::ios::app);
    if (!journal_) throw Error("cannot open journal " + options_.journal_path);
  }
}

ControlPlane::~ControlPlane() {
  std::lock_guard<std::mutex> lock(mu_);
  for (auto& [name, engine] : engines_) engine->stop();
  if (journal_.is_open()) journal_.flush();
}

double ControlPlane::now() const {
  if (options_.wall_clock) return options_.wall_clock();
  return std::chrono::duration<double>(
             std::chrono::system_clock::now().time_since_epoch())
      .count();
}

std::string ControlPlane::new_api_key() {
  char buf[33];
  std::snprintf(buf, sizeof(buf), "%016llx%016llx",
                static_cast<unsigned long long>(key_rng_()),
                static_cast<unsigned long long>(key_rng_()));
  return std::string(buf, 32);
}

void ControlPlane::journal(const json& entry) {
  if (replaying_ || !journal_.is_open()) return;
  journal_ << entry.dump() << '\n';
  journal_.flush();
}

void ControlPlane::replay() {
  std::ifstream in(options_.journal_path);
  if (!in) return;
  replaying_ = true;
  std::string line;
  int64_t line_no = 0;
  try {
    while (std::getline(in, line)) {
      ++line_no;
      if (line.empty()) continue;
      const json e = json::parse(line);
      const std::string op = e.at("op").get<std::string>();
      if (op == "node_access") {
        cluster_.add_node(node_from_json(e.at("node")));
      } else if (op == "add_link") {
        cluster_.add_link(link_from_json(e.at("link")));
      } else if (op == "deploy") {
        deploy_locked(e.at("name").get<std::string>(),
                      e.at("model_name").get<std::string>(),
                      resource_spec_from_json(e.at("resource_spec")),
                      inference_params_from_json(e.at("inference_params")),
                      e.at("api_key").get<std::string>(),
                      e.at("created_at").get<double>());
      } else if (op == "delete") {
        delete_locked(e.at("name").get<std::string>());
      } else if (op == "node_exit") {
        node_exit_locked(e.at("name").get<std::string>(), e.value("cascade", false));
      } else if (op == "report") {
        ServiceRecord& r = services_.at(e.at("name").get<std::string>());
        const MetricsReport m = report_from_json(e.at("report"));
        r.request_count += m.request_count;
        r.token_count += m.total_tokens;
        r.last_report = m;
      } else {
        throw Error("unknown journal op '" + op + "'");
      }
    }
  } catch (const std::exception& e) {
    replaying_ = false;
    throw LoadError(options_.journal_path, line_no, e.what());
  }
  replaying_ = false;
}

const ServiceRecord& ControlPlane::live_record(const std::string& name) const {
  auto it = services_.find(name);
  if (it == services_.end() || it->second.state == ServiceState::kDeleted) {
    throw NotFoundError("service '" + name + "' not found");
  }
  return it->second;
}

ServiceRecord ControlPlane::deploy_llm_service(const std::string& name,
                                               const std::string& model_name,
                                               const ResourceSpec& resources,
                                               const InferenceParams& params) {
  std::lock_guard<std::mutex> lock(mu_);
  return deploy_locked(name, model_name, resources, params, std::nullopt, std::nullopt);
}

ServiceRecord ControlPlane::deploy_locked(const std::string& name,
                                          const std::string& model_name,
                                          const ResourceSpec& resources,
                                          const InferenceParams& params,
                                          std::optional<std::string> api_key,
                                          std::optional<double> created_at) {
  if (name.empty()) throw ConfigError("service_name must not be empty");
  resources.validate();
  params.validate();
  auto existing = services_.find(name);
  if (existing != services_.end() && existing->second.state != ServiceState::kDeleted) {
    throw ConflictError("service '" + name + "' already exists");
  }
  const ModelSpec model = model_preset(model_name);

  std::vector<std::string> free;
  for (const NodeDescriptor& n : cluster_.nodes()) {
    if (!allocations_.contains(n.name)) free.push_back(n.name);
  }
  const PartitionPlan plan = plan_deployment(cluster_.subset(free), model,
                                             resources.gpu_type, resources.gpu_count);

  ServiceRecord r;
  r.service_name = name;
  r.model = model;
  r.resources = resources;
  r.params = params;
  r.plan = plan;
  r.state = ServiceState::kDeploying;
  r.api_key = api_key ? *api_key : new_api_key();
  r.created_at = created_at ? *created_at : now();
  for (const StageAssignment& s : plan.stages) allocations_[s.node] = name;

  engines_[name] = options_.engine_factory ? options_.engine_factory(r)
                                           : std::make_unique<IdleEngine>();
  r.state = ServiceState::kRunning;
  services_[name] = r;
  audit_.push_back("deploy " + name);
  journal({{"op", "deploy"},
           {"name", name},
           {"model_name", model_name},
           {"resource_spec", to_json(resources)},
           {"inference_params", to_json(params)},
           {"api_key", r.api_key},
           {"created_at", r.created_at}});
  return r;
}

std::string ControlPlane::get_api_key(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  return live_record(name).api_key;
}

ServiceStatus ControlPlane::check_service_status(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  const ServiceRecord& r = live_record(name);
  ServiceStatus s;
  s.service_name = r.service_name;
  s.state = r.state;
  s.uptime_s = std::max(0.0, now() - r.created_at);
  s.request_count = r.request_count;
  s.token_count = r.token_count;
  s.last_report = r.last_report;
  return s;
}

void ControlPlane::delete_llm_service(const std::string& name) {
  std::lock_guard<std::mutex> lock(mu_);
  delete_locked(name);
}

void ControlPlane::delete_locked(const std::string& name) {
  live_record(name);
  ServiceRecord& r = services_.at(name);
  auto engine = engines_.find(name);
  if (engine != engines_.end()) {
    engine->second->stop();
    audit_.push_back("stop_engine " + name);
    engines_.erase(engine);
  }
  std::erase_if(allocations_, [&](const auto& kv) { return kv.second == name; });
  audit_.push_back("release_nodes " + name);
  r.state = ServiceState::kDeleted;
  audit_.push_back("deleted " + name);
  journal({{"op", "delete"}, {"name", name}});
}

void ControlPlane::node_access(const NodeDescriptor& node) {
  std::lock_guard<std::mutex> lock(mu_);
  cluster_.add_node(node);
  journal({{"op", "node_access"}, {"node", to_json(node)}});
}

void ControlPlane::add_link(const LinkProfile& link) {
  std::lock_guard<std::mutex> lock(mu_);
  cluster_.add_link(link);
  journal({{"op", "add_link"}, {"link", to_json(link)}});
}

NodeStatusReport ControlPlane::check_node_status(const std::string& name) const {
  std::lock_guard<std::mutex> lock(mu_);
  const NodeDescriptor* node = cluster_.find_node(name);
  if (!node) throw NotFoundError("node '" + name + "' not found");
  NodeStatusReport report;
  report.node = *node;
  auto alloc = allocations_.find(name);
  if (alloc == allocations_.end()) return report;
  report.hosting_service = alloc->second;
  const ServiceRecord& r = services_.at(alloc->second);
  if (!r.last_report) return report;
  const auto& stages = r.plan.stages;
  for (size_t i = 0; i < stages.size(); ++i) {
    if (stages[i].node != name) continue;
    const auto& bubbles = r.last_report->bubble_fraction_per_stage;
    if (i < bubbles.size()) report.gpu_load = 1.0 - bubbles[i];
    // Each emitted token crosses every forward hop once as activations; the
    // last stage only returns token ids.
    const int64_t bytes_per_token =
        i + 1 < stages.size() ? r.model.activation_bytes(1) : 8;
    report.link_throughput_Bps =
        stages.size() > 1 ? r.last_report->throughput_tok_s * bytes_per_token : 0.0;
  }
  return report;
}

void ControlPlane::node_exit(const std::string& name, bool cascade) {
  std::lock_guard<std::mutex> lock(mu_);
  node_exit_locked(name, cascade);
}

void ControlPlane::node_exit_locked(const std::string& name, bool cascade) {
  if (!cluster_.find_node(name)) throw NotFoundError("node '" + name + "' not found");
  auto alloc = allocations_.find(name);
  if (alloc != allocations_.end()) {
    const std::string service = alloc->second;
    if (!cascade) {
      throw ConflictError("node '" + name + "' hosts a stage of running service '" +
                          service + "'");
    }
    delete_locked(service);
  }
  cluster_.remove_node(name);
  audit_.push_back("node_exit " + name);
  journal({{"op", "node_exit"}, {"name", name}, {"cascade", cascade}});
}

void ControlPlane::attach_report(const std::string& name, const MetricsReport& report) {
  std::lock_guard<std::mutex> lock(mu_);
  live_record(name);
  ServiceRecord& r = services_.at(name);
  r.request_count += report.request_count;
  r.token_count += report.total_tokens;
  r.last_report = report;
  journal({{"op", "report"}, {"name", name}, {"report", to_json(report)}});
}

ClusterSpec ControlPlane::cluster() const {
  std::lock_guard<std::mutex> lock(mu_);
  return cluster_;
}

std::vector<ServiceRecord> ControlPlane::services() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::vector<ServiceRecord> out;
  for (const auto& [name, r] : services_) out.push_back(r);
  return out;
}

std::map<std::string, std::string> ControlPlane::allocations() const {
  std::lock_guard<std::mutex> lock(mu_);
  return allocations_;
}

std::vector<std::string> ControlPlane::audit_log() const {
  std::lock_guard<std::mutex> lock(mu_);
  return audit_;
}

void ControlPlane::check_invariants() const {
  std::lock_guard<std::mutex> lock(mu_);
  std::map<std::string, std::string> owner;
  for (const auto& [name, r] : services_) {
    if (r.state != ServiceState::kRunning) continue;
    for (const StageAssignment& s : r.plan.stages) {
      if (!cluster_.find_node(s.node)) {
        throw Error("running service '" + name + "' uses unregistered node '" +
                    s.node + "'");
      }
      auto [it, inserted] = owner.emplace(s.node, name);
      if (!inserted && it->second != name) {
        throw Error("node '" + s.node + "' booked by both '" + it->second +
                    "' and '" + name + "'");
      }
    }
  }
  for (const auto& [node, service] : allocations_) {
    auto it = services_.find(service);
    if (it == services_.end() || it->second.state != ServiceState::kRunning) {
      throw Error("node '" + node + "' allocated to inactive service '" + service + "'");
    }
  }
}

// --- HTTP -----------------------------------------------------------------

struct ControlServer::Impl {
  ControlPlane* plane;
  httplib::Server server;
};

namespace {

void send_error(httplib::Response& res, int status, const std::string& code,
                const std::string& message, json details = json::object()) {
  res.status = status;
  res.set_content(json{{"code", code}, {"message", message}, {"details", details}}.dump(),
                  "application/json");
}

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

template <typename Fn>
void guarded(httplib::Response& res, Fn&& fn) {
  try {
    fn();
  } catch (const NotFoundError& e) {
    send_error(res, 404, "not_found", e.what());
  } catch (const ConflictError& e) {
    send_error(res, 409, "conflict", e.what());
  } catch (const PlacementError& e) {
    send_error(res, 422, "placement_failed", e.what(),
               {{"required_bytes", e.required_bytes()},
                {"available_bytes", e.available_bytes()},
                {"deficit_bytes", e.deficit_bytes()}});
  } catch (const ConfigError& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const json::exception& e) {
    send_error(res, 400, "bad_request", e.what());
  } catch (const std::exception& e) {
    send_error(res, 500, "internal", e.what());
  }
}

json parse_body(const httplib::Request& req) {
  try {
    return json::parse(req.body);
  } catch (const json::parse_error& e) {
    throw ConfigError(std::string("request body is not JSON: ") + e.what());
  }
}

}  // namespace

ControlServer::ControlServer(ControlPlane* plane) : impl_(std::make_unique<Impl>()) {
  impl_->plane = plane;
  httplib::Server& s = impl_->server;
  // The library default also sets SO_REUSEPORT, which lets a second server
  // share a port that is already serving.
  s.set_socket_options([](socket_t sock) {
    int yes = 1;
    ::setsockopt(sock, SOL_SOCKET, SO_REUSEADDR, &yes, sizeof(yes));
  });

  s.Post("/services", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const json body = parse_body(req);
      if (!body.contains("service_name") || !body.at("service_name").is_string()) {
        throw ConfigError("service_name is required");
      }
      if (!body.contains("model_name") || !body.at("model_name").is_string()) {
        throw ConfigError("model_name is required");
      }
      const ServiceRecord r = impl_->plane->deploy_llm_service(
          body.at("service_name").get<std::string>(),
          body.at("model_name").get<std::string>(),
          resource_spec_from_json(body.value("resource_spec", json::object())),
          inference_params_from_json(body.value("inference_params", json())));
      send_json(res, 201, to_json(r));
    });
  });
  s.Get(R"(/services/([^/]+)/key)",
        [this](const httplib::Request& req, httplib::Response& res) {
          guarded(res, [&] {
            send_json(res, 200, {{"api_key", impl_->plane->get_api_key(req.matches[1])}});
          });
        });
  s.Get(R"(/services/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      send_json(res, 200, to_json(impl_->plane->check_service_status(req.matches[1])));
    });
  });
  s.Delete(R"(/services/([^/]+))",
           [this](const httplib::Request& req, httplib::Response& res) {
             guarded(res, [&] {
               impl_->plane->delete_llm_service(req.matches[1]);
               send_json(res, 200, {{"deleted", std::string(req.matches[1])}});
             });
           });
  s.Post("/nodes", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const NodeDescriptor node = node_from_json(parse_body(req));
      impl_->plane->node_access(node);
      send_json(res, 201, to_json(node));
    });
  });
  s.Get(R"(/nodes/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      send_json(res, 200, to_json(impl_->plane->check_node_status(req.matches[1])));
    });
  });
  s.Delete(R"(/nodes/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const bool cascade = req.has_param("cascade") && req.get_param_value("cascade") == "true";
      impl_->plane->node_exit(req.matches[1], cascade);
      send_json(res, 200, {{"removed", std::string(req.matches[1])}});
    });
  });
  s.Post("/links", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const LinkProfile link = link_from_json(parse_body(req));
      impl_->plane->add_link(link);
      send_json(res, 201, to_json(link));
    });
  });
}

ControlServer::~ControlServer() { stop(); }

int ControlServer::bind(const std::string& host, int port) {
  if (port == 0) {
    const int bound = impl_->server.bind_to_any_port(host);
    if (bound < 0) throw Error("cannot bind " + host);
    return bound;
  }
  if (!impl_->server.bind_to_port(host, port)) {
    throw Error("cannot bind " + host + ":" + std::to_string(port) +
                " (address in use?)");
  }
  return port;
}

void ControlServer::listen() { impl_->server.listen_after_bind(); }

void ControlServer::stop() {
  if (impl_) impl_->server.stop();
}

bool ControlServer::running() const { return impl_->server.is_running(); }

}  // namespace linkserve
