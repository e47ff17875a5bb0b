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

#include "linkserve/cluster_scheduler.h"

#include <algorithm>
#include <cstdio>
#include <fstream>
#include <numeric>
#include <set>
#include <sstream>

namespace linkserve {

using nlohmann::json;

std::string_view to_string(Platform platform) {
  switch (platform) {
    case Platform::kLinux:
      return "linux";
    case Platform::kWindows:
      return "windows";
    case Platform::kContainerizedVM:
      return "containerized_vm";
  }
  return "linux";
}

Platform parse_platform(std::string_view text) {
  if (text == "linux" || text == "Linux") return Platform::kLinux;
  if (text == "windows" || text == "Windows") return Platform::kWindows;
  if (text == "containerized_vm" || text == "ContainerizedVM") {
    return Platform::kContainerizedVM;
  }
  throw ConfigError("unknown platform '" + std::string(text) + "'");
}

void NodeDescriptor::validate() const {
  if (name.empty()) throw ConfigError("node name must not be empty");
  if (gpu_count < 1) throw ConfigError("node " + name + ": gpu_count must be >= 1");
  if (gpu_mem_bytes < 0) throw ConfigError("node " + name + ": gpu_mem_bytes < 0");
  if (!(capacity_score > 0) || !(cpu_score > 0) || !(network_score > 0)) {
    throw ConfigError("node " + name + ": scores must be > 0");
  }
}

ClusterSpec::ClusterSpec(std::vector<NodeDescriptor> nodes,
                         std::vector<LinkProfile> links)
    : nodes_(std::move(nodes)), links_(std::move(links)) {
  validate();
}

const NodeDescriptor* ClusterSpec::find_node(const std::string& name) const {
  for (const NodeDescriptor& n : nodes_) {
    if (n.name == name) return &n;
  }
  return nullptr;
}

const LinkProfile* ClusterSpec::find_link(const std::string& from,
                                          const std::string& to) const {
  for (const LinkProfile& l : links_) {
    if (l.from == from && l.to == to) return &l;
  }
  return nullptr;
}

void ClusterSpec::add_node(NodeDescriptor node) {
  node.validate();
  if (find_node(node.name)) {
    throw ConflictError("node '" + node.name + "' already registered");
  }
  nodes_.push_back(std::move(node));
}

void ClusterSpec::remove_node(const std::string& name) {
  auto it = std::find_if(nodes_.begin(), nodes_.end(),
                         [&](const NodeDescriptor& n) { return n.name == name; });
  if (it == nodes_.end()) throw NotFoundError("node '" + name + "' not found");
  nodes_.erase(it);
  std::erase_if(links_, [&](const LinkProfile& l) {
    return l.from == name || l.to == name;
  });
}

void ClusterSpec::add_link(LinkProfile link) {
  link.validate();
  if (!find_node(link.from) || !find_node(link.to)) {
    throw ConfigError("link " + link.from + "->" + link.to +
                      " references an unknown node");
  }
  if (find_link(link.from, link.to)) {
    throw ConflictError("duplicate link " + link.from + "->" + link.to);
  }
  links_.push_back(std::move(link));
}

void ClusterSpec::validate() const {
  std::set<std::string> names;
  for (const NodeDescriptor& n : nodes_) {
    n.validate();
    if (!names.insert(n.name).second) {
      throw ConfigError("duplicate node name '" + n.name + "'");
    }
  }
  std::set<std::pair<std::string, std::string>> pairs;
  for (const LinkProfile& l : links_) {
    l.validate();
    if (!names.count(l.from) || !names.count(l.to)) {
      throw ConfigError("link " + l.from + "->" + l.to +
                        " references an unknown node");
    }
    if (!pairs.emplace(l.from, l.to).second) {
      throw ConfigError("duplicate link " + l.from + "->" + l.to);
    }
  }
}

ClusterSpec ClusterSpec::subset(const std::vector<std::string>& names) const {
  std::set<std::string> keep(names.begin(), names.end());
  ClusterSpec out;
  for (const NodeDescriptor& n : nodes_) {
    if (keep.count(n.name)) out.nodes_.push_back(n);
  }
  for (const LinkProfile& l : links_) {
    if (keep.count(l.from) && keep.count(l.to)) out.links_.push_back(l);
  }
  return out;
}

void ModelSpec::validate() const {
  if (num_layers < 1 || hidden_dim < 1 || dtype_bytes < 1 || bytes_per_layer < 1) {
    throw ConfigError("model '" + name + "': all fields must be >= 1");
  }
}

ModelSpec model_preset(const std::string& name) {
  // Weight footprints: parameter count times bytes per parameter, spread over
  // the decoder layers.
  if (name == "llama2-7b") return {name, 32, 4096, 2, 421'125'000};
  if (name == "llama2-70b-awq") return {name, 80, 8192, 2, 431'125'000};
  if (name == "llama-30b") return {name, 60, 6656, 2, 1'083'333'333};
  if (name == "tiny") return {name, 8, 512, 2, 1'048'576};
  throw ConfigError("unknown model '" + name + "'");
}

std::vector<std::string> model_preset_names() {
  return {"llama2-7b", "llama2-70b-awq", "llama-30b", "tiny"};
}

std::vector<int64_t> PartitionPlan::layer_counts() const {
  std::vector<int64_t> out;
  for (const StageAssignment& s : stages) out.push_back(s.layers());
  return out;
}

std::vector<std::string> PartitionPlan::node_names() const {
  std::vector<std::string> out;
  for (const StageAssignment& s : stages) out.push_back(s.node);
  return out;
}

void PartitionPlan::validate(int64_t num_layers) const {
  if (stages.empty()) throw PlacementError("plan has no stages");
  int64_t next = 0;
  for (const StageAssignment& s : stages) {
    if (s.layer_lo != next) throw PlacementError("plan layer ranges not contiguous");
    if (s.layers() < 1) throw PlacementError("plan stage on " + s.node + " has no layers");
    next = s.layer_hi;
  }
  if (next != num_layers) throw PlacementError("plan does not cover all layers");
  if (head != stages.front().node) throw PlacementError("plan head is not the first stage");
}

int64_t reference_payload_bytes(const ModelSpec& model) {
  return model.activation_bytes(1024);
}

double link_cost(const ClusterSpec& cluster, const std::string& from,
                 const std::string& to, int64_t reference_bytes) {
  const LinkProfile* link = cluster.find_link(from, to);
  if (!link) return kInfinity;
  return transfer_time(*link, reference_bytes);
}

namespace {

bool gpu_matches(const NodeDescriptor& n, const std::string& gpu_type) {
  return gpu_type.empty() || n.gpu_type == gpu_type;
}

std::string format_bytes(int64_t bytes) { return std::to_string(bytes) + " bytes"; }

}  // namespace

std::vector<NodeDescriptor> select_nodes(const ClusterSpec& cluster,
                                         const ModelSpec& model,
                                         const std::string& required_gpu_type,
                                         int64_t required_gpu_count) {
  model.validate();
  if (cluster.nodes().empty()) throw PlacementError("cluster has no nodes");
  if (required_gpu_count < 1) required_gpu_count = 1;

  std::vector<NodeDescriptor> matching;
  for (const NodeDescriptor& n : cluster.nodes()) {
    if (gpu_matches(n, required_gpu_type)) matching.push_back(n);
  }
  std::sort(matching.begin(), matching.end(),
            [](const NodeDescriptor& a, const NodeDescriptor& b) {
              return a.name < b.name;
            });

  const int64_t need = model.total_bytes();
  int64_t available = 0;
  int64_t gpus = 0;
  for (const NodeDescriptor& n : matching) {
    available += n.total_mem_bytes();
    gpus += n.gpu_count;
  }
  if (matching.empty()) {
    throw PlacementError("no node with gpu_type '" + required_gpu_type + "'", need, 0);
  }
  if (available < need) {
    throw PlacementError("insufficient GPU memory for " + model.name +
                             ": required " + format_bytes(need) + ", available " +
                             format_bytes(available) + ", deficit " +
                             format_bytes(need - available),
                         need, available);
  }
  if (gpus < required_gpu_count) {
    throw PlacementError("insufficient GPUs: required " +
                             std::to_string(required_gpu_count) + ", available " +
                             std::to_string(gpus),
                         need, available);
  }

  // Single multi-GPU node able to host everything: tensor-parallel case.
  std::vector<NodeDescriptor> single;
  for (const NodeDescriptor& n : matching) {
    if (n.gpu_count >= required_gpu_count && n.total_mem_bytes() >= need) {
      single.push_back(n);
    }
  }
  if (!single.empty()) {
    const std::string best = choose_head(single);
    for (const NodeDescriptor& n : single) {
      if (n.name == best) return {n};
    }
  }

  // Pipeline chain, nearest-neighbour from the best head candidate.
  const int64_t ref = reference_payload_bytes(model);
  std::vector<NodeDescriptor> chain;
  std::vector<bool> used(matching.size(), false);
  const std::string head = choose_head(matching);
  for (size_t i = 0; i < matching.size(); ++i) {
    if (matching[i].name == head) {
      chain.push_back(matching[i]);
      used[i] = true;
    }
  }
  int64_t chain_mem = chain.front().total_mem_bytes();
  int64_t chain_gpus = chain.front().gpu_count;
  while (chain_mem < need || chain_gpus < required_gpu_count) {
    size_t best = matching.size();
    double best_cost = kInfinity;
    for (size_t i = 0; i < matching.size(); ++i) {
      if (used[i]) continue;
      double cost = link_cost(cluster, chain.back().name, matching[i].name, ref);
      // matching is name-sorted, so strict < keeps the lowest name on ties.
      if (cost < best_cost) {
        best_cost = cost;
        best = i;
      }
    }
    if (best == matching.size()) {
      throw PlacementError("no linked node extends the pipeline from '" +
                               chain.back().name + "': required " +
                               format_bytes(need) + ", chained " +
                               format_bytes(chain_mem),
                           need, chain_mem);
    }
    used[best] = true;
    chain.push_back(matching[best]);
    chain_mem += matching[best].total_mem_bytes();
    chain_gpus += matching[best].gpu_count;
  }
  return chain;
}

std::vector<int64_t> largest_remainder_allocation(
    const std::vector<double>& weights, int64_t total) {
  const size_t n = weights.size();
  if (n == 0) throw PlacementError("no nodes to partition over");
  if (total < static_cast<int64_t>(n)) {
    throw PlacementError("more nodes (" + std::to_string(n) + ") than layers (" +
                         std::to_string(total) + ")");
  }
  for (double w : weights) {
    if (!(w > 0) || std::isinf(w)) throw PlacementError("node weights must be > 0");
  }

  std::vector<int64_t> seats(n, 0);
  std::vector<bool> floored(n, false);
  int64_t remaining = total;

  // Nodes whose quota falls below one layer are pinned to the floor and the
  // rest re-apportioned, until no free node is below one.
  while (true) {
    double weight_sum = 0;
    for (size_t i = 0; i < n; ++i) {
      if (!floored[i]) weight_sum += weights[i];
    }
    // Decide the whole pass against the same remaining count.
    std::vector<size_t> below;
    for (size_t i = 0; i < n; ++i) {
      if (floored[i]) continue;
      if (weights[i] * static_cast<double>(remaining) < weight_sum) below.push_back(i);
    }
    const bool pinned = !below.empty();
    for (size_t i : below) {
      floored[i] = true;
      seats[i] = 1;
      --remaining;
    }
    if (!pinned) {
      // Remainders kept in numerator space (w * L mod W) so integer-valued
      // weights compare exactly.
      std::vector<double> rem(n, 0);
      int64_t assigned = 0;
      for (size_t i = 0; i < n; ++i) {
        if (floored[i]) continue;
        const double num = weights[i] * static_cast<double>(remaining);
        rem[i] = std::fmod(num, weight_sum);
        seats[i] = std::llround((num - rem[i]) / weight_sum);
        assigned += seats[i];
      }
      std::vector<size_t> order;
      for (size_t i = 0; i < n; ++i) {
        if (!floored[i]) order.push_back(i);
      }
      std::stable_sort(order.begin(), order.end(),
                       [&](size_t a, size_t b) { return rem[a] > rem[b]; });
      int64_t left = remaining - assigned;
      for (size_t k = 0; k < order.size() && left > 0; ++k, --left) {
        ++seats[order[k]];
      }
      break;
    }
  }
  return seats;
}

PartitionPlan partition_layers(const std::vector<NodeDescriptor>& nodes,
                               const ModelSpec& model) {
  model.validate();
  if (nodes.empty()) throw PlacementError("partition needs at least one node");
  if (model.num_layers < static_cast<int64_t>(nodes.size())) {
    throw PlacementError("more nodes (" + std::to_string(nodes.size()) +
                         ") than layers (" + std::to_string(model.num_layers) + ")");
  }
  std::vector<double> weights;
  for (const NodeDescriptor& n : nodes) weights.push_back(n.weight());
  std::vector<int64_t> counts = largest_remainder_allocation(weights, model.num_layers);

  PartitionPlan plan;
  int64_t lo = 0;
  for (size_t i = 0; i < nodes.size(); ++i) {
    plan.stages.push_back({nodes[i].name, lo, lo + counts[i]});
    lo += counts[i];
  }
  plan.head = nodes.front().name;
  plan.validate(model.num_layers);
  return plan;
}

std::string choose_head(const std::vector<NodeDescriptor>& nodes) {
  if (nodes.empty()) throw PlacementError("choose_head needs at least one node");
  const NodeDescriptor* best = &nodes.front();
  for (const NodeDescriptor& n : nodes) {
    const double score = n.cpu_score * n.network_score;
    const double best_score = best->cpu_score * best->network_score;
    if (score > best_score || (score == best_score && n.name < best->name)) {
      best = &n;
    }
  }
  return best->name;
}

std::vector<NodeDescriptor> rotate_head_to_front(std::vector<NodeDescriptor> nodes,
                                                 const std::string& head) {
  auto it = std::find_if(nodes.begin(), nodes.end(),
                         [&](const NodeDescriptor& n) { return n.name == head; });
  if (it != nodes.end()) std::rotate(nodes.begin(), it, it + 1);
  return nodes;
}

PartitionPlan plan_deployment(const ClusterSpec& cluster, const ModelSpec& model,
                              const std::string& required_gpu_type,
                              int64_t required_gpu_count) {
  std::vector<NodeDescriptor> nodes =
      select_nodes(cluster, model, required_gpu_type, required_gpu_count);
  nodes = rotate_head_to_front(std::move(nodes), choose_head(nodes));
  return partition_layers(nodes, model);
}

// --- JSON ------------------------------------------------------------------

namespace {

template <typename T>
T required(const json& j, const char* key, const char* what) {
  if (!j.contains(key)) {
    throw ConfigError(std::string(what) + ": missing field '" + key + "'");
  }
  try {
    return j.at(key).get<T>();
  } catch (const json::exception&) {
    throw ConfigError(std::string(what) + ": field '" + key + "' has the wrong type");
  }
}

double bandwidth_bits_from_json(const json& v) {
  if (v.is_string()) {
    auto parsed = parse_double(v.get<std::string>());
    if (!parsed) throw ConfigError("bad bandwidth '" + v.get<std::string>() + "'");
    return *parsed;
  }
  if (!v.is_number()) throw ConfigError("bandwidth must be a number or \"inf\"");
  return v.get<double>();
}

}  // namespace

json to_json(const NodeDescriptor& n) {
  return json{{"name", n.name},
              {"platform", std::string(to_string(n.platform))},
              {"gpu_type", n.gpu_type},
              {"gpu_count", n.gpu_count},
              {"gpu_mem_bytes", n.gpu_mem_bytes},
              {"capacity_score", n.capacity_score},
              {"cpu_score", n.cpu_score},
              {"network_score", n.network_score},
              {"address", n.address},
              {"os_version", n.os_version}};
}

NodeDescriptor node_from_json(const json& j) {
  if (!j.is_object()) throw ConfigError("node descriptor must be an object");
  NodeDescriptor n;
  n.name = required<std::string>(j, "name", "node");
  n.platform = parse_platform(j.value("platform", std::string("linux")));
  n.gpu_type = required<std::string>(j, "gpu_type", "node");
  n.gpu_count = required<int64_t>(j, "gpu_count", "node");
  n.gpu_mem_bytes = required<int64_t>(j, "gpu_mem_bytes", "node");
  n.capacity_score = j.value("capacity_score", 1.0);
  n.cpu_score = j.value("cpu_score", 1.0);
  n.network_score = j.value("network_score", 1.0);
  n.address = j.value("address", std::string());
  n.os_version = j.value("os_version", std::string());
  n.validate();
  return n;
}

json to_json(const LinkProfile& l) {
  json bw = std::isinf(l.bandwidth_Bps) ? json("inf") : json(l.bandwidth_Bps * 8.0);
  return json{{"from", l.from}, {"to", l.to}, {"latency_s", l.latency_s},
              {"bandwidth_bps", bw}};
}

LinkProfile link_from_json(const json& l) {
  if (!l.is_object()) throw ConfigError("link must be an object");
  LinkProfile link;
  link.from = required<std::string>(l, "from", "link");
  link.to = required<std::string>(l, "to", "link");
  link.latency_s = required<double>(l, "latency_s", "link");
  if (!l.contains("bandwidth_bps")) {
    throw ConfigError("link: missing field 'bandwidth_bps'");
  }
  link.bandwidth_Bps = bandwidth_bits_from_json(l.at("bandwidth_bps")) / 8.0;
  link.validate();
  return link;
}

json to_json(const ClusterSpec& c) {
  json nodes = json::array();
  for (const NodeDescriptor& n : c.nodes()) nodes.push_back(to_json(n));
  json links = json::array();
  for (const LinkProfile& l : c.links()) links.push_back(to_json(l));
  return json{{"nodes", nodes}, {"links", links}};
}

ClusterSpec cluster_from_json(const json& j) {
  if (!j.is_object() || !j.contains("nodes")) {
    throw ConfigError("cluster document needs a 'nodes' array");
  }
  std::vector<NodeDescriptor> nodes;
  for (const json& n : j.at("nodes")) nodes.push_back(node_from_json(n));
  std::vector<LinkProfile> links;
  if (j.contains("links")) {
    for (const json& l : j.at("links")) links.push_back(link_from_json(l));
    if (j.value("symmetric", false)) {
      std::vector<LinkProfile> reversed;
      for (const LinkProfile& l : links) {
        reversed.push_back({l.to, l.from, l.latency_s, l.bandwidth_Bps});
      }
      for (LinkProfile& r : reversed) {
        bool exists = std::any_of(links.begin(), links.end(), [&](const LinkProfile& l) {
          return l.from == r.from && l.to == r.to;
        });
        if (!exists) links.push_back(std::move(r));
      }
    }
  }
  return ClusterSpec(std::move(nodes), std::move(links));
}

ClusterSpec load_cluster(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path, 0, "cluster file not found");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw LoadError(path, 0, std::string("invalid JSON: ") + e.what());
  }
  return cluster_from_json(j);
}

json to_json(const ModelSpec& m) {
  return json{{"name", m.name},
              {"num_layers", m.num_layers},
              {"hidden_dim", m.hidden_dim},
              {"dtype_bytes", m.dtype_bytes},
              {"bytes_per_layer", m.bytes_per_layer}};
}

ModelSpec model_from_json(const json& j) {
  if (j.is_string()) return model_preset(j.get<std::string>());
  ModelSpec m;
  m.name = j.value("name", std::string("custom"));
  m.num_layers = required<int64_t>(j, "num_layers", "model");
  m.hidden_dim = required<int64_t>(j, "hidden_dim", "model");
  m.dtype_bytes = required<int64_t>(j, "dtype_bytes", "model");
  m.bytes_per_layer = required<int64_t>(j, "bytes_per_layer", "model");
  m.validate();
  return m;
}

json to_json(const PartitionPlan& plan) {
  json stages = json::array();
  for (const StageAssignment& s : plan.stages) {
    stages.push_back({{"node", s.node},
                      {"layer_lo", s.layer_lo},
                      {"layer_hi", s.layer_hi},
                      {"layers", s.layers()}});
  }
  return json{{"head", plan.head}, {"stages", stages}};
}

PartitionPlan plan_from_json(const json& j) {
  PartitionPlan plan;
  for (const json& s : j.at("stages")) {
    plan.stages.push_back({required<std::string>(s, "node", "stage"),
                           required<int64_t>(s, "layer_lo", "stage"),
                           required<int64_t>(s, "layer_hi", "stage")});
  }
  plan.head = j.value("head", plan.stages.empty() ? std::string() : plan.stages.front().node);
  return plan;
}

std::string plan_table(const PartitionPlan& plan) {
  std::ostringstream out;
  char line[160];
  std::snprintf(line, sizeof(line), "%-6s %-20s %-12s %s\n", "stage", "node", "layers", "count");
  out << line;
  for (size_t i = 0; i < plan.stages.size(); ++i) {
    const StageAssignment& s = plan.stages[i];
    std::string range = "[" + std::to_string(s.layer_lo) + ", " + std::to_string(s.layer_hi) + ")";
    std::snprintf(line, sizeof(line), "%-6zu %-20s %-12s %lld%s\n", i, s.node.c_str(),
                  range.c_str(), static_cast<long long>(s.layers()),
                  s.node == plan.head ? "  (head)" : "");
    out << line;
  }
  return out.str();
}

}  // namespace linkserve
