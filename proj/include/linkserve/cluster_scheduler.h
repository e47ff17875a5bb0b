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

#ifndef LINKSERVE_CLUSTER_SCHEDULER_H_
#define LINKSERVE_CLUSTER_SCHEDULER_H_

#include <cstdint>
#include <optional>
#include <string>
#include <vector>

#include "json.hpp"
#include "linkserve/profiler.h"

namespace linkserve {

enum class Platform { kLinux, kWindows, kContainerizedVM };

std::string_view to_string(Platform platform);
Platform parse_platform(std::string_view text);

struct NodeDescriptor {
  std::string name;
  Platform platform = Platform::kLinux;
  std::string gpu_type;
  int64_t gpu_count = 1;
  int64_t gpu_mem_bytes = 0;
  double capacity_score = 1.0;
  double cpu_score = 1.0;
  double network_score = 1.0;
  // Free-form metadata echoed by node status (e.g. address, OS version).
  std::string address;
  std::string os_version;

  int64_t total_mem_bytes() const { return gpu_count * gpu_mem_bytes; }
  // Weight used for proportional layer allocation.
  double weight() const { return capacity_score * static_cast<double>(gpu_count); }
  void validate() const;

  bool operator==(const NodeDescriptor&) const = default;
};

class ClusterSpec {
 public:
  ClusterSpec() = default;
  ClusterSpec(std::vector<NodeDescriptor> nodes, std::vector<LinkProfile> links);

  const std::vector<NodeDescriptor>& nodes() const { return nodes_; }
  const std::vector<LinkProfile>& links() const { return links_; }

  const NodeDescriptor* find_node(const std::string& name) const;
  const LinkProfile* find_link(const std::string& from,
                               const std::string& to) const;

  void add_node(NodeDescriptor node);
  void remove_node(const std::string& name);
  void add_link(LinkProfile link);
  // Applies `fn` to every link (used by parameter sweeps).
  template <typename Fn>
  void for_each_link(Fn&& fn) {
    for (LinkProfile& link : links_) fn(link);
  }

  // Node names must be unique, link endpoints registered, and at most one
  // link per ordered pair.
  void validate() const;

  // Copy restricted to the named nodes and the links among them.
  ClusterSpec subset(const std::vector<std::string>& names) const;

 private:
  std::vector<NodeDescriptor> nodes_;
  std::vector<LinkProfile> links_;
};

struct ModelSpec {
  std::string name;
  int64_t num_layers = 1;
  int64_t hidden_dim = 1;
  int64_t dtype_bytes = 2;
  int64_t bytes_per_layer = 1;

  int64_t total_bytes() const { return num_layers * bytes_per_layer; }
  // Activation payload for `tokens` tokens crossing a stage boundary.
  int64_t activation_bytes(int64_t tokens) const {
    return tokens * hidden_dim * dtype_bytes;
  }
  void validate() const;

  bool operator==(const ModelSpec&) const = default;
};

// Known model shapes: "llama2-7b", "llama2-70b-awq", "llama-30b", "tiny".
ModelSpec model_preset(const std::string& name);
std::vector<std::string> model_preset_names();

struct StageAssignment {
  std::string node;
  int64_t layer_lo = 0;  // inclusive
  int64_t layer_hi = 0;  // exclusive

  int64_t layers() const { return layer_hi - layer_lo; }
  bool operator==(const StageAssignment&) const = default;
};

struct PartitionPlan {
  std::vector<StageAssignment> stages;
  std::string head;

  std::vector<int64_t> layer_counts() const;
  std::vector<std::string> node_names() const;
  // Contiguous, disjoint cover of [0, num_layers), >= 1 layer each, head is
  // the first stage.
  void validate(int64_t num_layers) const;

  bool operator==(const PartitionPlan&) const = default;
};

// Reference payload used to score links: 1024 tokens of activations.
int64_t reference_payload_bytes(const ModelSpec& model);

// Link cost between consecutive pipeline nodes; infinity when no link.
double link_cost(const ClusterSpec& cluster, const std::string& from,
                 const std::string& to, int64_t reference_bytes);

// Node selection. Prefers a single node that can host the whole model with
// the requested GPUs; otherwise builds a chain greedily from the best head
// candidate by cheapest next link. Empty gpu_type matches any node.
std::vector<NodeDescriptor> select_nodes(const ClusterSpec& cluster,
                                         const ModelSpec& model,
                                         const std::string& required_gpu_type,
                                         int64_t required_gpu_count);

// Largest-remainder allocation of layers proportional to capacity_score *
// gpu_count, with a floor of one layer per node. Head is the first node.
PartitionPlan partition_layers(const std::vector<NodeDescriptor>& nodes,
                               const ModelSpec& model);

// Layer counts only; exposed for property tests.
std::vector<int64_t> largest_remainder_allocation(
    const std::vector<double>& weights, int64_t total);

// argmax of cpu_score * network_score, ties by name ascending.
std::string choose_head(const std::vector<NodeDescriptor>& nodes);

// Moves the chosen head to the front, keeping the relative order of the rest.
std::vector<NodeDescriptor> rotate_head_to_front(
    std::vector<NodeDescriptor> nodes, const std::string& head);

// select_nodes + choose_head + partition_layers.
PartitionPlan plan_deployment(const ClusterSpec& cluster, const ModelSpec& model,
                              const std::string& required_gpu_type,
                              int64_t required_gpu_count);

// JSON forms. Link bandwidth in documents is bits per second.
nlohmann::json to_json(const NodeDescriptor& node);
NodeDescriptor node_from_json(const nlohmann::json& j);
nlohmann::json to_json(const LinkProfile& link);
LinkProfile link_from_json(const nlohmann::json& j);
nlohmann::json to_json(const ClusterSpec& cluster);
ClusterSpec cluster_from_json(const nlohmann::json& j);
ClusterSpec load_cluster(const std::string& path);
nlohmann::json to_json(const ModelSpec& model);
ModelSpec model_from_json(const nlohmann::json& j);
nlohmann::json to_json(const PartitionPlan& plan);
PartitionPlan plan_from_json(const nlohmann::json& j);
std::string plan_table(const PartitionPlan& plan);

}  // namespace linkserve

#endif  // LINKSERVE_CLUSTER_SCHEDULER_H_
