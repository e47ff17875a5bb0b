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

#ifndef LINKSERVE_TESTS_TEST_UTIL_H_
#define LINKSERVE_TESTS_TEST_UTIL_H_

#include <string>
#include <vector>

#include "linkserve/cluster_scheduler.h"
#include "linkserve/engine.h"
#include "linkserve/workload.h"

namespace linkserve::testing {

// Identical nodes s0..s{S-1} wired as a ring with identical links, each stage
// computing in a flat `compute_s` regardless of phase and batch.
struct Ring {
  ClusterSpec cluster;
  EngineConfig cfg;
};

inline Ring flat_ring(int64_t stages, double compute_s, double latency_s,
                      double bandwidth_Bps = kInfinity) {
  Ring ring;
  ModelSpec model = model_preset("tiny");
  model.num_layers = 8 * stages;
  std::vector<NodeDescriptor> nodes;
  for (int64_t i = 0; i < stages; ++i) {
    NodeDescriptor n;
    n.name = "s" + std::to_string(i);
    n.gpu_type = "sim";
    n.gpu_mem_bytes = int64_t{1} << 34;
    ring.cluster.add_node(n);
    nodes.push_back(n);
  }
  if (stages > 1) {
    for (int64_t i = 0; i < stages; ++i) {
      LinkProfile l;
      l.from = "s" + std::to_string(i);
      l.to = "s" + std::to_string((i + 1) % stages);
      l.latency_s = latency_s;
      l.bandwidth_Bps = bandwidth_Bps;
      ring.cluster.add_link(l);
    }
  }
  ring.cfg.model = model;
  ring.cfg.partition = partition_layers(nodes, model);
  for (int64_t i = 0; i < stages; ++i) {
    ring.cfg.stage_profiles.push_back(flat_profile(i, 8, compute_s));
  }
  return ring;
}

// `count` requests arriving together at t = 0.
inline Trace burst_trace(int64_t count, int64_t input_len, int64_t output_len) {
  Trace t;
  for (int64_t i = 0; i < count; ++i) t.requests.push_back({0.0, input_len, output_len});
  return t;
}

}  // namespace linkserve::testing

#endif  // LINKSERVE_TESTS_TEST_UTIL_H_
