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

#ifndef LINKSERVE_LIVE_ENGINE_H_
#define LINKSERVE_LIVE_ENGINE_H_

#include <cstdint>
#include <vector>

#include "linkserve/engine.h"

namespace linkserve {

struct LiveOptions {
  // Wall-clock seconds per simulated second. Compute, serialization and
  // propagation delays are slept at this scale.
  double time_scale = 0.02;
};

struct LiveRunResult {
  MetricsReport report;
  std::vector<Request> requests;
  int64_t frames_sent = 0;
  int64_t bytes_sent = 0;
};

// Runs the pipeline with one thread per stage and a sender/receiver pair per
// link over loopback TCP. Workers communicate only through channels; the
// head thread (the caller) owns the requests and writes the report. Link
// failures surface as ProtocolError after all workers are joined.
LiveRunResult run_live(const EngineConfig& cfg, const ClusterSpec& cluster,
                       const Trace& trace, const LiveOptions& options = {});

}  // namespace linkserve

#endif  // LINKSERVE_LIVE_ENGINE_H_
