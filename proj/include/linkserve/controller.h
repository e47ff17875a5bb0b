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

#ifndef LINKSERVE_CONTROLLER_H_
#define LINKSERVE_CONTROLLER_H_

#include <cstdint>
#include <iosfwd>
#include <vector>

#include "linkserve/profiler.h"

namespace linkserve {

// How per-micro-batch compute is predicted as N grows.
//   kTokenScaled: the token budget is divided across N micro-batches, so each
//                 micro-batch gets cheaper.
//   kFixedCompute: every micro-batch is predicted at the undivided size.
enum class ComputeMode { kTokenScaled, kFixedCompute };

std::string_view to_string(ComputeMode mode);
ComputeMode parse_compute_mode(std::string_view text);

struct ControllerConfig {
  int64_t max_batched_tokens = 2048;
  int64_t max_batch_size = 256;
  // 0 means "twice the pipeline depth".
  int64_t n_max = 0;
  double bubble_epsilon = 0.02;
  double gain_delta = 0.01;
  ComputeMode compute_mode = ComputeMode::kTokenScaled;

  void validate() const;
  int64_t effective_n_max(int64_t stages) const;
};

struct ControllerDecision {
  int64_t n_microbatches = 1;
  int64_t token_budget_per_microbatch = 0;
  double predicted_bubble_fraction = 0.0;
};

// What the controller knows about the pipeline: per-stage compute tables and
// the S links of the ring (stage s -> s+1, then last -> head). A single-stage
// pipeline has no links.
struct PipelineShape {
  std::vector<StageProfile> stages;
  std::vector<LinkProfile> links;
  int64_t activation_bytes_per_token = 1;
  // Sampled token id returned to the head per request.
  int64_t feedback_bytes_per_request = 8;

  int64_t depth() const { return static_cast<int64_t>(stages.size()); }
  void validate() const;
};

struct RoundPrediction {
  double stage_compute_sum = 0;
  double transfer_sum = 0;
  double bottleneck_compute = 0;
  double round_time = 0;
  double bubble = 0;
};

// Steady-state round of n micro-batches of `tokens_per_microbatch` tokens
// cycling through the ring. round_time = max(sum compute + sum transfers,
// n * bottleneck compute); bubble = 1 - n * bottleneck / round_time.
RoundPrediction predict_round(int64_t n, const PipelineShape& shape,
                              int64_t tokens_per_microbatch, Phase phase);

double predict_bubble(int64_t n, const PipelineShape& shape,
                      int64_t tokens_per_microbatch, Phase phase);

// Tokens a micro-batch carries when `queued_tokens` are split n ways under
// the config's caps.
int64_t microbatch_budget(const ControllerConfig& cfg, int64_t queued_tokens,
                          int64_t n);

// Incremental search from N = 1. Stops at the first N whose predicted bubble
// is <= epsilon, whose N -> N+1 throughput gain is < delta, or at n_max.
// `queued_requests` (0 = unknown) lets the prediction respect max_batch_size;
// for decode load it defaults to one request per token.
ControllerDecision choose_n(const ControllerConfig& cfg, const PipelineShape& shape,
                            int64_t queued_tokens, Phase phase,
                            int64_t queued_requests = 0);

// The same bookkeeping for a pinned N (baseline runs).
ControllerDecision fixed_n_decision(const ControllerConfig& cfg,
                                    const PipelineShape& shape, int64_t n,
                                    int64_t queued_tokens, Phase phase,
                                    int64_t queued_requests = 0);

struct DecisionRecord {
  int64_t iteration = 0;
  ControllerDecision decision;
};

// CSV `iteration,n,token_budget,predicted_bubble`.
void write_decision_log(const std::vector<DecisionRecord>& log, std::ostream& out);

}  // namespace linkserve

#endif  // LINKSERVE_CONTROLLER_H_
