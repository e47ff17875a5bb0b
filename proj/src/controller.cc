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

#include "linkserve/controller.h"

#include <algorithm>
#include <ostream>

namespace linkserve {

std::string_view to_string(ComputeMode mode) {
  return mode == ComputeMode::kTokenScaled ? "token_scaled" : "fixed_compute";
}

ComputeMode parse_compute_mode(std::string_view text) {
  if (text == "token_scaled") return ComputeMode::kTokenScaled;
  if (text == "fixed_compute") return ComputeMode::kFixedCompute;
  throw ConfigError("unknown compute_mode '" + std::string(text) + "'");
}

void ControllerConfig::validate() const {
  if (max_batched_tokens < 1) throw ConfigError("max_batched_tokens must be >= 1");
  if (max_batch_size < 1) throw ConfigError("max_batch_size must be >= 1");
  if (n_max < 0) throw ConfigError("n_max must be >= 1 (or 0 for the default)");
  if (!(bubble_epsilon >= 0 && bubble_epsilon < 1)) {
    throw ConfigError("bubble_epsilon must be in [0, 1)");
  }
  if (!(gain_delta >= 0)) throw ConfigError("gain_delta must be >= 0");
}

int64_t ControllerConfig::effective_n_max(int64_t stages) const {
  return n_max > 0 ? n_max : std::max<int64_t>(1, 2 * stages);
}

void PipelineShape::validate() const {
  if (stages.empty()) throw ConfigError("pipeline has no stage profiles");
  if (stages.size() > 1 && links.size() != stages.size()) {
    throw ConfigError("pipeline of " + std::to_string(stages.size()) +
                      " stages needs " + std::to_string(stages.size()) +
                      " links (forward hops plus the return hop), got " +
                      std::to_string(links.size()));
  }
  for (const LinkProfile& l : links) l.validate();
}

RoundPrediction predict_round(int64_t n, const PipelineShape& shape,
                              int64_t tokens_per_microbatch, Phase phase) {
  shape.validate();
  if (n < 1) throw ConfigError("predict_bubble: n must be >= 1");
  const int64_t tokens = std::max<int64_t>(1, tokens_per_microbatch);

  RoundPrediction r;
  for (const StageProfile& p : shape.stages) {
    const double c = compute_time(p, phase, tokens);
    r.stage_compute_sum += c;
    r.bottleneck_compute = std::max(r.bottleneck_compute, c);
  }
  if (shape.stages.size() > 1) {
    const int64_t forward_bytes = tokens * shape.activation_bytes_per_token;
    const int64_t requests = phase == Phase::kDecode ? tokens : 1;
    const int64_t feedback_bytes = requests * shape.feedback_bytes_per_request;
    for (size_t i = 0; i + 1 < shape.links.size(); ++i) {
      r.transfer_sum += transfer_time(shape.links[i], forward_bytes);
    }
    r.transfer_sum += transfer_time(shape.links.back(), feedback_bytes);
  }
  const double cycle = r.stage_compute_sum + r.transfer_sum;
  const double busy = static_cast<double>(n) * r.bottleneck_compute;
  r.round_time = std::max(cycle, busy);
  r.bubble = r.round_time > 0 ? std::clamp(1.0 - busy / r.round_time, 0.0, 1.0) : 0.0;
  return r;
}

double predict_bubble(int64_t n, const PipelineShape& shape,
                      int64_t tokens_per_microbatch, Phase phase) {
  return predict_round(n, shape, tokens_per_microbatch, phase).bubble;
}

int64_t microbatch_budget(const ControllerConfig& cfg, int64_t queued_tokens,
                          int64_t n) {
  const int64_t pool = std::clamp<int64_t>(queued_tokens, 1, cfg.max_batched_tokens);
  return (pool + n - 1) / n;
}

namespace {

// Tokens one micro-batch is expected to carry. Besides the budget, a
// micro-batch holds at most max_batch_size requests of average size.
int64_t predicted_tokens(const ControllerConfig& cfg, int64_t queued_tokens,
                         int64_t queued_requests, int64_t n, Phase phase) {
  const int64_t split = cfg.compute_mode == ComputeMode::kTokenScaled ? n : 1;
  int64_t tokens = microbatch_budget(cfg, queued_tokens, split);
  int64_t requests = queued_requests;
  // A decode micro-batch carries one token per request.
  if (requests <= 0 && phase == Phase::kDecode) requests = queued_tokens;
  if (requests > 0) {
    const int64_t per_request =
        (std::max<int64_t>(1, queued_tokens) + requests - 1) / requests;
    tokens = std::min(tokens, cfg.max_batch_size * per_request);
  }
  return std::max<int64_t>(1, tokens);
}

// Tokens per second delivered by a round of n micro-batches.
double round_throughput(const ControllerConfig& cfg, const PipelineShape& shape,
                        int64_t queued_tokens, int64_t queued_requests, int64_t n,
                        Phase phase) {
  const int64_t tokens = predicted_tokens(cfg, queued_tokens, queued_requests, n, phase);
  const RoundPrediction r = predict_round(n, shape, tokens, phase);
  return static_cast<double>(n * tokens) / r.round_time;
}

}  // namespace

ControllerDecision choose_n(const ControllerConfig& cfg, const PipelineShape& shape,
                            int64_t queued_tokens, Phase phase, int64_t queued_requests) {
  cfg.validate();
  shape.validate();
  const int64_t n_max = cfg.effective_n_max(shape.depth());

  ControllerDecision d;
  for (int64_t n = 1;; ++n) {
    const int64_t tokens = predicted_tokens(cfg, queued_tokens, queued_requests, n, phase);
    d.n_microbatches = n;
    d.token_budget_per_microbatch = microbatch_budget(cfg, queued_tokens, n);
    d.predicted_bubble_fraction = predict_bubble(n, shape, tokens, phase);
    if (d.predicted_bubble_fraction <= cfg.bubble_epsilon || n >= n_max) break;
    const double now =
        round_throughput(cfg, shape, queued_tokens, queued_requests, n, phase);
    const double next =
        round_throughput(cfg, shape, queued_tokens, queued_requests, n + 1, phase);
    if (now > 0 && (next - now) / now < cfg.gain_delta) break;
  }
  return d;
}

ControllerDecision fixed_n_decision(const ControllerConfig& cfg,
                                    const PipelineShape& shape, int64_t n,
                                    int64_t queued_tokens, Phase phase,
                                    int64_t queued_requests) {
  cfg.validate();
  if (n < 1) throw ConfigError("fixed micro-batch count must be >= 1");
  ControllerDecision d;
  d.n_microbatches = n;
  d.token_budget_per_microbatch = microbatch_budget(cfg, queued_tokens, n);
  d.predicted_bubble_fraction =
      predict_bubble(n, shape,
                     predicted_tokens(cfg, queued_tokens, queued_requests, n, phase),
                     phase);
  return d;
}

void write_decision_log(const std::vector<DecisionRecord>& log, std::ostream& out) {
  out << "iteration,n,token_budget,predicted_bubble\n";
  for (const DecisionRecord& r : log) {
    out << r.iteration << ',' << r.decision.n_microbatches << ','
        << r.decision.token_budget_per_microbatch << ','
        << format_seconds(r.decision.predicted_bubble_fraction, 6) << '\n';
  }
}

}  // namespace linkserve
