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

#ifndef LINKSERVE_ENGINE_H_
#define LINKSERVE_ENGINE_H_

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <map>
#include <string>
#include <vector>

#include "linkserve/cluster_scheduler.h"
#include "linkserve/controller.h"
#include "linkserve/metrics_cost.h"
#include "linkserve/transport.h"
#include "linkserve/workload.h"

namespace linkserve {

enum class MicroBatchPhase { kPrefill, kDecode, kMixed };
enum class SchedulingPolicy { kDecodePriority, kFcfs };
// kSeparate keeps prefill and decode requests in different micro-batches.
enum class BatchingMode { kSeparate, kMixed };
enum class NPolicy { kDynamic, kFixed };

std::string_view to_string(MicroBatchPhase phase);
std::string_view to_string(SchedulingPolicy policy);
std::string_view to_string(BatchingMode mode);
SchedulingPolicy parse_scheduling_policy(std::string_view text);
BatchingMode parse_batching_mode(std::string_view text);

struct MicroBatch {
  int64_t id = 0;
  std::vector<int64_t> request_ids;
  std::vector<int64_t> prefill_ids;  // subset of request_ids
  MicroBatchPhase phase = MicroBatchPhase::kDecode;
  int64_t batched_tokens = 0;
  Nanos created_at = 0;

  Phase compute_phase() const {
    return phase == MicroBatchPhase::kDecode ? Phase::kDecode : Phase::kPrefill;
  }
  PayloadClass payload_class() const {
    return phase == MicroBatchPhase::kDecode ? PayloadClass::kDecode
                                             : PayloadClass::kPrefill;
  }
};

// A request as seen by admission: decoding requests bring one new token,
// queued prefill requests bring their whole prompt.
struct PendingRequest {
  int64_t id = 0;
  int64_t new_tokens = 1;
};

struct AdmissionLimits {
  // Micro-batches that may be formed now (n minus those still in flight).
  int64_t free_slots = 1;
  int64_t max_batch_size = 256;
  BatchingMode mode = BatchingMode::kSeparate;
  // Most micro-batches decodes may occupy; negative means no limit.
  int64_t decode_slots = -1;
};

// Continuous batching for one iteration. Ready decoding requests go first,
// spread over as few micro-batches as the budget and batch size allow,
// lightest-loaded first. Queued prefill requests follow strictly FCFS into
// the lightest micro-batch with room (only empty or prefill micro-batches in
// separate mode); a prompt larger than the budget is admitted alone into an
// empty micro-batch. Admission stops at the first prefill that cannot be
// placed. Micro-batch ids are 0..k-1; the caller renumbers them.
std::vector<MicroBatch> admit_and_batch(const std::vector<PendingRequest>& decoding,
                                        const std::vector<PendingRequest>& queued,
                                        const ControllerDecision& decision,
                                        const AdmissionLimits& limits, Nanos clock);

struct EngineConfig {
  PartitionPlan partition;
  ModelSpec model;
  // One profile per stage, in pipeline order.
  std::vector<StageProfile> stage_profiles;
  ControllerConfig controller;
  NPolicy n_policy = NPolicy::kDynamic;
  int64_t fixed_n = 1;
  // Re-run the controller every `decision_stride` iterations.
  int64_t decision_stride = 1;
  int64_t chunk_size = kDefaultChunkSize;
  SchedulingPolicy scheduling_policy = SchedulingPolicy::kDecodePriority;
  BatchingMode batching = BatchingMode::kSeparate;
  uint64_t seed = 0;

  void validate() const;
};

// Stage profiles plus the ring of links (stage i -> i+1, last -> head) taken
// from the cluster. Throws ConfigError when a node or link is missing.
PipelineShape build_pipeline(const EngineConfig& cfg, const ClusterSpec& cluster);

// Request queue, micro-batch controller and batch scheduler of the head
// stage. Shared by the virtual-time and the socket engines so both account
// tokens identically.
class HeadScheduler {
 public:
  HeadScheduler(const EngineConfig& cfg, PipelineShape shape,
                std::vector<Request>* requests);

  void add_arrival(int64_t request_id);
  // Runs the controller and admission; returns the micro-batches to feed to
  // stage 0 (possibly none).
  std::vector<MicroBatch> form_iteration(Nanos now);
  // A micro-batch came back around the ring: one token per request.
  void complete(int64_t micro_batch_id, Nanos now);

  const MicroBatch& micro_batch(int64_t id) const;
  int64_t in_flight() const { return static_cast<int64_t>(in_flight_.size()); }
  bool idle() const;
  const std::vector<DecisionRecord>& decisions() const { return decisions_; }

 private:
  ControllerDecision decide(int64_t load, int64_t requests, Phase phase);

  EngineConfig cfg_;
  PipelineShape shape_;
  std::vector<Request>* requests_;
  std::deque<int64_t> queued_prefill_;
  std::deque<int64_t> ready_decodes_;
  // Admitted and unfinished; each brings one decode token per iteration.
  int64_t active_ = 0;
  std::map<int64_t, MicroBatch> in_flight_;
  std::vector<DecisionRecord> decisions_;
  ControllerDecision last_decision_;
  bool last_had_prefill_ = false;
  int64_t iteration_ = 0;
  int64_t next_micro_batch_id_ = 0;
};

// Tie order at equal timestamps; see the event log.
enum class EventKind {
  kChunkSent,
  kPayloadDelivered,
  kComputeDone,
  kArrival,
  kIterationBoundary
};

std::string_view to_string(EventKind kind);

struct EngineEvent {
  Nanos time = 0;
  EventKind kind = EventKind::kArrival;
  int64_t subject = 0;
  int64_t stage = -1;  // link index for transport events

  bool operator==(const EngineEvent&) const = default;
};

struct ComputeInterval {
  int64_t stage = 0;
  int64_t micro_batch_id = 0;
  Nanos start = 0;
  Nanos end = 0;
};

struct TokenEmission {
  Nanos time = 0;
  int64_t request_id = 0;
};

struct RunResult {
  MetricsReport report;
  std::vector<Request> requests;
  std::vector<EngineEvent> events;
  std::vector<ComputeInterval> compute;
  std::vector<LinkEvent> link_log;
  std::vector<DecisionRecord> decisions;
  std::vector<TokenEmission> emissions;
  int64_t stages = 0;
};

// Discrete-event run of the whole trace to completion on a virtual clock.
RunResult run(const EngineConfig& cfg, const ClusterSpec& cluster, const Trace& trace);

// Idle fraction of `stage` over [t0, t1] seconds from the compute timeline.
double measure_bubble(const std::vector<ComputeInterval>& compute, int64_t stage,
                      double t0, double t1);

// Tokens emitted in [t0, t1) divided by the window length.
double windowed_throughput(const std::vector<TokenEmission>& emissions, double t0,
                           double t1);

// CSV `time_s,kind,subject,stage`.
void write_event_log(const std::vector<EngineEvent>& events, std::ostream& out);
// CSV `stage,micro_batch,start_s,end_s`.
void write_compute_log(const std::vector<ComputeInterval>& compute, std::ostream& out);

}  // namespace linkserve

#endif  // LINKSERVE_ENGINE_H_
