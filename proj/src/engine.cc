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

#include "linkserve/engine.h"

#include <algorithm>
#include <optional>
#include <ostream>
#include <queue>
#include <tuple>

namespace linkserve {

std::string_view to_string(MicroBatchPhase phase) {
  switch (phase) {
    case MicroBatchPhase::kPrefill:
      return "prefill";
    case MicroBatchPhase::kDecode:
      return "decode";
    case MicroBatchPhase::kMixed:
      return "mixed";
  }
  return "?";
}

std::string_view to_string(SchedulingPolicy policy) {
  return policy == SchedulingPolicy::kDecodePriority ? "decode_priority" : "fcfs";
}

std::string_view to_string(BatchingMode mode) {
  return mode == BatchingMode::kSeparate ? "separate" : "mixed";
}

SchedulingPolicy parse_scheduling_policy(std::string_view text) {
  if (text == "decode_priority") return SchedulingPolicy::kDecodePriority;
  if (text == "fcfs") return SchedulingPolicy::kFcfs;
  throw ConfigError("unknown scheduling_policy '" + std::string(text) + "'");
}

BatchingMode parse_batching_mode(std::string_view text) {
  if (text == "separate") return BatchingMode::kSeparate;
  if (text == "mixed") return BatchingMode::kMixed;
  throw ConfigError("unknown batching mode '" + std::string(text) + "'");
}

std::string_view to_string(EventKind kind) {
  switch (kind) {
    case EventKind::kChunkSent:
      return "chunk_sent";
    case EventKind::kPayloadDelivered:
      return "payload_delivered";
    case EventKind::kComputeDone:
      return "compute_done";
    case EventKind::kArrival:
      return "arrival";
    case EventKind::kIterationBoundary:
      return "iteration_boundary";
  }
  return "?";
}

std::vector<MicroBatch> admit_and_batch(const std::vector<PendingRequest>& decoding,
                                        const std::vector<PendingRequest>& queued,
                                        const ControllerDecision& decision,
                                        const AdmissionLimits& limits, Nanos clock) {
  const int64_t slots = limits.free_slots;
  if (slots <= 0 || (decoding.empty() && queued.empty())) return {};
  const int64_t budget = std::max<int64_t>(1, decision.token_budget_per_microbatch);
  const int64_t max_size = std::max<int64_t>(1, limits.max_batch_size);

  std::vector<MicroBatch> mbs(static_cast<size_t>(slots));
  std::vector<bool> has_decode(mbs.size(), false);
  auto size_of = [&](size_t j) { return static_cast<int64_t>(mbs[j].request_ids.size()); };

  if (!decoding.empty()) {
    const int64_t cap = std::min(budget, max_size);
    const int64_t wanted = (static_cast<int64_t>(decoding.size()) + cap - 1) / cap;
    int64_t groups_limit = std::min(slots, wanted);
    if (limits.decode_slots >= 0) groups_limit = std::min(groups_limit, limits.decode_slots);
    const size_t groups = static_cast<size_t>(groups_limit);
    for (const PendingRequest& r : decoding) {
      std::optional<size_t> best;
      for (size_t j = 0; j < groups; ++j) {
        if (size_of(j) >= cap) continue;
        if (!best || mbs[j].batched_tokens < mbs[*best].batched_tokens) best = j;
      }
      if (!best) break;
      mbs[*best].request_ids.push_back(r.id);
      mbs[*best].batched_tokens += r.new_tokens;
      has_decode[*best] = true;
    }
  }

  for (const PendingRequest& r : queued) {
    std::optional<size_t> best;
    for (size_t j = 0; j < mbs.size(); ++j) {
      if (limits.mode == BatchingMode::kSeparate && has_decode[j]) continue;
      if (size_of(j) >= max_size) continue;
      if (mbs[j].batched_tokens + r.new_tokens > budget) continue;
      if (!best || mbs[j].batched_tokens < mbs[*best].batched_tokens) best = j;
    }
    if (!best && r.new_tokens > budget) {
      // Oversize prompt: admitted alone, exceeding the budget.
      for (size_t j = 0; j < mbs.size(); ++j) {
        if (mbs[j].request_ids.empty()) {
          best = j;
          break;
        }
      }
    }
    if (!best) break;
    mbs[*best].request_ids.push_back(r.id);
    mbs[*best].prefill_ids.push_back(r.id);
    mbs[*best].batched_tokens += r.new_tokens;
  }

  std::vector<MicroBatch> out;
  for (MicroBatch& mb : mbs) {
    if (mb.request_ids.empty()) continue;
    if (mb.prefill_ids.empty()) {
      mb.phase = MicroBatchPhase::kDecode;
    } else if (mb.prefill_ids.size() == mb.request_ids.size()) {
      mb.phase = MicroBatchPhase::kPrefill;
    } else {
      mb.phase = MicroBatchPhase::kMixed;
    }
    mb.id = static_cast<int64_t>(out.size());
    mb.created_at = clock;
    out.push_back(std::move(mb));
  }
  return out;
}

void EngineConfig::validate() const {
  model.validate();
  controller.validate();
  if (partition.stages.empty()) throw ConfigError("partition has no stages");
  partition.validate(model.num_layers);
  if (stage_profiles.size() != partition.stages.size()) {
    throw ConfigError("need one stage profile per stage: " +
                      std::to_string(partition.stages.size()) + " stages, " +
                      std::to_string(stage_profiles.size()) + " profiles");
  }
  for (const StageProfile& p : stage_profiles) p.validate();
  if (n_policy == NPolicy::kFixed && fixed_n < 1) {
    throw ConfigError("fixed micro-batch count must be >= 1");
  }
  if (decision_stride < 1) throw ConfigError("decision_stride must be >= 1");
  if (chunk_size < 1) throw ConfigError("chunk_size must be >= 1 byte");
}

PipelineShape build_pipeline(const EngineConfig& cfg, const ClusterSpec& cluster) {
  cfg.validate();
  PipelineShape shape;
  shape.stages = cfg.stage_profiles;
  shape.activation_bytes_per_token = cfg.model.activation_bytes(1);
  const size_t s = cfg.partition.stages.size();
  for (const StageAssignment& a : cfg.partition.stages) {
    if (!cluster.find_node(a.node)) {
      throw ConfigError("stage node '" + a.node + "' is not in the cluster");
    }
  }
  if (s > 1) {
    for (size_t i = 0; i < s; ++i) {
      const std::string& from = cfg.partition.stages[i].node;
      const std::string& to = cfg.partition.stages[(i + 1) % s].node;
      const LinkProfile* link = cluster.find_link(from, to);
      if (!link) throw ConfigError("no link " + from + " -> " + to + " in the cluster");
      shape.links.push_back(*link);
    }
  }
  shape.validate();
  return shape;
}

HeadScheduler::HeadScheduler(const EngineConfig& cfg, PipelineShape shape,
                             std::vector<Request>* requests)
    : cfg_(cfg), shape_(std::move(shape)), requests_(requests) {}

void HeadScheduler::add_arrival(int64_t request_id) {
  queued_prefill_.push_back(request_id);
}

bool HeadScheduler::idle() const {
  return queued_prefill_.empty() && ready_decodes_.empty() && in_flight_.empty();
}

const MicroBatch& HeadScheduler::micro_batch(int64_t id) const {
  auto it = in_flight_.find(id);
  if (it == in_flight_.end()) {
    throw ProtocolError("micro-batch " + std::to_string(id) + " is not in flight");
  }
  return it->second;
}

ControllerDecision HeadScheduler::decide(int64_t load, int64_t requests, Phase phase) {
  if (cfg_.n_policy == NPolicy::kFixed) {
    return fixed_n_decision(cfg_.controller, shape_, cfg_.fixed_n, load, phase, requests);
  }
  return choose_n(cfg_.controller, shape_, load, phase, requests);
}

std::vector<MicroBatch> HeadScheduler::form_iteration(Nanos now) {
  if (queued_prefill_.empty() && ready_decodes_.empty()) return {};

  int64_t load = active_;
  for (int64_t id : queued_prefill_) load += (*requests_)[id].input_len();
  const int64_t requests = active_ + static_cast<int64_t>(queued_prefill_.size());
  const Phase phase = queued_prefill_.empty() ? Phase::kDecode : Phase::kPrefill;
  const bool reuse = iteration_ > 0 && iteration_ % cfg_.decision_stride != 0;
  const ControllerDecision d = reuse ? last_decision_ : decide(load, requests, phase);
  last_decision_ = d;

  AdmissionLimits limits;
  limits.free_slots = d.n_microbatches - in_flight();
  limits.max_batch_size = cfg_.controller.max_batch_size;
  limits.mode = cfg_.batching;
  if (limits.free_slots <= 0) return {};
  // Returning decode groups would otherwise claim every freed slot and hold
  // prompts back until they finish. When nothing prefilled last iteration and
  // other micro-batches keep decoding moving, hand one slot to the queue.
  if (cfg_.batching == BatchingMode::kSeparate && !queued_prefill_.empty() &&
      in_flight() > 0 && !last_had_prefill_) {
    limits.decode_slots = limits.free_slots - 1;
  }

  std::vector<PendingRequest> decoding;
  for (int64_t id : ready_decodes_) decoding.push_back({id, 1});
  // Admission is strict FCFS and bounded by slots * batch size, so a prefix
  // of the queue is all it can ever look at.
  std::vector<PendingRequest> queued;
  const size_t horizon = static_cast<size_t>(limits.free_slots * limits.max_batch_size);
  for (int64_t id : queued_prefill_) {
    if (queued.size() > horizon) break;
    queued.push_back({id, (*requests_)[id].input_len()});
  }

  std::vector<MicroBatch> mbs = admit_and_batch(decoding, queued, d, limits, now);
  if (mbs.empty()) return mbs;

  size_t decodes = 0;
  size_t prefills = 0;
  for (MicroBatch& mb : mbs) {
    mb.id = next_micro_batch_id_++;
    prefills += mb.prefill_ids.size();
    decodes += mb.request_ids.size() - mb.prefill_ids.size();
    in_flight_.emplace(mb.id, mb);
  }
  // Both admissions take a prefix of their queue.
  for (size_t i = 0; i < prefills; ++i) {
    (*requests_)[queued_prefill_.front()].begin_prefill(nanos_to_seconds(now));
    queued_prefill_.pop_front();
  }
  active_ += static_cast<int64_t>(prefills);
  ready_decodes_.erase(ready_decodes_.begin(),
                       ready_decodes_.begin() + static_cast<std::ptrdiff_t>(decodes));
  last_had_prefill_ = prefills > 0;
  decisions_.push_back({iteration_, d});
  ++iteration_;
  return mbs;
}

void HeadScheduler::complete(int64_t micro_batch_id, Nanos now) {
  auto it = in_flight_.find(micro_batch_id);
  if (it == in_flight_.end()) {
    throw ProtocolError("micro-batch " + std::to_string(micro_batch_id) +
                        " returned twice or never sent");
  }
  const MicroBatch mb = std::move(it->second);
  in_flight_.erase(it);
  const double t = nanos_to_seconds(now);
  for (int64_t id : mb.request_ids) {
    Request& r = (*requests_)[id];
    r.emit_token(t);
    if (r.finished()) {
      --active_;
    } else {
      ready_decodes_.push_back(id);
    }
  }
}

namespace {

struct Scheduled {
  Nanos time;
  EventKind kind;
  int64_t subject;
  int64_t stage;
  uint64_t seq;
};

struct Later {
  bool operator()(const Scheduled& a, const Scheduled& b) const {
    return std::tie(a.time, a.kind, a.subject, a.stage, a.seq) >
           std::tie(b.time, b.kind, b.subject, b.stage, b.seq);
  }
};

struct StageState {
  int64_t stage_id = 0;
  const StageProfile* profile = nullptr;
  Nanos busy_until = 0;
  bool busy = false;
  std::deque<int64_t> input_buffer;  // micro-batch ids in arrival order
};

struct PayloadRoute {
  int64_t micro_batch_id = 0;
  int64_t link = 0;
};

class Simulation {
 public:
  Simulation(const EngineConfig& cfg, const ClusterSpec& cluster, const Trace& trace)
      : cfg_(cfg),
        shape_(build_pipeline(cfg, cluster)),
        requests_(make_requests(trace)),
        head_(cfg, shape_, &requests_) {
    const int64_t s = shape_.depth();
    for (int64_t i = 0; i < s; ++i) {
      StageState st;
      st.stage_id = i;
      st.profile = &shape_.stages[static_cast<size_t>(i)];
      stages_.push_back(std::move(st));
    }
    for (size_t i = 0; i < shape_.links.size(); ++i) {
      const LinkProfile& l = shape_.links[i];
      links_.emplace_back(l.from + "->" + l.to, l, cfg.chunk_size,
                          cfg.scheduling_policy == SchedulingPolicy::kDecodePriority,
                          &result_.link_log);
    }
    in_transit_.resize(links_.size());
  }

  RunResult run() {
    for (const Request& r : requests_) {
      push(seconds_to_nanos(r.arrival_time()), EventKind::kArrival, r.id(), -1);
    }
    while (!events_.empty()) {
      const Scheduled e = events_.top();
      events_.pop();
      result_.events.push_back({e.time, e.kind, e.subject, e.stage});
      switch (e.kind) {
        case EventKind::kChunkSent:
          on_chunk_sent(e.stage, e.time);
          break;
        case EventKind::kPayloadDelivered:
          on_delivered(e.subject, e.time);
          break;
        case EventKind::kComputeDone:
          on_compute_done(e.stage, e.subject, e.time);
          break;
        case EventKind::kArrival:
          head_.add_arrival(e.subject);
          request_boundary(e.time);
          break;
        case EventKind::kIterationBoundary:
          on_boundary(e.time);
          break;
      }
    }
    for (const Request& r : requests_) {
      if (!r.finished()) {
        throw Error("run drained with request " + std::to_string(r.id()) +
                    " unfinished");
      }
    }

    std::stable_sort(result_.link_log.begin(), result_.link_log.end(),
                     [](const LinkEvent& a, const LinkEvent& b) { return a.time < b.time; });
    double t0 = kInfinity;
    double t1 = 0;
    for (const Request& r : requests_) {
      t0 = std::min(t0, r.arrival_time());
      t1 = std::max(t1, *r.finish_time());
    }
    std::vector<double> bubbles;
    for (int64_t s = 0; s < shape_.depth(); ++s) {
      bubbles.push_back(t1 > t0 ? measure_bubble(result_.compute, s, t0, t1) : 0.0);
    }
    result_.report = summarize(requests_, std::move(bubbles));
    result_.requests = std::move(requests_);
    result_.decisions = head_.decisions();
    result_.stages = shape_.depth();
    return std::move(result_);
  }

 private:
  // Arrivals are snapped to the nanosecond grid the clock runs on.
  static std::vector<Request> make_requests(const Trace& trace) {
    if (trace.requests.empty()) throw ConfigError("trace has no requests");
    std::vector<Request> out;
    out.reserve(trace.requests.size());
    for (size_t i = 0; i < trace.requests.size(); ++i) {
      const RequestSeed& s = trace.requests[i];
      out.emplace_back(static_cast<int64_t>(i),
                       nanos_to_seconds(seconds_to_nanos(s.arrival_time)),
                       s.input_len, s.output_len);
    }
    return out;
  }

  void push(Nanos t, EventKind kind, int64_t subject, int64_t stage) {
    events_.push({t, kind, subject, stage, seq_++});
  }

  void request_boundary(Nanos now) {
    if (boundary_pending_) return;
    boundary_pending_ = true;
    push(now, EventKind::kIterationBoundary, boundaries_++, 0);
  }

  bool head_busy() const {
    return stages_[0].busy || !stages_[0].input_buffer.empty();
  }

  void on_boundary(Nanos now) {
    boundary_pending_ = false;
    if (head_busy()) return;
    for (const MicroBatch& mb : head_.form_iteration(now)) {
      stages_[0].input_buffer.push_back(mb.id);
    }
    try_start_compute(0, now);
  }

  void try_start_compute(int64_t stage, Nanos now) {
    StageState& st = stages_[static_cast<size_t>(stage)];
    if (st.busy || st.input_buffer.empty()) return;
    const int64_t id = st.input_buffer.front();
    st.input_buffer.pop_front();
    const MicroBatch& mb = head_.micro_batch(id);
    const Nanos dur = seconds_to_nanos(
        compute_time(*st.profile, mb.compute_phase(), mb.batched_tokens));
    for (int64_t rid : mb.request_ids) {
      requests_[static_cast<size_t>(rid)].mark_compute_start(nanos_to_seconds(now));
    }
    st.busy = true;
    st.busy_until = now + dur;
    result_.compute.push_back({stage, id, now, now + dur});
    push(now + dur, EventKind::kComputeDone, id, stage);
  }

  void on_compute_done(int64_t stage, int64_t id, Nanos now) {
    StageState& st = stages_[static_cast<size_t>(stage)];
    st.busy = false;
    const int64_t last = shape_.depth() - 1;
    if (stage < last) {
      const MicroBatch& mb = head_.micro_batch(id);
      send(stage, id, mb.batched_tokens * shape_.activation_bytes_per_token,
           mb.payload_class(), now);
    } else if (last == 0) {
      finish_round(id, now);
    } else {
      const MicroBatch& mb = head_.micro_batch(id);
      const int64_t bytes =
          static_cast<int64_t>(mb.request_ids.size()) * shape_.feedback_bytes_per_request;
      send(last, id, bytes, PayloadClass::kDecode, now);
    }
    try_start_compute(stage, now);
    if (stage == 0 && !head_busy()) request_boundary(now);
  }

  void finish_round(int64_t id, Nanos now) {
    for (int64_t rid : head_.micro_batch(id).request_ids) {
      result_.emissions.push_back({now, rid});
    }
    head_.complete(id, now);
    request_boundary(now);
  }

  void send(int64_t link, int64_t micro_batch_id, int64_t bytes, PayloadClass cls,
            Nanos now) {
    Payload p;
    p.id = next_payload_id_++;
    p.phase_class = cls;
    p.bytes = bytes;
    p.micro_batch_id = micro_batch_id;
    p.enqueue_time = now;
    routes_[p.id] = {micro_batch_id, link};
    links_[static_cast<size_t>(link)].enqueue(p, now);
    pump_link(link, now);
  }

  void pump_link(int64_t link, Nanos now) {
    auto& slot = in_transit_[static_cast<size_t>(link)];
    if (slot) return;
    slot = links_[static_cast<size_t>(link)].try_start(now);
    if (slot) push(slot->sent, EventKind::kChunkSent, slot->chunk.payload_id, link);
  }

  void on_chunk_sent(int64_t link, Nanos now) {
    auto& slot = in_transit_[static_cast<size_t>(link)];
    const Transmission tx = *slot;
    slot.reset();
    links_[static_cast<size_t>(link)].finish(tx);
    if (tx.chunk.is_last) {
      push(tx.delivered, EventKind::kPayloadDelivered, tx.chunk.payload_id, link);
    }
    pump_link(link, now);
  }

  void on_delivered(int64_t payload_id, Nanos now) {
    auto it = routes_.find(payload_id);
    const PayloadRoute route = it->second;
    routes_.erase(it);
    const int64_t last = shape_.depth() - 1;
    if (route.link < last) {
      stages_[static_cast<size_t>(route.link + 1)].input_buffer.push_back(
          route.micro_batch_id);
      try_start_compute(route.link + 1, now);
    } else {
      finish_round(route.micro_batch_id, now);
    }
  }

  EngineConfig cfg_;
  PipelineShape shape_;
  std::vector<Request> requests_;
  HeadScheduler head_;
  RunResult result_;
  std::vector<StageState> stages_;
  std::vector<VirtualLink> links_;
  std::vector<std::optional<Transmission>> in_transit_;
  std::map<int64_t, PayloadRoute> routes_;
  std::priority_queue<Scheduled, std::vector<Scheduled>, Later> events_;
  uint64_t seq_ = 0;
  int64_t next_payload_id_ = 0;
  int64_t boundaries_ = 0;
  bool boundary_pending_ = false;
};

}  // namespace

RunResult run(const EngineConfig& cfg, const ClusterSpec& cluster, const Trace& trace) {
  Simulation sim(cfg, cluster, trace);
  return sim.run();
}

double measure_bubble(const std::vector<ComputeInterval>& compute, int64_t stage,
                      double t0, double t1) {
  const Nanos lo = seconds_to_nanos(t0);
  const Nanos hi = seconds_to_nanos(t1);
  if (hi <= lo) throw Error("measure_bubble: empty window");
  Nanos busy = 0;
  for (const ComputeInterval& c : compute) {
    if (c.stage != stage) continue;
    busy += std::max<Nanos>(0, std::min(c.end, hi) - std::max(c.start, lo));
  }
  return static_cast<double>(hi - lo - busy) / static_cast<double>(hi - lo);
}

double windowed_throughput(const std::vector<TokenEmission>& emissions, double t0,
                           double t1) {
  const Nanos lo = seconds_to_nanos(t0);
  const Nanos hi = seconds_to_nanos(t1);
  if (hi <= lo) throw Error("windowed_throughput: empty window");
  int64_t tokens = 0;
  for (const TokenEmission& e : emissions) {
    if (e.time >= lo && e.time < hi) ++tokens;
  }
  return static_cast<double>(tokens) / nanos_to_seconds(hi - lo);
}

void write_event_log(const std::vector<EngineEvent>& events, std::ostream& out) {
  out << "time_s,kind,subject,stage\n";
  for (const EngineEvent& e : events) {
    out << format_seconds(nanos_to_seconds(e.time), 9) << ',' << to_string(e.kind)
        << ',' << e.subject << ',' << e.stage << '\n';
  }
}

void write_compute_log(const std::vector<ComputeInterval>& compute, std::ostream& out) {
  out << "stage,micro_batch,start_s,end_s\n";
  for (const ComputeInterval& c : compute) {
    out << c.stage << ',' << c.micro_batch_id << ','
        << format_seconds(nanos_to_seconds(c.start), 9) << ','
        << format_seconds(nanos_to_seconds(c.end), 9) << '\n';
  }
}

}  // namespace linkserve
