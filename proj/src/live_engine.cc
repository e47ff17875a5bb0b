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

#include "linkserve/live_engine.h"

#include <atomic>
#include <map>
#include <memory>
#include <queue>
#include <thread>
#include <unordered_map>

#include "linkserve/socket_transport.h"

namespace linkserve {

namespace {

using Clock = std::chrono::steady_clock;

struct StageMessage {
  enum class Kind { kDelivered, kFailure, kStop };
  Kind kind = Kind::kDelivered;
  int64_t micro_batch_id = 0;
  Clock::time_point ready_at;
  std::string error;
};

struct LinkMessage {
  bool stop = false;
  Payload payload;
};

// Micro-batches published by the head for the other stages to read.
class MicroBatchDirectory {
 public:
  void put(const MicroBatch& mb) {
    std::lock_guard<std::mutex> lock(mu_);
    batches_[mb.id] = mb;
  }
  MicroBatch get(int64_t id) const {
    std::lock_guard<std::mutex> lock(mu_);
    return batches_.at(id);
  }
  void erase(int64_t id) {
    std::lock_guard<std::mutex> lock(mu_);
    batches_.erase(id);
  }

 private:
  mutable std::mutex mu_;
  std::unordered_map<int64_t, MicroBatch> batches_;
};

class VirtualClock {
 public:
  explicit VirtualClock(double scale) : start_(Clock::now()), scale_(scale) {}

  Nanos now() const {
    const double wall = std::chrono::duration<double>(Clock::now() - start_).count();
    return seconds_to_nanos(wall / scale_);
  }
  Clock::time_point wall_at(double virtual_seconds) const {
    return start_ + to_wall(virtual_seconds);
  }
  Clock::duration to_wall(double virtual_seconds) const {
    return std::chrono::duration_cast<Clock::duration>(
        std::chrono::duration<double>(virtual_seconds * scale_));
  }
  void sleep(double virtual_seconds) const {
    if (virtual_seconds > 0) std::this_thread::sleep_for(to_wall(virtual_seconds));
  }

 private:
  Clock::time_point start_;
  double scale_;
};

struct ReadyEntry {
  Clock::time_point at;
  uint64_t seq;
  int64_t micro_batch_id;
  bool operator>(const ReadyEntry& o) const {
    return std::tie(at, seq) > std::tie(o.at, o.seq);
  }
};

using ReadyHeap =
    std::priority_queue<ReadyEntry, std::vector<ReadyEntry>, std::greater<ReadyEntry>>;

class LivePipeline {
 public:
  LivePipeline(const EngineConfig& cfg, const ClusterSpec& cluster, const Trace& trace,
               const LiveOptions& options)
      : cfg_(cfg), shape_(build_pipeline(cfg, cluster)), clock_(options.time_scale) {
    if (!(options.time_scale > 0)) throw ConfigError("time_scale must be > 0");
    if (trace.requests.empty()) throw ConfigError("trace has no requests");
    for (size_t i = 0; i < trace.requests.size(); ++i) {
      const RequestSeed& s = trace.requests[i];
      requests_.emplace_back(static_cast<int64_t>(i), s.arrival_time, s.input_len,
                             s.output_len);
    }
    const size_t stages = static_cast<size_t>(shape_.depth());
    for (size_t i = 0; i < stages; ++i) {
      stage_inbox_.push_back(std::make_unique<Channel<StageMessage>>());
    }
    for (size_t i = 0; i < shape_.links.size(); ++i) {
      link_inbox_.push_back(std::make_unique<Channel<LinkMessage>>());
    }
  }

  LiveRunResult run() {
    start_workers();
    std::string failure;
    try {
      head_loop();
    } catch (const Error& e) {
      failure = e.what();
    }
    stop_workers();
    if (failure.empty()) failure = first_failure();
    if (!failure.empty()) throw ProtocolError("live run failed: " + failure);

    LiveRunResult out;
    out.report = summarize(requests_);
    out.requests = std::move(requests_);
    out.frames_sent = frames_sent_.load();
    out.bytes_sent = bytes_sent_.load();
    return out;
  }

 private:
  void start_workers() {
    for (size_t i = 0; i < shape_.links.size(); ++i) {
      Listener listener;
      Socket out = connect_loopback(listener.port());
      Socket in = listener.accept();
      threads_.emplace_back([this, i, s = std::move(out)]() mutable {
        sender_loop(i, std::move(s));
      });
      threads_.emplace_back([this, i, s = std::move(in)]() mutable {
        receiver_loop(i, std::move(s));
      });
    }
    for (size_t s = 1; s < stage_inbox_.size(); ++s) {
      threads_.emplace_back([this, s] { stage_loop(s); });
    }
  }

  void stop_workers() {
    for (auto& inbox : link_inbox_) inbox->send({true, {}});
    for (size_t s = 1; s < stage_inbox_.size(); ++s) {
      stage_inbox_[s]->send({StageMessage::Kind::kStop, 0, {}, {}});
    }
    for (std::thread& t : threads_) t.join();
    threads_.clear();
  }

  void report_failure(const std::string& what) {
    {
      std::lock_guard<std::mutex> lock(failure_mu_);
      if (failure_.empty()) failure_ = what;
    }
    stage_inbox_[0]->send({StageMessage::Kind::kFailure, 0, {}, what});
  }

  std::string first_failure() {
    std::lock_guard<std::mutex> lock(failure_mu_);
    return failure_;
  }

  size_t destination(size_t link) const {
    return (link + 1) % stage_inbox_.size();
  }

  // Owns the sender-side LinkQueue; payloads arrive by message.
  void sender_loop(size_t link, Socket socket) {
    const LinkProfile& profile = shape_.links[link];
    LinkQueue queue(cfg_.chunk_size,
                    cfg_.scheduling_policy == SchedulingPolicy::kDecodePriority);
    bool stopping = false;
    try {
      for (;;) {
        if (queue.empty()) {
          if (stopping) break;
          std::optional<LinkMessage> m = link_inbox_[link]->receive();
          if (!m || m->stop) {
            stopping = true;
            continue;
          }
          queue.enqueue(m->payload);
        }
        while (std::optional<LinkMessage> m = link_inbox_[link]->try_receive()) {
          if (m->stop) {
            stopping = true;
          } else {
            queue.enqueue(m->payload);
          }
        }
        const std::optional<Chunk> chunk = queue.next_chunk();
        if (!chunk) continue;
        clock_.sleep(serialization_time(profile, chunk->bytes));
        const std::string frame =
            encode_frame(header_for(*chunk), std::string(static_cast<size_t>(chunk->bytes), '\0'));
        socket.send_all(frame);
        ++frames_sent_;
        bytes_sent_ += chunk->bytes;
      }
    } catch (const Error& e) {
      report_failure("link " + profile.from + "->" + profile.to + ": " + e.what());
    }
    socket.shutdown_write();
  }

  void receiver_loop(size_t link, Socket socket) {
    const LinkProfile& profile = shape_.links[link];
    FrameDecoder decoder;
    std::map<uint64_t, int64_t> received;
    try {
      for (;;) {
        const std::string bytes = socket.receive_some();
        if (bytes.empty()) break;
        decoder.feed(bytes);
        while (std::optional<Frame> f = decoder.next()) {
          received[f->header.payload_id] += static_cast<int64_t>(f->body.size());
          if (!f->header.is_last()) continue;
          received.erase(f->header.payload_id);
          StageMessage m;
          m.micro_batch_id = static_cast<int64_t>(f->header.payload_id);
          m.ready_at = Clock::now() + clock_.to_wall(profile.latency_s);
          stage_inbox_[destination(link)]->send(std::move(m));
        }
      }
      if (!received.empty() || decoder.buffered() > 0) {
        throw ProtocolError("connection closed mid-payload");
      }
    } catch (const Error& e) {
      report_failure("link " + profile.from + "->" + profile.to + ": " + e.what());
    }
  }

  void send_onward(size_t stage, const MicroBatch& mb) {
    Payload p;
    p.id = mb.id;
    p.micro_batch_id = mb.id;
    const bool last = stage + 1 == stage_inbox_.size();
    if (last) {
      p.phase_class = PayloadClass::kDecode;
      p.bytes = static_cast<int64_t>(mb.request_ids.size()) *
                shape_.feedback_bytes_per_request;
    } else {
      p.phase_class = mb.payload_class();
      p.bytes = mb.batched_tokens * shape_.activation_bytes_per_token;
    }
    link_inbox_[stage]->send({false, p});
  }

  double compute_seconds(size_t stage, const MicroBatch& mb) const {
    return compute_time(shape_.stages[stage], mb.compute_phase(), mb.batched_tokens);
  }

  void stage_loop(size_t stage) {
    ReadyHeap pending;
    uint64_t seq = 0;
    for (;;) {
      const Clock::time_point deadline =
          pending.empty() ? Clock::time_point::max() : pending.top().at;
      std::optional<StageMessage> m = stage_inbox_[stage]->receive_until(deadline);
      if (m) {
        if (m->kind == StageMessage::Kind::kStop) return;
        pending.push({m->ready_at, seq++, m->micro_batch_id});
      }
      // Input buffer in delivery order; compute one at a time.
      while (!pending.empty() && pending.top().at <= Clock::now()) {
        const int64_t id = pending.top().micro_batch_id;
        pending.pop();
        const MicroBatch mb = directory_.get(id);
        clock_.sleep(compute_seconds(stage, mb));
        send_onward(stage, mb);
        while (std::optional<StageMessage> more = stage_inbox_[stage]->try_receive()) {
          if (more->kind == StageMessage::Kind::kStop) return;
          pending.push({more->ready_at, seq++, more->micro_batch_id});
        }
      }
    }
  }

  void head_loop() {
    HeadScheduler head(cfg_, shape_, &requests_);
    const size_t stages = stage_inbox_.size();
    size_t next_arrival = 0;
    size_t finished = 0;
    std::deque<int64_t> buffer;
    ReadyHeap returns;
    uint64_t seq = 0;

    auto complete = [&](int64_t id) {
      const MicroBatch& mb = head.micro_batch(id);
      const std::vector<int64_t> ids = mb.request_ids;
      head.complete(id, clock_.now());
      directory_.erase(id);
      for (int64_t rid : ids) {
        if (requests_[static_cast<size_t>(rid)].finished()) ++finished;
      }
    };

    while (finished < requests_.size()) {
      const double now_s = nanos_to_seconds(clock_.now());
      while (next_arrival < requests_.size() &&
             requests_[next_arrival].arrival_time() <= now_s) {
        head.add_arrival(static_cast<int64_t>(next_arrival++));
      }
      while (std::optional<StageMessage> m = stage_inbox_[0]->try_receive()) {
        if (m->kind == StageMessage::Kind::kFailure) throw ProtocolError(m->error);
        returns.push({m->ready_at, seq++, m->micro_batch_id});
      }
      while (!returns.empty() && returns.top().at <= Clock::now()) {
        complete(returns.top().micro_batch_id);
        returns.pop();
      }
      if (buffer.empty()) {
        for (const MicroBatch& mb : head.form_iteration(clock_.now())) {
          directory_.put(mb);
          buffer.push_back(mb.id);
        }
      }
      if (!buffer.empty()) {
        const int64_t id = buffer.front();
        buffer.pop_front();
        const MicroBatch mb = directory_.get(id);
        const double start = nanos_to_seconds(clock_.now());
        for (int64_t rid : mb.request_ids) {
          requests_[static_cast<size_t>(rid)].mark_compute_start(start);
        }
        clock_.sleep(compute_seconds(0, mb));
        if (stages == 1) {
          complete(id);
        } else {
          send_onward(0, mb);
        }
        continue;
      }
      if (finished == requests_.size()) break;

      Clock::time_point deadline = Clock::time_point::max();
      if (next_arrival < requests_.size()) {
        deadline = clock_.wall_at(requests_[next_arrival].arrival_time());
      }
      if (!returns.empty()) deadline = std::min(deadline, returns.top().at);
      std::optional<StageMessage> m = stage_inbox_[0]->receive_until(deadline);
      if (m) {
        if (m->kind == StageMessage::Kind::kFailure) throw ProtocolError(m->error);
        returns.push({m->ready_at, seq++, m->micro_batch_id});
      }
    }
  }

  EngineConfig cfg_;
  PipelineShape shape_;
  VirtualClock clock_;
  std::vector<Request> requests_;
  MicroBatchDirectory directory_;
  std::vector<std::unique_ptr<Channel<StageMessage>>> stage_inbox_;
  std::vector<std::unique_ptr<Channel<LinkMessage>>> link_inbox_;
  std::vector<std::thread> threads_;
  std::atomic<int64_t> frames_sent_{0};
  std::atomic<int64_t> bytes_sent_{0};
  std::mutex failure_mu_;
  std::string failure_;
};

}  // namespace

LiveRunResult run_live(const EngineConfig& cfg, const ClusterSpec& cluster,
                       const Trace& trace, const LiveOptions& options) {
  LivePipeline pipeline(cfg, cluster, trace, options);
  return pipeline.run();
}

}  // namespace linkserve
