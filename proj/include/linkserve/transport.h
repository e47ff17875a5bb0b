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

#ifndef LINKSERVE_TRANSPORT_H_
#define LINKSERVE_TRANSPORT_H_

#include <cstdint>
#include <deque>
#include <iosfwd>
#include <optional>
#include <string>
#include <unordered_set>
#include <vector>

#include "linkserve/common.h"
#include "linkserve/profiler.h"

namespace linkserve {

enum class PayloadClass { kPrefill, kDecode };

std::string_view to_string(PayloadClass cls);

// Intermediate result produced by one micro-batch at one stage.
struct Payload {
  int64_t id = 0;
  PayloadClass phase_class = PayloadClass::kPrefill;
  int64_t bytes = 1;
  int64_t micro_batch_id = 0;
  Nanos enqueue_time = 0;
};

struct Chunk {
  int64_t payload_id = 0;
  int64_t index = 0;
  int64_t bytes = 0;
  bool is_last = false;
  PayloadClass phase_class = PayloadClass::kPrefill;
};

// 256 KiB.
inline constexpr int64_t kDefaultChunkSize = 262'144;

// Sender-side queues of one directed link. Decode payloads are always sent
// whole; prefill payloads are cut into chunk_size pieces. With decode
// priority, a waiting decode payload goes ahead of the next prefill chunk.
// Without it the link is a single FIFO across both classes.
class LinkQueue {
 public:
  explicit LinkQueue(int64_t chunk_size = kDefaultChunkSize,
                     bool decode_priority = true);

  // Throws ProtocolError when the id is already queued.
  void enqueue(const Payload& payload);
  std::optional<Chunk> next_chunk();

  bool empty() const { return decode_queue_.empty() && prefill_queue_.empty(); }
  int64_t chunk_size() const { return chunk_size_; }
  bool decode_priority() const { return decode_priority_; }
  const std::deque<Payload>& decode_queue() const { return decode_queue_; }
  const std::deque<Payload>& prefill_queue() const { return prefill_queue_; }
  // Bytes of the head prefill payload already handed out.
  int64_t head_prefill_sent() const { return head_prefill_sent_; }

 private:
  Chunk take_decode();
  Chunk take_prefill_chunk();

  int64_t chunk_size_;
  bool decode_priority_;
  std::deque<Payload> decode_queue_;
  std::deque<Payload> prefill_queue_;
  std::deque<uint64_t> decode_seq_;
  std::deque<uint64_t> prefill_seq_;
  uint64_t next_seq_ = 0;
  int64_t head_prefill_sent_ = 0;
  int64_t head_prefill_index_ = 0;
  std::unordered_set<int64_t> queued_ids_;
};

enum class LinkEventKind { kEnqueue, kSendStart, kSent, kDelivered };

std::string_view to_string(LinkEventKind kind);

// One row of the emission/delivery log.
struct LinkEvent {
  Nanos time = 0;
  std::string link;
  int64_t payload_id = 0;
  int64_t chunk_index = -1;  // -1 for payload-level rows
  int64_t bytes = 0;
  PayloadClass phase_class = PayloadClass::kPrefill;
  LinkEventKind kind = LinkEventKind::kEnqueue;
};

// CSV `time_s,link,payload_id,chunk_index,bytes,class,event`.
void write_link_log(const std::vector<LinkEvent>& log, std::ostream& out);

// A chunk placed on the wire by VirtualLink.
struct Transmission {
  Chunk chunk;
  Nanos start = 0;
  Nanos sent = 0;       // serialization finished, link free again
  Nanos delivered = 0;  // sent + propagation latency
};

// Virtual-time backend: the link as a serial resource at chunk granularity.
// The owner drives it from an event loop: call try_start() whenever the link
// may have become startable and finish() when a transmission's sent time is
// reached.
class VirtualLink {
 public:
  VirtualLink(std::string name, LinkProfile profile, int64_t chunk_size,
              bool decode_priority, std::vector<LinkEvent>* log = nullptr);

  void enqueue(const Payload& payload, Nanos now);
  std::optional<Transmission> try_start(Nanos now);
  void finish(const Transmission& tx);

  bool busy() const { return busy_; }
  bool idle_and_empty() const { return !busy_ && queue_.empty(); }
  const std::string& name() const { return name_; }
  const LinkProfile& profile() const { return profile_; }
  const LinkQueue& queue() const { return queue_; }
  Nanos serialization_nanos(int64_t bytes) const;
  Nanos latency_nanos() const { return latency_ns_; }

 private:
  void log(Nanos t, const Chunk& c, LinkEventKind kind);

  std::string name_;
  LinkProfile profile_;
  LinkQueue queue_;
  Nanos latency_ns_;
  bool busy_ = false;
  std::vector<LinkEvent>* log_;
};

// Per-payload outcome of a standalone link run.
struct PayloadTiming {
  int64_t payload_id = 0;
  PayloadClass phase_class = PayloadClass::kPrefill;
  int64_t bytes = 0;
  Nanos enqueued = 0;
  Nanos first_send_start = 0;
  Nanos delivered = 0;
  int64_t chunks = 0;
};

struct LinkRunResult {
  std::vector<LinkEvent> log;
  std::vector<PayloadTiming> payloads;  // in payload id order
};

// Runs a single link to completion over payloads arriving at their
// enqueue_time. This is the virtual-time link worker.
LinkRunResult simulate_link(const LinkProfile& profile, int64_t chunk_size,
                            bool decode_priority, std::vector<Payload> payloads);

}  // namespace linkserve

#endif  // LINKSERVE_TRANSPORT_H_
