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

#include "linkserve/transport.h"

#include <algorithm>
#include <map>
#include <ostream>

namespace linkserve {

std::string_view to_string(PayloadClass cls) {
  return cls == PayloadClass::kPrefill ? "prefill" : "decode";
}

std::string_view to_string(LinkEventKind kind) {
  switch (kind) {
    case LinkEventKind::kEnqueue:
      return "enqueue";
    case LinkEventKind::kSendStart:
      return "send_start";
    case LinkEventKind::kSent:
      return "sent";
    case LinkEventKind::kDelivered:
      return "delivered";
  }
  return "unknown";
}

LinkQueue::LinkQueue(int64_t chunk_size, bool decode_priority)
    : chunk_size_(chunk_size), decode_priority_(decode_priority) {
  if (chunk_size_ < 1) throw ConfigError("chunk_size must be >= 1");
}

void LinkQueue::enqueue(const Payload& payload) {
  if (payload.bytes < 1) {
    throw ProtocolError("payload " + std::to_string(payload.id) + " has no bytes");
  }
  if (!queued_ids_.insert(payload.id).second) {
    throw ProtocolError("payload " + std::to_string(payload.id) + " already queued");
  }
  if (payload.phase_class == PayloadClass::kDecode) {
    decode_queue_.push_back(payload);
    decode_seq_.push_back(next_seq_++);
  } else {
    prefill_queue_.push_back(payload);
    prefill_seq_.push_back(next_seq_++);
  }
}

Chunk LinkQueue::take_decode() {
  Payload p = decode_queue_.front();
  decode_queue_.pop_front();
  decode_seq_.pop_front();
  queued_ids_.erase(p.id);
  return Chunk{p.id, 0, p.bytes, true, PayloadClass::kDecode};
}

Chunk LinkQueue::take_prefill_chunk() {
  const Payload& p = prefill_queue_.front();
  const int64_t left = p.bytes - head_prefill_sent_;
  const int64_t bytes = std::min(left, chunk_size_);
  Chunk c{p.id, head_prefill_index_, bytes, bytes == left, PayloadClass::kPrefill};
  head_prefill_sent_ += bytes;
  ++head_prefill_index_;
  if (c.is_last) {
    queued_ids_.erase(p.id);
    prefill_queue_.pop_front();
    prefill_seq_.pop_front();
    head_prefill_sent_ = 0;
    head_prefill_index_ = 0;
  }
  return c;
}

std::optional<Chunk> LinkQueue::next_chunk() {
  if (decode_queue_.empty() && prefill_queue_.empty()) return std::nullopt;
  if (prefill_queue_.empty()) return take_decode();
  if (decode_queue_.empty()) return take_prefill_chunk();
  if (decode_priority_) return take_decode();
  // FIFO across classes by enqueue order.
  return decode_seq_.front() < prefill_seq_.front() ? take_decode()
                                                    : take_prefill_chunk();
}

void write_link_log(const std::vector<LinkEvent>& log, std::ostream& out) {
  out << "time_s,link,payload_id,chunk_index,bytes,class,event\n";
  for (const LinkEvent& e : log) {
    out << format_seconds(nanos_to_seconds(e.time), 9) << ',' << e.link << ','
        << e.payload_id << ',' << e.chunk_index << ',' << e.bytes << ','
        << to_string(e.phase_class) << ',' << to_string(e.kind) << '\n';
  }
}

VirtualLink::VirtualLink(std::string name, LinkProfile profile, int64_t chunk_size,
                         bool decode_priority, std::vector<LinkEvent>* log)
    : name_(std::move(name)),
      profile_(std::move(profile)),
      queue_(chunk_size, decode_priority),
      latency_ns_(seconds_to_nanos(profile_.latency_s)),
      log_(log) {
  profile_.validate();
}

Nanos VirtualLink::serialization_nanos(int64_t bytes) const {
  return seconds_to_nanos(serialization_time(profile_, bytes));
}

void VirtualLink::log(Nanos t, const Chunk& c, LinkEventKind kind) {
  if (!log_) return;
  log_->push_back({t, name_, c.payload_id, c.index, c.bytes, c.phase_class, kind});
}

void VirtualLink::enqueue(const Payload& payload, Nanos now) {
  queue_.enqueue(payload);
  if (log_) {
    log_->push_back({now, name_, payload.id, -1, payload.bytes, payload.phase_class,
                     LinkEventKind::kEnqueue});
  }
}

std::optional<Transmission> VirtualLink::try_start(Nanos now) {
  if (busy_) return std::nullopt;
  std::optional<Chunk> chunk = queue_.next_chunk();
  if (!chunk) return std::nullopt;
  busy_ = true;
  Transmission tx;
  tx.chunk = *chunk;
  tx.start = now;
  tx.sent = now + serialization_nanos(chunk->bytes);
  tx.delivered = tx.sent + latency_ns_;
  log(now, tx.chunk, LinkEventKind::kSendStart);
  return tx;
}

void VirtualLink::finish(const Transmission& tx) {
  busy_ = false;
  log(tx.sent, tx.chunk, LinkEventKind::kSent);
  log(tx.delivered, tx.chunk, LinkEventKind::kDelivered);
}

LinkRunResult simulate_link(const LinkProfile& profile, int64_t chunk_size,
                            bool decode_priority, std::vector<Payload> payloads) {
  LinkRunResult result;
  VirtualLink link(profile.from + "->" + profile.to, profile, chunk_size,
                   decode_priority, &result.log);

  std::stable_sort(payloads.begin(), payloads.end(),
                   [](const Payload& a, const Payload& b) {
                     return a.enqueue_time < b.enqueue_time;
                   });
  std::map<int64_t, PayloadTiming> timing;

  // A transmission ending and a payload arriving at the same instant: the end
  // is handled first so the arrival competes at that chunk boundary.
  size_t next_arrival = 0;
  std::optional<Transmission> in_flight;
  Nanos now = 0;
  while (next_arrival < payloads.size() || in_flight || !link.queue().empty()) {
    const Nanos arrival_t = next_arrival < payloads.size()
                                ? payloads[next_arrival].enqueue_time
                                : kNeverNanos;
    const Nanos sent_t = in_flight ? in_flight->sent : kNeverNanos;
    if (sent_t <= arrival_t && in_flight) {
      now = sent_t;
      link.finish(*in_flight);
      PayloadTiming& pt = timing[in_flight->chunk.payload_id];
      ++pt.chunks;
      if (in_flight->chunk.is_last) {
        pt.delivered = in_flight->delivered;
        result.log.push_back({in_flight->delivered, link.name(), pt.payload_id, -1,
                              pt.bytes, pt.phase_class, LinkEventKind::kDelivered});
      }
      in_flight.reset();
      // Everything arriving at this very instant joins before the next pick.
      while (next_arrival < payloads.size() &&
             payloads[next_arrival].enqueue_time == now) {
        const Payload& p = payloads[next_arrival++];
        link.enqueue(p, now);
        timing[p.id] = {p.id, p.phase_class, p.bytes, p.enqueue_time, -1, -1, 0};
      }
    } else {
      now = arrival_t;
      while (next_arrival < payloads.size() &&
             payloads[next_arrival].enqueue_time == now) {
        const Payload& p = payloads[next_arrival++];
        link.enqueue(p, now);
        timing[p.id] = {p.id, p.phase_class, p.bytes, p.enqueue_time, -1, -1, 0};
      }
    }
    if (!in_flight) {
      in_flight = link.try_start(now);
      if (in_flight) {
        PayloadTiming& pt = timing[in_flight->chunk.payload_id];
        if (pt.first_send_start < 0) pt.first_send_start = now;
      }
    }
  }
  for (auto& [id, t] : timing) result.payloads.push_back(t);
  std::stable_sort(result.log.begin(), result.log.end(),
                   [](const LinkEvent& a, const LinkEvent& b) { return a.time < b.time; });
  return result;
}

}  // namespace linkserve
