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

// Random link workloads and the properties every link run must satisfy.
// Shared by the transport tests and the acceptance runner.

#ifndef LINKSERVE_TESTS_LINK_PROPERTIES_H_
#define LINKSERVE_TESTS_LINK_PROPERTIES_H_

#include <algorithm>
#include <map>
#include <random>
#include <string>
#include <vector>

#include "linkserve/transport.h"
#include "oracles.h"

namespace linkserve::testing {

inline Payload payload(int64_t id, PayloadClass cls, int64_t bytes, Nanos at = 0) {
  return Payload{id, cls, bytes, id, at};
}

struct LinkScenario {
  LinkProfile profile;
  int64_t chunk = 1;
  std::vector<Payload> payloads;
};

inline LinkScenario random_link_scenario(std::mt19937_64& rng) {
  LinkScenario s;
  s.profile = {"a", "b", std::uniform_real_distribution<double>(0, 0.02)(rng),
               std::uniform_real_distribution<double>(1e5, 1e9)(rng)};
  const int64_t chunks[] = {1024, 4096, 65'536, 262'144, kUnboundedChunk};
  s.chunk = chunks[rng() % 5];
  const int n = 1 + static_cast<int>(rng() % 30);
  Nanos t = 0;
  for (int i = 0; i < n; ++i) {
    // Bursts: about a third of payloads share the previous timestamp.
    if (rng() % 3 != 0) t += static_cast<Nanos>(rng() % 20'000'000);
    const bool decode = rng() % 2 == 0;
    const int64_t bytes = decode ? 1 + static_cast<int64_t>(rng() % 65'536)
                                 : 1 + static_cast<int64_t>(rng() % 3'000'000);
    s.payloads.push_back(payload(i, decode ? PayloadClass::kDecode : PayloadClass::kPrefill,
                                 bytes, t));
  }
  return s;
}

// Returns the first violated property, or an empty string. Checks exact
// agreement with the reference link, work conservation, decode priority at
// chunk boundaries, byte conservation and FIFO order within each class.
inline std::string check_link_run(const LinkScenario& s, const LinkRunResult& r) {
  if (r.payloads.size() != s.payloads.size()) return "payload count differs";

  std::vector<oracle::RefPayload> ref_in;
  for (const Payload& p : s.payloads) {
    ref_in.push_back({p.phase_class == PayloadClass::kDecode, p.bytes, p.enqueue_time});
  }
  const auto ref = oracle::serial_link(ref_in, s.chunk, [&](int64_t bytes) {
    return seconds_to_nanos(static_cast<double>(bytes) / s.profile.bandwidth_Bps);
  });
  const Nanos latency = seconds_to_nanos(s.profile.latency_s);
  for (size_t i = 0; i < s.payloads.size(); ++i) {
    const std::string which = "payload " + std::to_string(i);
    if (r.payloads[i].first_send_start != ref[i].first_start) {
      return which + ": send start differs from the reference";
    }
    if (r.payloads[i].delivered != ref[i].last_end + latency) {
      return which + ": delivery differs from the reference";
    }
    if (r.payloads[i].chunks != ref[i].chunks) return which + ": chunk count differs";
  }

  std::map<int64_t, int64_t> bytes_sent;
  std::map<int64_t, int64_t> next_index;
  std::vector<int64_t> finished_prefill, finished_decode;
  Nanos link_free = 0;
  bool first = true;
  for (const LinkEvent& e : r.log) {
    if (e.chunk_index < 0 || e.kind != LinkEventKind::kSendStart) continue;
    const Payload& p = s.payloads[static_cast<size_t>(e.payload_id)];
    // Work conservation: the link starts as soon as it is free and
    // something is waiting.
    Nanos earliest_waiting = kNeverNanos;
    for (const Payload& q : s.payloads) {
      if (bytes_sent[q.id] < q.bytes) earliest_waiting = std::min(earliest_waiting, q.enqueue_time);
    }
    const Nanos expected_start =
        first ? earliest_waiting : std::max(link_free, earliest_waiting);
    if (e.time != expected_start) return "link idle while work was waiting";
    first = false;
    if (e.phase_class == PayloadClass::kPrefill) {
      for (const Payload& q : s.payloads) {
        if (q.phase_class == PayloadClass::kDecode && q.enqueue_time <= e.time &&
            bytes_sent[q.id] < q.bytes) {
          return "decode " + std::to_string(q.id) + " waited behind a prefill chunk";
        }
      }
      if (e.bytes > s.chunk) return "prefill chunk larger than chunk_size";
    } else if (e.bytes != p.bytes) {
      return "decode payload was split";
    }
    if (e.chunk_index != next_index[p.id]++) return "chunk indices out of order";
    bytes_sent[p.id] += e.bytes;
    link_free = e.time + seconds_to_nanos(static_cast<double>(e.bytes) /
                                          s.profile.bandwidth_Bps);
    if (bytes_sent[p.id] == p.bytes) {
      (p.phase_class == PayloadClass::kPrefill ? finished_prefill : finished_decode)
          .push_back(p.id);
    }
  }
  for (const Payload& p : s.payloads) {
    if (bytes_sent[p.id] != p.bytes) return "bytes not conserved";
  }
  // Ids were assigned in enqueue order.
  if (!std::is_sorted(finished_prefill.begin(), finished_prefill.end()) ||
      !std::is_sorted(finished_decode.begin(), finished_decode.end())) {
    return "FIFO order broken within a class";
  }
  return "";
}

}  // namespace linkserve::testing

#endif  // LINKSERVE_TESTS_LINK_PROPERTIES_H_
