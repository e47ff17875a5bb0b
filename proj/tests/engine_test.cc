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

#include <gtest/gtest.h>

#include <algorithm>
#include <map>
#include <random>
#include <set>
#include <sstream>

#include "test_util.h"

namespace linkserve {
namespace {

using testing::burst_trace;
using testing::flat_ring;

std::vector<PendingRequest> pending(std::initializer_list<std::pair<int64_t, int64_t>> items) {
  std::vector<PendingRequest> out;
  for (const auto& [id, tokens] : items) out.push_back({id, tokens});
  return out;
}

ControllerDecision budget(int64_t n, int64_t tokens) { return {n, tokens, 0.0}; }

TEST(AdmitTest, DecodesFillOneMicroBatch) {
  const auto mbs = admit_and_batch(pending({{0, 1}, {1, 1}, {2, 1}}), {}, budget(1, 100),
                                   {1, 256, BatchingMode::kSeparate, -1}, 0);
  ASSERT_EQ(mbs.size(), 1u);
  EXPECT_EQ(mbs[0].phase, MicroBatchPhase::kDecode);
  EXPECT_EQ(mbs[0].batched_tokens, 3);
}

TEST(AdmitTest, OversizePromptAdmittedAlone) {
  const auto mbs = admit_and_batch(pending({{1, 1}, {2, 1}}), pending({{7, 90}}),
                                   budget(2, 50), {2, 256, BatchingMode::kSeparate, -1}, 5);
  ASSERT_EQ(mbs.size(), 2u);
  EXPECT_EQ(mbs[0].request_ids, (std::vector<int64_t>{1, 2}));
  EXPECT_EQ(mbs[1].request_ids, (std::vector<int64_t>{7}));
  EXPECT_EQ(mbs[1].phase, MicroBatchPhase::kPrefill);
  EXPECT_EQ(mbs[1].batched_tokens, 90);
  EXPECT_EQ(mbs[1].created_at, 5);
}

TEST(AdmitTest, EmptyQueue) {
  EXPECT_TRUE(admit_and_batch({}, {}, budget(2, 50), {2, 256, BatchingMode::kSeparate, -1}, 0)
                  .empty());
  EXPECT_TRUE(admit_and_batch(pending({{0, 1}}), {}, budget(2, 50),
                              {0, 256, BatchingMode::kSeparate, -1}, 0)
                  .empty());
}

TEST(AdmitTest, MixedModeSharesMicroBatches) {
  const auto mbs = admit_and_batch(pending({{0, 1}}), pending({{5, 10}}), budget(1, 50),
                                   {1, 256, BatchingMode::kMixed, -1}, 0);
  ASSERT_EQ(mbs.size(), 1u);
  EXPECT_EQ(mbs[0].phase, MicroBatchPhase::kMixed);
  EXPECT_EQ(mbs[0].batched_tokens, 11);
  EXPECT_EQ(mbs[0].prefill_ids, (std::vector<int64_t>{5}));
}

TEST(AdmitTest, DecodeSlotLimitLeavesRoomForPrefill) {
  std::vector<PendingRequest> decodes;
  for (int64_t i = 0; i < 8; ++i) decodes.push_back({i, 1});
  const auto mbs = admit_and_batch(decodes, pending({{100, 3}}), budget(2, 4),
                                   {2, 256, BatchingMode::kSeparate, 1}, 0);
  ASSERT_EQ(mbs.size(), 2u);
  EXPECT_EQ(mbs[0].batched_tokens, 4);
  EXPECT_EQ(mbs[1].request_ids, (std::vector<int64_t>{100}));
}

// Brute-force check of every admission rule on random inputs.
TEST(AdmitPropertyTest, RandomInstancesObeyRules) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 5000; ++trial) {
    const int64_t slots = 1 + static_cast<int64_t>(rng() % 4);
    const int64_t tok = 1 + static_cast<int64_t>(rng() % 40);
    const int64_t max_size = 1 + static_cast<int64_t>(rng() % 6);
    const BatchingMode mode = rng() % 2 ? BatchingMode::kMixed : BatchingMode::kSeparate;
    const int64_t decode_slots = rng() % 3 == 0 ? static_cast<int64_t>(rng() % slots) : -1;
    std::vector<PendingRequest> decodes;
    std::vector<PendingRequest> queued;
    int64_t id = 0;
    for (int64_t k = static_cast<int64_t>(rng() % 12); k > 0; --k) decodes.push_back({id++, 1});
    for (int64_t k = static_cast<int64_t>(rng() % 6); k > 0; --k) {
      queued.push_back({id++, 1 + static_cast<int64_t>(rng() % 60)});
    }
    const auto mbs = admit_and_batch(decodes, queued, budget(slots, tok),
                                     {slots, max_size, mode, decode_slots}, 0);
    ASSERT_LE(static_cast<int64_t>(mbs.size()), slots);

    std::set<int64_t> seen;
    std::set<int64_t> decode_set;
    for (const auto& d : decodes) decode_set.insert(d.id);
    std::map<int64_t, int64_t> tokens_of;
    for (const auto& r : decodes) tokens_of[r.id] = r.new_tokens;
    for (const auto& r : queued) tokens_of[r.id] = r.new_tokens;
    size_t admitted_prefill = 0;
    int64_t decode_groups = 0;
    int64_t admitted_decodes = 0;
    for (const MicroBatch& mb : mbs) {
      ASSERT_FALSE(mb.request_ids.empty());
      ASSERT_LE(static_cast<int64_t>(mb.request_ids.size()), max_size);
      int64_t sum = 0;
      bool any_decode = false;
      for (int64_t r : mb.request_ids) {
        ASSERT_TRUE(seen.insert(r).second) << "request twice";
        sum += tokens_of.at(r);
        if (decode_set.count(r)) {
          any_decode = true;
          ++admitted_decodes;
        }
      }
      ASSERT_EQ(sum, mb.batched_tokens);
      admitted_prefill += mb.prefill_ids.size();
      if (any_decode) ++decode_groups;
      if (mode == BatchingMode::kSeparate) {
        ASSERT_TRUE(mb.prefill_ids.empty() || !any_decode);
      }
      // Over budget only as a lone oversize prompt.
      if (mb.batched_tokens > tok) {
        ASSERT_EQ(mb.request_ids.size(), 1u);
        ASSERT_EQ(mb.prefill_ids.size(), 1u);
      }
    }
    if (decode_slots >= 0) {
      ASSERT_LE(decode_groups, decode_slots);
    }
    // Prefill admission is a queue prefix.
    std::vector<int64_t> prefix;
    for (const MicroBatch& mb : mbs) {
      for (int64_t r : mb.prefill_ids) prefix.push_back(r);
    }
    std::sort(prefix.begin(), prefix.end());
    for (size_t i = 0; i < prefix.size(); ++i) ASSERT_EQ(prefix[i], queued[i].id);
    // Decodes are never left out while a decode-eligible group has room.
    const int64_t cap = std::min(tok, max_size);
    int64_t group_limit = slots;
    if (decode_slots >= 0) group_limit = std::min(group_limit, decode_slots);
    ASSERT_EQ(admitted_decodes,
              std::min<int64_t>(static_cast<int64_t>(decodes.size()), group_limit * cap));
    // The first prefill left out did not fit anywhere.
    if (admitted_prefill < queued.size()) {
      const PendingRequest& next = queued[admitted_prefill];
      const int64_t empty_slots = slots - static_cast<int64_t>(mbs.size());
      if (empty_slots > 0) {
        FAIL() << "prefill rejected with an empty slot, trial " << trial;
      }
      for (const MicroBatch& mb : mbs) {
        bool has_decode = mb.prefill_ids.size() != mb.request_ids.size();
        if (mode == BatchingMode::kSeparate && has_decode) continue;
        const bool fits = static_cast<int64_t>(mb.request_ids.size()) < max_size &&
                          mb.batched_tokens + next.new_tokens <= tok;
        ASSERT_FALSE(fits) << "trial " << trial;
      }
    }
  }
}

TEST(RunTest, SingleRequestSingleStage) {
  auto ring = flat_ring(1, 0.010, 0.0);
  const RunResult r = run(ring.cfg, ring.cluster, burst_trace(1, 8, 1));
  ASSERT_EQ(r.requests.size(), 1u);
  EXPECT_DOUBLE_EQ(*r.requests[0].first_token_time(), 0.010);
  EXPECT_DOUBLE_EQ(r.report.ttft_mean_s, 0.010);
  EXPECT_DOUBLE_EQ(r.report.span_s, 0.010);
  EXPECT_DOUBLE_EQ(r.report.throughput_tok_s, 1.0 / 0.010);
  EXPECT_EQ(r.report.total_tokens, 1);
}

TEST(RunTest, TwoStageSingleRequestTrace) {
  // c = 10 ms per stage, 5 ms hops: the first token returns after
  // 10 + 5 + 10 + 5 ms; each further token takes another 30 ms round.
  auto ring = flat_ring(2, 0.010, 0.005);
  const RunResult r = run(ring.cfg, ring.cluster, burst_trace(1, 8, 3));
  EXPECT_NEAR(*r.requests[0].first_token_time(), 0.030, 1e-12);
  EXPECT_NEAR(*r.requests[0].finish_time(), 0.090, 1e-12);
  EXPECT_NEAR(r.report.tpot_mean_s, 0.030, 1e-12);
}

TEST(RunTest, RejectsInfeasibleConfig) {
  auto ring = flat_ring(2, 0.010, 0.005);
  ring.cfg.controller.max_batched_tokens = 0;
  EXPECT_THROW(run(ring.cfg, ring.cluster, burst_trace(1, 8, 1)), ConfigError);
  ring = flat_ring(2, 0.010, 0.005);
  EXPECT_THROW(run(ring.cfg, ring.cluster, Trace{}), ConfigError);
  ring.cfg.stage_profiles.pop_back();
  EXPECT_THROW(run(ring.cfg, ring.cluster, burst_trace(1, 8, 1)), ConfigError);
}

struct Scenario {
  testing::Ring ring;
  Trace trace;
};

Scenario random_scenario(std::mt19937_64& rng) {
  const int64_t stages = 1 + static_cast<int64_t>(rng() % 3);
  const double c = 0.002 + 0.001 * static_cast<double>(rng() % 10);
  const double t = 0.001 * static_cast<double>(rng() % 10);
  const double bw = rng() % 3 == 0 ? kInfinity : 1e6 * static_cast<double>(1 + rng() % 50);
  Scenario s{flat_ring(stages, c, t, bw), {}};
  EngineConfig& cfg = s.ring.cfg;
  cfg.controller.max_batched_tokens = 16 + static_cast<int64_t>(rng() % 200);
  cfg.controller.max_batch_size = 1 + static_cast<int64_t>(rng() % 16);
  if (rng() % 2) {
    cfg.n_policy = NPolicy::kFixed;
    cfg.fixed_n = 1 + static_cast<int64_t>(rng() % 5);
  }
  cfg.chunk_size = rng() % 2 ? kUnboundedChunk : 1024 * (1 + static_cast<int64_t>(rng() % 64));
  cfg.batching = rng() % 2 ? BatchingMode::kMixed : BatchingMode::kSeparate;
  cfg.scheduling_policy =
      rng() % 2 ? SchedulingPolicy::kFcfs : SchedulingPolicy::kDecodePriority;
  cfg.decision_stride = 1 + static_cast<int64_t>(rng() % 3);
  double at = 0;
  const int64_t count = 1 + static_cast<int64_t>(rng() % 25);
  for (int64_t i = 0; i < count; ++i) {
    at += 0.001 * static_cast<double>(rng() % 50);
    s.trace.requests.push_back(
        {at, 1 + static_cast<int64_t>(rng() % 300), 1 + static_cast<int64_t>(rng() % 20)});
  }
  return s;
}

std::string event_log_text(const RunResult& r) {
  std::ostringstream out;
  write_event_log(r.events, out);
  write_compute_log(r.compute, out);
  write_link_log(r.link_log, out);
  return out.str();
}

TEST(RunPropertyTest, InvariantsOnRandomScenarios) {
  std::mt19937_64 rng(2026);
  for (int trial = 0; trial < 200; ++trial) {
    Scenario s = random_scenario(rng);
    const RunResult r = run(s.ring.cfg, s.ring.cluster, s.trace);
    SCOPED_TRACE("trial " + std::to_string(trial));

    // Every request finishes with exactly its output length.
    int64_t due = 0;
    for (size_t i = 0; i < r.requests.size(); ++i) {
      const Request& q = r.requests[i];
      ASSERT_TRUE(q.finished());
      ASSERT_EQ(q.tokens_emitted(), s.trace.requests[i].output_len);
      due += s.trace.requests[i].output_len;
      // Queueing delay is a lower bound on time to first token.
      ASSERT_GE(*q.first_token_time() - q.arrival_time(),
                *q.first_compute_time() - q.arrival_time());
      ASSERT_GE(*q.first_compute_time(), q.arrival_time());
    }
    ASSERT_EQ(r.report.total_tokens, due);
    ASSERT_EQ(static_cast<int64_t>(r.emissions.size()), due);
    ASSERT_TRUE(r.report.throughput_identity_holds());

    // Events in non-decreasing time order.
    for (size_t i = 1; i < r.events.size(); ++i) {
      ASSERT_LE(r.events[i - 1].time, r.events[i].time);
    }

    // One computation at a time per stage.
    std::map<int64_t, std::vector<ComputeInterval>> by_stage;
    for (const ComputeInterval& c : r.compute) by_stage[c.stage].push_back(c);
    for (auto& [stage, list] : by_stage) {
      for (size_t i = 1; i < list.size(); ++i) ASSERT_LE(list[i - 1].end, list[i].start);
    }

    // Causality and FIFO at stages > 0. The k-th payload enqueued on link L
    // carries the k-th micro-batch finished by stage L.
    std::map<int64_t, Nanos> delivered_at;
    std::map<int64_t, size_t> delivery_rank;
    size_t rank = 0;
    for (const EngineEvent& e : r.events) {
      if (e.kind != EventKind::kPayloadDelivered) continue;
      delivered_at[e.subject] = e.time;
      delivery_rank[e.subject] = rank++;
    }
    std::map<std::string, std::vector<int64_t>> enqueued_by_name;
    for (const LinkEvent& e : r.link_log) {
      if (e.kind == LinkEventKind::kEnqueue) enqueued_by_name[e.link].push_back(e.payload_id);
    }
    for (int64_t stage = 1; stage < r.stages; ++stage) {
      const std::string link_name =
          "s" + std::to_string(stage - 1) + "->s" + std::to_string(stage);
      std::vector<int64_t> ids = enqueued_by_name[link_name];
      std::sort(ids.begin(), ids.end());
      const auto& upstream = by_stage[stage - 1];
      const auto& here = by_stage[stage];
      ASSERT_EQ(ids.size(), upstream.size());
      ASSERT_EQ(here.size(), upstream.size());
      std::map<int64_t, int64_t> payload_of_mb;
      for (size_t k = 0; k < ids.size(); ++k) payload_of_mb[upstream[k].micro_batch_id] = ids[k];
      size_t prev_rank = 0;
      for (size_t k = 0; k < here.size(); ++k) {
        const int64_t pid = payload_of_mb.at(here[k].micro_batch_id);
        ASSERT_GE(here[k].start, delivered_at.at(pid));
        if (k > 0) {
          ASSERT_GT(delivery_rank.at(pid), prev_rank);
        }
        prev_rank = delivery_rank.at(pid);
      }
    }

    // Same inputs, same bytes.
    const RunResult again = run(s.ring.cfg, s.ring.cluster, s.trace);
    ASSERT_EQ(event_log_text(r), event_log_text(again));
    ASSERT_EQ(r.report, again.report);
  }
}

TEST(MeasureBubbleTest, Cases) {
  const std::vector<ComputeInterval> busy = {{0, 0, 0, seconds_to_nanos(1.0)}};
  EXPECT_EQ(measure_bubble(busy, 0, 0.2, 0.8), 0.0);
  EXPECT_EQ(measure_bubble(busy, 1, 0.2, 0.8), 1.0);
  EXPECT_EQ(measure_bubble(busy, 0, 2.0, 3.0), 1.0);
  EXPECT_NEAR(measure_bubble(busy, 0, 0.5, 1.5), 0.5, 1e-12);
  EXPECT_THROW(measure_bubble(busy, 0, 1.0, 1.0), Error);
}

// Two stages of 10 ms, 5 ms hops, 12 long decode requests. Twelve tokens
// per iteration and at most four requests per micro-batch: the controller
// picks three micro-batches, a fixed policy of two leaves four requests
// waiting and a third of every round idle.
testing::Ring decode_ring(std::optional<int64_t> fixed_n) {
  auto ring = flat_ring(2, 0.010, 0.005);
  ring.cfg.controller.max_batched_tokens = 12;
  ring.cfg.controller.max_batch_size = 4;
  if (fixed_n) {
    ring.cfg.n_policy = NPolicy::kFixed;
    ring.cfg.fixed_n = *fixed_n;
  }
  return ring;
}

TEST(BubbleEffectTest, FixedTwoMatchesPrediction) {
  auto ring = decode_ring(2);
  const RunResult r = run(ring.cfg, ring.cluster, burst_trace(12, 1, 300));
  const PipelineShape shape = build_pipeline(ring.cfg, ring.cluster);
  const double predicted = predict_bubble(2, shape, 4, Phase::kDecode);
  EXPECT_NEAR(predicted, 1.0 / 3.0, 1e-12);
  EXPECT_NEAR(measure_bubble(r.compute, 0, 0.3, 3.3), predicted, 0.02);
  EXPECT_NEAR(measure_bubble(r.compute, 1, 0.3, 3.3), predicted, 0.02);
}

TEST(BubbleEffectTest, DynamicNFillsTheBubble) {
  auto fixed_ring = decode_ring(2);
  auto dyn_ring = decode_ring(std::nullopt);
  const Trace trace = burst_trace(12, 1, 300);
  const RunResult fixed = run(fixed_ring.cfg, fixed_ring.cluster, trace);
  const RunResult dyn = run(dyn_ring.cfg, dyn_ring.cluster, trace);
  EXPECT_EQ(dyn.decisions.at(1).decision.n_microbatches, 3);
  EXPECT_NEAR(measure_bubble(dyn.compute, 0, 0.3, 3.3), 0.0, 0.02);

  const double ratio =
      windowed_throughput(dyn.emissions, 0.3, 3.3) / windowed_throughput(fixed.emissions, 0.3, 3.3);
  EXPECT_NEAR(ratio, 1.5, 0.02);

  auto idle_seconds = [](const RunResult& r, int64_t stage) {
    Nanos busy = 0;
    for (const ComputeInterval& c : r.compute) {
      if (c.stage == stage) busy += c.end - c.start;
    }
    return r.report.span_s - nanos_to_seconds(busy);
  };
  EXPECT_LT(idle_seconds(dyn, 0), idle_seconds(fixed, 0));
}

TEST(BubbleEffectTest, ZeroTransferKeepsEveryStageBusy) {
  for (int64_t s = 1; s <= 4; ++s) {
    auto ring = flat_ring(s, 0.010, 0.0);
    ring.cfg.controller.max_batch_size = 4;
    ring.cfg.controller.max_batched_tokens = 4 * s;
    ring.cfg.controller.bubble_epsilon = 0.0;
    const RunResult r = run(ring.cfg, ring.cluster, burst_trace(4 * s, 1, 200));
    EXPECT_EQ(r.decisions.at(1).decision.n_microbatches, s);
    for (int64_t stage = 0; stage < s; ++stage) {
      const double t0 = 0.010 * static_cast<double>(s + 1);
      EXPECT_NEAR(measure_bubble(r.compute, stage, t0, t0 + 1.0), 0.0, 1e-9)
          << "S=" << s << " stage " << stage;
    }
  }
}

TEST(HeadSchedulerTest, PrefillIsNotStarvedByDecodes) {
  // A fast link keeps every slot refilled with decodes as soon as it returns;
  // a request arriving mid-run must still get its prompt in promptly.
  auto ring = flat_ring(2, 0.010, 0.0005, 1.25e9);
  ring.cfg.controller.max_batch_size = 8;
  Trace trace = burst_trace(64, 16, 400);
  trace.requests.push_back({1.0, 16, 2});
  const RunResult r = run(ring.cfg, ring.cluster, trace);
  const Request& late = r.requests.back();
  EXPECT_LT(*late.first_token_time() - late.arrival_time(), 0.2);
}

TEST(LogFormatTest, Headers) {
  auto ring = flat_ring(2, 0.010, 0.005);
  const RunResult r = run(ring.cfg, ring.cluster, burst_trace(1, 8, 1));
  std::ostringstream ev;
  write_event_log(r.events, ev);
  EXPECT_EQ(ev.str().rfind("time_s,kind,subject,stage\n", 0), 0u);
  std::ostringstream cp;
  write_compute_log(r.compute, cp);
  EXPECT_EQ(cp.str(),
            "stage,micro_batch,start_s,end_s\n"
            "0,0,0.000000000,0.010000000\n"
            "1,0,0.015000000,0.025000000\n");
}

}  // namespace
}  // namespace linkserve
