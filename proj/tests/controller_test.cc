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

#include <gtest/gtest.h>

#include <random>
#include <sstream>

#include "oracles.h"

namespace linkserve {
namespace {

// S stages of flat compute `c`, ring links of pure latency `t`.
PipelineShape ring_shape(int64_t stages, double c, double t) {
  PipelineShape shape;
  for (int64_t i = 0; i < stages; ++i) shape.stages.push_back(flat_profile(i, 8, c));
  if (stages > 1) {
    for (int64_t i = 0; i < stages; ++i) {
      shape.links.push_back({"s" + std::to_string(i),
                             "s" + std::to_string((i + 1) % stages), t, kInfinity});
    }
  }
  return shape;
}

// Decode load of 2048 queued requests; max_batch_size keeps every micro-batch
// at 32 tokens whatever N is.
ControllerConfig grid_config() {
  ControllerConfig cfg;
  cfg.max_batch_size = 32;
  return cfg;
}

TEST(PredictBubbleTest, TwoStageExamples) {
  const PipelineShape shape = ring_shape(2, 0.010, 0.005);
  const RoundPrediction r = predict_round(2, shape, 32, Phase::kDecode);
  EXPECT_NEAR(r.round_time, 0.030, 1e-12);
  EXPECT_NEAR(r.bubble, 1.0 / 3.0, 1e-12);
  EXPECT_EQ(predict_bubble(3, shape, 32, Phase::kDecode), 0.0);
  EXPECT_EQ(predict_bubble(2, ring_shape(2, 0.010, 0.0), 32, Phase::kDecode), 0.0);
}

TEST(PredictBubbleTest, AgreesWithRingSimulation) {
  for (int s = 1; s <= 4; ++s) {
    for (double ratio : {0.0, 0.25, 0.5, 1.0, 2.0, 4.0}) {
      const PipelineShape shape = ring_shape(s, 0.010, ratio * 0.010);
      for (int n = 1; n <= 2 * s + 2; ++n) {
        ASSERT_NEAR(predict_bubble(n, shape, 32, Phase::kDecode),
                    oracle::ring_bubble(s, 0.010, ratio * 0.010, n), 1e-9)
            << "S=" << s << " t/c=" << ratio << " n=" << n;
      }
    }
  }
}

TEST(PredictBubbleTest, BandwidthAndFeedbackBytes) {
  PipelineShape shape = ring_shape(2, 0.010, 0.0);
  shape.links[0].bandwidth_Bps = 1000;  // forward hop
  shape.links[1].bandwidth_Bps = 1000;  // return hop
  shape.activation_bytes_per_token = 10;
  shape.feedback_bytes_per_request = 8;
  // 4 decode tokens: 40 B forward, 4 x 8 B back.
  const RoundPrediction r = predict_round(1, shape, 4, Phase::kDecode);
  EXPECT_NEAR(r.transfer_sum, 0.040 + 0.032, 1e-12);
  // A prefill micro-batch returns one token.
  EXPECT_NEAR(predict_round(1, shape, 4, Phase::kPrefill).transfer_sum, 0.048, 1e-12);
}

TEST(PredictBubbleTest, FixedComputeIsNonIncreasingInN) {
  std::mt19937_64 rng(5);
  std::uniform_real_distribution<double> u(0.001, 0.05);
  for (int trial = 0; trial < 500; ++trial) {
    const int64_t s = 1 + static_cast<int64_t>(rng() % 5);
    PipelineShape shape;
    for (int64_t i = 0; i < s; ++i) shape.stages.push_back(flat_profile(i, 8, u(rng)));
    if (s > 1) {
      for (int64_t i = 0; i < s; ++i) shape.links.push_back({"a", "b", u(rng), kInfinity});
    }
    double prev = 1.0;
    for (int64_t n = 1; n <= 3 * s; ++n) {
      const double b = predict_bubble(n, shape, 64, Phase::kDecode);
      ASSERT_LE(b, prev + 1e-15);
      prev = b;
    }
  }
}

TEST(ChooseNTest, Examples) {
  const ControllerConfig cfg = grid_config();
  const ControllerDecision d = choose_n(cfg, ring_shape(2, 0.010, 0.005), 2048, Phase::kDecode);
  EXPECT_EQ(d.n_microbatches, 3);
  EXPECT_EQ(d.predicted_bubble_fraction, 0.0);
  EXPECT_EQ(d.token_budget_per_microbatch, 683);

  EXPECT_EQ(choose_n(cfg, ring_shape(2, 0.010, 0.0), 2048, Phase::kDecode).n_microbatches, 2);

  ControllerConfig capped = cfg;
  capped.n_max = 1;
  const ControllerDecision one = choose_n(capped, ring_shape(2, 0.010, 0.005), 2048,
                                          Phase::kDecode);
  EXPECT_EQ(one.n_microbatches, 1);
  EXPECT_NEAR(one.predicted_bubble_fraction, 1.0 - 0.010 / 0.030, 1e-12);
}

TEST(ChooseNTest, ZeroTransferGivesPipelineDepth) {
  for (int64_t s = 1; s <= 8; ++s) {
    ControllerConfig cfg = grid_config();
    cfg.bubble_epsilon = 0.0;
    cfg.n_max = 1000;
    EXPECT_EQ(choose_n(cfg, ring_shape(s, 0.010, 0.0), 2048, Phase::kDecode).n_microbatches, s)
        << "S=" << s;
  }
}

TEST(ChooseNTest, MatchesBruteForceGrid) {
  const double c = 0.010;
  for (int s : {2, 3, 4}) {
    for (double ratio : {0.25, 0.5, 1.0, 2.0, 4.0}) {
      const ControllerConfig cfg = grid_config();
      const int64_t got =
          choose_n(cfg, ring_shape(s, c, ratio * c), 2048, Phase::kDecode).n_microbatches;
      const int want = oracle::min_bubble_free_n(s, c, ratio * c, cfg.bubble_epsilon, 2 * s);
      EXPECT_EQ(got, want) << "S=" << s << " t/c=" << ratio;
    }
  }
}

TEST(ChooseNTest, StopsWhenGainIsSmall) {
  // Token-scaled with flat compute: splitting the same 64 tokens more ways
  // delivers nothing extra per round, so the search stops at once.
  ControllerConfig cfg;
  cfg.max_batched_tokens = 64;
  const ControllerDecision d =
      choose_n(cfg, ring_shape(2, 0.010, 0.005), 64, Phase::kPrefill, 1);
  EXPECT_EQ(d.n_microbatches, 1);
  EXPECT_EQ(d.token_budget_per_microbatch, 64);
}

TEST(ChooseNTest, ReturnedNSatisfiesStoppingRuleAndIsMinimal) {
  std::mt19937_64 rng(17);
  std::uniform_real_distribution<double> u(0.001, 0.04);
  for (int trial = 0; trial < 300; ++trial) {
    const int64_t s = 2 + static_cast<int64_t>(rng() % 3);
    const PipelineShape shape = ring_shape(s, 0.010, u(rng));
    ControllerConfig cfg = grid_config();
    cfg.compute_mode = trial % 2 ? ComputeMode::kFixedCompute : ComputeMode::kTokenScaled;
    const ControllerDecision d = choose_n(cfg, shape, 2048, Phase::kDecode);
    const int64_t n_max = cfg.effective_n_max(s);
    ASSERT_GE(d.n_microbatches, 1);
    ASSERT_LE(d.n_microbatches, n_max);
    // No smaller N reaches the bubble target.
    for (int64_t n = 1; n < d.n_microbatches; ++n) {
      ASSERT_GT(predict_bubble(n, shape, 32, Phase::kDecode), cfg.bubble_epsilon);
    }
  }
}

TEST(MicrobatchBudgetTest, SplitsAndCaps) {
  ControllerConfig cfg;
  EXPECT_EQ(microbatch_budget(cfg, 2048, 3), 683);
  EXPECT_EQ(microbatch_budget(cfg, 100000, 1), 2048);
  EXPECT_EQ(microbatch_budget(cfg, 0, 4), 1);
}

TEST(ControllerConfigTest, Validation) {
  ControllerConfig cfg;
  EXPECT_EQ(cfg.effective_n_max(3), 6);
  cfg.bubble_epsilon = 1.0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  cfg = ControllerConfig{};
  cfg.max_batch_size = 0;
  EXPECT_THROW(cfg.validate(), ConfigError);
  EXPECT_EQ(parse_compute_mode("fixed_compute"), ComputeMode::kFixedCompute);
  EXPECT_THROW(parse_compute_mode("auto"), ConfigError);
  PipelineShape shape = ring_shape(3, 0.01, 0.0);
  shape.links.pop_back();
  EXPECT_THROW(shape.validate(), ConfigError);
}

TEST(DecisionLogTest, CsvFormat) {
  std::ostringstream out;
  write_decision_log({{0, {3, 683, 0.0}}, {1, {2, 1024, 1.0 / 3.0}}}, out);
  EXPECT_EQ(out.str(),
            "iteration,n,token_budget,predicted_bubble\n"
            "0,3,683,0.000000\n"
            "1,2,1024,0.333333\n");
}

}  // namespace
}  // namespace linkserve
