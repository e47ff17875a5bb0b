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

#include "linkserve/profiler.h"

#include <gtest/gtest.h>

#include <fstream>
#include <random>

namespace linkserve {
namespace {

StageProfile two_point(double at100, double at200) {
  StageProfile p(0, 4);
  p.add_point(Phase::kDecode, 100, at100);
  p.add_point(Phase::kDecode, 200, at200);
  p.validate();
  return p;
}

TEST(ComputeTimeTest, InterpolatesBetweenPoints) {
  EXPECT_NEAR(compute_time(two_point(0.010, 0.018), Phase::kDecode, 150), 0.014, 1e-15);
}

TEST(ComputeTimeTest, ExactPointReturnsTableValue) {
  const StageProfile p = two_point(0.010, 0.018);
  EXPECT_EQ(compute_time(p, Phase::kDecode, 100), 0.010);
  EXPECT_EQ(compute_time(p, Phase::kDecode, 200), 0.018);
}

TEST(ComputeTimeTest, ExtrapolatesWithNearestSlope) {
  // Slope 8e-5 s per token beyond the last point.
  EXPECT_NEAR(compute_time(two_point(0.010, 0.018), Phase::kDecode, 300), 0.026, 1e-15);
  EXPECT_NEAR(compute_time(two_point(0.010, 0.018), Phase::kDecode, 50), 0.006, 1e-15);
}

TEST(ComputeTimeTest, StaysPositiveFarBelowTable) {
  StageProfile p(0, 1);
  p.add_point(Phase::kPrefill, 100, 0.001);
  p.add_point(Phase::kPrefill, 200, 0.100);
  EXPECT_GT(compute_time(p, Phase::kPrefill, 1), 0.0);
}

TEST(ComputeTimeTest, MissingPhaseIsProfileError) {
  EXPECT_THROW(compute_time(two_point(0.01, 0.02), Phase::kPrefill, 10), ProfileError);
}

TEST(ComputeTimeTest, MonotoneWhenTableIs) {
  std::mt19937_64 rng(5);
  for (int trial = 0; trial < 200; ++trial) {
    StageProfile p(0, 1);
    int64_t tokens = 1;
    double seconds = 1e-4;
    const int points = 2 + static_cast<int>(rng() % 6);
    for (int i = 0; i < points; ++i) {
      p.add_point(Phase::kDecode, tokens, seconds);
      tokens += 1 + static_cast<int64_t>(rng() % 500);
      seconds += std::uniform_real_distribution<double>(0, 0.01)(rng);
    }
    p.validate();
    double prev = 0;
    for (int64_t q = 1; q < tokens + 600; q += 7) {
      const double t = compute_time(p, Phase::kDecode, q);
      ASSERT_GE(t, prev - 1e-15) << "trial " << trial << " q " << q;
      prev = t;
    }
  }
}

TEST(StageProfileTest, ValidationRules) {
  StageProfile one(0, 1);
  one.add_point(Phase::kDecode, 1, 0.1);
  EXPECT_THROW(one.validate(), ProfileError);
  StageProfile falling(0, 1);
  falling.add_point(Phase::kDecode, 1, 0.2);
  falling.add_point(Phase::kDecode, 2, 0.1);
  EXPECT_THROW(falling.validate(), ProfileError);
  EXPECT_THROW(StageProfile(0, 1).validate(), ProfileError);
  StageProfile p(0, 1);
  EXPECT_THROW(p.add_point(Phase::kDecode, 0, 0.1), ProfileError);
  EXPECT_THROW(p.add_point(Phase::kDecode, 1, 0.0), ProfileError);
}

TEST(TransferTimeTest, PromptPayloadOverSlowLink) {
  // 1000 tokens of 4096 hidden at 2 bytes over 100 Mbps with 10 ms latency.
  const LinkProfile link{"a", "b", 0.010, 12'500'000.0};
  EXPECT_NEAR(transfer_time(link, 1000 * 4096 * 2), 0.66536, 1e-12);
  EXPECT_NEAR(transfer_time(link, 4 * 4096 * 2), 0.01262144, 1e-12);
  EXPECT_EQ(transfer_time(link, 0), 0.010);
}

TEST(TransferTimeTest, AffineInBytes) {
  std::mt19937_64 rng(2);
  for (int i = 0; i < 1000; ++i) {
    const LinkProfile link{"a", "b", std::uniform_real_distribution<double>(0, 0.1)(rng),
                           std::uniform_real_distribution<double>(1e3, 1e10)(rng)};
    const int64_t b = static_cast<int64_t>(rng() % (int64_t{1} << 30));
    const double diff = transfer_time(link, 2 * b) - transfer_time(link, b);
    EXPECT_NEAR(diff, static_cast<double>(b) / link.bandwidth_Bps,
                1e-12 * std::max(1.0, diff));
  }
}

TEST(TransferTimeTest, InfiniteBandwidthIsLatencyOnly) {
  const LinkProfile link{"a", "b", 0.003, kInfinity};
  EXPECT_EQ(transfer_time(link, 1 << 30), 0.003);
}

TEST(LinkProfileTest, Validation) {
  EXPECT_THROW((LinkProfile{"a", "b", -1, 1}.validate()), ConfigError);
  EXPECT_THROW((LinkProfile{"a", "b", 0, 0}.validate()), ConfigError);
  EXPECT_NO_THROW((LinkProfile{"a", "b", 0, 1}.validate()));
}

TEST(SynthProfileTest, ClosedForm) {
  const StageProfile p = synth_profile(16, 1e-6, 0.002);
  EXPECT_NEAR(p.points(Phase::kPrefill).at(1024), 0.018384, 1e-15);
  EXPECT_NEAR(p.points(Phase::kDecode).at(1), 16e-6 + 0.002, 1e-15);
  EXPECT_EQ(p, synth_profile(16, 1e-6, 0.002));
  EXPECT_THROW(synth_profile(0, 1e-6, 0.002), ProfileError);
  EXPECT_THROW(synth_profile(1, 0, 0.002), ProfileError);
}

TEST(ProfileFilesTest, StageProfilesRoundTrip) {
  const std::string path = ::testing::TempDir() + "/profiles.csv";
  std::vector<StageProfile> in = {synth_profile(8, 2e-6, 0.004, 0),
                                  synth_profile(12, 2e-6, 0.004, 1)};
  save_stage_profiles(in, path);
  const auto out = load_stage_profiles(path);
  ASSERT_EQ(out.size(), 2u);
  for (size_t i = 0; i < 2; ++i) {
    EXPECT_EQ(out[i].stage_id(), in[i].stage_id());
    EXPECT_EQ(out[i].points(Phase::kPrefill), in[i].points(Phase::kPrefill));
    EXPECT_EQ(out[i].points(Phase::kDecode), in[i].points(Phase::kDecode));
  }
}

TEST(ProfileFilesTest, BadRowsNameTheLine) {
  const std::string path = ::testing::TempDir() + "/bad_profiles.csv";
  {
    std::ofstream out(path);
    out << "stage_id,phase,batched_tokens,seconds\n0,decode,1,0.1\n0,decode,x,0.2\n";
  }
  try {
    load_stage_profiles(path);
    FAIL() << "expected LoadError";
  } catch (const LoadError& e) {
    EXPECT_EQ(e.line(), 3);
  }
}

TEST(ProfileFilesTest, LinkFileUsesBitsPerSecond) {
  const std::string path = ::testing::TempDir() + "/links.csv";
  {
    std::ofstream out(path);
    out << "from,to,latency_s,bandwidth_bps\na,b,0.01,100000000\n";
  }
  const auto links = load_link_profiles(path);
  ASSERT_EQ(links.size(), 1u);
  EXPECT_EQ(links[0].bandwidth_Bps, 12'500'000.0);
  EXPECT_EQ(links[0].latency_s, 0.01);
  EXPECT_THROW(load_link_profiles(path + ".missing"), LoadError);
}

}  // namespace
}  // namespace linkserve
