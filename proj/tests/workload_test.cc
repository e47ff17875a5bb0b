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

#include "linkserve/workload.h"

#include <gtest/gtest.h>

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>

namespace linkserve {
namespace {

// One-sample Kolmogorov-Smirnov statistic against Exp(rate).
double ks_exponential(std::vector<double> sample, double rate) {
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  double d = 0;
  for (size_t i = 0; i < sample.size(); ++i) {
    const double cdf = 1.0 - std::exp(-rate * sample[i]);
    d = std::max(d, std::max(cdf - static_cast<double>(i) / n,
                             static_cast<double>(i + 1) / n - cdf));
  }
  return d;
}

TEST(RequestTest, LifecycleWithDecoding) {
  Request r(0, 1.0, 10, 3);
  EXPECT_EQ(r.state(), RequestState::kQueued);
  r.begin_prefill(1.5);
  EXPECT_EQ(r.state(), RequestState::kPrefill);
  r.emit_token(2.0);
  EXPECT_EQ(r.state(), RequestState::kDecoding);
  EXPECT_DOUBLE_EQ(*r.first_token_time(), 2.0);
  r.emit_token(2.1);
  r.emit_token(2.2);
  EXPECT_TRUE(r.finished());
  EXPECT_EQ(r.tokens_emitted(), 3);
  EXPECT_DOUBLE_EQ(*r.finish_time(), 2.2);
  EXPECT_THROW(r.emit_token(2.3), ProtocolError);
}

TEST(RequestTest, SingleTokenOutputSkipsDecoding) {
  Request r(1, 0.0, 4, 1);
  r.begin_prefill(0.0);
  r.emit_token(0.5);
  EXPECT_TRUE(r.finished());
  EXPECT_EQ(*r.first_token_time(), *r.finish_time());
}

TEST(RequestTest, RejectsBadLengthsAndTransitions) {
  EXPECT_THROW(Request(0, 0, 0, 1), ConfigError);
  EXPECT_THROW(Request(0, 0, 1, 0), ConfigError);
  Request r(0, 0, 1, 1);
  EXPECT_THROW(r.emit_token(0), ProtocolError);
  r.begin_prefill(0);
  EXPECT_THROW(r.begin_prefill(0), ProtocolError);
}

TEST(GenerateTraceTest, ZeroDurationIsEmpty) {
  EXPECT_TRUE(generate_trace(1.0, 0.0, fixed_lengths(8, 8), 1).requests.empty());
}

TEST(GenerateTraceTest, PoissonCountWithinThreeSigma) {
  const Trace t = generate_trace(1.0, 3600.0, conversation_synthetic_preset(), 42);
  EXPECT_GE(t.requests.size(), 3420u);
  EXPECT_LE(t.requests.size(), 3780u);
  int inside = 0;
  for (uint64_t seed = 0; seed < 20; ++seed) {
    const size_t n = generate_trace(1.0, 3600.0, fixed_lengths(1, 1), seed).requests.size();
    if (n >= 3420 && n <= 3780) ++inside;
  }
  EXPECT_GE(inside, 19);
}

TEST(GenerateTraceTest, DeterministicForSeed) {
  const auto d = conversation_synthetic_preset();
  const Trace a = generate_trace(2.0, 100.0, d, 9);
  const Trace b = generate_trace(2.0, 100.0, d, 9);
  EXPECT_EQ(a, b);
  std::ostringstream sa, sb;
  write_trace(a, sa);
  write_trace(b, sb);
  EXPECT_EQ(sa.str(), sb.str());
  EXPECT_NE(a, generate_trace(2.0, 100.0, d, 10));
}

TEST(GenerateTraceTest, InterArrivalGapsAreExponential) {
  // 1% critical value of the one-sample KS statistic is about 1.628 / sqrt(n).
  for (uint64_t seed : {3u, 17u, 2026u}) {
    const double rate = 5.0;
    const Trace t = generate_trace(rate, 2500.0, fixed_lengths(1, 1), seed);
    ASSERT_GE(t.requests.size(), 10000u);
    std::vector<double> gaps;
    double prev = 0;
    for (size_t i = 0; i < 10000; ++i) {
      gaps.push_back(t.requests[i].arrival_time - prev);
      prev = t.requests[i].arrival_time;
    }
    EXPECT_LT(ks_exponential(gaps, rate), 1.628 / std::sqrt(10000.0)) << "seed " << seed;
  }
}

TEST(GenerateTraceTest, LengthsStayInsideHistogramSupport) {
  const auto d = conversation_synthetic_preset();
  const Trace t = generate_trace(10.0, 200.0, d, 5);
  for (const RequestSeed& s : t.requests) {
    EXPECT_GE(s.input_len, 1);
    EXPECT_LE(s.input_len, 4096);
    EXPECT_GE(s.output_len, 1);
    EXPECT_LE(s.output_len, 2048);
  }
}

TEST(GenerateTraceTest, ArrivalsNonDecreasing) {
  const Trace t = generate_trace(50.0, 20.0, fixed_lengths(3, 3), 8);
  EXPECT_TRUE(std::is_sorted(t.requests.begin(), t.requests.end(),
                             [](const RequestSeed& a, const RequestSeed& b) {
                               return a.arrival_time < b.arrival_time;
                             }));
}

TEST(GenerateTraceTest, RejectsBadInputs) {
  EXPECT_THROW(generate_trace(0.0, 10, fixed_lengths(1, 1), 0), ConfigError);
  EXPECT_THROW(generate_trace(1.0, -1, fixed_lengths(1, 1), 0), ConfigError);
  LengthDistribution zero = fixed_lengths(1, 1);
  zero.input.buckets[0].mass = 0;
  EXPECT_THROW(generate_trace(1.0, 10, zero, 0), ConfigError);
  LengthDistribution empty = fixed_lengths(1, 1);
  empty.output.buckets.clear();
  EXPECT_THROW(generate_trace(1.0, 10, empty, 0), ConfigError);
}

TEST(LengthPresetTest, NamedPresets) {
  EXPECT_EQ(length_preset("fixed:5:7").input.buckets[0].lo, 5);
  EXPECT_EQ(length_preset("fixed:5:7").output.buckets[0].hi, 7);
  EXPECT_NO_THROW(length_preset("conversation-synthetic").input.validate());
  EXPECT_THROW(length_preset("fixed:0:7"), ConfigError);
  EXPECT_THROW(length_preset("azure"), ConfigError);
}

TEST(ParseTraceTest, HeaderOnlyIsEmpty) {
  std::istringstream in("arrival_s,input_tokens,output_tokens\n");
  EXPECT_TRUE(parse_trace(in, "t.csv").requests.empty());
}

TEST(ParseTraceTest, SingleRow) {
  std::istringstream in("arrival_s,input_tokens,output_tokens\n0.5,100,50\n");
  const Trace t = parse_trace(in, "t.csv");
  ASSERT_EQ(t.requests.size(), 1u);
  EXPECT_EQ(t.requests[0], (RequestSeed{0.5, 100, 50}));
}

TEST(ParseTraceTest, ErrorsNameTheLine) {
  auto line_of = [](const std::string& text) -> int64_t {
    std::istringstream in(text);
    try {
      parse_trace(in, "t.csv");
    } catch (const LoadError& e) {
      return e.line();
    }
    return -1;
  };
  const std::string h = "arrival_s,input_tokens,output_tokens\n";
  EXPECT_EQ(line_of(h + "0.1,10,10\n0.2,abc,10\n"), 3);
  EXPECT_EQ(line_of(h + "0.1,10\n"), 2);
  EXPECT_EQ(line_of(h + "0.5,10,10\n0.1,10,10\n"), 3);
  EXPECT_EQ(line_of(h + "0.5,0,10\n"), 2);
  EXPECT_EQ(line_of("time,in,out\n"), 1);
  EXPECT_EQ(line_of(""), 1);
}

TEST(ParseTraceTest, ToleratesCrlfAndBom) {
  std::istringstream in("\xEF\xBB\xBF" "arrival_s,input_tokens,output_tokens\r\n1,2,3\r\n");
  EXPECT_EQ(parse_trace(in, "t.csv").requests.size(), 1u);
}

TEST(TraceRoundTripTest, RandomTracesSurviveSerialization) {
  std::mt19937_64 rng(11);
  for (int trial = 0; trial < 50; ++trial) {
    Trace t;
    double at = 0;
    const int n = static_cast<int>(rng() % 40);
    for (int i = 0; i < n; ++i) {
      at += std::uniform_real_distribution<double>(0, 3)(rng);
      t.requests.push_back({at, static_cast<int64_t>(1 + rng() % 5000),
                            static_cast<int64_t>(1 + rng() % 5000)});
    }
    std::stringstream buf;
    write_trace(t, buf);
    const Trace back = parse_trace(buf, "mem");
    EXPECT_EQ(back.requests, t.requests);
  }
}

TEST(TraceRoundTripTest, FileRoundTrip) {
  const Trace t = generate_trace(3.0, 30.0, conversation_synthetic_preset(), 4);
  const std::string path = ::testing::TempDir() + "/trace_roundtrip.csv";
  save_trace(t, path);
  EXPECT_EQ(load_trace(path).requests, t.requests);
  EXPECT_THROW(load_trace(path + ".missing"), LoadError);
}

TEST(FilterTraceTest, KeepsOnlyRequestsWithinBothBounds) {
  Trace t;
  t.requests = {{0, 256, 512}, {1, 257, 10}, {2, 10, 513}};
  const Trace f = filter_trace(t, kFilterMaxInput, kFilterMaxOutput);
  ASSERT_EQ(f.requests.size(), 1u);
  EXPECT_EQ(f.requests[0], (RequestSeed{0, 256, 512}));
}

TEST(FilterTraceTest, HugeBoundsAreIdentityAndFilterIsIdempotent) {
  const Trace t = generate_trace(5.0, 60.0, conversation_synthetic_preset(), 12);
  const int64_t big = std::numeric_limits<int64_t>::max();
  EXPECT_EQ(filter_trace(t, big, big).requests, t.requests);
  const Trace once = filter_trace(t, 256, 512);
  EXPECT_EQ(filter_trace(once, 256, 512), once);
  for (const RequestSeed& s : once.requests) {
    EXPECT_LE(s.input_len, 256);
    EXPECT_LE(s.output_len, 512);
  }
}

TEST(FilterTraceTest, AllOversizedGivesEmptyAndBadBoundsThrow) {
  Trace t;
  t.requests = {{0, 900, 900}, {1, 1000, 1}};
  EXPECT_TRUE(filter_trace(t, 256, 512).requests.empty());
  EXPECT_THROW(filter_trace(t, 0, 512), ConfigError);
}

}  // namespace
}  // namespace linkserve
