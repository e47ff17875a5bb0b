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

#ifndef LINKSERVE_WORKLOAD_H_
#define LINKSERVE_WORKLOAD_H_

#include <cstdint>
#include <iosfwd>
#include <optional>
#include <string>
#include <vector>

#include "linkserve/common.h"

namespace linkserve {

enum class RequestState { kQueued, kPrefill, kDecoding, kFinished };

std::string_view to_string(RequestState state);

// Lifecycle record of one inference request. Mutated only through the
// transition methods so the state machine invariants hold at all times.
class Request {
 public:
  Request(int64_t id, double arrival_time, int64_t input_len,
          int64_t output_len);

  int64_t id() const { return id_; }
  double arrival_time() const { return arrival_time_; }
  int64_t input_len() const { return input_len_; }
  int64_t output_len() const { return output_len_; }
  RequestState state() const { return state_; }
  int64_t tokens_emitted() const { return tokens_emitted_; }
  const std::optional<double>& first_token_time() const {
    return first_token_time_;
  }
  const std::optional<double>& finish_time() const { return finish_time_; }
  const std::optional<double>& first_compute_time() const {
    return first_compute_time_;
  }

  // Queued -> Prefill.
  void begin_prefill(double now);
  // Records the first time any stage started computing for this request.
  void mark_compute_start(double now);
  // Appends one generated token. The first token moves Prefill -> Decoding
  // (or straight to Finished when output_len == 1).
  void emit_token(double now);

  bool finished() const { return state_ == RequestState::kFinished; }

 private:
  int64_t id_;
  double arrival_time_;
  int64_t input_len_;
  int64_t output_len_;
  RequestState state_ = RequestState::kQueued;
  int64_t tokens_emitted_ = 0;
  std::optional<double> first_token_time_;
  std::optional<double> finish_time_;
  std::optional<double> first_compute_time_;
};

struct RequestSeed {
  double arrival_time = 0.0;
  int64_t input_len = 1;
  int64_t output_len = 1;

  bool operator==(const RequestSeed&) const = default;
};

struct Trace {
  std::vector<RequestSeed> requests;
  uint64_t seed = 0;
  double rate = 0.0;

  // Materializes lifecycle records; ids follow trace order.
  std::vector<Request> instantiate() const;

  bool operator==(const Trace&) const = default;
};

// One histogram bucket: lengths uniform over [lo, hi] with the given mass.
struct LengthBucket {
  int64_t lo = 1;
  int64_t hi = 1;
  double mass = 0.0;
};

struct LengthHistogram {
  std::vector<LengthBucket> buckets;

  void validate() const;
};

struct LengthDistribution {
  LengthHistogram input;
  LengthHistogram output;
};

// Synthetic stand-in for the conversation trace length shapes. The real trace
// is not shipped; this preset only approximates its published histograms.
LengthDistribution conversation_synthetic_preset();

// Single-point distribution, handy for steady-state experiments.
LengthDistribution fixed_lengths(int64_t input_len, int64_t output_len);

// Resolves a named preset ("conversation-synthetic", "fixed:<in>:<out>").
LengthDistribution length_preset(const std::string& name);

// Poisson arrivals at `rate` over [0, duration); deterministic per seed.
Trace generate_trace(double rate, double duration,
                     const LengthDistribution& lengths, uint64_t seed);

// Trace CSV: header `arrival_s,input_tokens,output_tokens`.
Trace load_trace(const std::string& path);
Trace parse_trace(std::istream& in, const std::string& source_name);
void save_trace(const Trace& trace, const std::string& path);
void write_trace(const Trace& trace, std::ostream& out);

inline constexpr int64_t kFilterMaxInput = 256;
inline constexpr int64_t kFilterMaxOutput = 512;

Trace filter_trace(const Trace& trace, int64_t max_input, int64_t max_output);

}  // namespace linkserve

#endif  // LINKSERVE_WORKLOAD_H_
