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

#include <algorithm>
#include <fstream>
#include <istream>
#include <ostream>
#include <random>
#include <sstream>

namespace linkserve {

std::string_view to_string(RequestState state) {
  switch (state) {
    case RequestState::kQueued:
      return "queued";
    case RequestState::kPrefill:
      return "prefill";
    case RequestState::kDecoding:
      return "decoding";
    case RequestState::kFinished:
      return "finished";
  }
  return "unknown";
}

Request::Request(int64_t id, double arrival_time, int64_t input_len,
                 int64_t output_len)
    : id_(id),
      arrival_time_(arrival_time),
      input_len_(input_len),
      output_len_(output_len) {
  if (input_len < 1 || output_len < 1) {
    throw ConfigError("request " + std::to_string(id) +
                      ": input_len and output_len must be >= 1");
  }
}

void Request::begin_prefill(double now) {
  if (state_ != RequestState::kQueued) {
    throw ProtocolError("request " + std::to_string(id_) +
                        ": begin_prefill from state " +
                        std::string(to_string(state_)));
  }
  (void)now;
  state_ = RequestState::kPrefill;
}

void Request::mark_compute_start(double now) {
  if (!first_compute_time_) first_compute_time_ = now;
}

void Request::emit_token(double now) {
  if (state_ != RequestState::kPrefill && state_ != RequestState::kDecoding) {
    throw ProtocolError("request " + std::to_string(id_) +
                        ": token emitted in state " +
                        std::string(to_string(state_)));
  }
  ++tokens_emitted_;
  if (tokens_emitted_ == 1) {
    first_token_time_ = std::max(now, arrival_time_);
  }
  if (tokens_emitted_ == output_len_) {
    state_ = RequestState::kFinished;
    finish_time_ = std::max(now, *first_token_time_);
  } else {
    state_ = RequestState::kDecoding;
  }
}

std::vector<Request> Trace::instantiate() const {
  std::vector<Request> out;
  out.reserve(requests.size());
  for (size_t i = 0; i < requests.size(); ++i) {
    const RequestSeed& s = requests[i];
    out.emplace_back(static_cast<int64_t>(i), s.arrival_time, s.input_len,
                     s.output_len);
  }
  return out;
}

void LengthHistogram::validate() const {
  if (buckets.empty()) throw ConfigError("length histogram has no buckets");
  double total = 0;
  for (const LengthBucket& b : buckets) {
    if (b.lo < 1 || b.hi < b.lo) {
      throw ConfigError("length bucket [" + std::to_string(b.lo) + ", " +
                        std::to_string(b.hi) + "] is invalid");
    }
    if (!(b.mass >= 0) || std::isinf(b.mass)) {
      throw ConfigError("length bucket mass must be finite and >= 0");
    }
    total += b.mass;
  }
  if (!(total > 0)) {
    throw ConfigError("length histogram has zero total mass");
  }
}

LengthDistribution conversation_synthetic_preset() {
  // SYNTHETIC: hand-shaped to resemble a chat workload (short-to-medium
  // prompts with a long tail, outputs mostly a few hundred tokens). Not
  // derived from any shipped trace file.
  LengthDistribution d;
  d.input.buckets = {
      {1, 32, 0.10},     {33, 64, 0.14},     {65, 128, 0.20},
      {129, 256, 0.22},  {257, 512, 0.16},   {513, 1024, 0.11},
      {1025, 2048, 0.05}, {2049, 4096, 0.02},
  };
  d.output.buckets = {
      {1, 32, 0.08},    {33, 64, 0.10},    {65, 128, 0.16},
      {129, 256, 0.26}, {257, 512, 0.25},  {513, 1024, 0.12},
      {1025, 2048, 0.03},
  };
  return d;
}

LengthDistribution fixed_lengths(int64_t input_len, int64_t output_len) {
  LengthDistribution d;
  d.input.buckets = {{input_len, input_len, 1.0}};
  d.output.buckets = {{output_len, output_len, 1.0}};
  return d;
}

LengthDistribution length_preset(const std::string& name) {
  if (name == "conversation-synthetic") return conversation_synthetic_preset();
  if (name.rfind("fixed:", 0) == 0) {
    std::string rest = name.substr(6);
    auto colon = rest.find(':');
    if (colon != std::string::npos) {
      auto in = parse_int(std::string_view(rest).substr(0, colon));
      auto out = parse_int(std::string_view(rest).substr(colon + 1));
      if (in && out && *in >= 1 && *out >= 1) return fixed_lengths(*in, *out);
    }
  }
  throw ConfigError("unknown length preset '" + name + "'");
}

namespace {

int64_t draw_length(const LengthHistogram& hist,
                    std::discrete_distribution<size_t>& pick,
                    std::mt19937_64& rng) {
  const LengthBucket& b = hist.buckets[pick(rng)];
  if (b.lo == b.hi) return b.lo;
  std::uniform_int_distribution<int64_t> within(b.lo, b.hi);
  return within(rng);
}

std::discrete_distribution<size_t> bucket_picker(const LengthHistogram& hist) {
  std::vector<double> masses;
  masses.reserve(hist.buckets.size());
  for (const LengthBucket& b : hist.buckets) masses.push_back(b.mass);
  return std::discrete_distribution<size_t>(masses.begin(), masses.end());
}

}  // namespace

Trace generate_trace(double rate, double duration,
                     const LengthDistribution& lengths, uint64_t seed) {
  if (!(rate > 0) || std::isinf(rate)) {
    throw ConfigError("arrival rate must be positive and finite");
  }
  if (!(duration >= 0)) throw ConfigError("duration must be >= 0");
  lengths.input.validate();
  lengths.output.validate();

  Trace trace;
  trace.seed = seed;
  trace.rate = rate;

  // Arrival and length streams are independent so changing the length
  // histogram leaves the arrival process untouched.
  std::mt19937_64 arrival_rng(seed);
  std::mt19937_64 length_rng(seed ^ 0x9e3779b97f4a7c15ULL);
  std::exponential_distribution<double> gap(rate);
  auto pick_in = bucket_picker(lengths.input);
  auto pick_out = bucket_picker(lengths.output);

  double t = 0;
  while (true) {
    t += gap(arrival_rng);
    if (t >= duration) break;
    RequestSeed s;
    s.arrival_time = t;
    s.input_len = draw_length(lengths.input, pick_in, length_rng);
    s.output_len = draw_length(lengths.output, pick_out, length_rng);
    trace.requests.push_back(s);
  }
  return trace;
}

namespace {

constexpr std::string_view kTraceHeader = "arrival_s,input_tokens,output_tokens";

std::vector<std::string_view> split_csv(std::string_view line) {
  std::vector<std::string_view> fields;
  size_t start = 0;
  while (true) {
    size_t comma = line.find(',', start);
    if (comma == std::string_view::npos) {
      fields.push_back(line.substr(start));
      break;
    }
    fields.push_back(line.substr(start, comma - start));
    start = comma + 1;
  }
  return fields;
}

}  // namespace

Trace parse_trace(std::istream& in, const std::string& source_name) {
  Trace trace;
  std::string line;
  int64_t line_no = 0;
  bool header_seen = false;
  double last_arrival = -kInfinity;
  while (std::getline(in, line)) {
    ++line_no;
    if (!line.empty() && line.back() == '\r') line.pop_back();
    if (!header_seen) {
      // Tolerate a UTF-8 byte order mark.
      if (line.rfind("\xEF\xBB\xBF", 0) == 0) line.erase(0, 3);
      if (line != kTraceHeader) {
        throw LoadError(source_name, line_no,
                        "expected header '" + std::string(kTraceHeader) + "'");
      }
      header_seen = true;
      continue;
    }
    if (line.empty()) continue;
    auto fields = split_csv(line);
    if (fields.size() != 3) {
      throw LoadError(source_name, line_no,
                      "expected 3 fields, got " + std::to_string(fields.size()));
    }
    auto arrival = parse_double(fields[0]);
    auto input = parse_int(fields[1]);
    auto output = parse_int(fields[2]);
    if (!arrival || !std::isfinite(*arrival) || *arrival < 0) {
      throw LoadError(source_name, line_no,
                      "bad arrival_s '" + std::string(fields[0]) + "'");
    }
    if (!input || *input < 1) {
      throw LoadError(source_name, line_no,
                      "bad input_tokens '" + std::string(fields[1]) + "'");
    }
    if (!output || *output < 1) {
      throw LoadError(source_name, line_no,
                      "bad output_tokens '" + std::string(fields[2]) + "'");
    }
    if (*arrival < last_arrival) {
      throw LoadError(source_name, line_no, "arrival times must be non-decreasing");
    }
    last_arrival = *arrival;
    trace.requests.push_back({*arrival, *input, *output});
  }
  if (!header_seen) throw LoadError(source_name, 1, "missing header");
  return trace;
}

Trace load_trace(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path, 0, "trace not found");
  return parse_trace(in, path);
}

void write_trace(const Trace& trace, std::ostream& out) {
  out << kTraceHeader << '\n';
  for (const RequestSeed& s : trace.requests) {
    out << format_exact(s.arrival_time) << ',' << s.input_len << ','
        << s.output_len << '\n';
  }
}

void save_trace(const Trace& trace, const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write trace to " + path);
  write_trace(trace, out);
}

Trace filter_trace(const Trace& trace, int64_t max_input, int64_t max_output) {
  if (max_input < 1 || max_output < 1) {
    throw ConfigError("filter bounds must be >= 1");
  }
  Trace out;
  out.seed = trace.seed;
  out.rate = trace.rate;
  for (const RequestSeed& s : trace.requests) {
    if (s.input_len <= max_input && s.output_len <= max_output) {
      out.requests.push_back(s);
    }
  }
  return out;
}

}  // namespace linkserve
