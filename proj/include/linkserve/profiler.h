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

#ifndef LINKSERVE_PROFILER_H_
#define LINKSERVE_PROFILER_H_

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "linkserve/common.h"

namespace linkserve {

// Compute-latency table for one pipeline stage, indexed by phase and the
// number of tokens batched into a micro-batch. Immutable once built.
class StageProfile {
 public:
  StageProfile() = default;
  StageProfile(int64_t stage_id, int64_t layers);

  // Adds one measured point. Call validate() once all points are in.
  void add_point(Phase phase, int64_t batched_tokens, double seconds);
  // Throws ProfileError unless every present phase has >= 2 distinct
  // points, all positive and monotone non-decreasing.
  void validate() const;

  int64_t stage_id() const { return stage_id_; }
  int64_t layers() const { return layers_; }
  bool has_phase(Phase phase) const;
  const std::map<int64_t, double>& points(Phase phase) const;

  bool operator==(const StageProfile&) const = default;

 private:
  int64_t stage_id_ = 0;
  int64_t layers_ = 0;
  std::map<int64_t, double> prefill_;
  std::map<int64_t, double> decode_;
};

// Piecewise-linear interpolation; linear extrapolation from the nearest two
// points outside the table. Result is always > 0.
double compute_time(const StageProfile& profile, Phase phase,
                    int64_t batched_tokens);

// Flat table: every query returns `seconds`. Used for analytic experiments.
StageProfile flat_profile(int64_t stage_id, int64_t layers, double seconds);

// Entries at {1, 64, 256, 1024} tokens: layers * cost * tokens + overhead,
// identical for both phases.
StageProfile synth_profile(int64_t layers, double per_layer_token_cost,
                           double overhead, int64_t stage_id = 0);

// Directed link condition estimate.
struct LinkProfile {
  std::string from;
  std::string to;
  double latency_s = 0.0;
  double bandwidth_Bps = kInfinity;  // bytes per second

  void validate() const;
  bool operator==(const LinkProfile&) const = default;
};

// latency_s + bytes / bandwidth_Bps.
double transfer_time(const LinkProfile& link, int64_t bytes);
// Serialization part only: bytes / bandwidth_Bps.
double serialization_time(const LinkProfile& link, int64_t bytes);

// Profile CSV: `stage_id,phase,batched_tokens,seconds`. Returns profiles
// ordered by stage_id; layer counts are left at 0 for the caller to fill.
std::vector<StageProfile> load_stage_profiles(const std::string& path);
void save_stage_profiles(const std::vector<StageProfile>& profiles,
                         const std::string& path);

// Link CSV: `from,to,latency_s,bandwidth_bps`, bandwidth in bits per second.
std::vector<LinkProfile> load_link_profiles(const std::string& path);

}  // namespace linkserve

#endif  // LINKSERVE_PROFILER_H_
