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

#include <algorithm>
#include <fstream>
#include <iterator>

namespace linkserve {

StageProfile::StageProfile(int64_t stage_id, int64_t layers)
    : stage_id_(stage_id), layers_(layers) {}

void StageProfile::add_point(Phase phase, int64_t batched_tokens,
                             double seconds) {
  if (batched_tokens < 1) {
    throw ProfileError("profile point needs batched_tokens >= 1");
  }
  if (!(seconds > 0) || !std::isfinite(seconds)) {
    throw ProfileError("profile point needs finite seconds > 0");
  }
  (phase == Phase::kPrefill ? prefill_ : decode_)[batched_tokens] = seconds;
}

bool StageProfile::has_phase(Phase phase) const {
  return !points(phase).empty();
}

const std::map<int64_t, double>& StageProfile::points(Phase phase) const {
  return phase == Phase::kPrefill ? prefill_ : decode_;
}

void StageProfile::validate() const {
  if (prefill_.empty() && decode_.empty()) {
    throw ProfileError("stage " + std::to_string(stage_id_) +
                       ": profile has no entries");
  }
  for (Phase phase : {Phase::kPrefill, Phase::kDecode}) {
    const auto& table = points(phase);
    if (table.empty()) continue;
    if (table.size() < 2) {
      throw ProfileError("stage " + std::to_string(stage_id_) + ": phase " +
                         std::string(to_string(phase)) +
                         " needs at least 2 points");
    }
    double prev = 0;
    for (const auto& [tokens, seconds] : table) {
      if (seconds < prev) {
        throw ProfileError("stage " + std::to_string(stage_id_) + ": phase " +
                           std::string(to_string(phase)) +
                           " is not monotone in batched_tokens");
      }
      prev = seconds;
    }
  }
}

double compute_time(const StageProfile& profile, Phase phase,
                    int64_t batched_tokens) {
  const auto& table = profile.points(phase);
  if (table.empty()) {
    throw ProfileError("stage " + std::to_string(profile.stage_id()) +
                       " has no " + std::string(to_string(phase)) + " entries");
  }
  if (table.size() < 2) {
    throw ProfileError("stage " + std::to_string(profile.stage_id()) +
                       ": fewer than 2 points for " +
                       std::string(to_string(phase)));
  }
  if (batched_tokens < 1) batched_tokens = 1;

  auto exact = table.find(batched_tokens);
  if (exact != table.end()) return exact->second;

  // Pick the bracketing pair, or the nearest two on the outside.
  auto hi = table.upper_bound(batched_tokens);
  if (hi == table.begin()) {
    hi = std::next(table.begin());
  } else if (hi == table.end()) {
    hi = std::prev(table.end());
  }
  auto lo = std::prev(hi);

  const double x0 = static_cast<double>(lo->first);
  const double x1 = static_cast<double>(hi->first);
  const double slope = (hi->second - lo->second) / (x1 - x0);
  double t = lo->second + slope * (static_cast<double>(batched_tokens) - x0);
  // Extrapolating below the table can cross zero; keep a positive floor at
  // the smallest tabulated value scaled down by the token ratio.
  if (!(t > 0)) {
    t = table.begin()->second * static_cast<double>(batched_tokens) /
        static_cast<double>(table.begin()->first);
    if (!(t > 0)) t = 1e-9;
  }
  return t;
}

StageProfile flat_profile(int64_t stage_id, int64_t layers, double seconds) {
  StageProfile p(stage_id, layers);
  for (Phase phase : {Phase::kPrefill, Phase::kDecode}) {
    p.add_point(phase, 1, seconds);
    p.add_point(phase, 1 << 20, seconds);
  }
  p.validate();
  return p;
}

StageProfile synth_profile(int64_t layers, double per_layer_token_cost,
                           double overhead, int64_t stage_id) {
  if (layers < 1) throw ProfileError("synth_profile: layers must be >= 1");
  if (!(per_layer_token_cost > 0) || !(overhead > 0)) {
    throw ProfileError("synth_profile: costs must be > 0");
  }
  StageProfile p(stage_id, layers);
  for (int64_t tokens : {1, 64, 256, 1024}) {
    const double seconds =
        static_cast<double>(layers) * per_layer_token_cost *
            static_cast<double>(tokens) +
        overhead;
    p.add_point(Phase::kPrefill, tokens, seconds);
    p.add_point(Phase::kDecode, tokens, seconds);
  }
  p.validate();
  return p;
}

void LinkProfile::validate() const {
  if (!(latency_s >= 0) || std::isinf(latency_s)) {
    throw ConfigError("link " + from + "->" + to + ": latency must be >= 0");
  }
  if (!(bandwidth_Bps > 0)) {
    throw ConfigError("link " + from + "->" + to + ": bandwidth must be > 0");
  }
}

double serialization_time(const LinkProfile& link, int64_t bytes) {
  if (bytes <= 0 || std::isinf(link.bandwidth_Bps)) return 0.0;
  return static_cast<double>(bytes) / link.bandwidth_Bps;
}

double transfer_time(const LinkProfile& link, int64_t bytes) {
  return link.latency_s + serialization_time(link, bytes);
}

namespace {

std::vector<std::string> split_fields(const std::string& line) {
  std::vector<std::string> out;
  std::string field;
  for (char c : line) {
    if (c == ',') {
      out.push_back(field);
      field.clear();
    } else if (c != '\r') {
      field.push_back(c);
    }
  }
  out.push_back(field);
  return out;
}

}  // namespace

std::vector<StageProfile> load_stage_profiles(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path, 0, "profile file not found");
  std::map<int64_t, StageProfile> by_stage;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line.rfind("stage_id,phase,batched_tokens,seconds", 0) != 0) {
        throw LoadError(path, line_no,
                        "expected header 'stage_id,phase,batched_tokens,seconds'");
      }
      continue;
    }
    if (line.empty() || line == "\r") continue;
    auto f = split_fields(line);
    if (f.size() != 4) throw LoadError(path, line_no, "expected 4 fields");
    auto stage = parse_int(f[0]);
    auto tokens = parse_int(f[2]);
    auto seconds = parse_double(f[3]);
    if (!stage || !tokens || !seconds) {
      throw LoadError(path, line_no, "non-numeric field");
    }
    Phase phase;
    try {
      phase = parse_phase(f[1]);
    } catch (const ProfileError& e) {
      throw LoadError(path, line_no, e.what());
    }
    auto it = by_stage.try_emplace(*stage, *stage, 0).first;
    try {
      it->second.add_point(phase, *tokens, *seconds);
    } catch (const ProfileError& e) {
      throw LoadError(path, line_no, e.what());
    }
  }
  std::vector<StageProfile> out;
  for (auto& [id, profile] : by_stage) {
    profile.validate();
    out.push_back(std::move(profile));
  }
  return out;
}

void save_stage_profiles(const std::vector<StageProfile>& profiles,
                         const std::string& path) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("cannot write " + path);
  out << "stage_id,phase,batched_tokens,seconds\n";
  for (const StageProfile& p : profiles) {
    for (Phase phase : {Phase::kPrefill, Phase::kDecode}) {
      for (const auto& [tokens, seconds] : p.points(phase)) {
        out << p.stage_id() << ',' << to_string(phase) << ',' << tokens << ','
            << format_exact(seconds) << '\n';
      }
    }
  }
}

std::vector<LinkProfile> load_link_profiles(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw LoadError(path, 0, "link file not found");
  std::vector<LinkProfile> out;
  std::string line;
  int64_t line_no = 0;
  while (std::getline(in, line)) {
    ++line_no;
    if (line_no == 1) {
      if (line.rfind("from,to,latency_s,bandwidth_bps", 0) != 0) {
        throw LoadError(path, line_no,
                        "expected header 'from,to,latency_s,bandwidth_bps'");
      }
      continue;
    }
    if (line.empty() || line == "\r") continue;
    auto f = split_fields(line);
    if (f.size() != 4) throw LoadError(path, line_no, "expected 4 fields");
    auto latency = parse_double(f[2]);
    auto bits = parse_double(f[3]);
    if (!latency || !bits) throw LoadError(path, line_no, "non-numeric field");
    LinkProfile link{f[0], f[1], *latency, *bits / 8.0};
    try {
      link.validate();
    } catch (const ConfigError& e) {
      throw LoadError(path, line_no, e.what());
    }
    out.push_back(std::move(link));
  }
  return out;
}

}  // namespace linkserve
