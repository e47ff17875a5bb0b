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

#include "linkserve/metrics_cost.h"

#include <algorithm>
#include <cstdio>
#include <numeric>
#include <sstream>

namespace linkserve {

using nlohmann::json;

bool MetricsReport::throughput_identity_holds() const {
  const double reproduced = throughput_tok_s * span_s;
  return std::llround(reproduced) == total_tokens &&
         std::abs(reproduced - static_cast<double>(total_tokens)) <=
             1e-9 * std::max<double>(1.0, static_cast<double>(total_tokens));
}

double nearest_rank_percentile(std::vector<double> sample, double p) {
  if (sample.empty()) throw Error("percentile of an empty sample");
  std::sort(sample.begin(), sample.end());
  const double n = static_cast<double>(sample.size());
  int64_t rank = static_cast<int64_t>(std::ceil(p / 100.0 * n));
  rank = std::clamp<int64_t>(rank, 1, static_cast<int64_t>(sample.size()));
  return sample[rank - 1];
}

MetricsReport summarize(const std::vector<Request>& requests,
                        std::vector<double> bubble_fraction_per_stage) {
  MetricsReport r;
  r.bubble_fraction_per_stage = std::move(bubble_fraction_per_stage);
  if (requests.empty()) return r;

  std::vector<double> ttfts;
  double tpot_sum = 0;
  double first_arrival = kInfinity;
  double last_finish = -kInfinity;
  for (const Request& q : requests) {
    if (!q.finished()) {
      throw Error("request " + std::to_string(q.id()) +
                  " is unfinished; drain the run before summarizing");
    }
    ttfts.push_back(*q.first_token_time() - q.arrival_time());
    if (q.output_len() >= 2) {
      tpot_sum += (*q.finish_time() - *q.first_token_time()) /
                  static_cast<double>(q.output_len() - 1);
      ++r.tpot_request_count;
    }
    r.total_tokens += q.tokens_emitted();
    first_arrival = std::min(first_arrival, q.arrival_time());
    last_finish = std::max(last_finish, *q.finish_time());
  }
  r.request_count = static_cast<int64_t>(requests.size());
  r.span_s = last_finish - first_arrival;
  r.throughput_tok_s =
      r.span_s > 0 ? static_cast<double>(r.total_tokens) / r.span_s : 0.0;
  r.ttft_mean_s = std::accumulate(ttfts.begin(), ttfts.end(), 0.0) /
                  static_cast<double>(ttfts.size());
  r.ttft_p50_s = nearest_rank_percentile(ttfts, 50);
  r.ttft_p99_s = nearest_rank_percentile(ttfts, 99);
  r.tpot_mean_s =
      r.tpot_request_count > 0 ? tpot_sum / static_cast<double>(r.tpot_request_count) : 0;
  return r;
}

namespace {

// Durations are reported with six decimals.
double round6(double v) { return std::round(v * 1e6) / 1e6; }

}  // namespace

json to_json(const MetricsReport& r) {
  json bubbles = json::array();
  for (double b : r.bubble_fraction_per_stage) bubbles.push_back(round6(b));
  return json{{"throughput_tok_s", round6(r.throughput_tok_s)},
              {"ttft_mean_s", round6(r.ttft_mean_s)},
              {"ttft_p50_s", round6(r.ttft_p50_s)},
              {"ttft_p99_s", round6(r.ttft_p99_s)},
              {"tpot_mean_s", round6(r.tpot_mean_s)},
              {"bubble_fraction_per_stage", bubbles},
              {"span_s", round6(r.span_s)},
              {"total_tokens", r.total_tokens},
              {"request_count", r.request_count},
              {"tpot_request_count", r.tpot_request_count}};
}

MetricsReport report_from_json(const json& j) {
  MetricsReport r;
  r.throughput_tok_s = j.value("throughput_tok_s", 0.0);
  r.ttft_mean_s = j.value("ttft_mean_s", 0.0);
  r.ttft_p50_s = j.value("ttft_p50_s", 0.0);
  r.ttft_p99_s = j.value("ttft_p99_s", 0.0);
  r.tpot_mean_s = j.value("tpot_mean_s", 0.0);
  r.bubble_fraction_per_stage =
      j.value("bubble_fraction_per_stage", std::vector<double>{});
  r.span_s = j.value("span_s", 0.0);
  r.total_tokens = j.value("total_tokens", int64_t{0});
  r.request_count = j.value("request_count", int64_t{0});
  r.tpot_request_count = j.value("tpot_request_count", int64_t{0});
  return r;
}

std::string report_table(const MetricsReport& r) {
  std::ostringstream out;
  char line[128];
  auto row = [&](const char* key, const std::string& value) {
    std::snprintf(line, sizeof(line), "%-22s %s\n", key, value.c_str());
    out << line;
  };
  row("requests", std::to_string(r.request_count));
  row("total_tokens", std::to_string(r.total_tokens));
  row("span_s", format_seconds(r.span_s));
  row("throughput_tok_s", format_seconds(r.throughput_tok_s));
  row("ttft_mean_s", format_seconds(r.ttft_mean_s));
  row("ttft_p50_s", format_seconds(r.ttft_p50_s));
  row("ttft_p99_s", format_seconds(r.ttft_p99_s));
  row("tpot_mean_s", format_seconds(r.tpot_mean_s));
  for (size_t i = 0; i < r.bubble_fraction_per_stage.size(); ++i) {
    std::string key = "bubble_stage_" + std::to_string(i);
    row(key.c_str(), format_seconds(r.bubble_fraction_per_stage[i]));
  }
  return out.str();
}

std::string report_csv_header() {
  return "throughput_tok_s,ttft_mean_s,ttft_p50_s,ttft_p99_s,tpot_mean_s,span_s,"
         "total_tokens,request_count,max_bubble_fraction";
}

std::string report_csv_row(const MetricsReport& r) {
  double max_bubble = 0;
  for (double b : r.bubble_fraction_per_stage) max_bubble = std::max(max_bubble, b);
  std::ostringstream out;
  out << format_seconds(r.throughput_tok_s) << ',' << format_seconds(r.ttft_mean_s)
      << ',' << format_seconds(r.ttft_p50_s) << ',' << format_seconds(r.ttft_p99_s)
      << ',' << format_seconds(r.tpot_mean_s) << ',' << format_seconds(r.span_s)
      << ',' << r.total_tokens << ',' << r.request_count << ','
      << format_seconds(max_bubble);
  return out.str();
}

void CostModel::validate() const {
  if (device_count < 0) throw ConfigError("device_count must be >= 0");
  if (token_price < 0) throw ConfigError("token_price must be >= 0");
  if (device_count == 0) return;
  if (mode == CostMode::kLocalOwnership) {
    if (!(device_price > 0)) throw ConfigError("local ownership needs device_price > 0");
    if (!(amortization_hours > 0)) {
      throw ConfigError("local ownership needs amortization_hours > 0");
    }
    if (!(power_kw > 0)) throw ConfigError("local ownership needs power_kw > 0");
    if (!(power_price > 0)) throw ConfigError("local ownership needs power_price > 0");
  } else if (!(rental_price_per_hour > 0)) {
    throw ConfigError("cloud rental needs rental_price_per_hour > 0");
  }
}

double cost_per_hour(const CostModel& m) {
  m.validate();
  const double devices = static_cast<double>(m.device_count);
  if (m.mode == CostMode::kLocalOwnership) {
    return devices * (m.device_price / m.amortization_hours + m.power_kw * m.power_price);
  }
  return devices * m.rental_price_per_hour;
}

double profit_per_hour(double throughput_tok_s, const CostModel& m) {
  return throughput_tok_s * 3600.0 / 1e6 * m.token_price;
}

double cost_profit_margin(double throughput_tok_s, const CostModel& m) {
  const double cost = cost_per_hour(m);
  if (!(cost > 0)) throw MarginError("cost-profit margin undefined at zero cost");
  return (profit_per_hour(throughput_tok_s, m) - cost) / cost;
}

json to_json(const CostModel& m) {
  return json{{"mode", m.mode == CostMode::kLocalOwnership ? "local" : "cloud"},
              {"currency", m.currency},
              {"device_price", m.device_price},
              {"amortization_hours", m.amortization_hours},
              {"power_kw", m.power_kw},
              {"power_price", m.power_price},
              {"rental_price_per_hour", m.rental_price_per_hour},
              {"device_count", m.device_count},
              {"token_price", m.token_price}};
}

CostModel cost_model_from_json(const json& j) {
  CostModel m;
  const std::string mode = j.value("mode", std::string("cloud"));
  if (mode == "local") {
    m.mode = CostMode::kLocalOwnership;
  } else if (mode == "cloud") {
    m.mode = CostMode::kCloudRental;
  } else {
    throw ConfigError("cost mode must be 'local' or 'cloud'");
  }
  m.currency = j.value("currency", m.currency);
  m.device_price = j.value("device_price", 0.0);
  m.amortization_hours = j.value("amortization_hours", m.amortization_hours);
  m.power_kw = j.value("power_kw", 0.0);
  m.power_price = j.value("power_price", 0.0);
  m.rental_price_per_hour = j.value("rental_price_per_hour", 0.0);
  m.device_count = j.value("device_count", int64_t{1});
  m.token_price = j.value("token_price", 0.0);
  m.validate();
  return m;
}

}  // namespace linkserve
