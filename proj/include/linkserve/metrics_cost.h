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

#ifndef LINKSERVE_METRICS_COST_H_
#define LINKSERVE_METRICS_COST_H_

#include <cstdint>
#include <string>
#include <vector>

#include "json.hpp"
#include "linkserve/workload.h"

namespace linkserve {

struct MetricsReport {
  double throughput_tok_s = 0;
  double ttft_mean_s = 0;
  double ttft_p50_s = 0;
  double ttft_p99_s = 0;
  double tpot_mean_s = 0;
  std::vector<double> bubble_fraction_per_stage;
  double span_s = 0;
  int64_t total_tokens = 0;
  int64_t request_count = 0;
  // Requests with output_len >= 2, i.e. those contributing to TPOT.
  int64_t tpot_request_count = 0;

  // throughput * span reproduces total_tokens to the token.
  bool throughput_identity_holds() const;

  bool operator==(const MetricsReport&) const = default;
};

// Nearest-rank percentile, p in (0, 100]. Sample must be non-empty.
double nearest_rank_percentile(std::vector<double> sample, double p);

// TTFT includes queueing; TPOT averages (finish - first token)/(out - 1)
// over requests with out >= 2; span runs from first arrival to last finish.
// Throws Error if any request is unfinished.
MetricsReport summarize(const std::vector<Request>& requests,
                        std::vector<double> bubble_fraction_per_stage = {});

nlohmann::json to_json(const MetricsReport& report);
MetricsReport report_from_json(const nlohmann::json& j);
std::string report_table(const MetricsReport& report);
std::string report_csv_header();
std::string report_csv_row(const MetricsReport& report);

enum class CostMode { kLocalOwnership, kCloudRental };

struct CostModel {
  CostMode mode = CostMode::kCloudRental;
  std::string currency = "USD";
  double device_price = 0;
  double amortization_hours = 43'800;  // five years
  double power_kw = 0;
  double power_price = 0;  // per kWh
  double rental_price_per_hour = 0;
  int64_t device_count = 1;
  double token_price = 0;  // per million output tokens

  void validate() const;
};

// Local ownership: devices * (price / amortization + kW * price per kWh).
// Cloud rental: devices * hourly rent.
double cost_per_hour(const CostModel& model);
// throughput * 3600 / 1e6 * token_price.
double profit_per_hour(double throughput_tok_s, const CostModel& model);
// (profit - cost) / cost. Throws MarginError when cost is zero.
double cost_profit_margin(double throughput_tok_s, const CostModel& model);

nlohmann::json to_json(const CostModel& model);
CostModel cost_model_from_json(const nlohmann::json& j);

}  // namespace linkserve

#endif  // LINKSERVE_METRICS_COST_H_
