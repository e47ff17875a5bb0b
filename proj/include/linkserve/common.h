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

#ifndef LINKSERVE_COMMON_H_
#define LINKSERVE_COMMON_H_

#include <cmath>
#include <cstdint>
#include <limits>
#include <optional>
#include <stdexcept>
#include <string>
#include <string_view>

namespace linkserve {

// Error hierarchy. Every failure surfaced by the library derives from Error so
// front ends (CLI, HTTP) can map them onto exit codes and status codes.
class Error : public std::runtime_error {
 public:
  using std::runtime_error::runtime_error;
};

class ConfigError : public Error {
 public:
  using Error::Error;
};

class LoadError : public Error {
 public:
  LoadError(std::string path, int64_t line, const std::string& what)
      : Error(path + ":" + std::to_string(line) + ": " + what),
        path_(std::move(path)),
        line_(line) {}

  const std::string& path() const { return path_; }
  int64_t line() const { return line_; }

 private:
  std::string path_;
  int64_t line_;
};

class ProfileError : public Error {
 public:
  using Error::Error;
};

class PlacementError : public Error {
 public:
  PlacementError(const std::string& what, int64_t required_bytes = 0,
                 int64_t available_bytes = 0)
      : Error(what),
        required_bytes_(required_bytes),
        available_bytes_(available_bytes) {}

  int64_t required_bytes() const { return required_bytes_; }
  int64_t available_bytes() const { return available_bytes_; }
  int64_t deficit_bytes() const { return required_bytes_ - available_bytes_; }

 private:
  int64_t required_bytes_;
  int64_t available_bytes_;
};

class ProtocolError : public Error {
 public:
  using Error::Error;
};

class NotFoundError : public Error {
 public:
  using Error::Error;
};

class ConflictError : public Error {
 public:
  using Error::Error;
};

// cost_profit_margin with a zero hourly cost.
class MarginError : public Error {
 public:
  using Error::Error;
};

enum class Phase { kPrefill, kDecode };

std::string_view to_string(Phase phase);
Phase parse_phase(std::string_view text);

// Virtual time is an integer nanosecond counter.
using Nanos = int64_t;

inline constexpr Nanos kNanosPerSecond = 1'000'000'000;
inline constexpr Nanos kNeverNanos = std::numeric_limits<Nanos>::max();

inline Nanos seconds_to_nanos(double seconds) {
  if (std::isinf(seconds)) return kNeverNanos;
  return static_cast<Nanos>(std::llround(seconds * 1e9));
}

inline double nanos_to_seconds(Nanos nanos) {
  return static_cast<double>(nanos) / 1e9;
}

inline constexpr double kInfinity = std::numeric_limits<double>::infinity();

// Chunk size meaning "never split a payload".
inline constexpr int64_t kUnboundedChunk = std::numeric_limits<int64_t>::max();

// Fixed-point rendering used for every duration written to reports.
std::string format_seconds(double seconds, int decimals = 6);

// Shortest text that parses back to exactly `value`.
std::string format_exact(double value);

// Strict numeric parsing of a whole field; nullopt on any trailing garbage.
std::optional<double> parse_double(std::string_view text);
std::optional<int64_t> parse_int(std::string_view text);

}  // namespace linkserve

#endif  // LINKSERVE_COMMON_H_
