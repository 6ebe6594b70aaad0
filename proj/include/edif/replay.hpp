#pragma once

// Workload replay: N small jobs submitted through the gateway by up to 32
// concurrent submitters, paced across one simulated day on a ScaledClock.

#include <cstdint>
#include <map>
#include <string>

#include "edif/error.hpp"
#include "edif/telemetry.hpp"

namespace edif {

// 2025-03-03T00:00:00Z
inline constexpr std::int64_t kReplayOriginMs = 1'740'960'000'000;

struct ReplayOptions {
  int jobs = 700;
  double day_compression = 86'400.0;  // simulated ms per real ms
  double fault_rate = 0.0;
  std::uint64_t seed = 0;
  int submitters = 32;
  std::string model_id = "toy";
};

struct ReplayReport {
  int jobs = 0;
  std::vector<DailyRow> days;
  std::uint64_t requests = 0;
  std::uint64_t completed = 0;
  std::uint64_t failed = 0;
  std::map<ErrorCode, std::uint64_t> errors_by_code;
  std::uint64_t ordering_violations = 0;
  std::uint64_t snapshots = 0;
  std::uint64_t conservation_violations = 0;
  std::uint64_t scheduler_submitted = 0;
  double p50_latency_ms = 0.0;
  double p95_latency_ms = 0.0;
  double wall_ms = 0.0;
};

// Throws kBadConfig on invalid options.
ReplayReport run_replay(const ReplayOptions& options);

std::string replay_report_json(const ReplayReport& report);
std::string replay_report_text(const ReplayReport& report);

}  // namespace edif
