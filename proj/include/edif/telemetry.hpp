#pragma once

#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <set>
#include <string>
#include <unordered_map>
#include <vector>

#include "edif/clock.hpp"
#include "edif/error.hpp"

namespace edif {

enum class EventKind { kRequest, kCompleted, kFailed };

struct Event {
  std::int64_t timestamp_ms = 0;
  EventKind kind = EventKind::kRequest;
  std::string job_id;
  std::string model_id;
  std::optional<ErrorCode> code;  // FAILED only
  std::optional<double> latency_ms;
};

struct DailyRow {
  std::int64_t day = 0;  // days since the unix epoch
  std::uint64_t requests = 0;
  std::uint64_t completed = 0;
  std::map<ErrorCode, std::uint64_t> errors_by_code;
  double p50_latency_ms = 0.0;
  double p95_latency_ms = 0.0;

  std::uint64_t errors() const;
  bool operator==(const DailyRow&) const = default;
};

struct AlertThresholds {
  std::optional<double> error_ratio_max;
  std::optional<std::int64_t> queue_depth_max;
};

struct Alert {
  std::string rule;  // "error_ratio" or "queue_depth"
  std::int64_t window = 0;
  double observed = 0.0;
  double threshold = 0.0;
  std::int64_t at_ms = 0;
};

std::string alert_to_json(const Alert& alert);

class AlertSink {
 public:
  virtual ~AlertSink() = default;
  // Throws Error(kSinkUnreachable) when delivery fails.
  virtual void deliver(const Alert& alert) = 0;
};

// Appends one JSON line per alert.
class FileAlertSink final : public AlertSink {
 public:
  explicit FileAlertSink(std::string path) : path_(std::move(path)) {}
  void deliver(const Alert& alert) override;

 private:
  std::string path_;
  std::mutex mutex_;
};

class CallbackAlertSink final : public AlertSink {
 public:
  explicit CallbackAlertSink(std::function<void(const Alert&)> fn) : fn_(std::move(fn)) {}
  void deliver(const Alert& alert) override { fn_(alert); }

 private:
  std::function<void(const Alert&)> fn_;
};

// POSTs the alert JSON to an http:// URL.
class WebhookAlertSink final : public AlertSink {
 public:
  explicit WebhookAlertSink(std::string url) : url_(std::move(url)) {}
  void deliver(const Alert& alert) override;

 private:
  std::string url_;
};

// One entry of alerts.json: {rule, threshold, sink_url | sink_file}.
struct AlertRule {
  std::string rule;
  double threshold = 0.0;
  std::optional<std::string> sink_url;
  std::optional<std::string> sink_file;
};

std::vector<AlertRule> parse_alert_rules(std::string_view json_text);

struct TelemetryOptions {
  std::int64_t alert_window_ms = 3'600'000;
};

struct TelemetryTotals {
  std::uint64_t requests = 0;
  std::uint64_t completed = 0;
  std::uint64_t failed = 0;
  std::map<ErrorCode, std::uint64_t> failed_by_code;
  std::uint64_t malformed_events = 0;
};

// Request/outcome counters, per-day series and threshold alerts.
//
// Outcomes are attributed to the day of their job's REQUEST, so a day never
// reports more errors than requests, and aggregation does not depend on
// the order events arrive in.
class Telemetry {
 public:
  explicit Telemetry(const Clock& clock, TelemetryOptions options = {});

  void record(const Event& event);
  void set_queue_depth(std::int64_t depth);

  // Inclusive day range; empty days appear as zero rows. Throws kBadRange.
  std::vector<DailyRow> series(std::int64_t first_day, std::int64_t last_day) const;
  TelemetryTotals totals() const;

  // `rule` restricts a sink to one alert rule; unset receives all.
  void add_sink(std::shared_ptr<AlertSink> sink, std::optional<std::string> rule = std::nullopt);

  // Evaluates the current window and delivers new alerts. A (rule, window)
  // pair fires at most once. Sink failures are logged and counted.
  std::vector<Alert> alert_check(const AlertThresholds& thresholds);
  std::uint64_t sink_failures() const;

  // `name{label="value"} count unix_ts` lines.
  std::string export_text() const;

 private:
  struct JobTrack {
    std::optional<std::int64_t> request_day;
    std::optional<std::int64_t> outcome_day;
    std::string model_id;
    bool completed = false;
    std::optional<ErrorCode> failure;
    std::optional<double> latency_ms;
  };
  struct WindowCounts {
    std::uint64_t requests = 0;
    std::uint64_t errors = 0;
  };

  std::uint64_t malformed_locked() const;

  const Clock& clock_;
  TelemetryOptions options_;
  mutable std::mutex mutex_;
  std::unordered_map<std::string, JobTrack> jobs_;
  std::map<std::int64_t, WindowCounts> windows_;
  std::uint64_t malformed_ = 0;
  std::int64_t queue_depth_ = 0;
  std::set<std::pair<std::string, std::int64_t>> fired_;
  std::vector<std::pair<std::shared_ptr<AlertSink>, std::optional<std::string>>> sinks_;
  std::uint64_t sink_failures_ = 0;
};

std::string format_day(std::int64_t day);

}  // namespace edif
