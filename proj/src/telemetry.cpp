#include "edif/telemetry.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <fstream>
#include <iostream>
#include <sstream>

#include "edif/wire.hpp"
#include "httplib.h"

namespace edif {

using nlohmann::json;

namespace {

double percentile(std::vector<double> values, double p) {
  if (values.empty()) return 0.0;
  std::sort(values.begin(), values.end());
  const auto rank = static_cast<std::size_t>(std::ceil(p * static_cast<double>(values.size())));
  return values[std::max<std::size_t>(rank, 1) - 1];
}

std::string escape_label(std::string_view value) {
  std::string out;
  for (char c : value) {
    if (c == '\\') {
      out += "\\\\";
    } else if (c == '"') {
      out += "\\\"";
    } else if (c == '\n') {
      out += "\\n";
    } else {
      out += c;
    }
  }
  return out;
}

}  // namespace

std::uint64_t DailyRow::errors() const {
  std::uint64_t total = 0;
  for (const auto& [code, n] : errors_by_code) total += n;
  return total;
}

std::string format_day(std::int64_t day) {
  const std::chrono::sys_days date{std::chrono::days{day}};
  const std::chrono::year_month_day ymd{date};
  char buf[16];
  std::snprintf(buf, sizeof(buf), "%04d-%02u-%02u", static_cast<int>(ymd.year()),
                static_cast<unsigned>(ymd.month()), static_cast<unsigned>(ymd.day()));
  return buf;
}

std::string alert_to_json(const Alert& alert) {
  return canonical_dump(json{{"rule", alert.rule},
                             {"window", alert.window},
                             {"observed", alert.observed},
                             {"threshold", alert.threshold},
                             {"at_ms", alert.at_ms}});
}

void FileAlertSink::deliver(const Alert& alert) {
  std::lock_guard lock(mutex_);
  std::ofstream out(path_, std::ios::app);
  out << alert_to_json(alert) << '\n';
  if (!out) throw Error(ErrorCode::kSinkUnreachable, "cannot append to " + path_);
}

void WebhookAlertSink::deliver(const Alert& alert) {
  // http://host[:port]/path
  const std::string_view url = url_;
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string_view::npos) throw Error(ErrorCode::kSinkUnreachable, "bad url " + url_);
  const auto path_start = url.find('/', scheme_end + 3);
  const std::string origin(url.substr(0, path_start));
  const std::string path = path_start == std::string_view::npos ? "/" : std::string(url.substr(path_start));
  httplib::Client client(origin);
  client.set_connection_timeout(2);
  client.set_read_timeout(2);
  auto res = client.Post(path, alert_to_json(alert), "application/json");
  if (!res || res->status >= 300) {
    throw Error(ErrorCode::kSinkUnreachable,
                url_ + (res ? " answered " + std::to_string(res->status) : " is unreachable"));
  }
}

std::vector<AlertRule> parse_alert_rules(std::string_view json_text) {
  const json j = json_util::parse(json_text);
  if (!j.is_array()) throw Error(ErrorCode::kBadConfig, "alerts config must be an array");
  std::vector<AlertRule> rules;
  for (const auto& item : j) {
    json_util::require_keys(item, {"rule", "threshold"}, {"sink_url", "sink_file"}, "alert rule");
    AlertRule r;
    r.rule = json_util::get_string(item, "rule");
    if (r.rule != "error_ratio" && r.rule != "queue_depth") {
      throw Error(ErrorCode::kBadConfig, "unknown alert rule '" + r.rule + "'");
    }
    if (!item.at("threshold").is_number() || item.at("threshold").get<double>() <= 0) {
      throw Error(ErrorCode::kBadConfig, "alert threshold must be a positive number");
    }
    r.threshold = item.at("threshold").get<double>();
    if (item.contains("sink_url")) r.sink_url = json_util::get_string(item, "sink_url");
    if (item.contains("sink_file")) r.sink_file = json_util::get_string(item, "sink_file");
    if (!r.sink_url && !r.sink_file) throw Error(ErrorCode::kBadConfig, "alert rule needs sink_url or sink_file");
    rules.push_back(std::move(r));
  }
  return rules;
}

Telemetry::Telemetry(const Clock& clock, TelemetryOptions options) : clock_(clock), options_(options) {}

void Telemetry::record(const Event& event) {
  std::lock_guard lock(mutex_);
  if (event.job_id.empty() || (event.kind == EventKind::kFailed && !event.code)) {
    ++malformed_;
    return;
  }
  const std::int64_t window = event.timestamp_ms / options_.alert_window_ms;
  JobTrack& track = jobs_[event.job_id];
  if (event.kind == EventKind::kRequest) {
    if (track.request_day) {
      ++malformed_;
      return;
    }
    track.request_day = day_index(event.timestamp_ms);
    track.model_id = event.model_id;
    ++windows_[window].requests;
    return;
  }
  if (track.outcome_day) {
    ++malformed_;
    return;
  }
  track.outcome_day = day_index(event.timestamp_ms);
  track.latency_ms = event.latency_ms;
  if (event.kind == EventKind::kCompleted) {
    track.completed = true;
  } else {
    track.failure = event.code;
    ++windows_[window].errors;
  }
}

void Telemetry::set_queue_depth(std::int64_t depth) {
  std::lock_guard lock(mutex_);
  queue_depth_ = depth;
}

std::uint64_t Telemetry::malformed_locked() const {
  std::uint64_t orphans = 0;
  for (const auto& [id, track] : jobs_) {
    if (!track.request_day && track.outcome_day) ++orphans;
  }
  return malformed_ + orphans;
}

std::vector<DailyRow> Telemetry::series(std::int64_t first_day, std::int64_t last_day) const {
  if (last_day < first_day || last_day - first_day > 100'000) {
    throw Error(ErrorCode::kBadRange,
                "day range [" + std::to_string(first_day) + ", " + std::to_string(last_day) + "] is invalid");
  }
  std::vector<DailyRow> rows(static_cast<std::size_t>(last_day - first_day + 1));
  std::vector<std::vector<double>> latencies(rows.size());
  for (std::size_t i = 0; i < rows.size(); ++i) rows[i].day = first_day + static_cast<std::int64_t>(i);
  std::lock_guard lock(mutex_);
  for (const auto& [id, track] : jobs_) {
    if (!track.request_day || *track.request_day < first_day || *track.request_day > last_day) continue;
    const auto slot = static_cast<std::size_t>(*track.request_day - first_day);
    DailyRow& row = rows[slot];
    ++row.requests;
    if (track.completed) ++row.completed;
    if (track.failure) ++row.errors_by_code[*track.failure];
    if (track.latency_ms) latencies[slot].push_back(*track.latency_ms);
  }
  for (std::size_t i = 0; i < rows.size(); ++i) {
    rows[i].p50_latency_ms = percentile(latencies[i], 0.50);
    rows[i].p95_latency_ms = percentile(latencies[i], 0.95);
  }
  return rows;
}

TelemetryTotals Telemetry::totals() const {
  std::lock_guard lock(mutex_);
  TelemetryTotals t;
  for (const auto& [id, track] : jobs_) {
    if (!track.request_day) continue;
    ++t.requests;
    if (track.completed) ++t.completed;
    if (track.failure) {
      ++t.failed;
      ++t.failed_by_code[*track.failure];
    }
  }
  t.malformed_events = malformed_locked();
  return t;
}

void Telemetry::add_sink(std::shared_ptr<AlertSink> sink, std::optional<std::string> rule) {
  std::lock_guard lock(mutex_);
  sinks_.emplace_back(std::move(sink), std::move(rule));
}

std::vector<Alert> Telemetry::alert_check(const AlertThresholds& thresholds) {
  const std::int64_t now = clock_.now_ms();
  const std::int64_t window = now / options_.alert_window_ms;
  std::vector<Alert> fresh;
  decltype(sinks_) sinks;
  {
    std::lock_guard lock(mutex_);
    if (thresholds.error_ratio_max) {
      const WindowCounts counts = windows_.count(window) ? windows_.at(window) : WindowCounts{};
      const double ratio = counts.requests ? static_cast<double>(counts.errors) / static_cast<double>(counts.requests)
                                           : 0.0;
      if (ratio > *thresholds.error_ratio_max && fired_.insert({"error_ratio", window}).second) {
        fresh.push_back({"error_ratio", window, ratio, *thresholds.error_ratio_max, now});
      }
    }
    if (thresholds.queue_depth_max && queue_depth_ > *thresholds.queue_depth_max &&
        fired_.insert({"queue_depth", window}).second) {
      fresh.push_back({"queue_depth", window, static_cast<double>(queue_depth_),
                       static_cast<double>(*thresholds.queue_depth_max), now});
    }
    sinks = sinks_;
  }
  for (const auto& alert : fresh) {
    for (const auto& [sink, rule] : sinks) {
      if (rule && *rule != alert.rule) continue;
      try {
        sink->deliver(alert);
      } catch (const std::exception& e) {
        std::cerr << "alert sink failed: " << e.what() << '\n';
        std::lock_guard lock(mutex_);
        ++sink_failures_;
      }
    }
  }
  return fresh;
}

std::uint64_t Telemetry::sink_failures() const {
  std::lock_guard lock(mutex_);
  return sink_failures_;
}

std::string Telemetry::export_text() const {
  const std::int64_t ts = clock_.now_ms() / 1000;
  std::map<std::string, std::uint64_t> requests_by_model;
  std::map<std::string, std::uint64_t> completed_by_model;
  std::map<ErrorCode, std::uint64_t> failed_by_code;
  std::map<std::int64_t, std::uint64_t> daily_requests;
  std::map<std::pair<std::int64_t, ErrorCode>, std::uint64_t> daily_errors;
  std::vector<double> latencies;
  std::uint64_t malformed = 0;
  std::int64_t depth = 0;
  std::uint64_t sink_failures = 0;
  {
    std::lock_guard lock(mutex_);
    for (const auto& [id, track] : jobs_) {
      if (!track.request_day) continue;
      ++requests_by_model[track.model_id];
      ++daily_requests[*track.request_day];
      if (track.completed) ++completed_by_model[track.model_id];
      if (track.failure) {
        ++failed_by_code[*track.failure];
        ++daily_errors[{*track.request_day, *track.failure}];
      }
      if (track.latency_ms) latencies.push_back(*track.latency_ms);
    }
    malformed = malformed_locked();
    depth = queue_depth_;
    sink_failures = sink_failures_;
  }

  std::ostringstream out;
  auto line = [&](std::string_view name, std::string_view labels, auto value) {
    out << name << '{' << labels << "} " << value << ' ' << ts << '\n';
  };
  auto label = [](std::string_view key, std::string_view value) {
    return std::string(key) + "=\"" + escape_label(value) + "\"";
  };
  for (const auto& [model, n] : requests_by_model) line("edif_requests_total", label("model", model), n);
  for (const auto& [model, n] : completed_by_model) line("edif_completed_total", label("model", model), n);
  for (const auto& [code, n] : failed_by_code) line("edif_failed_total", label("code", to_string(code)), n);
  for (const auto& [day, n] : daily_requests) line("edif_daily_requests", label("day", format_day(day)), n);
  for (const auto& [key, n] : daily_errors) {
    line("edif_daily_errors", label("day", format_day(key.first)) + "," + label("code", to_string(key.second)), n);
  }
  line("edif_latency_ms", label("quantile", "0.5"), percentile(latencies, 0.50));
  line("edif_latency_ms", label("quantile", "0.95"), percentile(latencies, 0.95));
  line("edif_queue_depth", label("scope", "all"), depth);
  line("edif_malformed_events_total", label("source", "telemetry"), malformed);
  line("edif_alert_sink_failures_total", label("source", "telemetry"), sink_failures);
  return out.str();
}

}  // namespace edif
