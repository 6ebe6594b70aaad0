#include <algorithm>
#include <filesystem>
#include <fstream>
#include <random>

#include "edif/telemetry.hpp"
#include "support.hpp"

using namespace edif;

namespace {

constexpr std::int64_t kDay = kMillisPerDay;

Event request(std::string id, std::int64_t t) { return {t, EventKind::kRequest, std::move(id), "toy", std::nullopt, std::nullopt}; }
Event completed(std::string id, std::int64_t t, double latency = 5) {
  return {t, EventKind::kCompleted, std::move(id), "toy", std::nullopt, latency};
}
Event failed(std::string id, std::int64_t t, ErrorCode code) {
  return {t, EventKind::kFailed, std::move(id), "toy", code, 1.0};
}

}  // namespace

TEST_CASE("daily rows") {
  ManualClock clock(0);
  Telemetry t(clock);
  t.record(request("a", 10));
  t.record(completed("a", 20));
  auto rows = t.series(0, 0);
  REQUIRE_EQ(rows.size(), 1u);
  CHECK_EQ(rows[0].requests, 1u);
  CHECK_EQ(rows[0].completed, 1u);
  CHECK_EQ(rows[0].errors(), 0u);

  t.record(request("b", 30));
  t.record(failed("b", 40, ErrorCode::kTimeout));
  rows = t.series(0, 0);
  CHECK_EQ(rows[0].errors_by_code.at(ErrorCode::kTimeout), 1u);
  CHECK_EQ(rows[0].errors(), 1u);
}

TEST_CASE("700 requests in one day") {
  ManualClock clock(0);
  Telemetry t(clock);
  const std::int64_t day = 20150;
  for (int i = 0; i < 700; ++i) t.record(request("j" + std::to_string(i), day * kDay + i * 100'000));
  const auto rows = t.series(day, day);
  CHECK_EQ(rows[0].requests, 700u);
  CHECK_EQ(format_day(day), "2025-03-03");
}

TEST_CASE("empty store gives zero rows; bad ranges are rejected") {
  ManualClock clock(0);
  Telemetry t(clock);
  const auto rows = t.series(5, 9);
  REQUIRE_EQ(rows.size(), 5u);
  for (std::size_t i = 0; i < rows.size(); ++i) {
    CHECK_EQ(rows[i].day, 5 + static_cast<std::int64_t>(i));
    CHECK_EQ(rows[i].requests, 0u);
    CHECK(rows[i].errors_by_code.empty());
  }
  CHECK_CODE(t.series(9, 5), ErrorCode::kBadRange);
}

TEST_CASE("outcomes count against the day of their request") {
  ManualClock clock(0);
  Telemetry t(clock);
  t.record(request("late", kDay - 1));
  t.record(failed("late", kDay + 5, ErrorCode::kWorkerFault));
  const auto rows = t.series(0, 1);
  CHECK_EQ(rows[0].requests, 1u);
  CHECK_EQ(rows[0].errors(), 1u);
  CHECK_EQ(rows[1].requests, 0u);
  CHECK_EQ(rows[1].errors(), 0u);
}

TEST_CASE("malformed events are counted, not aggregated") {
  ManualClock clock(0);
  Telemetry t(clock);
  t.record(completed("ghost", 5));
  t.record(request("", 5));
  t.record(request("x", 5));
  t.record(request("x", 6));
  Event no_code = failed("x", 7, ErrorCode::kTimeout);
  no_code.code.reset();
  t.record(no_code);
  const auto totals = t.totals();
  CHECK_EQ(totals.requests, 1u);
  CHECK_EQ(totals.malformed_events, 4u);
  CHECK_EQ(t.series(0, 0)[0].requests, 1u);
}

TEST_CASE("property: aggregation ignores arrival order and errors never exceed requests") {
  std::mt19937_64 rng(42);
  for (int trial = 0; trial < 20; ++trial) {
    std::vector<Event> events;
    for (int j = 0; j < 200; ++j) {
      const std::string id = "j" + std::to_string(j);
      const std::int64_t t0 = static_cast<std::int64_t>(rng() % (5 * kDay));
      events.push_back(request(id, t0));
      const auto dt = static_cast<std::int64_t>(rng() % 3'600'000);
      switch (rng() % 4) {
        case 0: break;  // still in flight
        case 1: events.push_back(failed(id, t0 + dt, static_cast<ErrorCode>(rng() % 6))); break;
        default: events.push_back(completed(id, t0 + dt, static_cast<double>(rng() % 1000))); break;
      }
    }
    ManualClock clock(0);
    Telemetry ordered(clock);
    for (const auto& e : events) ordered.record(e);
    std::shuffle(events.begin(), events.end(), rng);
    Telemetry shuffled(clock);
    for (const auto& e : events) shuffled.record(e);

    const auto a = ordered.series(0, 5);
    const auto b = shuffled.series(0, 5);
    CHECK(a == b);
    for (const auto& row : a) CHECK_LE(row.errors() + row.completed, row.requests);
    CHECK_EQ(shuffled.totals().malformed_events, 0u);
  }
}

TEST_CASE("error-ratio alert fires once per window") {
  ManualClock clock(0);
  Telemetry t(clock, {3'600'000});
  std::vector<Alert> delivered;
  t.add_sink(std::make_shared<CallbackAlertSink>([&](const Alert& a) { delivered.push_back(a); }));

  t.record(request("a", 10));
  t.record(completed("a", 20));
  CHECK(t.alert_check({0.1, std::nullopt}).empty());

  for (int i = 0; i < 10; ++i) {
    t.record(request("f" + std::to_string(i), 100 + i));
    t.record(failed("f" + std::to_string(i), 200 + i, ErrorCode::kWorkerFault));
  }
  clock.set(1000);
  CHECK_EQ(t.alert_check({0.1, std::nullopt}).size(), 1u);
  CHECK(t.alert_check({0.1, std::nullopt}).empty());
  CHECK_EQ(delivered.size(), 1u);
  CHECK_EQ(delivered[0].rule, "error_ratio");
  CHECK(delivered[0].observed == doctest::Approx(10.0 / 11.0));

  // Next window, still failing.
  clock.set(3'600'000);
  t.record(request("g", 3'600'001));
  t.record(failed("g", 3'600'002, ErrorCode::kWorkerFault));
  CHECK_EQ(t.alert_check({0.1, std::nullopt}).size(), 1u);
  CHECK_EQ(delivered.size(), 2u);
}

TEST_CASE("queue-depth alert and rule-scoped sinks") {
  ManualClock clock(0);
  Telemetry t(clock);
  int queue_hits = 0;
  int ratio_hits = 0;
  t.add_sink(std::make_shared<CallbackAlertSink>([&](const Alert&) { ++queue_hits; }), "queue_depth");
  t.add_sink(std::make_shared<CallbackAlertSink>([&](const Alert&) { ++ratio_hits; }), "error_ratio");
  t.set_queue_depth(50);
  const auto alerts = t.alert_check({std::nullopt, 10});
  REQUIRE_EQ(alerts.size(), 1u);
  CHECK_EQ(alerts[0].rule, "queue_depth");
  CHECK_EQ(alerts[0].observed, 50.0);
  CHECK_EQ(queue_hits, 1);
  CHECK_EQ(ratio_hits, 0);
}

TEST_CASE("sink failures are counted and do not stop other sinks") {
  ManualClock clock(0);
  Telemetry t(clock);
  int ok = 0;
  t.add_sink(std::make_shared<CallbackAlertSink>([](const Alert&) { throw Error(ErrorCode::kSinkUnreachable, "down"); }));
  t.add_sink(std::make_shared<CallbackAlertSink>([&](const Alert&) { ++ok; }));
  t.add_sink(std::make_shared<WebhookAlertSink>("http://127.0.0.1:1/hook"));
  t.set_queue_depth(5);
  t.alert_check({std::nullopt, 1});
  CHECK_EQ(ok, 1);
  CHECK_EQ(t.sink_failures(), 2u);
}

TEST_CASE("file sink appends JSON lines") {
  const auto path = std::filesystem::temp_directory_path() / "edif-alerts-test.jsonl";
  std::filesystem::remove(path);
  ManualClock clock(7200000);
  Telemetry t(clock);
  t.add_sink(std::make_shared<FileAlertSink>(path.string()));
  t.set_queue_depth(3);
  t.alert_check({std::nullopt, 1});
  std::ifstream in(path);
  std::string line;
  std::getline(in, line);
  CHECK_EQ(line, R"({"at_ms":7200000,"observed":3.0,"rule":"queue_depth","threshold":1.0,"window":2})");
  std::filesystem::remove(path);
}

TEST_CASE("alert rule config") {
  const auto rules = parse_alert_rules(R"([{"rule":"error_ratio","threshold":0.1,"sink_file":"a.log"},
                                           {"rule":"queue_depth","threshold":100,"sink_url":"http://x/y"}])");
  REQUIRE_EQ(rules.size(), 2u);
  CHECK_EQ(rules[1].sink_url, std::optional<std::string>("http://x/y"));
  CHECK_CODE(parse_alert_rules(R"([{"rule":"cpu","threshold":1,"sink_file":"a"}])"), ErrorCode::kBadConfig);
  CHECK_CODE(parse_alert_rules(R"([{"rule":"queue_depth","threshold":1}])"), ErrorCode::kBadConfig);
  CHECK_CODE(parse_alert_rules(R"({})"), ErrorCode::kBadConfig);
}

TEST_CASE("export text") {
  ManualClock clock(kDay * 20150 + 5000);
  Telemetry t(clock);
  t.record(request("a", kDay * 20150));
  t.record(failed("a", kDay * 20150 + 1, ErrorCode::kQuota));
  t.record(request("b", kDay * 20150 + 2));
  t.record(completed("b", kDay * 20150 + 3));
  const std::string text = t.export_text();
  const std::string ts = std::to_string((kDay * 20150 + 5000) / 1000);
  CHECK_NE(text.find("edif_requests_total{model=\"toy\"} 2 " + ts + "\n"), std::string::npos);
  CHECK_NE(text.find("edif_completed_total{model=\"toy\"} 1 " + ts), std::string::npos);
  CHECK_NE(text.find("edif_failed_total{code=\"QUOTA\"} 1 " + ts), std::string::npos);
  CHECK_NE(text.find("edif_daily_requests{day=\"2025-03-03\"} 2 " + ts), std::string::npos);
  CHECK_NE(text.find("edif_daily_errors{day=\"2025-03-03\",code=\"QUOTA\"} 1"), std::string::npos);
  // Every line has the `name{labels} value ts` shape.
  std::istringstream lines(text);
  std::string line;
  while (std::getline(lines, line)) {
    CHECK_NE(line.find('{'), std::string::npos);
    CHECK_EQ(std::count(line.begin(), line.end(), ' '), 2);
  }
}
