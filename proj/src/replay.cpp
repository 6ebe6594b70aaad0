#include "edif/replay.hpp"

#include <algorithm>
#include <atomic>
#include <sstream>
#include <thread>

#include "edif/fabric.hpp"
#include "edif/wire.hpp"

namespace edif {

using nlohmann::json;

namespace {

constexpr char kReplayToken[] = "replay-token";

InterventionGraph replay_graph(const ModelConfig& config, int i) {
  InterventionGraph g;
  g.model_id = config.model_id;
  g.invocations.push_back({0, "replay job " + std::to_string(i)});
  g.nodes = {GraphNode::capture(0, 0, "logits"), GraphNode::reduction(1, ReduceKind::kArgmax, 0, 1),
             GraphNode::save(2, 1, "next_token")};
  g.outputs = {2};
  return g;
}

}  // namespace

ReplayReport run_replay(const ReplayOptions& options) {
  if (options.jobs < 0) throw Error(ErrorCode::kBadConfig, "job count must be non-negative");
  if (!(options.fault_rate >= 0.0 && options.fault_rate <= 1.0)) {
    throw Error(ErrorCode::kBadConfig, "fault rate must lie in [0, 1]");
  }
  if (!(options.day_compression > 0.0)) throw Error(ErrorCode::kBadConfig, "day compression must be positive");
  if (options.submitters < 1 || options.submitters > 32) {
    throw Error(ErrorCode::kBadConfig, "submitters must lie in [1, 32]");
  }

  ReplayReport report;
  report.jobs = options.jobs;
  if (options.jobs == 0) return report;

  const auto wall_start = std::chrono::steady_clock::now();
  ScaledClock clock(kReplayOriginMs, options.day_compression);
  FabricOptions fo;
  fo.scheduler.allow_fault_injection = true;
  Fabric fabric(clock, fo, {{kReplayToken, "replay", static_cast<std::int64_t>(options.jobs) + 1, false}});

  const ModelConfig config = config_for_model(options.model_id);
  fabric.scheduler.deploy({options.model_id, 1, 1, 1, kDefaultTimeoutMs},
                          std::make_shared<const ModelInstance>(build_model(config)));
  fabric.scheduler.inject_faults({options.fault_rate, options.seed});
  fabric.scheduler.start();

  std::atomic<bool> sampling{true};
  std::thread sampler([&] {
    while (sampling.load()) {
      const SchedulerSnapshot s = fabric.scheduler.snapshot();
      ++report.snapshots;
      if (!s.conserved()) ++report.conservation_violations;
      std::this_thread::sleep_for(std::chrono::microseconds(500));
    }
  });

  // Job i is released at simulated time origin + i * spacing, spreading
  // the workload over the first 90% of the day.
  const double spacing_sim_ms = 0.9 * static_cast<double>(kMillisPerDay) / options.jobs;
  std::atomic<int> next{0};
  std::atomic<int> transport_errors{0};
  std::vector<std::thread> submitters;
  for (int s = 0; s < options.submitters; ++s) {
    submitters.emplace_back([&] {
      for (int i = next++; i < options.jobs; i = next++) {
        const auto release = kReplayOriginMs + static_cast<std::int64_t>(i * spacing_sim_ms);
        while (clock.now_ms() < release) std::this_thread::sleep_for(std::chrono::microseconds(200));
        HttpRequest req{"POST", "/v1/jobs", {}, {}, encode_request({kReplayToken, config.model_id,
                                                                      replay_graph(config, i), std::nullopt})};
        if (fabric.gateway.handle(req).status != 202) ++transport_errors;
      }
    });
  }
  for (auto& t : submitters) t.join();
  fabric.scheduler.wait_until_idle(std::chrono::minutes(10));
  sampling = false;
  sampler.join();
  fabric.scheduler.stop();

  const auto submissions = fabric.scheduler.submission_log(options.model_id);
  const auto dispatches = fabric.scheduler.dispatch_log(options.model_id);
  for (std::size_t i = 0; i < std::max(submissions.size(), dispatches.size()); ++i) {
    if (i >= submissions.size() || i >= dispatches.size() || submissions[i] != dispatches[i]) {
      ++report.ordering_violations;
    }
    if (i > 0 && i < submissions.size() && submissions[i] <= submissions[i - 1]) ++report.ordering_violations;
  }
  report.ordering_violations += static_cast<std::uint64_t>(transport_errors.load());

  const SchedulerSnapshot final_snapshot = fabric.scheduler.snapshot();
  ++report.snapshots;
  if (!final_snapshot.conserved()) ++report.conservation_violations;
  report.scheduler_submitted = final_snapshot.submitted;

  const std::int64_t first_day = day_index(kReplayOriginMs);
  report.days = fabric.telemetry.series(first_day, std::max(first_day, day_index(clock.now_ms())));
  const TelemetryTotals totals = fabric.telemetry.totals();
  report.requests = totals.requests;
  report.completed = totals.completed;
  report.failed = totals.failed;
  report.errors_by_code = totals.failed_by_code;
  // Latency quantiles over the whole run, read from the first day (the
  // replay fits in it unless compression is very low).
  report.p50_latency_ms = report.days.front().p50_latency_ms;
  report.p95_latency_ms = report.days.front().p95_latency_ms;
  report.wall_ms = std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - wall_start).count();
  return report;
}

std::string replay_report_json(const ReplayReport& r) {
  json days = json::array();
  for (const auto& d : r.days) {
    json errors = json::object();
    for (const auto& [code, n] : d.errors_by_code) errors[std::string(to_string(code))] = n;
    days.push_back({{"day", format_day(d.day)},
                    {"requests", d.requests},
                    {"completed", d.completed},
                    {"errors", errors},
                    {"p50_latency_ms", d.p50_latency_ms},
                    {"p95_latency_ms", d.p95_latency_ms}});
  }
  json errors = json::object();
  for (const auto& [code, n] : r.errors_by_code) errors[std::string(to_string(code))] = n;
  return json{{"jobs", r.jobs},
              {"requests", r.requests},
              {"completed", r.completed},
              {"failed", r.failed},
              {"errors_by_code", errors},
              {"ordering_violations", r.ordering_violations},
              {"conservation_violations", r.conservation_violations},
              {"snapshots", r.snapshots},
              {"p50_latency_ms", r.p50_latency_ms},
              {"p95_latency_ms", r.p95_latency_ms},
              {"wall_ms", r.wall_ms},
              {"days", days}}
      .dump(2);
}

std::string replay_report_text(const ReplayReport& r) {
  std::ostringstream out;
  out << "jobs " << r.jobs << "  requests " << r.requests << "  completed " << r.completed << "  failed " << r.failed
      << '\n';
  for (const auto& [code, n] : r.errors_by_code) out << "  " << to_string(code) << ' ' << n << '\n';
  for (const auto& d : r.days) {
    out << format_day(d.day) << "  requests " << d.requests << "  errors " << d.errors() << '\n';
  }
  out << "ordering violations " << r.ordering_violations << '\n';
  out << "conservation violations " << r.conservation_violations << " over " << r.snapshots << " snapshots\n";
  out << "latency p50 " << r.p50_latency_ms << " ms  p95 " << r.p95_latency_ms << " ms\n";
  out << "wall " << r.wall_ms << " ms\n";
  return out.str();
}

}  // namespace edif
