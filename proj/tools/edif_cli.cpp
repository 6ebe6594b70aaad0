// edif: operator and researcher command line.
//
// Exit status: 0 on success, 1 on usage errors, otherwise
// kExitBase + the ErrorCode ordinal (see `edif codes`).

#include <signal.h>

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <sstream>

#include "CLI11.hpp"
#include "edif/client.hpp"
#include "edif/fabric.hpp"
#include "edif/fixtures.hpp"
#include "edif/interp.hpp"
#include "edif/replay.hpp"
#include "edif/wire.hpp"

namespace fs = std::filesystem;
using namespace edif;
using nlohmann::json;

namespace {

constexpr int kExitBase = 10;
constexpr ErrorCode kLastCode = ErrorCode::kIo;

int exit_code(ErrorCode code) { return kExitBase + static_cast<int>(code); }

std::string env_or(const char* name, std::string fallback) {
  const char* v = std::getenv(name);
  return v && *v ? std::string(v) : fallback;
}

std::string read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error(ErrorCode::kBadConfig, "cannot read " + path);
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, std::span<const std::uint8_t> bytes) {
  if (path.has_parent_path()) fs::create_directories(path.parent_path());
  std::ofstream out(path, std::ios::binary);
  out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + path.string());
}

void write_text(const fs::path& path, const std::string& text) {
  write_file(path, std::span(reinterpret_cast<const std::uint8_t*>(text.data()), text.size()));
}

// ---------------------------------------------------------------- serve

struct ServeArgs {
  std::string bind = env_or("EDIF_BIND_ADDR", "127.0.0.1:8080");
  std::string manifests = env_or("EDIF_MANIFESTS_FILE", "");
  std::string tokens = env_or("EDIF_TOKENS_FILE", "");
  std::string store_dir = env_or("EDIF_STORE_DIR", "");
  std::string alerts;
  double fault_rate = 0.0;
  std::uint64_t seed = 0;
  int slots = 8;
  int slot_capacity = 48;
  std::int64_t alert_interval_ms = 10'000;
};

int serve(const ServeArgs& a) {
  if (!(a.fault_rate >= 0.0 && a.fault_rate <= 1.0)) {
    throw Error(ErrorCode::kBadConfig, "--fault-rate must lie in [0, 1], got " + std::to_string(a.fault_rate));
  }
  if (a.manifests.empty()) throw Error(ErrorCode::kBadConfig, "--manifests (or EDIF_MANIFESTS_FILE) is required");
  if (a.tokens.empty()) throw Error(ErrorCode::kBadConfig, "--tokens (or EDIF_TOKENS_FILE) is required");
  const auto manifests = parse_manifests(read_file(a.manifests), a.manifests);
  auto tokens = parse_tokens(read_file(a.tokens), a.tokens);
  std::vector<AlertRule> rules;
  if (!a.alerts.empty()) rules = parse_alert_rules(read_file(a.alerts));

  // Signals are taken by a dedicated thread; block them everywhere else.
  sigset_t signals;
  sigemptyset(&signals);
  sigaddset(&signals, SIGINT);
  sigaddset(&signals, SIGTERM);
  pthread_sigmask(SIG_BLOCK, &signals, nullptr);

  SystemClock clock;
  FabricOptions options;
  options.scheduler.slot_count = a.slots;
  options.scheduler.slot_capacity_units = a.slot_capacity;
  options.scheduler.allow_fault_injection = a.fault_rate > 0.0;
  if (!a.store_dir.empty()) options.store.directory = a.store_dir;
  Fabric fabric(clock, options, std::move(tokens));
  for (const auto& rule : rules) {
    if (rule.sink_file) fabric.telemetry.add_sink(std::make_shared<FileAlertSink>(*rule.sink_file), rule.rule);
    if (rule.sink_url) fabric.telemetry.add_sink(std::make_shared<WebhookAlertSink>(*rule.sink_url), rule.rule);
  }
  if (a.fault_rate > 0.0) fabric.scheduler.inject_faults({a.fault_rate, a.seed});
  for (const auto& m : manifests) {
    const auto slots = fabric.scheduler.deploy(m, std::make_shared<const ModelInstance>(build_model(config_for_model(m.model_id))));
    std::cerr << "deployed " << m.model_id << " on slots";
    for (int s : slots) std::cerr << ' ' << s;
    std::cerr << '\n';
  }
  fabric.scheduler.start();

  HttpServer server(fabric.gateway);
  const int port = server.bind(a.bind);
  std::cerr << "listening on " << split_address(a.bind).first << ':' << port << '\n';

  std::atomic<bool> done{false};
  std::thread waiter([&] {
    int sig = 0;
    sigwait(&signals, &sig);
    done = true;
    server.stop();
  });
  std::thread alerter([&] {
    if (rules.empty()) return;
    AlertThresholds thresholds;
    for (const auto& r : rules) {
      if (r.rule == "error_ratio") thresholds.error_ratio_max = r.threshold;
      if (r.rule == "queue_depth") thresholds.queue_depth_max = static_cast<std::int64_t>(r.threshold);
    }
    while (!done) {
      fabric.telemetry.alert_check(thresholds);
      for (int i = 0; i < a.alert_interval_ms / 50 && !done; ++i) std::this_thread::sleep_for(std::chrono::milliseconds(50));
    }
  });
  server.run();
  if (!done) {
    done = true;
    pthread_kill(waiter.native_handle(), SIGTERM);
  }
  waiter.join();
  alerter.join();
  fabric.scheduler.stop();
  std::cout << fabric.telemetry.export_text() << std::flush;
  return 0;
}

// -------------------------------------------------------- run-template

struct TemplateArgs {
  std::string url = env_or("EDIF_URL", "http://127.0.0.1:8080");
  std::string token = env_or("EDIF_TOKEN", "");
  std::string model = "toy";
  std::string prompt = "Hi";
  std::vector<int> layers;
  std::string clean;
  std::string corrupt;
  std::string point = "blocks.3.mlp_out";
  std::vector<std::string> points;
  int k = 5;
  int target = -1;
  bool copy_fixture = false;
  std::string out_dir = "edif-out";
  std::string plot;
  bool json_out = false;
  int timeout_s = 300;
};

std::vector<std::int64_t> argmax_rows(const Tensor& t) {
  std::vector<std::int64_t> out;
  for (std::int64_t r = 0; r < t.shape[0]; ++r) {
    const auto row = t.row(r);
    out.push_back(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

void write_outputs(const fs::path& dir, const std::map<std::string, Tensor>& outputs, const json& extra) {
  json sidecar = json::object();
  for (const auto& [name, tensor] : outputs) {
    const std::string file = name + ".edift";
    write_file(dir / file, serialize_tensor(encode_tensor(tensor, Encoding::kRaw)));
    sidecar[name] = {{"file", file}, {"dtype", to_string(tensor.dtype)}, {"shape", tensor.shape}};
  }
  write_text(dir / "manifest.json",
             json{{"version", kProtocolVersion}, {"outputs", sidecar}, {"summary", extra}}.dump(2) + "\n");
}

int run_template(const std::string& which, TemplateArgs a) {
  const ModelConfig config = config_for_model(a.model);
  Client client(a.url, a.token);
  const auto timeout = std::chrono::seconds(a.timeout_s);
  auto run = [&](const InterventionGraph& g) { return client.run(g, timeout); };
  const fs::path dir = a.out_dir;
  json summary;

  if (which == "logit-lens") {
    if (a.layers.empty()) a.layers = {config.n_layers - 1};
    const auto out = run(logit_lens(config, a.prompt, a.layers));
    for (int layer : a.layers) summary["lens." + std::to_string(layer)] = argmax_rows(out.at("lens." + std::to_string(layer)));
    write_outputs(dir, out, summary);
  } else if (which == "patch") {
    if (a.clean.empty() || a.corrupt.empty()) throw Error(ErrorCode::kValidation, "patch needs --clean and --corrupt");
    const auto out = run(activation_patching(config, a.clean, a.corrupt, a.point));
    for (const char* name : {"clean", "corrupt", "patched"}) summary[name] = argmax_rows(out.at(name)).back();
    write_outputs(dir, out, summary);
  } else if (which == "extract") {
    if (a.points.empty()) {
      for (const auto& hp : enumerate_hook_points(config)) a.points.push_back(hp.path);
    }
    const auto out = run(extract_activations(config, a.prompt, a.points));
    for (const auto& [name, t] : out) summary[name] = t.shape;
    write_outputs(dir, out, summary);
  } else if (which == "topk") {
    const auto out = run(top_k_neurons(config, a.prompt, a.point, a.k));
    summary["indices"] = out.at("topk.indices").i64;
    summary["values"] = out.at("topk.values").f32;
    write_outputs(dir, out, summary);
  } else if (which == "trace") {
    if (a.copy_fixture) {
      const CopyFixture fx = copy_task_fixture(build_model(config));
      a.clean = fx.clean;
      a.corrupt = fx.corrupt;
      if (a.target < 0) a.target = fx.target_token;
    }
    if (a.clean.empty() || a.corrupt.empty()) {
      throw Error(ErrorCode::kValidation, "trace needs --clean and --corrupt, or --copy-fixture");
    }
    if (a.target < 0) {
      InterventionGraph g = extract_activations(config, a.clean, {"logits"});
      a.target = static_cast<int>(argmax_rows(run(g).at("logits")).back());
    }
    const CausalTraceReport report = causal_trace(config, a.clean, a.corrupt, a.target, run);
    fs::create_directories(dir);
    write_text(dir / "trace.json", report_to_json(report) + "\n");
    if (!a.plot.empty()) write_text(a.plot, report_to_svg(report));
    summary = json::parse(report_to_json(report));
    summary.erase("cells");
  } else {
    throw Error(ErrorCode::kValidation, "unknown template " + which);
  }
  if (a.json_out) {
    std::cout << summary.dump(2) << '\n';
  } else {
    for (const auto& [key, value] : summary.items()) std::cout << key << ": " << value.dump() << '\n';
  }
  return 0;
}

// ----------------------------------------------------------- the rest

int deploy_model(const std::string& manifests_path, int slots, int capacity, const std::string& weights,
                 const std::string& model_id) {
  const auto manifests = parse_manifests(read_file(manifests_path), manifests_path);
  SlotPool pool(slots, capacity);
  int status = 0;
  for (const auto& m : manifests) {
    const int planned = plan_allocation(m.declared_memory_units, capacity);
    std::cout << m.model_id << ": declared " << m.declared_memory_units << " units, plan " << planned
              << " slot(s), manifest requires " << m.required_slots;
    try {
      const auto ids = pool.reserve(m.model_id, m.required_slots);
      std::cout << ", slots";
      for (int id : ids) std::cout << ' ' << id;
      const std::int64_t stranded = static_cast<std::int64_t>(m.required_slots) * capacity - m.declared_memory_units;
      if (stranded > 0) std::cout << ", " << stranded << " units stranded";
      std::cout << '\n';
    } catch (const Error& e) {
      std::cout << ", " << e.what() << '\n';
      status = exit_code(e.code());
    }
  }
  std::cout << pool.free_count() << " of " << slots << " slots free\n";
  if (!weights.empty()) {
    std::ifstream in(weights, std::ios::binary);
    if (!in) throw Error(ErrorCode::kBadConfig, "cannot read " + weights);
    const ModelInstance model = build_model(config_for_model(model_id), read_weights(in));
    std::cout << "weights " << weights << " verified for " << model_id << " (" << model.weights().size()
              << " tensors)\n";
  }
  return status;
}

int export_weights(const std::string& model_id, const std::string& out_path) {
  const ModelInstance model = build_model(config_for_model(model_id));
  std::ofstream out(out_path, std::ios::binary);
  write_weights(out, model.weights());
  if (!out) throw Error(ErrorCode::kIo, "cannot write " + out_path);
  std::cout << "wrote " << model.weights().size() << " tensors to " << out_path << '\n';
  return 0;
}

int gen_fixtures(const std::string& out_dir) {
  const auto files = golden_fixtures();
  for (const auto& f : files) write_file(fs::path(out_dir) / f.path, f.bytes);
  std::cout << "wrote " << files.size() << " fixture files under " << out_dir << '\n';
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"edif: deep inference fabric at desk scale"};
  app.require_subcommand(1);

  ServeArgs serve_args;
  auto* serve_cmd = app.add_subcommand("serve", "Run the gateway, scheduler and result store");
  serve_cmd->add_option("--bind", serve_args.bind, "host:port (env EDIF_BIND_ADDR)");
  serve_cmd->add_option("--manifests", serve_args.manifests, "Deployment manifests JSON (env EDIF_MANIFESTS_FILE)");
  serve_cmd->add_option("--tokens", serve_args.tokens, "API tokens JSON (env EDIF_TOKENS_FILE)");
  serve_cmd->add_option("--store-dir", serve_args.store_dir, "Result store directory; memory if unset (env EDIF_STORE_DIR)");
  serve_cmd->add_option("--fault-rate", serve_args.fault_rate, "Injected worker fault probability (test/bench mode)");
  serve_cmd->add_option("--seed", serve_args.seed, "Fault injection seed");
  serve_cmd->add_option("--slots", serve_args.slots, "Slot pool size");
  serve_cmd->add_option("--slot-capacity", serve_args.slot_capacity, "Memory units per slot");
  serve_cmd->add_option("--alerts", serve_args.alerts, "Alert rules JSON");
  serve_cmd->add_option("--alert-interval-ms", serve_args.alert_interval_ms, "Alert evaluation period");

  TemplateArgs t;
  std::string which;
  auto* tmpl = app.add_subcommand("run-template", "Build, submit and fetch a template job");
  tmpl->add_option("template", which, "logit-lens | patch | trace | extract | topk")
      ->required()
      ->check(CLI::IsMember({"logit-lens", "patch", "trace", "extract", "topk"}));
  tmpl->add_option("--url", t.url, "Gateway URL (env EDIF_URL)");
  tmpl->add_option("--token", t.token, "API token (env EDIF_TOKEN)");
  tmpl->add_option("--model", t.model, "Model id");
  tmpl->add_option("--prompt", t.prompt, "Prompt");
  tmpl->add_option("--layers", t.layers, "Layers for logit-lens")->delimiter(',');
  tmpl->add_option("--clean", t.clean, "Clean prompt");
  tmpl->add_option("--corrupt", t.corrupt, "Corrupt prompt");
  tmpl->add_option("--point", t.point, "Hook point");
  tmpl->add_option("--points", t.points, "Hook points for extract (default: all)")->delimiter(',');
  tmpl->add_option("-k", t.k, "k for topk");
  tmpl->add_option("--target", t.target, "Target token for trace (default: clean argmax)");
  tmpl->add_flag("--copy-fixture", t.copy_fixture, "Trace the built-in copy-task prompt pair");
  tmpl->add_option("--out-dir", t.out_dir, "Output directory");
  tmpl->add_option("--plot", t.plot, "Write the trace score grid as SVG");
  tmpl->add_flag("--json", t.json_out, "Print the summary as JSON");
  tmpl->add_option("--timeout", t.timeout_s, "Seconds to wait for each job");

  ReplayOptions ro;
  bool replay_json = false;
  auto* replay = app.add_subcommand("replay", "Replay a compressed day of jobs in process");
  replay->add_option("--jobs", ro.jobs, "Number of jobs");
  replay->add_option("--day-compression", ro.day_compression, "Simulated ms per real ms");
  replay->add_option("--fault-rate", ro.fault_rate, "Injected worker fault probability");
  replay->add_option("--seed", ro.seed, "Fault injection seed");
  replay->add_option("--submitters", ro.submitters, "Concurrent submitters (1..32)");
  replay->add_flag("--json", replay_json, "Machine-readable report");

  std::string manifests_path;
  std::string weights_path;
  std::string weights_model = "toy";
  int plan_slots = 8;
  int plan_capacity = 48;
  auto* deploy = app.add_subcommand("deploy-model", "Plan slot allocation for manifests and verify weights");
  deploy->add_option("--manifests", manifests_path, "Deployment manifests JSON")->required();
  deploy->add_option("--slots", plan_slots, "Slot pool size");
  deploy->add_option("--slot-capacity", plan_capacity, "Memory units per slot");
  deploy->add_option("--weights", weights_path, "EDIFW1 weight file to verify");
  deploy->add_option("--model-id", weights_model, "Model id the weights belong to");

  std::string export_model = "toy";
  std::string export_out;
  auto* exp = app.add_subcommand("export-weights", "Write a built-in model's weights as EDIFW1");
  exp->add_option("--model-id", export_model, "Model id");
  exp->add_option("--out", export_out, "Output path")->required();

  std::string fixtures_out = "tests/fixtures/edif-proto-1";
  auto* fixtures = app.add_subcommand("gen-fixtures", "Write the edif-proto/1 golden fixtures");
  fixtures->add_option("--out", fixtures_out, "Output directory");

  auto* codes = app.add_subcommand("codes", "List exit codes");

  CLI11_PARSE(app, argc, argv);

  try {
    if (*serve_cmd) return serve(serve_args);
    if (*tmpl) return run_template(which, t);
    if (*replay) {
      const ReplayReport report = run_replay(ro);
      std::cout << (replay_json ? replay_report_json(report) + "\n" : replay_report_text(report));
      return report.ordering_violations == 0 && report.conservation_violations == 0 ? 0
                                                                                     : exit_code(ErrorCode::kWorkerFault);
    }
    if (*deploy) return deploy_model(manifests_path, plan_slots, plan_capacity, weights_path, weights_model);
    if (*exp) return export_weights(export_model, export_out);
    if (*fixtures) return gen_fixtures(fixtures_out);
    if (*codes) {
      for (int c = 0; c <= static_cast<int>(kLastCode); ++c) {
        std::cout << exit_code(static_cast<ErrorCode>(c)) << ' ' << to_string(static_cast<ErrorCode>(c)) << '\n';
      }
      return 0;
    }
  } catch (const Error& e) {
    std::cerr << "edif: " << e.what() << '\n';
    // A failed job surfaces as FAILED_JOB; exit with the job's own code.
    if (e.code() == ErrorCode::kFailedJob) {
      try {
        return exit_code(error_code_from_string(e.message().substr(0, e.message().find(':'))));
      } catch (const Error&) {
      }
    }
    return exit_code(e.code());
  } catch (const std::exception& e) {
    std::cerr << "edif: " << e.what() << '\n';
    return exit_code(ErrorCode::kIo);
  }
  return 0;
}
