#include <atomic>
#include <thread>

#include "edif/client.hpp"
#include "edif/fabric.hpp"
#include "edif/interp.hpp"
#include "support.hpp"

using namespace edif;
using namespace std::chrono_literals;
using nlohmann::json;

namespace {

std::vector<ApiToken> tokens() {
  return {{"tok-alice", "alice", 100, false},
          {"tok-bob", "bob", 2, false},
          {"tok-mallory", "mallory", 10, true}};
}

InterventionGraph next_token_graph(const std::string& prompt = "Hi") {
  InterventionGraph g;
  g.model_id = "toy";
  g.invocations = {{0, prompt}};
  g.nodes = {GraphNode::capture(0, 0, "logits"), GraphNode::reduction(1, ReduceKind::kArgmax, 0, 1),
             GraphNode::save(2, 1, "next")};
  g.outputs = {2};
  return g;
}

std::string body(const std::string& token, const InterventionGraph& g = next_token_graph()) {
  return encode_request({token, g.model_id, g, std::nullopt});
}

struct Rig {
  ManualClock clock{1'740'960'000'000};
  Fabric fabric;

  explicit Rig(std::vector<ApiToken> t = tokens(), Executor exec = default_executor())
      : fabric(clock, {}, std::move(t), std::move(exec)) {
    fabric.scheduler.deploy({"toy", 1, 40, 1, kDefaultTimeoutMs}, test::shared_toy());
  }
  Gateway& gw() { return fabric.gateway; }

  void drain() {
    for (int i = 0; i < 10000 && !fabric.scheduler.wait_until_idle(1ms); ++i) fabric.scheduler.tick();
    REQUIRE(fabric.scheduler.wait_until_idle(5s));
  }
};

json envelope(const HttpResponse& r) { return json::parse(r.body); }

}  // namespace

TEST_CASE("token config") {
  const auto t = parse_tokens(R"([{"owner":"a","token":"t","quota":3},{"owner":"b","token":"u","quota":1,"revoked":true}])",
                              "tokens.json");
  REQUIRE_EQ(t.size(), 2u);
  CHECK_EQ(t[0].daily_job_quota, 3);
  CHECK(t[1].revoked);
  CHECK_CODE(parse_tokens(R"([{"owner":"a","token":"t"}])", "x"), ErrorCode::kBadConfig);
  CHECK_CODE(parse_tokens(R"([{"owner":"a","token":"t","quota":0}])", "x"), ErrorCode::kBadConfig);
  CHECK_CODE(parse_tokens(R"([{"owner":"a","token":"t","quota":1,"admin":true}])", "x"), ErrorCode::kBadConfig);
  CHECK_CODE(parse_tokens("{", "x"), ErrorCode::kBadConfig);
  ManualClock clock;
  CHECK_CODE(Fabric(clock, {}, {{"t", "a", 1, false}, {"t", "b", 1, false}}), ErrorCode::kBadConfig);
}

TEST_CASE("submit enqueues and records a request") {
  Rig rig;
  const EnqueueResult r = rig.gw().submit(body("tok-alice"));
  CHECK_EQ(r.status.state, JobState::kQueued);
  CHECK_EQ(r.status.queue_position, std::optional<std::int64_t>(0));
  CHECK_EQ(rig.fabric.telemetry.totals().requests, 1u);
  CHECK_EQ(rig.gw().accepted_today("tok-alice"), 1);
  CHECK_EQ(rig.fabric.scheduler.job_owner(r.job_id), "alice");
}

TEST_CASE("daily quota") {
  Rig rig;
  rig.gw().submit(body("tok-bob"));
  rig.gw().submit(body("tok-bob"));
  CHECK_CODE(rig.gw().submit(body("tok-bob")), ErrorCode::kQuota);
  CHECK_EQ(rig.fabric.scheduler.snapshot().submitted, 2u);
  CHECK_NOTHROW(rig.gw().submit(body("tok-alice")));

  rig.clock.advance(kMillisPerDay);
  CHECK_EQ(rig.gw().accepted_today("tok-bob"), 0);
  CHECK_NOTHROW(rig.gw().submit(body("tok-bob")));
}

TEST_CASE("rejected submissions do not consume quota") {
  Rig rig;
  InterventionGraph bad = next_token_graph();
  bad.nodes[0].point = "blocks.9.resid_post";
  const HttpResponse r = rig.gw().handle({"POST", "/v1/jobs", {}, "", body("tok-bob", bad)});
  CHECK_EQ(r.status, 422);
  const json e = envelope(r);
  CHECK_EQ(e["code"], "VALIDATION");
  CHECK_EQ(e["detail"]["violations"][0]["node_id"], 0);
  CHECK_EQ(e["detail"]["violations"][0]["kind"], "UNKNOWN_HOOK_POINT");

  InterventionGraph ghost = next_token_graph();
  ghost.model_id = "ghost";
  const EnqueueResult g = rig.gw().submit(body("tok-bob", ghost));
  CHECK_EQ(g.status.failure->code, ErrorCode::kUnknownModel);
  CHECK_EQ(rig.gw().accepted_today("tok-bob"), 0);
  rig.gw().submit(body("tok-bob"));
  rig.gw().submit(body("tok-bob"));
}

TEST_CASE("revoked and unknown tokens") {
  Rig rig;
  CHECK_CODE(rig.gw().submit(body("tok-mallory")), ErrorCode::kAuth);
  CHECK_CODE(rig.gw().submit(body("nope")), ErrorCode::kAuth);
  CHECK_EQ(rig.fabric.scheduler.snapshot().submitted, 0u);
  CHECK_EQ(rig.fabric.telemetry.totals().requests, 0u);

  const auto r = rig.gw().submit(body("tok-alice"));
  rig.gw().revoke("tok-alice");
  CHECK_CODE(rig.gw().submit(body("tok-alice")), ErrorCode::kAuth);
  CHECK_CODE(rig.gw().poll("tok-alice", r.job_id), ErrorCode::kAuth);
}

TEST_CASE("ownership, readiness and failed jobs") {
  Rig rig({{"tok-alice", "alice", 100, false}, {"tok-bob", "bob", 100, false}},
          [](const InterventionGraph& g, const ModelInstance& m, std::stop_token stop) {
            if (g.invocations[0].prompt == "fail") throw Error(ErrorCode::kTimeout, "took too long");
            return execute(g, m, stop);
          });
  const auto ok = rig.gw().submit(body("tok-alice"));
  const auto bad = rig.gw().submit(body("tok-alice", next_token_graph("fail")));
  CHECK_CODE(rig.gw().poll("tok-bob", ok.job_id), ErrorCode::kForbidden);
  CHECK_CODE(rig.gw().fetch_manifest("tok-alice", ok.job_id), ErrorCode::kNotReady);
  CHECK_CODE(rig.gw().poll("tok-alice", "01ARZ3NDEKTSV4RRFFQ69G5FAV"), ErrorCode::kUnknownJob);
  rig.drain();

  CHECK_EQ(rig.gw().fetch_manifest("tok-alice", ok.job_id).entries.size(), 1u);
  const HttpResponse r = rig.gw().handle({"GET", "/v1/jobs/" + bad.job_id + "/results", {}, "Bearer tok-alice", ""});
  CHECK_EQ(r.status, 409);
  const json e = envelope(r);
  CHECK_EQ(e["code"], "FAILED_JOB");
  CHECK_EQ(e["detail"]["code"], "TIMEOUT");
  CHECK_EQ(rig.gw().handle({"GET", "/v1/jobs/" + ok.job_id, {}, "Bearer tok-bob", ""}).status, 403);
  CHECK_EQ(rig.gw().handle({"GET", "/v1/jobs/" + ok.job_id, {}, "", ""}).status, 401);
}

TEST_CASE("model listing") {
  ManualClock clock;
  Fabric fabric(clock, {}, tokens());
  CHECK(fabric.gateway.list_models().empty());
  CHECK_EQ(envelope(fabric.gateway.handle({"GET", "/v1/models", {}, "", ""}))["models"], json::array());
  for (auto [id, slots, units] : {std::tuple{"gpt2-small", 1, 40}, {"r1-distill-8b", 2, 96}, {"r1-distill-70b", 5, 240}}) {
    fabric.scheduler.deploy({id, slots, units, 1, kDefaultTimeoutMs},
                            std::make_shared<const ModelInstance>(build_model(config_for_model(id))));
  }
  const auto models = fabric.gateway.list_models();
  REQUIRE_EQ(models.size(), 3u);
  std::map<std::string, int> slots;
  for (const auto& m : models) slots[m.model_id] = m.required_slots;
  CHECK_EQ(slots, std::map<std::string, int>{{"gpt2-small", 1}, {"r1-distill-70b", 5}, {"r1-distill-8b", 2}});
}

TEST_CASE("64 concurrent submitters against a quota of 10") {
  Rig rig({{"shared", "team", 10, false}});
  std::atomic<int> accepted{0};
  std::atomic<int> quota{0};
  std::atomic<int> other{0};
  std::vector<std::thread> threads;
  const std::string b = body("shared");
  for (int i = 0; i < 64; ++i) {
    threads.emplace_back([&] {
      try {
        rig.gw().submit(b);
        ++accepted;
      } catch (const Error& e) {
        ++(e.code() == ErrorCode::kQuota ? quota : other);
      }
    });
  }
  for (auto& t : threads) t.join();
  CHECK_EQ(accepted.load(), 10);
  CHECK_EQ(quota.load(), 54);
  CHECK_EQ(other.load(), 0);
  CHECK_EQ(rig.fabric.scheduler.snapshot().submitted, 10u);
}

TEST_CASE("routing and envelopes") {
  Rig rig;
  auto get = [&](std::string path, std::map<std::string, std::string> q = {}) {
    return rig.gw().handle({"GET", std::move(path), std::move(q), "Bearer tok-alice", ""});
  };
  CHECK_EQ(envelope(get("/nope"))["code"], "MALFORMED");
  CHECK_EQ(rig.gw().handle({"DELETE", "/v1/jobs/x", {}, "", ""}).status, 400);
  CHECK_EQ(rig.gw().handle({"POST", "/v1/jobs", {}, "", "{"}).status, 400);
  CHECK_EQ(rig.gw().handle({"POST", "/v1/jobs", {}, "", std::string(kMaxRequestBytes + 1, ' ')}).status, 413);

  const HttpResponse m = get("/metrics");
  CHECK_EQ(m.status, 200);
  CHECK_EQ(m.content_type.rfind("text/plain", 0), 0u);

  const auto r = rig.gw().submit(body("tok-alice"));
  rig.drain();
  const BlobRef ref = rig.gw().fetch_manifest("tok-alice", r.job_id).entries[0].blob;
  const HttpResponse blob = get("/v1/blobs/" + ref.hash, {{"offset", "0"}, {"length", "4"}});
  CHECK_EQ(blob.status, 200);
  CHECK_EQ(blob.body.size(), 4u);
  CHECK_EQ(blob.headers.at("X-Blob-Size"), std::to_string(ref.size));
  CHECK_EQ(get("/v1/blobs/" + ref.hash, {{"offset", std::to_string(ref.size)}}).status, 416);
  CHECK_EQ(get("/v1/blobs/" + ref.hash, {{"offset", "-1"}}).status, 400);
  CHECK_EQ(get("/v1/blobs/" + std::string(64, 'f')).status, 404);
  CHECK_EQ(rig.gw().handle({"GET", "/v1/blobs/" + ref.hash, {}, "", ""}).status, 401);

  // Every error body is a {code, message, detail} envelope.
  const json e = envelope(get("/v1/jobs/unknown"));
  CHECK_EQ(e.size(), 3u);
  CHECK(e.contains("message"));
  CHECK(e["detail"].is_object());
}

TEST_CASE("HTTP round trip") {
  Rig rig;
  rig.fabric.scheduler.start();
  HttpServer server(rig.gw());
  const int port = server.bind("127.0.0.1:0");
  server.start();
  const std::string base = "http://127.0.0.1:" + std::to_string(port);

  Client client(base, "tok-alice");
  const InterventionGraph g = top_k_neurons(test::toy_model().config(), "Hello", "blocks.2.mlp_out", 4);
  const auto outputs = client.run(g, 30s);
  const ResultBundle direct = execute(g, test::toy_model());
  REQUIRE_EQ(outputs.size(), direct.outputs.size());
  for (const auto& [name, t] : direct.outputs) CHECK(bitwise_equal(outputs.at(name), t));

  // Chunked download at an awkward size still re-hashes.
  const auto job = client.submit(logit_lens(test::toy_model().config(), "Hello world", {0, 1, 2, 3}));
  REQUIRE_EQ(client.wait(job.job_id, 10ms, 30s).state, JobState::kCompleted);
  for (const auto& e : client.fetch_manifest(job.job_id).entries) {
    CHECK_EQ(sha256_hex(client.download(e.blob, 777)), e.blob.hash);
  }

  CHECK_CODE(Client(base, "nope").submit(next_token_graph()), ErrorCode::kAuth);
  CHECK_CODE(Client(base, "tok-bob").poll(job.job_id), ErrorCode::kForbidden);
  CHECK_EQ(client.list_models().size(), 1u);
  CHECK_CODE(client.submit_raw(std::string(kMaxRequestBytes + 1, ' ')), ErrorCode::kOversize);
  CHECK_EQ(client.list_models().size(), 1u);
  CHECK_NE(client.metrics().find("edif_requests_total{model=\"toy\"} 2"), std::string::npos);

  server.stop();
  rig.fabric.scheduler.stop();
}
