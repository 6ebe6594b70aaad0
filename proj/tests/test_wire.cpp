#include <filesystem>
#include <fstream>
#include <iterator>
#include <limits>

#include "edif/fixtures.hpp"
#include "edif/interp.hpp"
#include "edif/wire.hpp"
#include "generators.hpp"
#include "support.hpp"

using namespace edif;
using nlohmann::json;

#ifndef EDIF_FIXTURE_DIR
#error "EDIF_FIXTURE_DIR must point at tests/fixtures/edif-proto-1"
#endif

namespace {

std::vector<std::uint8_t> read_file(const std::filesystem::path& p) {
  std::ifstream in(p, std::ios::binary);
  return {std::istreambuf_iterator<char>(in), {}};
}

InterventionGraph minimal_graph() {
  InterventionGraph g;
  g.model_id = "toy";
  g.invocations = {{0, "Hi"}};
  g.nodes = {GraphNode::capture(0, 0, "logits"), GraphNode::save(1, 0, "logits")};
  g.outputs = {1};
  return g;
}

}  // namespace

TEST_CASE("request round trip and strictness") {
  const JobRequest req{"tok", "toy", minimal_graph(), std::nullopt};
  const std::string bytes = encode_request(req);
  CHECK(decode_request(bytes) == req);
  CHECK_EQ(encode_request(decode_request(bytes)), bytes);

  json j = json::parse(bytes);
  j["extra"] = 1;
  CHECK_CODE(decode_request(j.dump()), ErrorCode::kUnknownField);

  j = json::parse(bytes);
  j["graph"]["nodes"][0]["colour"] = "red";
  CHECK_CODE(decode_request(j.dump()), ErrorCode::kUnknownField);

  j = json::parse(bytes);
  j.erase("api_token");
  CHECK_CODE(decode_request(j.dump()), ErrorCode::kMalformed);

  j = json::parse(bytes);
  j["version"] = "edif-proto/2";
  CHECK_CODE(decode_request(j.dump()), ErrorCode::kMalformed);

  j = json::parse(bytes);
  j["model_id"] = "other";
  CHECK_CODE(decode_request(j.dump()), ErrorCode::kMalformed);

  CHECK_CODE(decode_request("{not json"), ErrorCode::kMalformed);
  CHECK_CODE(decode_request("[]"), ErrorCode::kMalformed);
}

TEST_CASE("oversize request") {
  CHECK_CODE(decode_request(std::string(9u << 20, ' ')), ErrorCode::kOversize);

  // A CONST-heavy graph that encodes past 8 MiB.
  InterventionGraph g = minimal_graph();
  for (int i = 0; i < 8; ++i) {
    g.nodes.push_back(GraphNode::constant(10 + i, Tensor::from_f32({262144}, std::vector<float>(262144, 1.0f))));
  }
  CHECK_CODE(encode_request({"tok", "toy", g, std::nullopt}), ErrorCode::kOversize);
}

TEST_CASE("graph encoding is canonical") {
  const InterventionGraph g = logit_lens(ModelConfig{}, "Hi", {0, 1, 2, 3});
  const std::string a = encode_graph(g);
  CHECK_EQ(a, encode_graph(g));
  CHECK_EQ(a.find_first_of(" \n\t"), std::string::npos);
  const json j = json::parse(a);
  CHECK_EQ(j.dump(), a);  // nlohmann dumps object keys sorted
  CHECK(decode_graph(a) == g);
}

TEST_CASE("graph round trip preserves execute output") {
  const ModelInstance& m = test::toy_model();
  const InterventionGraph g = activation_patching(m.config(), "ABABABA", "ACABABA", "blocks.1.resid_post");
  const auto a = execute(g, m);
  const auto b = execute(decode_graph(encode_graph(g)), m);
  for (const auto& [name, t] : a.outputs) CHECK(bitwise_equal(t, b.outputs.at(name)));
}

TEST_CASE("graph limits") {
  InterventionGraph g = minimal_graph();
  for (int i = 2; i < 5000; ++i) g.nodes.push_back(GraphNode::scale(i, 1.0f, 0));
  CHECK_CODE(encode_graph(g), ErrorCode::kLimitExceeded);

  json j = graph_to_json(minimal_graph());
  for (int i = 2; i < 5000; ++i) j["nodes"].push_back({{"id", i}, {"op", "SCALE"}, {"scalar", 1.0}, {"operand", 0}});
  CHECK_CODE(decode_graph(j.dump()), ErrorCode::kLimitExceeded);

  InterventionGraph many = minimal_graph();
  for (int i = 1; i <= 64; ++i) many.invocations.push_back({i, "x"});
  CHECK_CODE(encode_graph(many), ErrorCode::kLimitExceeded);

  InterventionGraph big_const = minimal_graph();
  big_const.nodes.push_back(GraphNode::constant(2, Tensor::zeros({262145})));
  CHECK_CODE(decode_graph(encode_graph(big_const)), ErrorCode::kLimitExceeded);
}

TEST_CASE("prompts map bytes onto code points U+0000..U+00FF") {
  std::string all;
  for (int c = 0; c < 256; ++c) all.push_back(static_cast<char>(c));
  const std::string js = prompt_to_json_string(all);
  CHECK_EQ(prompt_from_json_string(js), all);
  CHECK_EQ(prompt_to_json_string("\xe9"), "\xc3\xa9");
  CHECK_CODE(prompt_from_json_string("\xe2\x82\xac"), ErrorCode::kMalformed);  // U+20AC

  InterventionGraph g = minimal_graph();
  g.invocations[0].prompt = all;
  CHECK(decode_graph(encode_graph(g)) == g);
  CHECK_NE(encode_graph(g).find("\\u0000"), std::string::npos);
}

TEST_CASE("tensor special values round trip bit-exactly") {
  const float nan = std::numeric_limits<float>::quiet_NaN();
  const float inf = std::numeric_limits<float>::infinity();
  const Tensor t = Tensor::from_f32({4}, {1.0f, -0.0f, nan, inf});
  for (Encoding e : {Encoding::kRaw, Encoding::kGzip}) {
    const Tensor back = decode_tensor(parse_tensor(serialize_tensor(encode_tensor(t, e))));
    CHECK(bitwise_equal(back, t));
    CHECK_EQ(test::float_bits(back.f32[1]), 0x80000000u);
    const Tensor via_json = decode_tensor(tensor_from_json(tensor_to_json(encode_tensor(t, e))));
    CHECK(bitwise_equal(via_json, t));
  }
}

TEST_CASE("tensor compression and corruption") {
  const Tensor zeros = Tensor::zeros({262144});  // 1 MiB
  const TensorWire w = encode_tensor(zeros, Encoding::kGzip);
  CHECK_LT(w.data.size(), zeros.byte_size() / 100);
  CHECK(bitwise_equal(decode_tensor(w), zeros));

  TensorWire truncated = encode_tensor(Tensor::from_f32({3}, {1, 2, 3}), Encoding::kRaw);
  truncated.data.pop_back();
  CHECK_CODE(decode_tensor(truncated), ErrorCode::kLengthMismatch);

  TensorWire short_gzip = encode_tensor(Tensor::from_f32({3}, {1, 2, 3}), Encoding::kGzip);
  short_gzip.shape = {4};
  CHECK_CODE(decode_tensor(short_gzip), ErrorCode::kLengthMismatch);

  TensorWire garbage = w;
  garbage.data = {1, 2, 3, 4, 5};
  CHECK_CODE(decode_tensor(garbage), ErrorCode::kBadCompression);

  auto bytes = serialize_tensor(encode_tensor(Tensor::from_f32({3}, {1, 2, 3}), Encoding::kRaw));
  CHECK_CODE(parse_tensor(std::span(bytes).first(10)), ErrorCode::kMalformed);
  bytes[0] = 'X';
  CHECK_CODE(parse_tensor(bytes), ErrorCode::kMalformed);
}

TEST_CASE("gzip and base64 round trips") {
  gen::Rng rng(3);
  for (int i = 0; i < 50; ++i) {
    const std::string s = gen::random_bytes(rng, 0, 2000);
    const std::vector<std::uint8_t> v(s.begin(), s.end());
    CHECK_EQ(gzip_decompress(gzip_compress(v)), v);
    CHECK_EQ(base64_decode(base64_encode(v)), v);
  }
  CHECK_EQ(base64_encode(std::vector<std::uint8_t>{'f', 'o', 'o', 'b'}), "Zm9vYg==");
  CHECK_THROWS_AS(base64_decode("Zm9v!"), Error);
}

TEST_CASE("status and state machine") {
  const JobStatus queued{"01ABC", JobState::kQueued, 3, std::nullopt};
  CHECK(decode_status(encode_status(queued)) == queued);
  const JobStatus failed{"01ABC", JobState::kFailed, std::nullopt, JobFailure{ErrorCode::kTimeout, "slow"}};
  CHECK(decode_status(encode_status(failed)) == failed);

  json j = status_to_json(failed);
  j["failure"]["code"] = "CYCLE";
  CHECK_CODE(decode_status(j.dump()), ErrorCode::kMalformed);

  CHECK(is_valid_transition(JobState::kQueued, JobState::kRunning));
  CHECK(is_valid_transition(JobState::kQueued, JobState::kFailed));
  CHECK(is_valid_transition(JobState::kRunning, JobState::kCompleted));
  CHECK(is_valid_transition(JobState::kRunning, JobState::kFailed));
  CHECK_FALSE(is_valid_transition(JobState::kQueued, JobState::kCompleted));
  CHECK_FALSE(is_valid_transition(JobState::kCompleted, JobState::kFailed));
  CHECK_FALSE(is_valid_transition(JobState::kFailed, JobState::kRunning));
  CHECK_FALSE(is_valid_transition(JobState::kRunning, JobState::kQueued));
}

TEST_CASE("error envelope") {
  const json j = json::parse(encode_error(ErrorCode::kQuota, "limit", {{"quota", 10}}));
  CHECK_EQ(j.at("code"), "QUOTA");
  CHECK_EQ(j.at("message"), "limit");
  CHECK_EQ(j.at("detail").at("quota"), 10);
  for (int c = 0; c <= static_cast<int>(ErrorCode::kIo); ++c) {
    const auto code = static_cast<ErrorCode>(c);
    CHECK_EQ(error_code_from_string(to_string(code)), code);
  }
}

TEST_CASE("property: request codec round trip") {
  gen::Rng rng(1001);
  for (int i = 0; i < 300; ++i) {
    const JobRequest r = gen::random_request(rng);
    const std::string bytes = encode_request(r);
    const JobRequest back = decode_request(bytes);
    REQUIRE(back == r);
    REQUIRE_EQ(encode_request(back), bytes);
  }
}

TEST_CASE("property: tensor codec round trip") {
  gen::Rng rng(2002);
  for (int i = 0; i < 300; ++i) {
    const Tensor t = gen::random_tensor(rng);
    const auto e = static_cast<Encoding>(gen::uniform(rng, 0, 1));
    REQUIRE(bitwise_equal(decode_tensor(parse_tensor(serialize_tensor(encode_tensor(t, e)))), t));
  }
}

TEST_CASE("golden fixtures match the encoder byte for byte") {
  const std::filesystem::path root = EDIF_FIXTURE_DIR;
  const auto files = golden_fixtures();
  CHECK_EQ(files.size(), 35u);
  for (const auto& f : files) {
    CAPTURE(f.path);
    REQUIRE(std::filesystem::exists(root / f.path));
    CHECK(read_file(root / f.path) == f.bytes);
  }
}

TEST_CASE("golden fixtures decode and validate") {
  const std::filesystem::path root = EDIF_FIXTURE_DIR;
  auto text = [&](const std::string& name) {
    auto b = read_file(root / name);
    return std::string(b.begin(), b.end() - 1);  // trailing newline
  };
  const ModelCatalog catalog{{"toy", ModelConfig{}}};

  const JobRequest minimal = decode_request(text("request_minimal.json"));
  CHECK_EQ(minimal.api_token, "tok-alice");
  CHECK(validate(minimal.graph, catalog).empty());
  CHECK_EQ(decode_request(text("request_tagged.json")).client_tag, std::optional<std::string>("lens-sweep"));
  CHECK(validate(decode_request(text("request_const.json")).graph, catalog).empty());

  CHECK_EQ(decode_status(text("status_queued.json")).queue_position, std::optional<std::int64_t>(3));
  CHECK_EQ(decode_status(text("status_failed.json")).failure->code, ErrorCode::kTimeout);
  CHECK_EQ(json::parse(text("error_quota.json")).at("code"), "QUOTA");

  const Tensor special = decode_tensor(parse_tensor(read_file(root / "tensor_f32_special.edift")));
  CHECK_EQ(test::float_bits(special.f32[1]), 0x80000000u);
  CHECK(std::isnan(special.f32[2]));
  CHECK(bitwise_equal(decode_tensor(tensor_from_json(json::parse(text("tensor_f32_special.json")))), special));
  CHECK_EQ(decode_tensor(parse_tensor(read_file(root / "tensor_i64.edift"))).i64,
           std::vector<std::int64_t>{42, 7, 0, 255, -1});
  const Tensor zeros = decode_tensor(parse_tensor(read_file(root / "tensor_zeros_gzip.edift")));
  CHECK(bitwise_equal(zeros, Tensor::zeros({16, 64})));

  const json index = json::parse(text("templates/index.json"));
  CHECK_EQ(index.at("fixtures").size(), 20u);
  for (const auto& entry : index.at("fixtures")) {
    const std::string file = entry.at("file");
    CAPTURE(file);
    const InterventionGraph g = decode_graph(text(file));
    const auto violations = validate(g, catalog);
    // The empty lens sweep is the one deliberately invalid template.
    if (file.find("logit_lens_empty") != std::string::npos) {
      CHECK_FALSE(violations.empty());
    } else {
      CHECK(violations.empty());
    }
  }
}
