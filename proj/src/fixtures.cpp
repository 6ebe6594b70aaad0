#include "edif/fixtures.hpp"

#include <cmath>
#include <limits>

#include "edif/interp.hpp"
#include "edif/wire.hpp"

namespace edif {

using nlohmann::json;

namespace {

std::vector<std::uint8_t> text(const std::string& s) {
  std::vector<std::uint8_t> out(s.begin(), s.end());
  out.push_back('\n');
  return out;
}

InterventionGraph capture_logits(const std::string& prompt) {
  InterventionGraph g;
  g.model_id = "toy";
  g.invocations = {{0, prompt}};
  g.nodes = {GraphNode::capture(0, 0, "logits"), GraphNode::save(1, 0, "logits")};
  g.outputs = {1};
  return g;
}

// Residual difference between two layers, scaled, sliced to the last
// position and reduced.
InterventionGraph arithmetic_graph() {
  InterventionGraph g;
  g.model_id = "toy";
  g.invocations = {{0, "The cat sat"}};
  g.nodes = {
      GraphNode::capture(0, 0, "blocks.3.resid_post"),
      GraphNode::capture(1, 0, "blocks.0.resid_pre"),
      GraphNode::binary(2, BinopKind::kSub, 0, 1),
      GraphNode::scale(3, 0.5f, 2),
      GraphNode::slice(4, 3, 0, 10, 11),
      GraphNode::reduction(5, ReduceKind::kSum, 4, 1),
      GraphNode::reduction(6, ReduceKind::kSoftmax, 4, 1),
      GraphNode::save(7, 5, "delta_norm"),
      GraphNode::save(8, 6, "delta_softmax"),
  };
  g.outputs = {7, 8};
  return g;
}

// Adds a constant steering vector at one layer. The steered value comes
// from a first pass so the patch only depends on an earlier invocation.
InterventionGraph steering_graph() {
  std::vector<float> v(64);
  for (int i = 0; i < 64; ++i) v[static_cast<std::size_t>(i)] = (i % 2 == 0 ? 0.25f : -0.25f) * static_cast<float>(i) / 64.0f;
  InterventionGraph g;
  g.model_id = "toy";
  g.invocations = {{0, "Hello"}, {1, "Hello"}};
  g.nodes = {
      GraphNode::constant(0, Tensor::from_f32({64}, v)),
      GraphNode::capture(1, 0, "blocks.1.resid_mid"),
      GraphNode::binary(2, BinopKind::kAdd, 1, 0),
      GraphNode::patch(3, 1, "blocks.1.resid_mid", 2),
      GraphNode::capture(4, 1, "logits"),
      GraphNode::reduction(5, ReduceKind::kArgmax, 4, 1),
      GraphNode::save(6, 5, "steered_next"),
  };
  g.outputs = {6};
  return g;
}

}  // namespace

std::vector<FixtureFile> golden_fixtures() {
  std::vector<FixtureFile> files;
  const ModelConfig toy;

  // Envelopes.
  files.push_back({"request_minimal.json", text(encode_request({"tok-alice", "toy", capture_logits("Hi"), std::nullopt}))});
  files.push_back({"request_tagged.json",
                   text(encode_request({"tok-bob", "toy", logit_lens(toy, "Hi", {0, 1, 2, 3}), "lens-sweep"}))});
  files.push_back({"request_const.json", text(encode_request({"tok-alice", "toy", steering_graph(), std::nullopt}))});
  files.push_back({"status_queued.json",
                   text(encode_status({"01JNKZ3Q4M000000000000000A", JobState::kQueued, 3, std::nullopt}))});
  files.push_back({"status_running.json",
                   text(encode_status({"01JNKZ3Q4M000000000000000A", JobState::kRunning, std::nullopt, std::nullopt}))});
  files.push_back({"status_completed.json",
                   text(encode_status({"01JNKZ3Q4M000000000000000A", JobState::kCompleted, std::nullopt, std::nullopt}))});
  files.push_back({"status_failed.json",
                   text(encode_status({"01JNKZ3Q4M000000000000000B", JobState::kFailed, std::nullopt,
                                       JobFailure{ErrorCode::kTimeout, "job exceeded its wall-clock cap"}}))});
  files.push_back({"error_quota.json",
                   text(encode_error(ErrorCode::kQuota, "daily quota of 10 jobs reached for alice"))});

  // Tensors.
  const float nan = std::numeric_limits<float>::quiet_NaN();
  const float inf = std::numeric_limits<float>::infinity();
  const Tensor special = Tensor::from_f32({4}, {1.0f, -0.0f, nan, inf});
  const Tensor matrix = Tensor::from_f32({2, 3}, {0.5f, -1.5f, 2.0f, -inf, 3.25f, 1e-38f});
  const Tensor indices = Tensor::from_i64({5}, {42, 7, 0, 255, -1});
  const Tensor zeros = Tensor::zeros({16, 64});
  auto binary = [](const Tensor& t, Encoding e) { return serialize_tensor(encode_tensor(t, e)); };
  files.push_back({"tensor_f32_special.edift", binary(special, Encoding::kRaw)});
  files.push_back({"tensor_f32_matrix.edift", binary(matrix, Encoding::kRaw)});
  files.push_back({"tensor_i64.edift", binary(indices, Encoding::kRaw)});
  files.push_back({"tensor_zeros_gzip.edift", binary(zeros, Encoding::kGzip)});
  files.push_back({"tensor_f32_special.json", text(canonical_dump(tensor_to_json(encode_tensor(special, Encoding::kRaw))))});
  files.push_back({"tensor_i64.json", text(canonical_dump(tensor_to_json(encode_tensor(indices, Encoding::kRaw))))});

  // Template corpus.
  struct Entry {
    std::string name;
    std::string template_name;
    json args;
    InterventionGraph graph;
  };
  std::vector<Entry> corpus;
  auto lens = [&](std::string name, std::string prompt, std::vector<int> layers) {
    corpus.push_back({std::move(name), "logit_lens", json{{"prompt", prompt}, {"layers", layers}},
                      logit_lens(toy, prompt, layers)});
  };
  auto patch = [&](std::string name, std::string clean, std::string corrupt, std::string point) {
    corpus.push_back({std::move(name), "activation_patching",
                      json{{"clean_prompt", clean}, {"corrupt_prompt", corrupt}, {"point", point}},
                      activation_patching(toy, clean, corrupt, point)});
  };
  auto extract = [&](std::string name, std::string prompt, std::vector<std::string> points) {
    corpus.push_back({std::move(name), "extract_activations", json{{"prompt", prompt}, {"points", points}},
                      extract_activations(toy, prompt, points)});
  };
  auto topk = [&](std::string name, std::string prompt, std::string point, int k) {
    corpus.push_back({std::move(name), "top_k_neurons", json{{"prompt", prompt}, {"point", point}, {"k", k}},
                      top_k_neurons(toy, prompt, point, k)});
  };
  lens("logit_lens_last", "Hi", {3});
  lens("logit_lens_all", "Hi", {0, 1, 2, 3});
  lens("logit_lens_sentence", "The quick brown fox", {1, 3});
  lens("logit_lens_empty", "Hi", {});
  patch("patch_identity", "ABABABA", "ABABABA", "blocks.2.resid_post");
  patch("patch_copy_resid", "ABABABA", "ACABABA", "blocks.1.resid_post");
  patch("patch_copy_attn", "ABABABA", "ACABABA", "blocks.0.attn_out");
  patch("patch_logits", "Paris", "Rome!", "logits");
  patch("patch_embed", "cat", "dog", "embed");
  std::vector<std::string> all_points;
  for (const auto& hp : enumerate_hook_points(toy)) all_points.push_back(hp.path);
  extract("extract_all", "Hi", all_points);
  extract("extract_one", "Hello", {"blocks.2.mlp_out"});
  extract("extract_residuals", "xyz", {"blocks.0.resid_pre", "blocks.1.resid_pre", "blocks.2.resid_pre"});
  extract("extract_latin1", std::string("caf\xe9\x00\xff", 6), {"embed", "final_norm"});
  topk("topk_5", "Hi", "blocks.3.mlp_out", 5);
  topk("topk_1", "Hi", "blocks.0.resid_post", 1);
  topk("topk_full", "Hello", "final_norm", 64);
  topk("topk_attn", "abc", "blocks.2.attn_out", 8);
  corpus.push_back({"raw_capture_logits", "raw", json::object(), capture_logits("Hi")});
  corpus.push_back({"raw_arithmetic", "raw", json::object(), arithmetic_graph()});
  corpus.push_back({"raw_steering", "raw", json::object(), steering_graph()});

  json index = json::array();
  for (std::size_t i = 0; i < corpus.size(); ++i) {
    char prefix[4];
    std::snprintf(prefix, sizeof(prefix), "%02zu", i + 1);
    const std::string file = "templates/" + std::string(prefix) + "_" + corpus[i].name + ".json";
    files.push_back({file, text(encode_graph(corpus[i].graph))});
    json args = corpus[i].args;
    // Prompts in the index use the same Latin-1 mapping as the graphs.
    for (const char* key : {"prompt", "clean_prompt", "corrupt_prompt"}) {
      if (args.contains(key)) args[key] = prompt_to_json_string(args[key].get<std::string>());
    }
    index.push_back({{"file", file}, {"template", corpus[i].template_name}, {"model_id", "toy"}, {"args", args}});
  }
  files.push_back({"templates/index.json", text(canonical_dump(json{{"version", kProtocolVersion}, {"fixtures", index}}))});
  return files;
}

}  // namespace edif
