#include <algorithm>
#include <cmath>
#include <limits>
#include <stop_token>

#include "edif/graph.hpp"
#include "edif/interp.hpp"
#include "generators.hpp"
#include "support.hpp"

using namespace edif;

namespace {

const ModelCatalog& catalog() {
  static const ModelCatalog c{{"toy", ModelConfig{}}};
  return c;
}

InterventionGraph single(std::string prompt, std::vector<GraphNode> nodes, std::vector<int> outputs) {
  InterventionGraph g;
  g.model_id = "toy";
  g.invocations = {{0, std::move(prompt)}};
  g.nodes = std::move(nodes);
  g.outputs = std::move(outputs);
  return g;
}

bool has_violation(const std::vector<Violation>& vs, ViolationKind kind) {
  return std::any_of(vs.begin(), vs.end(), [&](const Violation& v) { return v.kind == kind; });
}

}  // namespace

TEST_CASE("validate: capture logits and save is valid") {
  const auto g = single("Hi", {GraphNode::capture(0, 0, "logits"), GraphNode::save(1, 0, "out")}, {1});
  CHECK(validate(g, catalog()).empty());
}

TEST_CASE("validate: temporal causality") {
  InterventionGraph g;
  g.model_id = "toy";
  g.invocations = {{0, "ab"}, {1, "cd"}};
  g.nodes = {GraphNode::capture(0, 1, "blocks.0.resid_post"), GraphNode::patch(1, 0, "blocks.1.resid_post", 0),
             GraphNode::capture(2, 0, "logits"), GraphNode::save(3, 2, "out")};
  g.outputs = {3};
  CHECK(has_violation(validate(g, catalog()), ViolationKind::kCausality));

  // Same invocation, later point as source: also a violation.
  g.nodes[0] = GraphNode::capture(0, 0, "blocks.2.resid_post");
  CHECK(has_violation(validate(g, catalog()), ViolationKind::kCausality));
  // Same invocation, strictly earlier point: fine.
  g.nodes[0] = GraphNode::capture(0, 0, "blocks.1.resid_pre");
  CHECK(validate(g, catalog()).empty());
  // Earlier invocation, any point: fine.
  g.nodes[0] = GraphNode::capture(0, 0, "blocks.3.resid_post");
  g.nodes[1] = GraphNode::patch(1, 1, "blocks.0.resid_pre", 0);
  CHECK(validate(g, catalog()).empty());
}

TEST_CASE("validate: shape contract on BINOP") {
  const auto g = single("Hi",
                        {GraphNode::capture(0, 0, "logits"), GraphNode::capture(1, 0, "embed"),
                         GraphNode::binary(2, BinopKind::kAdd, 0, 1), GraphNode::save(3, 2, "sum")},
                        {3});
  const auto vs = validate(g, catalog());
  REQUIRE(has_violation(vs, ViolationKind::kShape));
  const auto it = std::find_if(vs.begin(), vs.end(), [](const Violation& v) { return v.kind == ViolationKind::kShape; });
  CHECK_EQ(it->node_id, 2);
  CHECK_NE(it->message.find("[2,256]"), std::string::npos);
  CHECK_NE(it->message.find("[2,64]"), std::string::npos);
}

TEST_CASE("validate: structural violations") {
  SUBCASE("unknown model") {
    auto g = single("Hi", {GraphNode::capture(0, 0, "logits"), GraphNode::save(1, 0, "o")}, {1});
    g.model_id = "gpt-9";
    CHECK(has_violation(validate(g, catalog()), ViolationKind::kUnknownModel));
  }
  SUBCASE("no save") {
    CHECK(has_violation(validate(single("Hi", {GraphNode::capture(0, 0, "logits")}, {}), catalog()),
                        ViolationKind::kMissingSave));
  }
  SUBCASE("duplicate save names") {
    auto g = single("Hi", {GraphNode::capture(0, 0, "logits"), GraphNode::save(1, 0, "o"), GraphNode::save(2, 0, "o")},
                    {1, 2});
    CHECK(has_violation(validate(g, catalog()), ViolationKind::kDuplicateSave));
  }
  SUBCASE("dangling reference") {
    auto g = single("Hi", {GraphNode::capture(0, 0, "logits"), GraphNode::save(1, 7, "o")}, {1});
    CHECK(has_violation(validate(g, catalog()), ViolationKind::kDanglingReference));
  }
  SUBCASE("duplicate node id") {
    auto g = single("Hi", {GraphNode::capture(0, 0, "logits"), GraphNode::save(0, 0, "o")}, {0});
    CHECK(has_violation(validate(g, catalog()), ViolationKind::kDuplicateNode));
  }
  SUBCASE("self reference") {
    auto g = single("Hi", {GraphNode::scale(0, 2.0f, 0), GraphNode::save(1, 0, "o")}, {1});
    CHECK(has_violation(validate(g, catalog()), ViolationKind::kCycle));
  }
  SUBCASE("unknown hook point") {
    auto g = single("Hi", {GraphNode::capture(0, 0, "blocks.9.attn_out"), GraphNode::save(1, 0, "o")}, {1});
    CHECK(has_violation(validate(g, catalog()), ViolationKind::kUnknownHookPoint));
  }
  SUBCASE("bad invocation numbering") {
    auto g = single("Hi", {GraphNode::capture(0, 0, "logits"), GraphNode::save(1, 0, "o")}, {1});
    g.invocations[0].id = 1;
    CHECK(has_violation(validate(g, catalog()), ViolationKind::kBadInvocation));
  }
  SUBCASE("empty and overlong prompts") {
    auto g = single("", {GraphNode::capture(0, 0, "logits"), GraphNode::save(1, 0, "o")}, {1});
    CHECK(has_violation(validate(g, catalog()), ViolationKind::kBadPrompt));
    g.invocations[0].prompt = std::string(129, 'x');
    CHECK(has_violation(validate(g, catalog()), ViolationKind::kBadPrompt));
  }
  SUBCASE("outputs must list exactly the saves") {
    auto g = single("Hi", {GraphNode::capture(0, 0, "logits"), GraphNode::save(1, 0, "o")}, {0});
    CHECK(has_violation(validate(g, catalog()), ViolationKind::kBadOutputs));
  }
  SUBCASE("patch shape and dtype") {
    auto g = single("Hi",
                    {GraphNode::capture(0, 0, "logits"), GraphNode::patch(1, 0, "logits", 2),
                     GraphNode::reduction(2, ReduceKind::kArgmax, 0, 1), GraphNode::save(3, 0, "o")},
                    {3});
    const auto vs = validate(g, catalog());
    CHECK((has_violation(vs, ViolationKind::kDType) || has_violation(vs, ViolationKind::kShape)));
  }
  SUBCASE("bad parameters") {
    auto g = single("Hi",
                    {GraphNode::capture(0, 0, "embed"), GraphNode::reduction(1, ReduceKind::kTopk, 0, 1, 65),
                     GraphNode::save(2, 1, "o")},
                    {2});
    CHECK(has_violation(validate(g, catalog()), ViolationKind::kBadParameter));
    g.nodes[1] = GraphNode::slice(1, 0, 0, 1, 5);  // 2 rows only
    CHECK(has_violation(validate(g, catalog()), ViolationKind::kShape));
  }
}

TEST_CASE("topo_order: diamond and invocation order") {
  const ModelInstance& m = test::toy_model();
  auto g = single("Hi",
                  {GraphNode::constant(0, Tensor::from_f32({2}, {1, 2})), GraphNode::scale(2, 2.0f, 0),
                   GraphNode::scale(1, 3.0f, 0), GraphNode::binary(3, BinopKind::kAdd, 1, 2),
                   GraphNode::save(4, 3, "o")},
                  {4});
  Schedule s = topo_order(g, m);
  CHECK_EQ(s.tail, std::vector<int>{0, 1, 2, 3, 4});

  InterventionGraph two;
  two.model_id = "toy";
  two.invocations = {{0, "ab"}, {1, "ab"}};
  two.nodes = {GraphNode::capture(0, 1, "embed"), GraphNode::capture(1, 0, "logits"),
               GraphNode::patch(2, 1, "blocks.0.resid_pre", 3), GraphNode::capture(3, 0, "blocks.0.resid_pre"),
               GraphNode::save(4, 0, "a"), GraphNode::save(5, 1, "b")};
  two.outputs = {4, 5};
  s = topo_order(two, m);
  REQUIRE_EQ(s.invocations.size(), 2u);
  CHECK_EQ(s.invocations[0].invocation_id, 0);
  CHECK_EQ(s.invocations[1].invocation_id, 1);
  for (const auto& a : s.invocations[0].actions) CHECK((a.node_id == 1 || a.node_id == 3));

  auto cyclic = single("Hi", {GraphNode::scale(0, 1.0f, 1), GraphNode::scale(1, 1.0f, 0), GraphNode::save(2, 0, "o")},
                       {2});
  CHECK_CODE(topo_order(cyclic, m), ErrorCode::kCycle);
}

TEST_CASE("execute: capture passthrough equals engine forward") {
  const ModelInstance& m = test::toy_model();
  const auto g = single("Hi", {GraphNode::capture(0, 0, "logits"), GraphNode::save(1, 0, "logits")}, {1});
  const ResultBundle b = execute(g, m);
  CHECK(bitwise_equal(b.outputs.at("logits"), run_forward(m, tokenize("Hi", 128), {})));
  CHECK_EQ(b.stats.bytes_produced, estimate_payload(g, m.config()));
}

TEST_CASE("execute: full-patch identity across invocations") {
  const ModelInstance& m = test::toy_model();
  InterventionGraph g;
  g.model_id = "toy";
  g.invocations = {{0, "same prompt"}, {1, "same prompt"}};
  int id = 0;
  for (const auto& hp : m.hook_points()) {
    g.nodes.push_back(GraphNode::capture(id, 0, hp.path));
    g.nodes.push_back(GraphNode::patch(id + 1, 1, hp.path, id));
    id += 2;
  }
  g.nodes.push_back(GraphNode::capture(id, 0, "logits"));
  g.nodes.push_back(GraphNode::capture(id + 1, 1, "logits"));
  g.nodes.push_back(GraphNode::save(id + 2, id, "l0"));
  g.nodes.push_back(GraphNode::save(id + 3, id + 1, "l1"));
  g.outputs = {id + 2, id + 3};
  REQUIRE(validate(g, catalog()).empty());
  const ResultBundle b = execute(g, m);
  CHECK(bitwise_equal(b.outputs.at("l0"), b.outputs.at("l1")));
}

TEST_CASE("execute: patches are applied before captures at the same point") {
  const ModelInstance& m = test::toy_model();
  auto g = single("Hi",
                  {GraphNode::constant(0, Tensor::zeros({2, 64})), GraphNode::patch(1, 0, "blocks.1.mlp_out", 0),
                   GraphNode::capture(2, 0, "blocks.1.mlp_out"), GraphNode::save(3, 2, "seen")},
                  {3});
  const ResultBundle b = execute(g, m);
  CHECK(bitwise_equal(b.outputs.at("seen"), Tensor::zeros({2, 64})));
}

TEST_CASE("execute: compute nodes") {
  const ModelInstance& m = test::toy_model();
  auto g = single("abc",
                  {GraphNode::capture(0, 0, "blocks.3.resid_post"), GraphNode::capture(1, 0, "blocks.0.resid_pre"),
                   GraphNode::binary(2, BinopKind::kSub, 0, 1), GraphNode::scale(3, 0.5f, 2),
                   GraphNode::slice(4, 3, 0, 2, 3), GraphNode::reduction(5, ReduceKind::kSum, 4, std::nullopt),
                   GraphNode::unembedding(6, 0), GraphNode::save(7, 5, "s"), GraphNode::save(8, 6, "lens"),
                   GraphNode::capture(9, 0, "logits"), GraphNode::save(10, 9, "logits")},
                  {7, 8, 10});
  const ResultBundle b = execute(g, m);
  const ForwardRecord rec = forward(m, tokenize("abc", 128), {"blocks.3.resid_post", "blocks.0.resid_pre"});
  double expect = 0;
  for (std::int64_t c = 0; c < 64; ++c) {
    expect += static_cast<double>((rec.captures.at("blocks.3.resid_post").at(2, c) - rec.captures.at("blocks.0.resid_pre").at(2, c)) * 0.5f);
  }
  CHECK_EQ(b.outputs.at("s").shape, Shape{});
  CHECK(b.outputs.at("s").f32[0] == doctest::Approx(expect).epsilon(1e-5));
  CHECK(bitwise_equal(b.outputs.at("lens"), b.outputs.at("logits")));
}

TEST_CASE("execute: division by zero yields NaN and is flagged") {
  const ModelInstance& m = test::toy_model();
  auto g = single("Hi",
                  {GraphNode::constant(0, Tensor::from_f32({2}, {0.0f, 1.0f})), GraphNode::constant(1, Tensor::from_f32({2}, {0.0f, 0.0f})),
                   GraphNode::binary(2, BinopKind::kDiv, 0, 1), GraphNode::save(3, 2, "q")},
                  {3});
  const ResultBundle b = execute(g, m);
  CHECK(std::isnan(b.outputs.at("q").f32[0]));
  CHECK(std::isinf(b.outputs.at("q").f32[1]));
  CHECK_EQ(b.stats.nan_outputs, std::vector<std::string>{"q"});
}

TEST_CASE("execute: invalid graph and cancellation") {
  const ModelInstance& m = test::toy_model();
  CHECK_CODE(execute(single("Hi", {GraphNode::capture(0, 0, "logits")}, {}), m), ErrorCode::kValidation);
  std::stop_source stop;
  stop.request_stop();
  const auto g = single("Hi", {GraphNode::capture(0, 0, "logits"), GraphNode::save(1, 0, "o")}, {1});
  CHECK_CODE(execute(g, m, stop.get_token()), ErrorCode::kTimeout);
}

TEST_CASE("execute is deterministic and node order does not matter") {
  const ModelInstance& m = test::toy_model();
  gen::Rng rng(5);
  for (int trial = 0; trial < 10; ++trial) {
    InterventionGraph g = gen::random_capture_graph(rng, m);
    const ResultBundle a = execute(g, m);
    std::shuffle(g.nodes.begin(), g.nodes.end(), rng);
    const ResultBundle b = execute(g, m);
    REQUIRE_EQ(a.outputs.size(), b.outputs.size());
    for (const auto& [name, t] : a.outputs) CHECK(bitwise_equal(t, b.outputs.at(name)));
  }
}

TEST_CASE("random capture-only graphs equal direct engine captures") {
  const ModelInstance& m = test::toy_model();
  gen::Rng rng(17);
  for (int trial = 0; trial < 25; ++trial) {
    const InterventionGraph g = gen::random_capture_graph(rng, m);
    const ResultBundle b = execute(g, m);
    for (const auto& inv : g.invocations) {
      std::set<std::string> points;
      for (const auto& n : g.nodes) {
        if (n.op == OpKind::kCapture && n.invocation == inv.id) points.insert(n.point);
      }
      const ForwardRecord rec = forward(m, tokenize(inv.prompt, 128), points);
      for (const auto& p : points) {
        CHECK(bitwise_equal(b.outputs.at("inv" + std::to_string(inv.id) + "/" + p), rec.captures.at(p)));
      }
    }
  }
}

TEST_CASE("estimate_payload") {
  const ModelConfig c;
  const auto logits = single("Hi", {GraphNode::capture(0, 0, "logits"), GraphNode::save(1, 0, "o")}, {1});
  CHECK_EQ(estimate_payload(logits, c), 2u * 256u * 4u + tensor_wire_header_bytes(2));

  const auto scalar = single("Hi",
                             {GraphNode::capture(0, 0, "logits"), GraphNode::reduction(1, ReduceKind::kMean, 0, std::nullopt),
                              GraphNode::save(2, 1, "m")},
                             {2});
  CHECK_EQ(estimate_payload(scalar, c), 4u + tensor_wire_header_bytes(0));

  // Shape table for a 2-token prompt: 22 points of [2,64] and logits [2,256].
  std::vector<std::string> points;
  for (const auto& hp : enumerate_hook_points(c)) points.push_back(hp.path);
  std::uint64_t expect = 0;
  for (const auto& p : points) expect += (p == "logits" ? 2 * 256 : 2 * 64) * 4 + tensor_wire_header_bytes(2);
  const auto all = extract_activations(c, "Hi", points);
  CHECK_EQ(estimate_payload(all, c), expect);
  CHECK_EQ(execute(all, test::toy_model()).stats.bytes_produced, expect);

  const auto topk = top_k_neurons(c, "Hi", "embed", 5);
  CHECK_EQ(estimate_payload(topk, c), 5u * 4u + 5u * 8u + 2 * tensor_wire_header_bytes(1));
}

TEST_CASE("output_types names topk pairs") {
  const auto g = top_k_neurons(ModelConfig{}, "Hi", "embed", 3);
  const auto types = output_types(g, ModelConfig{});
  REQUIRE_EQ(types.size(), 2u);
  CHECK_EQ(types[0].first, "topk.values");
  CHECK_EQ(types[1].first, "topk.indices");
  CHECK_EQ(types[1].second.dtype, DType::kI64);
}

TEST_CASE("kernels: broadcasting") {
  CHECK_EQ(kernels::broadcast_shape({2, 64}, {64}), Shape{2, 64});
  CHECK_EQ(kernels::broadcast_shape({2, 1}, {1, 3}), Shape{2, 3});
  CHECK_EQ(kernels::broadcast_shape({}, {4, 2}), Shape{4, 2});
  CHECK_CODE(kernels::broadcast_shape({2, 256}, {2, 64}), ErrorCode::kRuntimeShape);

  const Tensor a = Tensor::from_f32({2, 3}, {1, 2, 3, 4, 5, 6});
  const Tensor b = Tensor::from_f32({3}, {10, 20, 30});
  CHECK_EQ(kernels::binary(BinopKind::kAdd, a, b).f32, std::vector<float>{11, 22, 33, 14, 25, 36});
  const Tensor col = Tensor::from_f32({2, 1}, {2, 3});
  CHECK_EQ(kernels::binary(BinopKind::kMul, a, col).f32, std::vector<float>{2, 4, 6, 12, 15, 18});
}

TEST_CASE("kernels: slice and reductions") {
  const Tensor a = Tensor::from_f32({2, 3}, {1, 5, 3, 4, -2, 6});
  CHECK_EQ(kernels::slice(a, 1, 1, 3).f32, std::vector<float>{5, 3, -2, 6});
  CHECK_EQ(kernels::slice(a, 0, 1, 2).f32, std::vector<float>{4, -2, 6});
  CHECK_CODE(kernels::slice(a, 1, 2, 2), ErrorCode::kRuntimeShape);

  CHECK_EQ(kernels::reduce(ReduceKind::kMean, a, 0, 0).first.f32, std::vector<float>{2.5f, 1.5f, 4.5f});
  CHECK_EQ(kernels::reduce(ReduceKind::kSum, a, std::nullopt, 0).first.f32, std::vector<float>{17});
  CHECK_EQ(kernels::reduce(ReduceKind::kMax, a, 1, 0).first.f32, std::vector<float>{5, 6});
  CHECK_EQ(kernels::reduce(ReduceKind::kArgmax, a, 1, 0).first.i64, std::vector<std::int64_t>{1, 2});

  const auto sm = kernels::reduce(ReduceKind::kSoftmax, a, 1, 0).first;
  for (int r = 0; r < 2; ++r) {
    double z = 0;
    for (int c = 0; c < 3; ++c) z += sm.at(r, c);
    CHECK(z == doctest::Approx(1.0).epsilon(1e-6));
  }

  // Ties keep the lower index; NaN ranks first.
  const Tensor ties = Tensor::from_f32({5}, {1, 3, 3, std::numeric_limits<float>::quiet_NaN(), 0});
  const auto [vals, idx] = kernels::reduce(ReduceKind::kTopk, ties, 0, 3);
  CHECK_EQ(idx->i64, std::vector<std::int64_t>{3, 1, 2});
  CHECK(std::isnan(vals.f32[0]));
  CHECK_EQ(kernels::reduce(ReduceKind::kArgmax, ties, 0, 0).first.i64[0], 3);
  CHECK_CODE(kernels::reduce(ReduceKind::kTopk, ties, 0, 6), ErrorCode::kRuntimeShape);
}
