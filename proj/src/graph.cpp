#include "edif/graph.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <functional>
#include <limits>
#include <queue>
#include <set>
#include <unordered_map>

#include "edif/error.hpp"
#include "edif/wire.hpp"

namespace edif {

namespace {

template <typename Enum, std::size_t N>
Enum enum_from(std::string_view name, const std::array<std::string_view, N>& names,
               std::string_view what) {
  for (std::size_t i = 0; i < N; ++i) {
    if (names[i] == name) return static_cast<Enum>(i);
  }
  throw Error(ErrorCode::kMalformed, "unknown " + std::string(what) + " '" + std::string(name) + "'");
}

constexpr std::array<std::string_view, 9> kOpNames{"CAPTURE", "PATCH",   "CONST",  "BINOP", "SCALE",
                                                   "SLICE",   "REDUCE",  "UNEMBED", "SAVE"};
constexpr std::array<std::string_view, 4> kBinopNames{"add", "sub", "mul", "div"};
constexpr std::array<std::string_view, 6> kReduceNames{"mean",   "sum",     "max",
                                                       "argmax", "softmax", "topk"};
constexpr std::array<std::string_view, 15> kViolationNames{
    "UNKNOWN_MODEL", "BAD_INVOCATION", "BAD_PROMPT", "DUPLICATE_NODE", "DANGLING_REFERENCE",
    "CYCLE",         "UNKNOWN_HOOK_POINT", "SHAPE",  "DTYPE",          "CAUSALITY",
    "MISSING_SAVE",  "DUPLICATE_SAVE", "BAD_OUTPUTS", "BAD_PARAMETER", "LIMIT"};

bool has_value(OpKind op) { return op != OpKind::kPatch && op != OpKind::kSave; }
bool is_compute(OpKind op) { return op != OpKind::kCapture && op != OpKind::kPatch; }

std::string node_label(const GraphNode& n) {
  return std::string(to_string(n.op)) + " #" + std::to_string(n.id);
}

Shape reduced_shape(const Shape& in, ReduceKind kind, std::optional<int> axis, int k) {
  if (kind == ReduceKind::kSoftmax) return in;
  if (!axis) return kind == ReduceKind::kTopk ? Shape{k} : Shape{};
  Shape out = in;
  if (kind == ReduceKind::kTopk) {
    out[static_cast<std::size_t>(*axis)] = k;
  } else {
    out.erase(out.begin() + *axis);
  }
  return out;
}

// Graph structure shared by validation and scheduling.
struct Index {
  std::unordered_map<int, std::size_t> position;
  bool duplicates = false;

  explicit Index(const InterventionGraph& g) {
    for (std::size_t i = 0; i < g.nodes.size(); ++i) {
      if (!position.emplace(g.nodes[i].id, i).second) duplicates = true;
    }
  }

  const GraphNode* find(const InterventionGraph& g, int id) const {
    auto it = position.find(id);
    return it == position.end() ? nullptr : &g.nodes[it->second];
  }
};

// Kahn's algorithm over resolvable references, lowest id first among
// ready nodes. Returns the order and whether every node was emitted.
std::pair<std::vector<int>, bool> kahn(const InterventionGraph& g, const Index& index) {
  std::map<int, int> pending;  // id -> unresolved input count
  std::map<int, std::vector<int>> consumers;
  for (const auto& n : g.nodes) {
    int count = 0;
    for (int in : n.inputs()) {
      if (!index.find(g, in)) continue;
      ++count;
      consumers[in].push_back(n.id);
    }
    pending[n.id] = count;
  }
  std::priority_queue<int, std::vector<int>, std::greater<>> ready;
  for (auto& [id, count] : pending) {
    if (count == 0) ready.push(id);
  }
  std::vector<int> order;
  while (!ready.empty()) {
    const int id = ready.top();
    ready.pop();
    order.push_back(id);
    for (int c : consumers[id]) {
      if (--pending[c] == 0) ready.push(c);
    }
  }
  return {order, order.size() == pending.size()};
}

struct Value {
  Tensor main;
  std::optional<Tensor> indices;
};

}  // namespace

std::string_view to_string(OpKind op) { return kOpNames[static_cast<std::size_t>(op)]; }
std::string_view to_string(BinopKind kind) { return kBinopNames[static_cast<std::size_t>(kind)]; }
std::string_view to_string(ReduceKind kind) { return kReduceNames[static_cast<std::size_t>(kind)]; }
std::string_view to_string(ViolationKind kind) {
  return kViolationNames[static_cast<std::size_t>(kind)];
}
OpKind op_kind_from_string(std::string_view name) { return enum_from<OpKind>(name, kOpNames, "op"); }
BinopKind binop_kind_from_string(std::string_view name) {
  return enum_from<BinopKind>(name, kBinopNames, "binop kind");
}
ReduceKind reduce_kind_from_string(std::string_view name) {
  return enum_from<ReduceKind>(name, kReduceNames, "reduce kind");
}

GraphNode GraphNode::capture(int id, int invocation, std::string point) {
  GraphNode n;
  n.id = id;
  n.op = OpKind::kCapture;
  n.invocation = invocation;
  n.point = std::move(point);
  return n;
}

GraphNode GraphNode::patch(int id, int invocation, std::string point, int source) {
  GraphNode n = capture(id, invocation, std::move(point));
  n.op = OpKind::kPatch;
  n.source = source;
  return n;
}

GraphNode GraphNode::constant(int id, Tensor literal) {
  GraphNode n;
  n.id = id;
  n.op = OpKind::kConst;
  n.literal = std::move(literal);
  return n;
}

GraphNode GraphNode::binary(int id, BinopKind kind, int lhs, int rhs) {
  GraphNode n;
  n.id = id;
  n.op = OpKind::kBinop;
  n.binop = kind;
  n.lhs = lhs;
  n.rhs = rhs;
  return n;
}

GraphNode GraphNode::scale(int id, float scalar, int operand) {
  GraphNode n;
  n.id = id;
  n.op = OpKind::kScale;
  n.scalar = scalar;
  n.operand = operand;
  return n;
}

GraphNode GraphNode::slice(int id, int operand, int axis, std::int64_t start, std::int64_t end) {
  GraphNode n;
  n.id = id;
  n.op = OpKind::kSlice;
  n.operand = operand;
  n.axis = axis;
  n.start = start;
  n.end = end;
  return n;
}

GraphNode GraphNode::reduction(int id, ReduceKind kind, int operand, std::optional<int> axis, int k) {
  GraphNode n;
  n.id = id;
  n.op = OpKind::kReduce;
  n.reduce = kind;
  n.operand = operand;
  n.axis = axis;
  n.k = k;
  return n;
}

GraphNode GraphNode::unembedding(int id, int operand, bool norm) {
  GraphNode n;
  n.id = id;
  n.op = OpKind::kUnembed;
  n.operand = operand;
  n.norm = norm;
  return n;
}

GraphNode GraphNode::save(int id, int operand, std::string name) {
  GraphNode n;
  n.id = id;
  n.op = OpKind::kSave;
  n.operand = operand;
  n.name = std::move(name);
  return n;
}

std::vector<int> GraphNode::inputs() const {
  switch (op) {
    case OpKind::kCapture:
    case OpKind::kConst:
      return {};
    case OpKind::kPatch:
      return {source};
    case OpKind::kBinop:
      return {lhs, rhs};
    default:
      return {operand};
  }
}

// ---------------------------------------------------------------------------
// Validation
// ---------------------------------------------------------------------------

namespace {

class Validator {
 public:
  Validator(const InterventionGraph& g, const ModelConfig* config)
      : g_(g), config_(config), index_(g) {
    if (config_) hooks_ = enumerate_hook_points(*config_);
  }

  std::vector<Violation> run() {
    check_limits();
    check_invocations();
    check_ids_and_references();
    check_saves();
    if (!structural_ok_) return std::move(out_);
    auto [order, acyclic] = kahn(g_, index_);
    if (!acyclic) {
      std::set<int> emitted(order.begin(), order.end());
      for (const auto& n : g_.nodes) {
        if (!emitted.contains(n.id)) add(ViolationKind::kCycle, n.id, node_label(n) + " is on a reference cycle");
      }
      return std::move(out_);
    }
    for (int id : order) infer(*index_.find(g_, id));
    check_causality();
    return std::move(out_);
  }

  const std::map<int, ValueType>& types() const { return types_; }

 private:
  void add(ViolationKind kind, int node, std::string message) {
    out_.push_back({kind, node, std::move(message)});
  }

  std::optional<int> hook_order(const std::string& point) const {
    for (const auto& h : hooks_) {
      if (h.path == point) return h.order_index;
    }
    return std::nullopt;
  }

  void check_limits() {
    if (g_.invocations.size() > kMaxInvocations) {
      add(ViolationKind::kLimit, -1, std::to_string(g_.invocations.size()) + " invocations exceeds " +
                                         std::to_string(kMaxInvocations));
    }
    if (g_.nodes.size() > kMaxNodes) {
      add(ViolationKind::kLimit, -1,
          std::to_string(g_.nodes.size()) + " nodes exceeds " + std::to_string(kMaxNodes));
    }
  }

  void check_invocations() {
    for (std::size_t i = 0; i < g_.invocations.size(); ++i) {
      const auto& inv = g_.invocations[i];
      if (inv.id != static_cast<int>(i)) {
        add(ViolationKind::kBadInvocation, -1,
            "invocation at position " + std::to_string(i) + " has id " + std::to_string(inv.id));
      }
      if (inv.prompt.empty()) {
        add(ViolationKind::kBadPrompt, -1, "invocation " + std::to_string(i) + " has an empty prompt");
      } else if (config_ && inv.prompt.size() > static_cast<std::size_t>(config_->max_seq)) {
        add(ViolationKind::kBadPrompt, -1,
            "invocation " + std::to_string(i) + " prompt of " + std::to_string(inv.prompt.size()) +
                " bytes exceeds max_seq " + std::to_string(config_->max_seq));
      }
    }
  }

  void check_ids_and_references() {
    std::set<int> seen;
    for (const auto& n : g_.nodes) {
      if (!seen.insert(n.id).second) {
        add(ViolationKind::kDuplicateNode, n.id, "node id " + std::to_string(n.id) + " declared twice");
        structural_ok_ = false;
      }
    }
    for (const auto& n : g_.nodes) {
      for (int in : n.inputs()) {
        const GraphNode* target = index_.find(g_, in);
        if (!target) {
          add(ViolationKind::kDanglingReference, n.id,
              node_label(n) + " references undeclared node " + std::to_string(in));
          structural_ok_ = false;
        } else if (!has_value(target->op)) {
          add(ViolationKind::kDType, n.id,
              node_label(n) + " reads " + node_label(*target) + ", which produces no value");
          structural_ok_ = false;
        }
      }
    }
  }

  void check_saves() {
    std::set<int> save_ids;
    std::set<std::string> names;
    for (const auto& n : g_.nodes) {
      if (n.op != OpKind::kSave) continue;
      save_ids.insert(n.id);
      if (n.name.empty()) add(ViolationKind::kBadParameter, n.id, "SAVE name is empty");
      if (!names.insert(n.name).second) {
        add(ViolationKind::kDuplicateSave, n.id, "SAVE name '" + n.name + "' is used twice");
      }
    }
    if (save_ids.empty()) add(ViolationKind::kMissingSave, -1, "graph has no SAVE node");
    std::set<int> listed;
    for (int id : g_.outputs) {
      if (!save_ids.contains(id)) {
        add(ViolationKind::kBadOutputs, id, "output " + std::to_string(id) + " is not a SAVE node");
      }
      if (!listed.insert(id).second) {
        add(ViolationKind::kBadOutputs, id, "output " + std::to_string(id) + " listed twice");
      }
    }
    for (int id : save_ids) {
      if (!listed.contains(id)) {
        add(ViolationKind::kBadOutputs, id, "SAVE #" + std::to_string(id) + " missing from outputs");
      }
    }
  }

  const ValueType* type_of(int id) const {
    auto it = types_.find(id);
    return it == types_.end() ? nullptr : &it->second;
  }

  // Operand must be a single f32 tensor.
  const ValueType* f32_operand(const GraphNode& n, int id) {
    const ValueType* t = type_of(id);
    if (!t) return nullptr;  // already reported upstream
    if (t->is_pair || t->dtype != DType::kF32) {
      add(ViolationKind::kDType, n.id, node_label(n) + " needs a single f32 operand");
      return nullptr;
    }
    return t;
  }

  std::optional<Shape> hook_shape(const GraphNode& n) {
    if (n.invocation < 0 || n.invocation >= static_cast<int>(g_.invocations.size())) {
      add(ViolationKind::kBadInvocation, n.id,
          node_label(n) + " names invocation " + std::to_string(n.invocation));
      return std::nullopt;
    }
    if (!config_) return std::nullopt;
    if (!hook_order(n.point)) {
      add(ViolationKind::kUnknownHookPoint, n.id, node_label(n) + " names unknown hook point '" + n.point + "'");
      return std::nullopt;
    }
    const auto seq = static_cast<std::int64_t>(g_.invocations[static_cast<std::size_t>(n.invocation)].prompt.size());
    return Shape{seq, n.point == "logits" ? config_->vocab_size : config_->d_model};
  }

  void infer(const GraphNode& n) {
    switch (n.op) {
      case OpKind::kCapture: {
        if (auto shape = hook_shape(n)) types_[n.id] = {DType::kF32, *shape};
        break;
      }
      case OpKind::kPatch: {
        auto shape = hook_shape(n);
        if (!patched_.insert({n.invocation, n.point}).second) {
          add(ViolationKind::kBadParameter, n.id,
              "hook point '" + n.point + "' of invocation " + std::to_string(n.invocation) +
                  " is patched more than once");
        }
        const ValueType* src = f32_operand(n, n.source);
        if (shape && src && src->shape != *shape) {
          add(ViolationKind::kShape, n.id,
              "patch source " + shape_string(src->shape) + " does not match " + n.point + " " +
                  shape_string(*shape));
        }
        break;
      }
      case OpKind::kConst: {
        const Tensor& t = n.literal;
        const std::size_t have = t.dtype == DType::kF32 ? t.f32.size() : t.i64.size();
        if (std::any_of(t.shape.begin(), t.shape.end(), [](auto d) { return d <= 0; }) ||
            have != static_cast<std::size_t>(element_count(t.shape))) {
          add(ViolationKind::kShape, n.id, node_label(n) + " literal data does not match its shape");
          break;
        }
        if (t.byte_size() > kMaxConstBytes) {
          add(ViolationKind::kLimit, n.id, node_label(n) + " literal exceeds 1 MiB");
        }
        types_[n.id] = {t.dtype, t.shape};
        break;
      }
      case OpKind::kBinop: {
        const ValueType* a = f32_operand(n, n.lhs);
        const ValueType* b = f32_operand(n, n.rhs);
        if (!a || !b) break;
        try {
          types_[n.id] = {DType::kF32, kernels::broadcast_shape(a->shape, b->shape)};
        } catch (const Error&) {
          add(ViolationKind::kShape, n.id,
              node_label(n) + " cannot broadcast " + shape_string(a->shape) + " with " +
                  shape_string(b->shape));
        }
        break;
      }
      case OpKind::kScale: {
        const ValueType* a = f32_operand(n, n.operand);
        if (!std::isfinite(n.scalar)) {
          add(ViolationKind::kBadParameter, n.id, node_label(n) + " scalar must be finite");
        }
        if (a) types_[n.id] = *a;
        break;
      }
      case OpKind::kSlice: {
        const ValueType* a = type_of(n.operand);
        if (!a) break;
        if (a->is_pair) {
          add(ViolationKind::kDType, n.id, node_label(n) + " cannot slice a topk pair");
          break;
        }
        if (!n.axis || *n.axis < 0 || *n.axis >= static_cast<int>(a->shape.size())) {
          add(ViolationKind::kBadParameter, n.id, node_label(n) + " axis out of range for " + shape_string(a->shape));
          break;
        }
        const std::int64_t dim = a->shape[static_cast<std::size_t>(*n.axis)];
        if (n.start < 0 || n.start >= n.end || n.end > dim) {
          add(ViolationKind::kShape, n.id,
              node_label(n) + " range [" + std::to_string(n.start) + "," + std::to_string(n.end) +
                  ") invalid for extent " + std::to_string(dim));
          break;
        }
        ValueType out = *a;
        out.shape[static_cast<std::size_t>(*n.axis)] = n.end - n.start;
        types_[n.id] = out;
        break;
      }
      case OpKind::kReduce: {
        const ValueType* a = f32_operand(n, n.operand);
        if (!a) break;
        if (n.axis && (*n.axis < 0 || *n.axis >= static_cast<int>(a->shape.size()))) {
          add(ViolationKind::kBadParameter, n.id, node_label(n) + " axis out of range for " + shape_string(a->shape));
          break;
        }
        if (n.reduce == ReduceKind::kTopk) {
          const std::int64_t extent =
              n.axis ? a->shape[static_cast<std::size_t>(*n.axis)] : element_count(a->shape);
          if (n.k < 1 || n.k > extent) {
            add(ViolationKind::kBadParameter, n.id,
                node_label(n) + " k=" + std::to_string(n.k) + " outside [1," + std::to_string(extent) + "]");
            break;
          }
        }
        ValueType out;
        out.shape = reduced_shape(a->shape, n.reduce, n.axis, n.k);
        out.dtype = n.reduce == ReduceKind::kArgmax ? DType::kI64 : DType::kF32;
        if (n.reduce == ReduceKind::kTopk) {
          out.is_pair = true;
          out.second_shape = out.shape;
        }
        types_[n.id] = out;
        break;
      }
      case OpKind::kUnembed: {
        const ValueType* a = f32_operand(n, n.operand);
        if (!a || !config_) break;
        if (a->shape.size() != 2 || a->shape[1] != config_->d_model) {
          add(ViolationKind::kShape, n.id,
              node_label(n) + " needs [seq," + std::to_string(config_->d_model) + "], got " +
                  shape_string(a->shape));
          break;
        }
        types_[n.id] = {DType::kF32, {a->shape[0], config_->vocab_size}};
        break;
      }
      case OpKind::kSave: {
        if (const ValueType* a = type_of(n.operand)) {
          types_[n.id] = *a;
          if (a->is_pair) {
            for (const char* suffix : {".values", ".indices"}) {
              const std::string expanded = n.name + suffix;
              for (const auto& other : g_.nodes) {
                if (other.op == OpKind::kSave && other.name == expanded) {
                  add(ViolationKind::kDuplicateSave, n.id, "SAVE name '" + expanded + "' collides with a topk output");
                }
              }
            }
          }
        }
        break;
      }
    }
  }

  // Every CAPTURE a PATCH transitively reads must already exist when the
  // patch fires.
  void check_causality() {
    for (const auto& n : g_.nodes) {
      if (n.op != OpKind::kPatch || !config_) continue;
      const auto patch_order = hook_order(n.point);
      if (!patch_order) continue;
      std::set<int> visited;
      std::vector<int> stack{n.source};
      while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        if (!visited.insert(id).second) continue;
        const GraphNode* dep = index_.find(g_, id);
        if (!dep) continue;
        if (dep->op == OpKind::kCapture) {
          const auto cap_order = hook_order(dep->point);
          if (!cap_order) continue;
          const bool earlier = dep->invocation < n.invocation ||
                               (dep->invocation == n.invocation && *cap_order < *patch_order);
          if (!earlier) {
            add(ViolationKind::kCausality, n.id,
                node_label(n) + " at invocation " + std::to_string(n.invocation) + " '" + n.point +
                    "' depends on CAPTURE #" + std::to_string(dep->id) + " at invocation " +
                    std::to_string(dep->invocation) + " '" + dep->point + "', which is not earlier");
          }
        }
        for (int in : dep->inputs()) stack.push_back(in);
      }
    }
  }

  const InterventionGraph& g_;
  const ModelConfig* config_;
  Index index_;
  std::vector<HookPoint> hooks_;
  std::vector<Violation> out_;
  std::map<int, ValueType> types_;
  std::set<std::pair<int, std::string>> patched_;
  bool structural_ok_ = true;
};

}  // namespace

std::vector<Violation> validate(const InterventionGraph& graph, const ModelCatalog& catalog) {
  const ModelConfig* config = nullptr;
  std::vector<Violation> out;
  if (auto it = catalog.find(graph.model_id); it != catalog.end()) {
    config = &it->second;
  } else {
    out.push_back({ViolationKind::kUnknownModel, -1, "unknown model '" + graph.model_id + "'"});
  }
  auto rest = Validator(graph, config).run();
  out.insert(out.end(), rest.begin(), rest.end());
  return out;
}

std::vector<std::pair<std::string, ValueType>> output_types(const InterventionGraph& graph,
                                                            const ModelConfig& config) {
  Validator v(graph, &config);
  if (auto violations = v.run(); !violations.empty()) {
    throw Error(ErrorCode::kValidation, violations.front().message);
  }
  std::vector<std::pair<std::string, ValueType>> out;
  Index index(graph);
  for (int id : graph.outputs) {
    const GraphNode& save = *index.find(graph, id);
    const ValueType& t = v.types().at(id);
    if (t.is_pair) {
      out.push_back({save.name + ".values", {DType::kF32, t.shape}});
      out.push_back({save.name + ".indices", {DType::kI64, t.second_shape}});
    } else {
      out.push_back({save.name, t});
    }
  }
  return out;
}

std::uint64_t estimate_payload(const InterventionGraph& graph, const ModelConfig& config) {
  std::uint64_t total = 0;
  for (const auto& [name, type] : output_types(graph, config)) {
    total += static_cast<std::uint64_t>(element_count(type.shape)) * element_size(type.dtype) +
             tensor_wire_header_bytes(type.shape.size());
  }
  return total;
}

// ---------------------------------------------------------------------------
// Scheduling
// ---------------------------------------------------------------------------

Schedule topo_order(const InterventionGraph& graph, const ModelInstance& model) {
  Index index(graph);
  auto [order, acyclic] = kahn(graph, index);
  if (!acyclic) throw Error(ErrorCode::kCycle, "graph references form a cycle");

  std::vector<int> compute_order;
  for (int id : order) {
    if (is_compute(index.find(graph, id)->op)) compute_order.push_back(id);
  }

  Schedule schedule;
  for (const auto& inv : graph.invocations) {
    InvocationPlan plan;
    plan.invocation_id = inv.id;
    for (const auto& n : graph.nodes) {
      if ((n.op != OpKind::kCapture && n.op != OpKind::kPatch) || n.invocation != inv.id) continue;
      auto hook = model.find_hook(n.point);
      if (!hook) throw Error(ErrorCode::kUnknownHookPoint, "no hook point '" + n.point + "'");
      plan.actions.push_back({hook->order_index, n.point,
                              n.op == OpKind::kPatch ? HookActionKind::kPatch : HookActionKind::kCapture,
                              n.id, {}});
    }
    std::sort(plan.actions.begin(), plan.actions.end(), [](const HookAction& a, const HookAction& b) {
      return std::tie(a.order_index, a.kind, a.node_id) < std::tie(b.order_index, b.kind, b.node_id);
    });
    schedule.invocations.push_back(std::move(plan));
  }

  std::set<int> assigned;
  for (auto& plan : schedule.invocations) {
    for (auto& action : plan.actions) {
      if (action.kind != HookActionKind::kPatch) continue;
      std::set<int> closure;
      std::vector<int> stack{index.find(graph, action.node_id)->source};
      while (!stack.empty()) {
        const int id = stack.back();
        stack.pop_back();
        const GraphNode* n = index.find(graph, id);
        if (!n || !closure.insert(id).second) continue;
        for (int in : n->inputs()) stack.push_back(in);
      }
      for (int id : compute_order) {
        if (closure.contains(id) && assigned.insert(id).second) action.prelude.push_back(id);
      }
    }
  }
  for (int id : compute_order) {
    if (!assigned.contains(id)) schedule.tail.push_back(id);
  }
  return schedule;
}

// ---------------------------------------------------------------------------
// Kernels
// ---------------------------------------------------------------------------

namespace kernels {

Shape broadcast_shape(const Shape& a, const Shape& b) {
  const std::size_t rank = std::max(a.size(), b.size());
  Shape out(rank);
  for (std::size_t i = 0; i < rank; ++i) {
    const std::int64_t da = i < a.size() ? a[a.size() - 1 - i] : 1;
    const std::int64_t db = i < b.size() ? b[b.size() - 1 - i] : 1;
    if (da != db && da != 1 && db != 1) {
      throw Error(ErrorCode::kRuntimeShape,
                  "cannot broadcast " + shape_string(a) + " with " + shape_string(b));
    }
    out[rank - 1 - i] = std::max(da, db);
  }
  return out;
}

namespace {

// Strides of `in` viewed at `out` rank, with 0 on broadcast dimensions.
std::vector<std::int64_t> broadcast_strides(const Shape& in, const Shape& out) {
  std::vector<std::int64_t> strides(out.size(), 0);
  std::int64_t stride = 1;
  for (std::size_t i = 0; i < in.size(); ++i) {
    const std::size_t src = in.size() - 1 - i;
    const std::size_t dst = out.size() - 1 - i;
    strides[dst] = in[src] == 1 ? 0 : stride;
    stride *= in[src];
  }
  return strides;
}

float apply(BinopKind kind, float a, float b) {
  switch (kind) {
    case BinopKind::kAdd: return a + b;
    case BinopKind::kSub: return a - b;
    case BinopKind::kMul: return a * b;
    case BinopKind::kDiv: return a / b;
  }
  return 0.0f;
}

struct AxisView {
  std::int64_t outer = 1;
  std::int64_t dim = 1;
  std::int64_t inner = 1;
};

AxisView view_along(const Shape& shape, std::optional<int> axis) {
  AxisView v;
  if (!axis) {
    v.dim = element_count(shape);
    return v;
  }
  for (int i = 0; i < *axis; ++i) v.outer *= shape[static_cast<std::size_t>(i)];
  v.dim = shape[static_cast<std::size_t>(*axis)];
  for (std::size_t i = static_cast<std::size_t>(*axis) + 1; i < shape.size(); ++i) v.inner *= shape[i];
  return v;
}

// NaN ranks above every number, matching numpy's max/argmax.
bool ranks_above(float a, float b) {
  if (std::isnan(a)) return !std::isnan(b);
  if (std::isnan(b)) return false;
  return a > b;
}

}  // namespace

Tensor binary(BinopKind kind, const Tensor& a, const Tensor& b) {
  if (a.dtype != DType::kF32 || b.dtype != DType::kF32) {
    throw Error(ErrorCode::kRuntimeShape, "BINOP operands must be f32");
  }
  const Shape out_shape = broadcast_shape(a.shape, b.shape);
  Tensor out = Tensor::zeros(out_shape);
  const auto sa = broadcast_strides(a.shape, out_shape);
  const auto sb = broadcast_strides(b.shape, out_shape);
  std::vector<std::int64_t> idx(out_shape.size(), 0);
  std::int64_t ia = 0;
  std::int64_t ib = 0;
  for (std::size_t flat = 0; flat < out.f32.size(); ++flat) {
    out.f32[flat] = apply(kind, a.f32[static_cast<std::size_t>(ia)], b.f32[static_cast<std::size_t>(ib)]);
    for (std::size_t d = out_shape.size(); d-- > 0;) {
      ++idx[d];
      ia += sa[d];
      ib += sb[d];
      if (idx[d] < out_shape[d]) break;
      ia -= sa[d] * idx[d];
      ib -= sb[d] * idx[d];
      idx[d] = 0;
    }
  }
  return out;
}

Tensor slice(const Tensor& in, int axis, std::int64_t start, std::int64_t end) {
  if (axis < 0 || axis >= in.rank() || start < 0 || start >= end ||
      end > in.shape[static_cast<std::size_t>(axis)]) {
    throw Error(ErrorCode::kRuntimeShape, "bad slice of " + shape_string(in.shape));
  }
  const AxisView v = view_along(in.shape, axis);
  Shape out_shape = in.shape;
  out_shape[static_cast<std::size_t>(axis)] = end - start;
  Tensor out;
  out.dtype = in.dtype;
  out.shape = out_shape;
  auto copy = [&](const auto& src, auto& dst) {
    dst.reserve(static_cast<std::size_t>(element_count(out_shape)));
    for (std::int64_t o = 0; o < v.outer; ++o) {
      auto first = src.begin() + (o * v.dim + start) * v.inner;
      dst.insert(dst.end(), first, first + (end - start) * v.inner);
    }
  };
  if (in.dtype == DType::kF32) {
    copy(in.f32, out.f32);
  } else {
    copy(in.i64, out.i64);
  }
  return out;
}

std::pair<Tensor, std::optional<Tensor>> reduce(ReduceKind kind, const Tensor& in,
                                                std::optional<int> axis, int k) {
  if (in.dtype != DType::kF32) throw Error(ErrorCode::kRuntimeShape, "REDUCE operand must be f32");
  if (axis && (*axis < 0 || *axis >= in.rank())) {
    throw Error(ErrorCode::kRuntimeShape, "reduce axis out of range for " + shape_string(in.shape));
  }
  const AxisView v = view_along(in.shape, axis);
  const Shape out_shape = reduced_shape(in.shape, kind, axis, k);
  auto at = [&](std::int64_t o, std::int64_t j, std::int64_t i) {
    return in.f32[static_cast<std::size_t>((o * v.dim + j) * v.inner + i)];
  };

  switch (kind) {
    case ReduceKind::kMean:
    case ReduceKind::kSum:
    case ReduceKind::kMax: {
      Tensor out = Tensor::zeros(out_shape);
      for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t i = 0; i < v.inner; ++i) {
          float result;
          if (kind == ReduceKind::kMax) {
            result = at(o, 0, i);
            for (std::int64_t j = 1; j < v.dim; ++j) {
              if (ranks_above(at(o, j, i), result)) result = at(o, j, i);
            }
          } else {
            double acc = 0.0;
            for (std::int64_t j = 0; j < v.dim; ++j) acc += at(o, j, i);
            if (kind == ReduceKind::kMean) acc /= static_cast<double>(v.dim);
            result = static_cast<float>(acc);
          }
          out.f32[static_cast<std::size_t>(o * v.inner + i)] = result;
        }
      }
      return {std::move(out), std::nullopt};
    }
    case ReduceKind::kArgmax: {
      Tensor out = Tensor::from_i64(out_shape, std::vector<std::int64_t>(
                                                   static_cast<std::size_t>(element_count(out_shape))));
      for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t i = 0; i < v.inner; ++i) {
          std::int64_t best = 0;
          for (std::int64_t j = 1; j < v.dim; ++j) {
            if (ranks_above(at(o, j, i), at(o, best, i))) best = j;
          }
          out.i64[static_cast<std::size_t>(o * v.inner + i)] = best;
        }
      }
      return {std::move(out), std::nullopt};
    }
    case ReduceKind::kSoftmax: {
      Tensor out = Tensor::zeros(out_shape);
      for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t i = 0; i < v.inner; ++i) {
          float max_v = -std::numeric_limits<float>::infinity();
          for (std::int64_t j = 0; j < v.dim; ++j) max_v = std::max(max_v, at(o, j, i));
          float denom = 0.0f;
          for (std::int64_t j = 0; j < v.dim; ++j) denom += std::exp(at(o, j, i) - max_v);
          for (std::int64_t j = 0; j < v.dim; ++j) {
            out.f32[static_cast<std::size_t>((o * v.dim + j) * v.inner + i)] =
                std::exp(at(o, j, i) - max_v) / denom;
          }
        }
      }
      return {std::move(out), std::nullopt};
    }
    case ReduceKind::kTopk: {
      if (k < 1 || k > v.dim) throw Error(ErrorCode::kRuntimeShape, "topk k out of range");
      Tensor values = Tensor::zeros(out_shape);
      Tensor indices = Tensor::from_i64(
          out_shape, std::vector<std::int64_t>(static_cast<std::size_t>(element_count(out_shape))));
      std::vector<std::int64_t> order(static_cast<std::size_t>(v.dim));
      for (std::int64_t o = 0; o < v.outer; ++o) {
        for (std::int64_t i = 0; i < v.inner; ++i) {
          for (std::int64_t j = 0; j < v.dim; ++j) order[static_cast<std::size_t>(j)] = j;
          std::partial_sort(order.begin(), order.begin() + k, order.end(),
                            [&](std::int64_t x, std::int64_t y) {
                              const float a = at(o, x, i);
                              const float b = at(o, y, i);
                              if (ranks_above(a, b)) return true;
                              if (ranks_above(b, a)) return false;
                              return x < y;
                            });
          for (int r = 0; r < k; ++r) {
            const auto pos = static_cast<std::size_t>((o * k + r) * v.inner + i);
            values.f32[pos] = at(o, order[static_cast<std::size_t>(r)], i);
            indices.i64[pos] = order[static_cast<std::size_t>(r)];
          }
        }
      }
      return {std::move(values), std::move(indices)};
    }
  }
  throw Error(ErrorCode::kRuntimeShape, "unknown reduction");
}

}  // namespace kernels

// ---------------------------------------------------------------------------
// Interpreter
// ---------------------------------------------------------------------------

namespace {

class Interpreter {
 public:
  Interpreter(const InterventionGraph& g, const ModelInstance& model, std::stop_token stop)
      : g_(g), model_(model), index_(g), stop_(std::move(stop)) {}

  ResultBundle run() {
    const auto started = std::chrono::steady_clock::now();
    const Schedule schedule = topo_order(g_, model_);
    for (const auto& plan : schedule.invocations) {
      const auto& inv = g_.invocations[static_cast<std::size_t>(plan.invocation_id)];
      const Tokens tokens = tokenize(inv.prompt, model_.config().max_seq);
      std::size_t next = 0;
      run_forward(model_, tokens, [&](const HookPoint& point, Tensor& activation) {
        check_stop();
        while (next < plan.actions.size() && plan.actions[next].order_index == point.order_index) {
          const HookAction& action = plan.actions[next++];
          if (action.kind == HookActionKind::kPatch) {
            for (int id : action.prelude) evaluate(id);
            const Value& src = values_.at(node(action.node_id).source);
            if (src.main.shape != activation.shape || src.main.dtype != DType::kF32) {
              throw Error(ErrorCode::kRuntimeShape, "patch for " + point.path + " has shape " +
                                                        shape_string(src.main.shape));
            }
            activation = src.main;
          } else {
            values_[action.node_id] = Value{activation, std::nullopt};
          }
        }
      });
    }
    for (int id : schedule.tail) evaluate(id);

    ResultBundle bundle;
    for (int id : g_.outputs) {
      const GraphNode& save = node(id);
      const Value& v = values_.at(id);
      if (v.indices) {
        bundle.outputs[save.name + ".values"] = v.main;
        bundle.outputs[save.name + ".indices"] = *v.indices;
      } else {
        bundle.outputs[save.name] = v.main;
      }
    }
    for (const auto& [name, t] : bundle.outputs) {
      bundle.stats.bytes_produced += t.byte_size() + tensor_wire_header_bytes(t.shape.size());
      if (t.has_nan()) bundle.stats.nan_outputs.push_back(name);
    }
    bundle.stats.wall_ms =
        std::chrono::duration<double, std::milli>(std::chrono::steady_clock::now() - started).count();
    return bundle;
  }

 private:
  const GraphNode& node(int id) const { return *index_.find(g_, id); }

  void check_stop() const {
    if (stop_.stop_requested()) throw Error(ErrorCode::kTimeout, "execution cancelled");
  }

  const Tensor& single(int id) const { return values_.at(id).main; }

  void evaluate(int id) {
    check_stop();
    const GraphNode& n = node(id);
    switch (n.op) {
      case OpKind::kConst:
        values_[id] = Value{n.literal, std::nullopt};
        break;
      case OpKind::kBinop:
        values_[id] = Value{kernels::binary(n.binop, single(n.lhs), single(n.rhs)), std::nullopt};
        break;
      case OpKind::kScale: {
        Tensor t = single(n.operand);
        for (float& x : t.f32) x *= n.scalar;
        values_[id] = Value{std::move(t), std::nullopt};
        break;
      }
      case OpKind::kSlice:
        values_[id] = Value{kernels::slice(single(n.operand), *n.axis, n.start, n.end), std::nullopt};
        break;
      case OpKind::kReduce: {
        auto [main, indices] = kernels::reduce(n.reduce, single(n.operand), n.axis, n.k);
        values_[id] = Value{std::move(main), std::move(indices)};
        break;
      }
      case OpKind::kUnembed: {
        const Tensor& x = single(n.operand);
        values_[id] = Value{unembed(model_, n.norm ? apply_final_norm(model_, x) : x), std::nullopt};
        break;
      }
      case OpKind::kSave:
        values_[id] = values_.at(n.operand);
        break;
      case OpKind::kCapture:
      case OpKind::kPatch:
        break;
    }
  }

  const InterventionGraph& g_;
  const ModelInstance& model_;
  Index index_;
  std::stop_token stop_;
  std::map<int, Value> values_;
};

}  // namespace

ResultBundle execute(const InterventionGraph& graph, const ModelInstance& model, std::stop_token stop) {
  const ModelCatalog catalog{{model.config().model_id, model.config()}};
  if (auto violations = validate(graph, catalog); !violations.empty()) {
    std::string message;
    for (const auto& v : violations) {
      if (!message.empty()) message += "; ";
      message += std::string(to_string(v.kind)) + ": " + v.message;
    }
    throw Error(ErrorCode::kValidation, message);
  }
  return Interpreter(graph, model, std::move(stop)).run();
}

}  // namespace edif
