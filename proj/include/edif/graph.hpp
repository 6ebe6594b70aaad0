#pragma once

// Deferred-execution intervention graphs.
//
// A graph names a model, lists one or more invocations (one prompt each,
// run in listed order) and a set of nodes:
//
//   CAPTURE  read the activation at a hook point of an invocation
//   PATCH    overwrite the activation at a hook point with another node's value
//   CONST    tensor literal
//   BINOP    add/sub/mul/div with trailing-dimension broadcasting
//   SCALE    multiply by a scalar
//   SLICE    [start, end) along one axis
//   REDUCE   mean/sum/max/argmax/softmax/topk along an axis, or all axes
//   UNEMBED  the model's final LayerNorm (optional) plus tied unembedding
//   SAVE     name a value as a job output
//
// At any hook point patches are applied before captures, so a capture sees
// what the downstream network consumed. A PATCH may only depend on
// activations that already exist when its hook point is reached.

#include <cstdint>
#include <map>
#include <optional>
#include <stop_token>
#include <string>
#include <string_view>
#include <vector>

#include "edif/model.hpp"
#include "edif/tensor.hpp"

namespace edif {

inline constexpr std::size_t kMaxInvocations = 64;
inline constexpr std::size_t kMaxNodes = 4096;
inline constexpr std::size_t kMaxConstBytes = 1u << 20;

enum class OpKind { kCapture, kPatch, kConst, kBinop, kScale, kSlice, kReduce, kUnembed, kSave };
enum class BinopKind { kAdd, kSub, kMul, kDiv };
enum class ReduceKind { kMean, kSum, kMax, kArgmax, kSoftmax, kTopk };

std::string_view to_string(OpKind op);
std::string_view to_string(BinopKind kind);
std::string_view to_string(ReduceKind kind);
OpKind op_kind_from_string(std::string_view name);
BinopKind binop_kind_from_string(std::string_view name);
ReduceKind reduce_kind_from_string(std::string_view name);

struct Invocation {
  int id = 0;
  std::string prompt;  // raw bytes

  bool operator==(const Invocation&) const = default;
};

// Flat node record; which fields are meaningful depends on `op`.
struct GraphNode {
  int id = 0;
  OpKind op = OpKind::kConst;

  int invocation = 0;     // CAPTURE, PATCH
  std::string point;      // CAPTURE, PATCH
  int source = -1;        // PATCH
  Tensor literal;         // CONST
  BinopKind binop = BinopKind::kAdd;
  int lhs = -1;           // BINOP
  int rhs = -1;           // BINOP
  float scalar = 1.0f;    // SCALE
  int operand = -1;       // SCALE, SLICE, REDUCE, UNEMBED, SAVE
  std::optional<int> axis;  // SLICE (required), REDUCE (absent = all axes)
  std::int64_t start = 0;   // SLICE
  std::int64_t end = 0;     // SLICE
  ReduceKind reduce = ReduceKind::kMean;
  int k = 0;              // REDUCE topk
  bool norm = true;       // UNEMBED
  std::string name;       // SAVE

  static GraphNode capture(int id, int invocation, std::string point);
  static GraphNode patch(int id, int invocation, std::string point, int source);
  static GraphNode constant(int id, Tensor literal);
  static GraphNode binary(int id, BinopKind kind, int lhs, int rhs);
  static GraphNode scale(int id, float scalar, int operand);
  static GraphNode slice(int id, int operand, int axis, std::int64_t start, std::int64_t end);
  static GraphNode reduction(int id, ReduceKind kind, int operand, std::optional<int> axis, int k = 0);
  static GraphNode unembedding(int id, int operand, bool norm = true);
  static GraphNode save(int id, int operand, std::string name);

  // Node ids this node reads.
  std::vector<int> inputs() const;
};

struct InterventionGraph {
  std::string model_id;
  std::vector<Invocation> invocations;
  std::vector<GraphNode> nodes;
  std::vector<int> outputs;  // SAVE node ids
};

using ModelCatalog = std::map<std::string, ModelConfig, std::less<>>;

enum class ViolationKind {
  kUnknownModel,
  kBadInvocation,
  kBadPrompt,
  kDuplicateNode,
  kDanglingReference,
  kCycle,
  kUnknownHookPoint,
  kShape,
  kDType,
  kCausality,
  kMissingSave,
  kDuplicateSave,
  kBadOutputs,
  kBadParameter,
  kLimit,
};

std::string_view to_string(ViolationKind kind);

struct Violation {
  ViolationKind kind;
  int node_id = -1;  // -1 when not tied to a node
  std::string message;
};

std::vector<Violation> validate(const InterventionGraph& graph, const ModelCatalog& catalog);

// Static type of a node's value. topk yields a (values, indices) pair.
struct ValueType {
  DType dtype = DType::kF32;
  Shape shape;
  bool is_pair = false;
  Shape second_shape;  // i64 indices when is_pair
};

// Output names and types a graph's SAVE nodes produce. A SAVE of a topk
// pair produces "<name>.values" (f32) and "<name>.indices" (i64).
// Requires a graph that passed validate().
std::vector<std::pair<std::string, ValueType>> output_types(const InterventionGraph& graph,
                                                            const ModelConfig& config);

enum class HookActionKind { kPatch, kCapture };

struct HookAction {
  int order_index = 0;
  std::string point;
  HookActionKind kind = HookActionKind::kCapture;
  int node_id = 0;
  // Compute nodes (topological order) that must be evaluated before a
  // patch can be applied.
  std::vector<int> prelude;
};

struct InvocationPlan {
  int invocation_id = 0;
  std::vector<HookAction> actions;  // sorted by hook order, patches first
};

struct Schedule {
  std::vector<InvocationPlan> invocations;
  std::vector<int> tail;  // remaining compute nodes after all passes
};

// Deterministic: ties between ready nodes are broken by ascending node id.
// Throws Error(kCycle) if the reference relation is cyclic.
Schedule topo_order(const InterventionGraph& graph, const ModelInstance& model);

struct ExecutionStats {
  double wall_ms = 0.0;
  std::uint64_t bytes_produced = 0;
  std::vector<std::string> nan_outputs;
};

struct ResultBundle {
  std::map<std::string, Tensor> outputs;
  ExecutionStats stats;
};

// Validates against the model, runs every invocation through the engine,
// then evaluates the compute tail. Throws Error(kValidation) listing the
// violations, Error(kRuntimeShape) on a dynamic broadcast failure and
// Error(kTimeout) when `stop` is requested.
ResultBundle execute(const InterventionGraph& graph, const ModelInstance& model,
                     std::stop_token stop = {});

// Serialized byte count of every SAVE output: element bytes plus the
// per-tensor wire header, before compression.
std::uint64_t estimate_payload(const InterventionGraph& graph, const ModelConfig& config);

// Elementwise kernels shared with the interpreter; exposed for tests.
namespace kernels {
Shape broadcast_shape(const Shape& a, const Shape& b);  // throws kRuntimeShape
Tensor binary(BinopKind kind, const Tensor& a, const Tensor& b);
Tensor slice(const Tensor& in, int axis, std::int64_t start, std::int64_t end);
// Returns values, plus indices for topk.
std::pair<Tensor, std::optional<Tensor>> reduce(ReduceKind kind, const Tensor& in,
                                                std::optional<int> axis, int k);
}  // namespace kernels

}  // namespace edif
