#pragma once

// Graph templates for common interpretability workflows, plus the two
// client-side analyses that consume their results (restoration scores and
// linear probes).

#include <cstdint>
#include <functional>
#include <map>
#include <optional>
#include <string>
#include <vector>

#include "edif/error.hpp"
#include "edif/graph.hpp"
#include "edif/model.hpp"

namespace edif {

// Per requested layer: resid_post -> UNEMBED(final norm) -> SAVE "lens.{i}".
// Throws kUnknownLayer. An empty layer list yields a graph without SAVEs.
InterventionGraph logit_lens(const ModelConfig& config, const std::string& prompt, const std::vector<int>& layers);

// Invocation 0 runs the clean prompt, invocation 1 the corrupt prompt with
// `point` patched from the clean run, invocation 2 the unpatched corrupt
// prompt. Saves "clean", "patched" and "corrupt" logits.
// Throws kLengthMismatch, kUnknownHookPoint.
InterventionGraph activation_patching(const ModelConfig& config, const std::string& clean_prompt,
                                      const std::string& corrupt_prompt, const std::string& point);

// One CAPTURE + SAVE per point, saved under the hook path.
InterventionGraph extract_activations(const ModelConfig& config, const std::string& prompt,
                                      const std::vector<std::string>& points);

// Mean over positions, then top-k features. Saves "topk.values" and
// "topk.indices". Throws kBadK, kUnknownHookPoint.
InterventionGraph top_k_neurons(const ModelConfig& config, const std::string& prompt, const std::string& point, int k);

inline constexpr const char* kTracePointKinds[] = {"attn_out", "mlp_out", "resid_post"};

struct TraceCell {
  int layer = 0;
  std::string kind;
  std::optional<double> score;    // unset when undefined or failed
  std::optional<ErrorCode> failure;
  double patched_prob = 0.0;
};

struct CausalTraceReport {
  int target_token = 0;
  double clean_prob = 0.0;
  double corrupt_prob = 0.0;
  bool defined = false;  // |clean - corrupt| >= 1e-9
  std::vector<TraceCell> cells;  // layer-major, kinds in kTracePointKinds order

  // Highest defined score; ties go to the earlier cell.
  std::optional<TraceCell> max_cell() const;
};

inline constexpr double kUndefinedDenominator = 1e-9;

// Runs a graph and returns its outputs; throws Error on job failure.
using GraphRunner = std::function<std::map<std::string, Tensor>(const InterventionGraph&)>;

// Submits one activation_patching graph per (layer, kind) cell
// concurrently. Probabilities are softmax(final-position logits)[target],
// computed in double. Failed cells are marked and skipped.
CausalTraceReport causal_trace(const ModelConfig& config, const std::string& clean_prompt,
                               const std::string& corrupt_prompt, int target_token, const GraphRunner& run);

double restoration_score(double patched, double clean, double corrupt);
double softmax_prob(const Tensor& logits, std::int64_t row, int token);

std::string report_to_json(const CausalTraceReport& report);
// Static SVG heat map of the score grid.
std::string report_to_svg(const CausalTraceReport& report);

// Clean/corrupt prompt pair for the copy task "XYXYXYX": the byte after the
// final X is fixed by the earlier Ys, and the corrupt prompt swaps the
// first Y. Picks the first candidate whose clean and corrupt final-position
// argmax differ on `model`.
struct CopyFixture {
  std::string clean;
  std::string corrupt;
  int target_token = 0;  // clean argmax at the final position
};
CopyFixture copy_task_fixture(const ModelInstance& model);

struct ProbeOptions {
  int steps = 500;
  double learning_rate = 0.1;
};

struct Probe {
  std::vector<double> weights;
  double bias = 0.0;
  double train_accuracy = 0.0;
};

// Full-batch logistic regression from zero. Throws kLengthMismatch,
// kDegenerateLabels.
Probe train_probe(const std::vector<std::vector<float>>& activations, const std::vector<int>& labels,
                  ProbeOptions options = {});

}  // namespace edif
