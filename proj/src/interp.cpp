#include "edif/interp.hpp"

#include <algorithm>
#include <cmath>
#include <future>
#include <sstream>

#include "edif/error.hpp"
#include "edif/wire.hpp"

namespace edif {

using nlohmann::json;

namespace {

void require_point(const ModelConfig& config, const std::string& point) {
  for (const auto& hp : enumerate_hook_points(config)) {
    if (hp.path == point) return;
  }
  throw Error(ErrorCode::kUnknownHookPoint, "no hook point '" + point + "'");
}

InterventionGraph single_invocation(const ModelConfig& config, const std::string& prompt) {
  InterventionGraph g;
  g.model_id = config.model_id;
  g.invocations.push_back({0, prompt});
  return g;
}

}  // namespace

InterventionGraph logit_lens(const ModelConfig& config, const std::string& prompt, const std::vector<int>& layers) {
  InterventionGraph g = single_invocation(config, prompt);
  int id = 0;
  for (int layer : layers) {
    if (layer < 0 || layer >= config.n_layers) {
      throw Error(ErrorCode::kUnknownLayer,
                  "layer " + std::to_string(layer) + " outside [0, " + std::to_string(config.n_layers) + ")");
    }
    const int capture = id++;
    const int lens = id++;
    const int save = id++;
    g.nodes.push_back(GraphNode::capture(capture, 0, "blocks." + std::to_string(layer) + ".resid_post"));
    g.nodes.push_back(GraphNode::unembedding(lens, capture, true));
    g.nodes.push_back(GraphNode::save(save, lens, "lens." + std::to_string(layer)));
    g.outputs.push_back(save);
  }
  return g;
}

InterventionGraph activation_patching(const ModelConfig& config, const std::string& clean_prompt,
                                      const std::string& corrupt_prompt, const std::string& point) {
  if (clean_prompt.size() != corrupt_prompt.size()) {
    throw Error(ErrorCode::kLengthMismatch, "clean prompt has " + std::to_string(clean_prompt.size()) +
                                                " tokens, corrupt has " + std::to_string(corrupt_prompt.size()));
  }
  require_point(config, point);
  InterventionGraph g;
  g.model_id = config.model_id;
  g.invocations = {{0, clean_prompt}, {1, corrupt_prompt}, {2, corrupt_prompt}};
  g.nodes = {
      GraphNode::capture(0, 0, point),
      GraphNode::capture(1, 0, "logits"),
      GraphNode::patch(2, 1, point, 0),
      GraphNode::capture(3, 1, "logits"),
      GraphNode::capture(4, 2, "logits"),
      GraphNode::save(5, 1, "clean"),
      GraphNode::save(6, 3, "patched"),
      GraphNode::save(7, 4, "corrupt"),
  };
  g.outputs = {5, 6, 7};
  return g;
}

InterventionGraph extract_activations(const ModelConfig& config, const std::string& prompt,
                                      const std::vector<std::string>& points) {
  InterventionGraph g = single_invocation(config, prompt);
  int id = 0;
  for (const auto& point : points) {
    require_point(config, point);
    g.nodes.push_back(GraphNode::capture(id, 0, point));
    g.nodes.push_back(GraphNode::save(id + 1, id, point));
    g.outputs.push_back(id + 1);
    id += 2;
  }
  return g;
}

InterventionGraph top_k_neurons(const ModelConfig& config, const std::string& prompt, const std::string& point, int k) {
  if (k < 1 || k > config.d_model) {
    throw Error(ErrorCode::kBadK, "k=" + std::to_string(k) + " outside [1, " + std::to_string(config.d_model) + "]");
  }
  require_point(config, point);
  InterventionGraph g = single_invocation(config, prompt);
  g.nodes = {
      GraphNode::capture(0, 0, point),
      GraphNode::reduction(1, ReduceKind::kMean, 0, 0),
      GraphNode::reduction(2, ReduceKind::kTopk, 1, 0, k),
      GraphNode::save(3, 2, "topk"),
  };
  g.outputs = {3};
  return g;
}

double softmax_prob(const Tensor& logits, std::int64_t row, int token) {
  const auto values = logits.row(row);
  double max = -INFINITY;
  for (float v : values) max = std::max(max, static_cast<double>(v));
  double sum = 0.0;
  for (float v : values) sum += std::exp(static_cast<double>(v) - max);
  return std::exp(static_cast<double>(values[static_cast<std::size_t>(token)]) - max) / sum;
}

double restoration_score(double patched, double clean, double corrupt) {
  return (patched - corrupt) / (clean - corrupt);
}

std::optional<TraceCell> CausalTraceReport::max_cell() const {
  std::optional<TraceCell> best;
  for (const auto& cell : cells) {
    if (cell.score && (!best || *cell.score > *best->score)) best = cell;
  }
  return best;
}

CausalTraceReport causal_trace(const ModelConfig& config, const std::string& clean_prompt,
                               const std::string& corrupt_prompt, int target_token, const GraphRunner& run) {
  if (target_token < 0 || target_token >= config.vocab_size) {
    throw Error(ErrorCode::kValidation, "target token " + std::to_string(target_token) + " outside the vocabulary");
  }
  struct Probs {
    double clean, corrupt, patched;
  };
  struct Pending {
    TraceCell cell;
    std::future<Probs> result;
  };
  const auto last = static_cast<std::int64_t>(clean_prompt.size()) - 1;
  std::vector<Pending> pending;
  for (int layer = 0; layer < config.n_layers; ++layer) {
    for (const char* kind : kTracePointKinds) {
      const std::string point = "blocks." + std::to_string(layer) + "." + kind;
      InterventionGraph g = activation_patching(config, clean_prompt, corrupt_prompt, point);
      auto fut = std::async(std::launch::async, [&run, g = std::move(g), last, target_token] {
        const auto out = run(g);
        return Probs{softmax_prob(out.at("clean"), last, target_token),
                     softmax_prob(out.at("corrupt"), last, target_token),
                     softmax_prob(out.at("patched"), last, target_token)};
      });
      pending.push_back({TraceCell{layer, kind, std::nullopt, std::nullopt, 0.0}, std::move(fut)});
    }
  }

  CausalTraceReport report;
  report.target_token = target_token;
  bool have_baseline = false;
  for (auto& p : pending) {
    try {
      const Probs probs = p.result.get();
      if (!have_baseline) {
        report.clean_prob = probs.clean;
        report.corrupt_prob = probs.corrupt;
        report.defined = std::abs(probs.clean - probs.corrupt) >= kUndefinedDenominator;
        have_baseline = true;
      }
      p.cell.patched_prob = probs.patched;
      if (report.defined) p.cell.score = restoration_score(probs.patched, report.clean_prob, report.corrupt_prob);
    } catch (const Error& e) {
      p.cell.failure = e.code();
    } catch (const std::exception&) {
      p.cell.failure = ErrorCode::kWorkerFault;
    }
    report.cells.push_back(std::move(p.cell));
  }
  return report;
}

std::string report_to_json(const CausalTraceReport& report) {
  json cells = json::array();
  for (const auto& c : report.cells) {
    json cell{{"layer", c.layer}, {"kind", c.kind}};
    if (c.failure) {
      cell["status"] = "failed";
      cell["code"] = to_string(*c.failure);
    } else if (!c.score) {
      cell["status"] = "undefined";
    } else {
      cell["status"] = "ok";
      cell["score"] = *c.score;
      cell["patched_prob"] = c.patched_prob;
    }
    cells.push_back(std::move(cell));
  }
  json j{{"target_token", report.target_token},
         {"clean_prob", report.clean_prob},
         {"corrupt_prob", report.corrupt_prob},
         {"defined", report.defined},
         {"cells", std::move(cells)}};
  if (auto best = report.max_cell()) j["max_cell"] = {{"layer", best->layer}, {"kind", best->kind}};
  return j.dump(2);
}

std::string report_to_svg(const CausalTraceReport& report) {
  constexpr int kCell = 48;
  constexpr int kLeft = 90;
  constexpr int kTop = 30;
  int layers = 0;
  for (const auto& c : report.cells) layers = std::max(layers, c.layer + 1);
  const int cols = static_cast<int>(std::size(kTracePointKinds));
  std::ostringstream svg;
  svg << "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"" << kLeft + cols * kCell + 10 << "\" height=\""
      << kTop + layers * kCell + 30 << "\" font-family=\"monospace\" font-size=\"11\">\n";
  for (int i = 0; i < cols; ++i) {
    svg << "<text x=\"" << kLeft + i * kCell + kCell / 2 << "\" y=\"" << kTop - 8 << "\" text-anchor=\"middle\">"
        << kTracePointKinds[i] << "</text>\n";
  }
  for (int l = 0; l < layers; ++l) {
    svg << "<text x=\"" << kLeft - 8 << "\" y=\"" << kTop + l * kCell + kCell / 2 + 4
        << "\" text-anchor=\"end\">layer " << l << "</text>\n";
  }
  for (std::size_t i = 0; i < report.cells.size(); ++i) {
    const auto& c = report.cells[i];
    const int x = kLeft + static_cast<int>(i % static_cast<std::size_t>(cols)) * kCell;
    const int y = kTop + c.layer * kCell;
    std::string fill = "#cccccc";
    std::string label = "n/a";
    if (c.failure) {
      fill = "#e08080";
      label = "fail";
    } else if (c.score) {
      const double t = std::clamp(*c.score, 0.0, 1.0);
      const int shade = static_cast<int>(std::lround(255.0 * (1.0 - t)));
      char buf[8];
      std::snprintf(buf, sizeof(buf), "#%02x%02xff", shade, shade);
      fill = buf;
      std::snprintf(buf, sizeof(buf), "%.2f", *c.score);
      label = buf;
    }
    svg << "<rect x=\"" << x << "\" y=\"" << y << "\" width=\"" << kCell << "\" height=\"" << kCell << "\" fill=\""
        << fill << "\" stroke=\"#ffffff\"/>\n";
    svg << "<text x=\"" << x + kCell / 2 << "\" y=\"" << y + kCell / 2 + 4 << "\" text-anchor=\"middle\">" << label
        << "</text>\n";
  }
  svg << "<text x=\"" << kLeft << "\" y=\"" << kTop + layers * kCell + 20 << "\">target " << report.target_token
      << "  p_clean " << report.clean_prob << "  p_corrupt " << report.corrupt_prob << "</text>\n";
  svg << "</svg>\n";
  return svg.str();
}

CopyFixture copy_task_fixture(const ModelInstance& model) {
  const int max_seq = model.config().max_seq;
  auto final_argmax = [&](const std::string& prompt) {
    const Tensor logits = forward(model, tokenize(prompt, max_seq), {}).logits;
    const auto row = logits.row(logits.shape[0] - 1);
    return static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  };
  for (char x = 'A'; x <= 'Z'; ++x) {
    for (char y = 'A'; y <= 'Z'; ++y) {
      if (x == y) continue;
      const std::string clean{x, y, x, y, x, y, x};
      std::string corrupt = clean;
      char z = 'A';
      while (z == x || z == y) ++z;
      corrupt[1] = z;
      const int clean_top = final_argmax(clean);
      if (clean_top != final_argmax(corrupt)) return {clean, corrupt, clean_top};
    }
  }
  throw Error(ErrorCode::kValidation, "no copy-task prompt pair separates clean and corrupt predictions");
}

namespace {

// Pairwise sum over [lo, hi): splitting at the midpoint makes a dataset
// repeated twice sum to exactly twice the original.
template <typename F>
double pairwise_sum(std::size_t lo, std::size_t hi, const F& term) {
  if (hi - lo == 1) return term(lo);
  if (hi == lo) return 0.0;
  const std::size_t mid = lo + (hi - lo) / 2;
  return pairwise_sum(lo, mid, term) + pairwise_sum(mid, hi, term);
}

}  // namespace

Probe train_probe(const std::vector<std::vector<float>>& activations, const std::vector<int>& labels,
                  ProbeOptions options) {
  if (activations.size() != labels.size() || activations.size() < 2) {
    throw Error(ErrorCode::kLengthMismatch, std::to_string(activations.size()) + " activations vs " +
                                                std::to_string(labels.size()) + " labels (need >= 2)");
  }
  const std::size_t n = activations.size();
  const std::size_t d = activations.front().size();
  std::size_t positives = 0;
  for (std::size_t i = 0; i < n; ++i) {
    if (activations[i].size() != d) throw Error(ErrorCode::kLengthMismatch, "activation widths differ");
    if (labels[i] != 0 && labels[i] != 1) throw Error(ErrorCode::kValidation, "labels must be 0 or 1");
    positives += static_cast<std::size_t>(labels[i]);
  }
  if (positives == 0 || positives == n) throw Error(ErrorCode::kDegenerateLabels, "labels contain a single class");

  Probe p;
  p.weights.assign(d, 0.0);
  auto logit = [&](std::size_t i) {
    double z = p.bias;
    for (std::size_t j = 0; j < d; ++j) z += p.weights[j] * activations[i][j];
    return z;
  };
  std::vector<double> residual(n);
  for (int step = 0; step < options.steps; ++step) {
    for (std::size_t i = 0; i < n; ++i) residual[i] = 1.0 / (1.0 + std::exp(-logit(i))) - labels[i];
    const double scale = options.learning_rate / static_cast<double>(n);
    std::vector<double> grad(d);
    for (std::size_t j = 0; j < d; ++j) {
      grad[j] = pairwise_sum(0, n, [&](std::size_t i) { return residual[i] * activations[i][j]; });
    }
    const double grad_b = pairwise_sum(0, n, [&](std::size_t i) { return residual[i]; });
    for (std::size_t j = 0; j < d; ++j) p.weights[j] -= scale * grad[j];
    p.bias -= scale * grad_b;
  }
  std::size_t correct = 0;
  for (std::size_t i = 0; i < n; ++i) correct += static_cast<std::size_t>((logit(i) > 0.0) == (labels[i] == 1));
  p.train_accuracy = static_cast<double>(correct) / static_cast<double>(n);
  return p;
}

}  // namespace edif
