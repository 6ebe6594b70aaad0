#include "edif/model.hpp"

#include <cmath>
#include <cstring>
#include <istream>
#include <limits>
#include <ostream>

#include "edif/error.hpp"
#include "edif/rng.hpp"

namespace edif {

namespace {

constexpr float kLayerNormEps = 1e-5f;
constexpr double kInitStd = 0.02;

std::string block_name(int layer, std::string_view suffix) {
  return "blocks." + std::to_string(layer) + "." + std::string(suffix);
}

bool is_matrix_like(const std::string& name) {
  // LayerNorm parameters and biases are deterministic constants.
  auto ends_with = [&](std::string_view s) {
    return name.size() >= s.size() && name.compare(name.size() - s.size(), s.size(), s) == 0;
  };
  return !(ends_with(".bias") || name.find("ln") != std::string::npos);
}

bool is_layernorm_gain(const std::string& name) {
  return name.find("ln") != std::string::npos && name.ends_with(".weight");
}

// out[s, n] = in[s, :] . w[:, n] + b[n]; w is [in_dim, out_dim] row-major.
Tensor linear(const Tensor& in, const Tensor& w, const Tensor& b) {
  const std::int64_t rows = in.shape[0];
  const std::int64_t in_dim = w.shape[0];
  const std::int64_t out_dim = w.shape[1];
  Tensor out = Tensor::zeros({rows, out_dim});
  for (std::int64_t s = 0; s < rows; ++s) {
    float* dst = out.f32.data() + s * out_dim;
    for (std::int64_t n = 0; n < out_dim; ++n) dst[n] = b.f32[static_cast<std::size_t>(n)];
    const float* src = in.f32.data() + s * in_dim;
    for (std::int64_t k = 0; k < in_dim; ++k) {
      const float a = src[k];
      const float* wrow = w.f32.data() + k * out_dim;
      for (std::int64_t n = 0; n < out_dim; ++n) dst[n] += a * wrow[n];
    }
  }
  return out;
}

Tensor layer_norm(const Tensor& x, const Tensor& gain, const Tensor& bias) {
  Tensor out = Tensor::zeros(x.shape);
  const std::int64_t width = x.shape[1];
  for (std::int64_t s = 0; s < x.shape[0]; ++s) {
    auto in = x.row(s);
    float mean = 0.0f;
    for (float v : in) mean += v;
    mean /= static_cast<float>(width);
    float var = 0.0f;
    for (float v : in) var += (v - mean) * (v - mean);
    var /= static_cast<float>(width);
    const float inv = 1.0f / std::sqrt(var + kLayerNormEps);
    auto dst = out.row(s);
    for (std::int64_t i = 0; i < width; ++i) {
      dst[i] = (in[i] - mean) * inv * gain.f32[i] + bias.f32[i];
    }
  }
  return out;
}

float gelu(float x) {
  constexpr float kC = 0.7978845608028654f;  // sqrt(2/pi)
  return 0.5f * x * (1.0f + std::tanh(kC * (x + 0.044715f * x * x * x)));
}

Tensor causal_attention(const Tensor& qkv, int n_heads, int d_model) {
  const std::int64_t seq = qkv.shape[0];
  const int head_dim = d_model / n_heads;
  const float scale = 1.0f / std::sqrt(static_cast<float>(head_dim));
  Tensor out = Tensor::zeros({seq, d_model});
  std::vector<float> scores(static_cast<std::size_t>(seq));
  for (int h = 0; h < n_heads; ++h) {
    const int q_off = h * head_dim;
    const int k_off = d_model + h * head_dim;
    const int v_off = 2 * d_model + h * head_dim;
    for (std::int64_t i = 0; i < seq; ++i) {
      auto q = qkv.row(i);
      float max_score = -std::numeric_limits<float>::infinity();
      for (std::int64_t j = 0; j <= i; ++j) {
        auto k = qkv.row(j);
        float dot = 0.0f;
        for (int t = 0; t < head_dim; ++t) dot += q[q_off + t] * k[k_off + t];
        scores[j] = dot * scale;
        max_score = std::max(max_score, scores[j]);
      }
      float denom = 0.0f;
      for (std::int64_t j = 0; j <= i; ++j) {
        scores[j] = std::exp(scores[j] - max_score);
        denom += scores[j];
      }
      auto dst = out.row(i);
      for (std::int64_t j = 0; j <= i; ++j) {
        const float p = scores[j] / denom;
        auto v = qkv.row(j);
        for (int t = 0; t < head_dim; ++t) dst[q_off + t] += p * v[v_off + t];
      }
    }
  }
  return out;
}

void add_in_place(Tensor& acc, const Tensor& delta) {
  for (std::size_t i = 0; i < acc.f32.size(); ++i) acc.f32[i] += delta.f32[i];
}

template <typename T>
void put_le(std::ostream& out, T value) {
  out.write(reinterpret_cast<const char*>(&value), sizeof(T));
}

template <typename T>
T get_le(std::istream& in) {
  T value{};
  if (!in.read(reinterpret_cast<char*>(&value), sizeof(T))) {
    throw Error(ErrorCode::kMalformed, "truncated weight file");
  }
  return value;
}

}  // namespace

void validate_config(const ModelConfig& c) {
  auto fail = [](const std::string& field, const std::string& why) {
    throw Error(ErrorCode::kInvalidConfig, field + ": " + why);
  };
  if (c.model_id.empty()) fail("model_id", "must be non-empty");
  if (c.n_layers <= 0) fail("n_layers", "must be positive");
  if (c.d_model <= 0) fail("d_model", "must be positive");
  if (c.n_heads <= 0) fail("n_heads", "must be positive");
  if (c.d_model % c.n_heads != 0) {
    fail("d_model", std::to_string(c.d_model) + " is not a multiple of n_heads=" +
                        std::to_string(c.n_heads));
  }
  if (c.vocab_size < 256) fail("vocab_size", "must be >= 256 for byte-level tokens");
  if (c.max_seq <= 0) fail("max_seq", "must be positive");
}

std::vector<std::pair<std::string, Shape>> weight_layout(const ModelConfig& c) {
  const std::int64_t d = c.d_model;
  std::vector<std::pair<std::string, Shape>> layout;
  layout.emplace_back("wte", Shape{c.vocab_size, d});
  layout.emplace_back("wpe", Shape{c.max_seq, d});
  for (int i = 0; i < c.n_layers; ++i) {
    layout.emplace_back(block_name(i, "ln1.weight"), Shape{d});
    layout.emplace_back(block_name(i, "ln1.bias"), Shape{d});
    layout.emplace_back(block_name(i, "attn.qkv.weight"), Shape{d, 3 * d});
    layout.emplace_back(block_name(i, "attn.qkv.bias"), Shape{3 * d});
    layout.emplace_back(block_name(i, "attn.proj.weight"), Shape{d, d});
    layout.emplace_back(block_name(i, "attn.proj.bias"), Shape{d});
    layout.emplace_back(block_name(i, "ln2.weight"), Shape{d});
    layout.emplace_back(block_name(i, "ln2.bias"), Shape{d});
    layout.emplace_back(block_name(i, "mlp.fc.weight"), Shape{d, 4 * d});
    layout.emplace_back(block_name(i, "mlp.fc.bias"), Shape{4 * d});
    layout.emplace_back(block_name(i, "mlp.proj.weight"), Shape{4 * d, d});
    layout.emplace_back(block_name(i, "mlp.proj.bias"), Shape{d});
  }
  layout.emplace_back("ln_f.weight", Shape{d});
  layout.emplace_back("ln_f.bias", Shape{d});
  return layout;
}

std::vector<HookPoint> enumerate_hook_points(const ModelConfig& c) {
  std::vector<HookPoint> points;
  auto push = [&](std::string path) {
    points.push_back({std::move(path), static_cast<int>(points.size())});
  };
  push("embed");
  for (int i = 0; i < c.n_layers; ++i) {
    for (const char* kind : {"resid_pre", "attn_out", "resid_mid", "mlp_out", "resid_post"}) {
      push(block_name(i, kind));
    }
  }
  push("final_norm");
  push("logits");
  return points;
}

ModelInstance::ModelInstance(ModelConfig config, std::vector<NamedTensor> weights)
    : config_(std::move(config)), weights_(std::move(weights)) {
  for (std::size_t i = 0; i < weights_.size(); ++i) weight_index_.emplace(weights_[i].name, i);
  hook_points_ = enumerate_hook_points(config_);
  for (std::size_t i = 0; i < hook_points_.size(); ++i) hook_index_.emplace(hook_points_[i].path, i);
}

const Tensor& ModelInstance::weight(const std::string& name) const {
  auto it = weight_index_.find(name);
  if (it == weight_index_.end()) throw Error(ErrorCode::kInvalidConfig, "missing weight " + name);
  return weights_[it->second].tensor;
}

std::optional<HookPoint> ModelInstance::find_hook(std::string_view path) const {
  auto it = hook_index_.find(path);
  if (it == hook_index_.end()) return std::nullopt;
  return hook_points_[it->second];
}

Shape ModelInstance::hook_shape(std::string_view path, std::int64_t seq_len) const {
  if (!find_hook(path)) {
    throw Error(ErrorCode::kUnknownHookPoint, "no hook point '" + std::string(path) + "'");
  }
  return {seq_len, path == "logits" ? config_.vocab_size : config_.d_model};
}

ModelInstance build_model(const ModelConfig& config) {
  validate_config(config);
  NormalSampler sampler(config.seed);
  std::vector<NamedTensor> weights;
  for (auto& [name, shape] : weight_layout(config)) {
    Tensor t = Tensor::zeros(shape);
    if (is_layernorm_gain(name)) {
      std::fill(t.f32.begin(), t.f32.end(), 1.0f);
    } else if (is_matrix_like(name)) {
      for (float& v : t.f32) v = static_cast<float>(sampler.next() * kInitStd);
    }
    weights.push_back({name, std::move(t)});
  }
  return ModelInstance(config, std::move(weights));
}

ModelInstance build_model(const ModelConfig& config, std::vector<NamedTensor> weights) {
  validate_config(config);
  std::map<std::string, Tensor> by_name;
  for (auto& w : weights) by_name[w.name] = std::move(w.tensor);
  std::vector<NamedTensor> ordered;
  for (auto& [name, shape] : weight_layout(config)) {
    auto it = by_name.find(name);
    if (it == by_name.end()) throw Error(ErrorCode::kInvalidConfig, "weights: missing " + name);
    if (it->second.dtype != DType::kF32 || it->second.shape != shape) {
      throw Error(ErrorCode::kShapeMismatch, "weights: " + name + " has shape " +
                                                 shape_string(it->second.shape) + ", expected " +
                                                 shape_string(shape));
    }
    ordered.push_back({name, std::move(it->second)});
    by_name.erase(it);
  }
  if (!by_name.empty()) {
    throw Error(ErrorCode::kInvalidConfig, "weights: unexpected tensor " + by_name.begin()->first);
  }
  return ModelInstance(config, std::move(ordered));
}

Tokens tokenize(std::string_view text, int max_seq) {
  if (text.empty()) throw Error(ErrorCode::kEmptyPrompt, "prompt is empty");
  if (text.size() > static_cast<std::size_t>(max_seq)) {
    throw Error(ErrorCode::kPromptTooLong, std::to_string(text.size()) + " bytes exceeds max_seq " +
                                               std::to_string(max_seq));
  }
  Tokens tokens;
  tokens.reserve(text.size());
  for (unsigned char c : text) tokens.push_back(c);
  return tokens;
}

Tensor apply_final_norm(const ModelInstance& model, const Tensor& residual) {
  return layer_norm(residual, model.weight("ln_f.weight"), model.weight("ln_f.bias"));
}

Tensor unembed(const ModelInstance& model, const Tensor& normed) {
  const Tensor& wte = model.weight("wte");
  const std::int64_t seq = normed.shape[0];
  const std::int64_t vocab = wte.shape[0];
  const std::int64_t d = wte.shape[1];
  Tensor logits = Tensor::zeros({seq, vocab});
  for (std::int64_t s = 0; s < seq; ++s) {
    auto h = normed.row(s);
    for (std::int64_t v = 0; v < vocab; ++v) {
      const float* e = wte.f32.data() + v * d;
      float dot = 0.0f;
      for (std::int64_t k = 0; k < d; ++k) dot += h[k] * e[k];
      logits.at(s, v) = dot;
    }
  }
  return logits;
}

Tensor run_forward(const ModelInstance& model, const Tokens& tokens, const HookFn& hook) {
  const ModelConfig& c = model.config();
  if (tokens.empty()) throw Error(ErrorCode::kEmptyPrompt, "no tokens");
  if (tokens.size() > static_cast<std::size_t>(c.max_seq)) {
    throw Error(ErrorCode::kPromptTooLong, std::to_string(tokens.size()) + " tokens exceeds max_seq " +
                                               std::to_string(c.max_seq));
  }
  const auto& points = model.hook_points();
  std::size_t next_point = 0;
  auto at_hook = [&](Tensor& activation) {
    const HookPoint& point = points[next_point++];
    if (!hook) return;
    const Shape expected = activation.shape;
    hook(point, activation);
    if (activation.dtype != DType::kF32 || activation.shape != expected) {
      throw Error(ErrorCode::kShapeMismatch, point.path + " expects " + shape_string(expected) +
                                                 ", got " + shape_string(activation.shape));
    }
  };

  const std::int64_t seq = static_cast<std::int64_t>(tokens.size());
  const Tensor& wte = model.weight("wte");
  const Tensor& wpe = model.weight("wpe");
  Tensor x = Tensor::zeros({seq, c.d_model});
  for (std::int64_t s = 0; s < seq; ++s) {
    const std::int32_t tok = tokens[static_cast<std::size_t>(s)];
    if (tok < 0 || tok >= c.vocab_size) {
      throw Error(ErrorCode::kShapeMismatch, "token id " + std::to_string(tok) + " outside vocab");
    }
    auto dst = x.row(s);
    for (int k = 0; k < c.d_model; ++k) {
      dst[k] = wte.at(tok, k) + wpe.at(s, k);
    }
  }
  at_hook(x);

  for (int layer = 0; layer < c.n_layers; ++layer) {
    auto w = [&](std::string_view suffix) -> const Tensor& {
      return model.weight(block_name(layer, suffix));
    };
    at_hook(x);  // resid_pre
    Tensor h = layer_norm(x, w("ln1.weight"), w("ln1.bias"));
    Tensor qkv = linear(h, w("attn.qkv.weight"), w("attn.qkv.bias"));
    Tensor attn = linear(causal_attention(qkv, c.n_heads, c.d_model), w("attn.proj.weight"),
                         w("attn.proj.bias"));
    at_hook(attn);
    add_in_place(x, attn);
    at_hook(x);  // resid_mid
    h = layer_norm(x, w("ln2.weight"), w("ln2.bias"));
    Tensor hidden = linear(h, w("mlp.fc.weight"), w("mlp.fc.bias"));
    for (float& v : hidden.f32) v = gelu(v);
    Tensor mlp = linear(hidden, w("mlp.proj.weight"), w("mlp.proj.bias"));
    at_hook(mlp);
    add_in_place(x, mlp);
    at_hook(x);  // resid_post
  }

  Tensor normed = apply_final_norm(model, x);
  at_hook(normed);
  Tensor logits = unembed(model, normed);
  at_hook(logits);
  return logits;
}

ForwardRecord forward(const ModelInstance& model, const Tokens& tokens,
                      const std::set<std::string>& capture_set,
                      const std::map<std::string, Tensor>& patches) {
  for (const auto& path : capture_set) {
    if (!model.find_hook(path)) throw Error(ErrorCode::kUnknownHookPoint, "no hook point '" + path + "'");
  }
  for (const auto& [path, tensor] : patches) {
    const Shape expected = model.hook_shape(path, static_cast<std::int64_t>(tokens.size()));
    if (tensor.dtype != DType::kF32 || tensor.shape != expected) {
      throw Error(ErrorCode::kShapeMismatch, "patch for " + path + " has shape " +
                                                 shape_string(tensor.shape) + ", expected " +
                                                 shape_string(expected));
    }
  }
  ForwardRecord record;
  record.logits = run_forward(model, tokens, [&](const HookPoint& point, Tensor& act) {
    if (auto it = patches.find(point.path); it != patches.end()) act = it->second;
    if (capture_set.contains(point.path)) record.captures[point.path] = act;
  });
  return record;
}

void write_weights(std::ostream& out, const std::vector<NamedTensor>& weights) {
  out.write("EDIFW1", 6);
  put_le<std::uint32_t>(out, static_cast<std::uint32_t>(weights.size()));
  for (const auto& w : weights) {
    if (w.tensor.dtype != DType::kF32) throw Error(ErrorCode::kMalformed, w.name + ": only f32 weights");
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.name.size()));
    out.write(w.name.data(), static_cast<std::streamsize>(w.name.size()));
    put_le<std::uint8_t>(out, 0);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(w.tensor.shape.size()));
    for (auto dim : w.tensor.shape) put_le<std::uint64_t>(out, static_cast<std::uint64_t>(dim));
  }
  for (const auto& w : weights) {
    out.write(reinterpret_cast<const char*>(w.tensor.f32.data()),
              static_cast<std::streamsize>(w.tensor.f32.size() * sizeof(float)));
  }
  if (!out) throw Error(ErrorCode::kIo, "failed writing weight file");
}

std::vector<NamedTensor> read_weights(std::istream& in) {
  char magic[6];
  if (!in.read(magic, 6) || std::memcmp(magic, "EDIFW1", 6) != 0) {
    throw Error(ErrorCode::kMalformed, "not an EDIFW1 weight file");
  }
  const auto count = get_le<std::uint32_t>(in);
  std::vector<NamedTensor> weights(count);
  for (auto& w : weights) {
    const auto name_len = get_le<std::uint32_t>(in);
    if (name_len > 4096) throw Error(ErrorCode::kMalformed, "weight name too long");
    w.name.resize(name_len);
    if (!in.read(w.name.data(), name_len)) throw Error(ErrorCode::kMalformed, "truncated weight name");
    if (get_le<std::uint8_t>(in) != 0) throw Error(ErrorCode::kMalformed, w.name + ": dtype must be f32");
    const auto rank = get_le<std::uint32_t>(in);
    if (rank > 8) throw Error(ErrorCode::kMalformed, w.name + ": rank too large");
    for (std::uint32_t r = 0; r < rank; ++r) {
      w.tensor.shape.push_back(static_cast<std::int64_t>(get_le<std::uint64_t>(in)));
    }
  }
  for (auto& w : weights) {
    w.tensor.f32.resize(static_cast<std::size_t>(element_count(w.tensor.shape)));
    const auto bytes = static_cast<std::streamsize>(w.tensor.f32.size() * sizeof(float));
    if (!in.read(reinterpret_cast<char*>(w.tensor.f32.data()), bytes)) {
      throw Error(ErrorCode::kMalformed, w.name + ": truncated tensor data");
    }
  }
  return weights;
}

}  // namespace edif
