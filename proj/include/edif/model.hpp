#pragma once

// Toy decoder-only transformer with named hook points.
//
// Architecture: learned token + position embeddings, pre-LN blocks
// (LN -> causal self-attention -> add -> LN -> MLP(4x, tanh-GELU) -> add),
// final LayerNorm, unembedding tied to the token embedding. f32 throughout.
//
// Hook points, in forward order:
//   embed
//   blocks.{i}.resid_pre, attn_out, resid_mid, mlp_out, resid_post
//   final_norm
//   logits
// Every point carries [seq, d_model] except logits, which is [seq, vocab].

#include <cstdint>
#include <functional>
#include <iosfwd>
#include <map>
#include <optional>
#include <set>
#include <string>
#include <string_view>
#include <vector>

#include "edif/tensor.hpp"

namespace edif {

struct ModelConfig {
  std::string model_id = "toy";
  int n_layers = 4;
  int d_model = 64;
  int n_heads = 4;
  int vocab_size = 256;
  int max_seq = 128;
  std::uint64_t seed = 0;

  bool operator==(const ModelConfig&) const = default;
};

// Throws Error(kInvalidConfig) naming the first offending field.
void validate_config(const ModelConfig& config);

struct HookPoint {
  std::string path;
  int order_index = 0;
};

struct NamedTensor {
  std::string name;
  Tensor tensor;
};

class ModelInstance {
 public:
  ModelInstance(ModelConfig config, std::vector<NamedTensor> weights);

  const ModelConfig& config() const { return config_; }
  const std::vector<NamedTensor>& weights() const { return weights_; }
  const std::vector<HookPoint>& hook_points() const { return hook_points_; }

  const Tensor& weight(const std::string& name) const;
  std::optional<HookPoint> find_hook(std::string_view path) const;
  // Shape of the activation at `path` for a prompt of `seq_len` tokens.
  Shape hook_shape(std::string_view path, std::int64_t seq_len) const;

 private:
  ModelConfig config_;
  std::vector<NamedTensor> weights_;
  std::map<std::string, std::size_t, std::less<>> weight_index_;
  std::vector<HookPoint> hook_points_;
  std::map<std::string, std::size_t, std::less<>> hook_index_;
};

// Weight names and shapes in initialization (and file) order.
std::vector<std::pair<std::string, Shape>> weight_layout(const ModelConfig& config);

// Hook-point list for a config, independent of any weights.
std::vector<HookPoint> enumerate_hook_points(const ModelConfig& config);

// Matrices and embeddings draw N(0, 0.02) from NormalSampler(seed) in
// weight_layout order; LayerNorm gains start at 1 and all biases at 0
// without consuming draws.
ModelInstance build_model(const ModelConfig& config);

// Builds an instance from explicit weights; every tensor in
// weight_layout(config) must be present with the exact shape.
ModelInstance build_model(const ModelConfig& config, std::vector<NamedTensor> weights);

using Tokens = std::vector<std::int32_t>;

Tokens tokenize(std::string_view text, int max_seq);

// Called at every hook point in order. The callback may overwrite the
// activation in place (a patch); downstream computation consumes whatever
// it leaves behind.
using HookFn = std::function<void(const HookPoint&, Tensor&)>;

// Runs one forward pass, returning the logits after the "logits" hook.
Tensor run_forward(const ModelInstance& model, const Tokens& tokens, const HookFn& hook);

struct ForwardRecord {
  Tensor logits;
  std::map<std::string, Tensor> captures;
};

ForwardRecord forward(const ModelInstance& model, const Tokens& tokens,
                      const std::set<std::string>& capture_set,
                      const std::map<std::string, Tensor>& patches = {});

// Final LayerNorm followed by the tied unembedding, as the forward pass
// applies them. Input [seq, d_model], output [seq, vocab].
Tensor apply_final_norm(const ModelInstance& model, const Tensor& residual);
Tensor unembed(const ModelInstance& model, const Tensor& normed);

// Binary weight file: "EDIFW1", u32 entry count, then per entry
// {u32 name length, name bytes, u8 dtype (0 = f32), u32 rank, u64 dims...},
// then each tensor's little-endian row-major data in table order.
void write_weights(std::ostream& out, const std::vector<NamedTensor>& weights);
std::vector<NamedTensor> read_weights(std::istream& in);

}  // namespace edif
