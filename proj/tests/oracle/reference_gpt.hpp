#pragma once

// Reference implementation of the toy transformer for oracle tests.
//
// Written against the documented architecture and init procedure only:
// its own splitmix64 / xorshift64* / Box-Muller, its own parameter
// naming, and every computation in double. Shares no code with the engine.

#include <cstdint>
#include <map>
#include <string>
#include <vector>

namespace oracle {

using Matrix = std::vector<std::vector<double>>;  // [rows][cols]

struct Config {
  int layers = 4;
  int width = 64;
  int heads = 4;
  int vocab = 256;
  int context = 128;
  std::uint64_t seed = 0;
};

struct Block {
  std::vector<double> ln1_g, ln1_b;
  Matrix w_qkv;  // [width][3 width]
  std::vector<double> b_qkv;
  Matrix w_o;
  std::vector<double> b_o;
  std::vector<double> ln2_g, ln2_b;
  Matrix w_up;  // [width][4 width]
  std::vector<double> b_up;
  Matrix w_down;
  std::vector<double> b_down;
};

struct Params {
  Config config;
  Matrix token_embedding;     // [vocab][width]
  Matrix position_embedding;  // [context][width]
  std::vector<Block> blocks;
  std::vector<double> lnf_g, lnf_b;
};

Params init_params(const Config& config);

struct Trace {
  Matrix embed;
  std::vector<Matrix> resid_pre, attn_out, resid_mid, mlp_out, resid_post;
  Matrix final_norm;
  Matrix logits;
};

Trace run(const Params& params, const std::string& prompt);

// Final LayerNorm + tied unembedding applied to any residual.
Matrix lens(const Params& params, const Matrix& residual);

// Independent weight-by-weight enumeration, for comparing init order.
std::vector<std::pair<std::string, std::vector<double>>> flat_params(const Params& params);

std::size_t argmax(const std::vector<double>& row);

}  // namespace oracle
