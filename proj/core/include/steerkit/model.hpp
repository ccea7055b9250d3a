#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <utility>
#include <vector>

#include "steerkit/common.hpp"
#include "steerkit/dataset.hpp"
#include "steerkit/steering.hpp"

namespace steerkit {

// Minimal deterministic decoder-only transformer: byte-level ids, learned
// absolute positions, pre-norm blocks, erf GELU, causal attention, greedy
// decoding, 32-bit floats, row-major tensors, no KV cache. Built for
// reproducibility, not fidelity to any released model.
struct ModelParams {
  struct Block {
    std::vector<float> attn_norm_w, attn_norm_b;  // D
    std::vector<float> wq, wk, wv, wo;            // D x D
    std::vector<float> bq, bk, bv, bo;            // D
    std::vector<float> mlp_norm_w, mlp_norm_b;    // D
    std::vector<float> w1, b1;                    // D x 4D, 4D
    std::vector<float> w2, b2;                    // 4D x D, D
  };

  std::uint32_t vocab_size = 0;
  std::uint32_t hidden_dim = 0;
  std::uint32_t n_layers = 0;
  std::uint32_t n_heads = 0;
  std::uint32_t max_seq_len = 0;
  std::vector<float> tok_embedding;  // vocab x D
  std::vector<float> pos_embedding;  // max_seq x D
  std::vector<Block> blocks;
  std::vector<float> final_norm_w, final_norm_b;  // D
  std::vector<float> lm_head;                     // D x vocab
  std::vector<float> lm_head_b;                   // vocab
};

// Shape and finiteness checks; D must divide by n_heads.
void validate(const ModelParams& model);

// Seeded Gaussian initialization; identical across platforms.
ModelParams random_model(std::uint32_t vocab_size, std::uint32_t hidden_dim,
                         std::uint32_t n_layers, std::uint32_t n_heads,
                         std::uint32_t max_seq_len, std::uint64_t seed);

// Byte-level tokenizer: ids are byte values, so any vocab_size >= 256 works.
std::vector<std::uint32_t> tokenize_bytes(const std::string& text);
std::string detokenize_bytes(const std::vector<std::uint32_t>& ids);

enum class ExtractionSite { kLastToken, kMeanOverPositions };
enum class InjectPositions { kAllPositions, kGeneratedOnly };

struct InjectionConfig {
  SteeringVector vector;
  std::uint32_t layer_index = 0;
  InjectPositions positions = InjectPositions::kAllPositions;
};

struct ForwardResult {
  // seq_len x vocab_size, row-major.
  std::vector<float> logits;
  std::uint32_t seq_len = 0;
  std::uint32_t vocab_size = 0;
  // One per input position, read from the residual stream after the block
  // at layer_index; reflects any injection applied there.
  std::vector<HiddenState> captured;
};

// Full forward pass with capture after layer_index. Injection, when
// present, adds its vector to the residual stream after that block at the
// configured positions before later blocks run (prompt_len distinguishes
// generated positions). Deterministic for fixed inputs.
ForwardResult forward_capture(const ModelParams& model, const std::vector<std::uint32_t>& token_ids,
                              std::uint32_t layer_index,
                              const std::optional<InjectionConfig>& injection = std::nullopt,
                              std::uint32_t prompt_len = 0);

// Greedy decoding (argmax, ties to the lowest id), recomputing the full
// sequence each step. A zero or absent injection reproduces the unsteered
// continuation exactly.
std::vector<std::uint32_t> generate_steered(const ModelParams& model,
                                            const std::vector<std::uint32_t>& prompt_ids,
                                            const std::optional<InjectionConfig>& injection,
                                            std::uint32_t max_new_tokens);

// Formats both polarities of a pair, runs the model, and returns the hidden
// state at the extraction site (final input token by default, or the mean
// over positions).
std::pair<HiddenState, HiddenState> capture_pair_activations(const ModelParams& model,
                                                             const ContrastivePair& pair,
                                                             const PromptFormat& fmt,
                                                             std::uint32_t layer_index,
                                                             ExtractionSite site);

// Model artifact: manifest.json {vocab_size, hidden_dim, n_layers, n_heads,
// max_seq_len, dtype, file, tensors: {name: {offset, shape}}} plus
// weights.bin (concatenated little-endian f32, row-major).
void save_model(const ModelParams& model, const std::string& dir);
ModelParams load_model(const std::string& dir);

}  // namespace steerkit
