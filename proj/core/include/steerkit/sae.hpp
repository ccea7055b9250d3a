#pragma once

#include <cstdint>
#include <string>
#include <utility>
#include <vector>

#include "steerkit/common.hpp"

namespace steerkit {

// Sparsity nonlinearity applied to encoder pre-activations.
//   kTopKRelu:   ReLU first, then keep the k largest survivors. Ties at the
//                k-th value are broken toward the lowest feature index.
//   kJumpRelu:   keep pre-activations strictly greater than their per-feature
//                threshold theta_c (theta_c >= 0).
struct NonlinearitySpec {
  enum class Kind { kTopKRelu, kJumpRelu };
  Kind kind = Kind::kTopKRelu;
  std::uint32_t k = 0;        // kTopKRelu only, 0 < k <= m
  std::vector<float> theta;   // kJumpRelu only, length m, entries >= 0

  static NonlinearitySpec topk(std::uint32_t k);
  static NonlinearitySpec jump(std::vector<float> theta);
};

// Sparse autoencoder parameters. Row-major dense storage:
//   w_enc is d x m (input dim x feature count), w_dec is m x d.
// Feature c's decoder direction is row c of w_dec.
struct SaeParams {
  std::uint32_t input_dim = 0;   // d
  std::uint32_t n_features = 0;  // m
  std::vector<float> w_enc;      // d*m
  std::vector<float> b_enc;      // m
  std::vector<float> w_dec;      // m*d
  std::vector<float> b_dec;      // d
  NonlinearitySpec nonlinearity;
};

// Post-nonlinearity feature activations: strictly increasing indices, all
// stored values > 0.
struct FeatureActivations {
  std::vector<std::pair<FeatureIndex, float>> values;

  bool empty() const { return values.empty(); }
  std::size_t size() const { return values.size(); }
  // 0.0f for inactive features.
  float at(FeatureIndex c) const;
};

// Checks shape consistency, finiteness, m >= d, and nonlinearity invariants.
// Appends a note to `warnings` (if given) when m < 4d, which is legal but
// unusually small for an SAE. Throws ConfigError/InputError on violations.
void validate(const SaeParams& sae, std::vector<std::string>* warnings = nullptr);

// a(z) = sigma(z W_enc + b_enc), returned sparse.
FeatureActivations encode(const SaeParams& sae, const std::vector<float>& z);

// b_dec + sum_c a_c * w_dec[c].
std::vector<float> decode(const SaeParams& sae, const FeatureActivations& a);

// Row c of w_dec, without b_dec.
std::vector<float> feature_direction(const SaeParams& sae, FeatureIndex c);

// --- Artifact format -------------------------------------------------------
// Directory layout:
//   manifest.json  {"d", "m", "dtype": "f32le",
//                   "nonlinearity": {"kind": "topk", "k": ...}
//                                 | {"kind": "jumprelu", "theta_file": ...}}
//   weights.bin    W_enc (d*m) || b_enc (m) || W_dec (m*d) || b_dec (d)
// theta_file, when present, is m little-endian floats next to the manifest.

void save_sae(const SaeParams& sae, const std::string& dir);
SaeParams load_sae(const std::string& dir, std::vector<std::string>* warnings = nullptr);

}  // namespace steerkit
