#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <utility>
#include <vector>

#include "steerkit/common.hpp"
#include "steerkit/sae.hpp"

namespace steerkit {

// A direction in the model's residual stream, tagged with how it was built.
// provenance is free-form metadata (pair counts, scaling, seeds) carried
// through to the serialized artifact.
struct SteeringVector {
  enum class Kind { kCaa, kNoise, kUseful, kRefined, kPca, kLat, kProbe };

  std::vector<float> values;
  Kind kind = Kind::kCaa;
  std::map<std::string, std::string> provenance;

  std::size_t dim() const { return values.size(); }
};

std::string kind_to_string(SteeringVector::Kind kind);
SteeringVector::Kind kind_from_string(const std::string& s);

// Dense signed per-feature mean activation difference (positives minus
// negatives). Stored dense because seed selection needs the sign.
struct ActivationDiff {
  std::vector<float> values;
};

// Per-feature mean positive-sample activations and their normalization to a
// convex combination. normalized sums to 1 when alpha has any mass.
struct NoiseWeights {
  std::map<FeatureIndex, float> alpha;
  std::map<FeatureIndex, float> normalized;
};

struct ScalingConfig {
  float alpha1 = 1.0f;
  float alpha2 = 1.0f;
  float alpha3 = 1.0f;
  std::uint32_t k_retrieve = 0;
};

// Mean of (h_plus - h_minus) over all pairs. Throws InputError on empty
// input or ragged dimensions.
SteeringVector build_caa_vector(
    const std::vector<std::pair<HiddenState, HiddenState>>& pairs);

// Mean of (encode(h_plus) - encode(h_minus)) over pairs, densified to
// length m. Entries may be negative.
ActivationDiff compute_activation_diff(
    const SaeParams& sae,
    const std::vector<std::pair<HiddenState, HiddenState>>& pairs);

// Indices with strictly positive diff. Zero is excluded.
FeatureSet seed_set(const ActivationDiff& diff);

// alpha_c = mean activation of c across positive samples (absent entries
// count as zero); normalized = alpha / sum(alpha). All-zero alpha yields
// empty normalized.
NoiseWeights compute_noise_weights(const FeatureSet& noise_set,
                                   const std::vector<FeatureActivations>& positives);

// Sum of normalized-weight-scaled decoder directions over noise_set.
// Empty set or all-zero weights give a zero vector.
SteeringVector build_noise_vector(const SaeParams& sae, const FeatureSet& noise_set,
                                  const std::vector<FeatureActivations>& positive_activations);

// Unweighted mean of decoder directions over useful_set; empty set gives a
// zero vector.
SteeringVector build_useful_vector(const SaeParams& sae, const FeatureSet& useful_set);

// alpha1*steer - alpha2*noise + alpha3*useful. Dimensions must agree.
SteeringVector compose_refined(const SteeringVector& steer, const SteeringVector& noise,
                               const SteeringVector& useful, const ScalingConfig& scaling);

// Unit-norm leading eigenvector of the mean-centered covariance, found by
// power iteration. Sign is fixed so the coordinate of largest magnitude is
// positive (ties resolved toward the lowest index). Throws InputError on
// fewer than two samples or rank-zero (all-identical) data.
SteeringVector pca_vector(const std::vector<HiddenState>& positives);

// Leading direction of the second moment of L2-normalized differences of
// disjoint sample pairs; the pairing comes from one seeded shuffle. The
// covariance is deliberately not centered so a single pair is meaningful.
// Throws InputError when every pairwise difference is zero.
SteeringVector lat_vector(const std::vector<HiddenState>& positives, std::uint64_t seed);

// Direction of an L2-regularized logistic regression separating positives
// from negatives, trained by full-batch gradient descent (initial step 0.1,
// halved on divergence) until the gradient norm drops below 1e-6 or 10000
// steps pass. Returned unit-normalized; a near-zero weight vector is
// returned as-is with provenance["degenerate"] = "true".
SteeringVector probe_vector(const std::vector<HiddenState>& positives,
                            const std::vector<HiddenState>& negatives);

// Probe training internals, exposed so the gradient can be validated
// against finite differences. params layout: D weights then one bias; the
// bias is not regularized.
double probe_loss(const std::vector<double>& params,
                  const std::vector<HiddenState>& positives,
                  const std::vector<HiddenState>& negatives, double l2 = 1e-3);
std::vector<double> probe_gradient(const std::vector<double>& params,
                                   const std::vector<HiddenState>& positives,
                                   const std::vector<HiddenState>& negatives,
                                   double l2 = 1e-3);
std::vector<double> probe_fit(const std::vector<HiddenState>& positives,
                              const std::vector<HiddenState>& negatives, double l2 = 1e-3);

// Artifact layout: <dir>/vector.json {dim, kind, provenance, dtype, file}
// plus <dir>/vector.bin (little-endian f32).
void save_vector(const SteeringVector& v, const std::string& dir);
SteeringVector load_vector(const std::string& dir);

}  // namespace steerkit
