#pragma once

#include <cstdint>
#include <map>
#include <string>
#include <vector>

#include "steerkit/common.hpp"
#include "steerkit/relevance.hpp"

namespace steerkit {

// Per-feature explanation embeddings. Only features that were actually
// embedded have rows; every stored row has length dim, finite entries, and
// nonzero norm (cosine must stay defined).
struct EmbeddingStore {
  std::uint32_t dim = 0;
  std::string embedder_id;
  std::map<FeatureIndex, std::vector<float>> vectors;
};

struct UsefulnessScore {
  FeatureIndex index = 0;
  double score = 0.0;  // mean cos to relevant minus mean cos to noise, in [-2, 2]
};

class Embedder {
 public:
  virtual ~Embedder() = default;
  virtual std::string id() const = 0;
  virtual std::uint32_t dim() const = 0;
  // Throws InputError on empty text, RemoteError on transport failure.
  virtual std::vector<float> embed(const std::string& text) = 0;
};

// Deterministic offline embedder: lowercased alphanumeric tokens hashed
// (FNV-1a) into `dim` buckets, counts L2-normalized.
class HashEmbedder : public Embedder {
 public:
  explicit HashEmbedder(std::uint32_t dim = 256);
  std::string id() const override;
  std::uint32_t dim() const override;
  std::vector<float> embed(const std::string& text) override;

 private:
  std::uint32_t dim_;
};

// Remote embedding endpoint. Results are cached in-process by text digest,
// so repeated texts cost one request.
class HttpEmbedder : public Embedder {
 public:
  HttpEmbedder(std::string endpoint, std::string api_key, std::string model,
               std::uint32_t dim, int max_retries = 3);
  std::string id() const override;
  std::uint32_t dim() const override;
  std::vector<float> embed(const std::string& text) override;

 private:
  std::string endpoint_;
  std::string api_key_;
  std::string model_;
  std::uint32_t dim_;
  int max_retries_;
  std::map<std::string, std::vector<float>> cache_;
};

// One embedding per record. Empty explanations are an InputError.
EmbeddingStore embed_explanations(const std::vector<FeatureRecord>& records, Embedder& embedder);

// Mean cosine to the relevant set minus mean cosine to the noise set, per
// candidate. Both reference sets must be nonempty (ConfigError otherwise);
// candidates must be disjoint from them; every referenced feature must have
// a stored embedding.
std::vector<UsefulnessScore> usefulness_scores(const EmbeddingStore& store,
                                               const FeatureSet& relevant, const FeatureSet& noise,
                                               const FeatureSet& candidates);

// K highest scores, descending, ties broken by ascending index; all of them
// if fewer than K.
std::vector<FeatureIndex> select_top_k(const std::vector<UsefulnessScore>& scores,
                                       std::uint32_t k);

// Artifact layout: <dir>/embeddings.json {dim, embedder_id, count, file,
// presence_file} + embeddings.bin (count x dim little-endian floats, absent
// rows zeroed) + presence.bin (one bit per feature, LSB first).
void save_embeddings(const EmbeddingStore& store, std::uint32_t n_features,
                     const std::string& dir);
EmbeddingStore load_embeddings(const std::string& dir);

}  // namespace steerkit
