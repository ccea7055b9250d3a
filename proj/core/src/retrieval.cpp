#include "steerkit/retrieval.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>
#include <fstream>

#include <nlohmann/json.hpp>

#include "http_util.hpp"
#include "steerkit/io.hpp"
#include "steerkit/sha256.hpp"

namespace steerkit {

namespace {

bool usable_vector(const std::vector<float>& v) {
  double norm_sq = 0.0;
  for (float x : v) {
    if (!std::isfinite(x)) {
      return false;
    }
    norm_sq += double(x) * double(x);
  }
  return norm_sq > 0.0;
}

double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  double dot = 0.0, na = 0.0, nb = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    dot += double(a[i]) * double(b[i]);
    na += double(a[i]) * double(a[i]);
    nb += double(b[i]) * double(b[i]);
  }
  return dot / (std::sqrt(na) * std::sqrt(nb));
}

const std::vector<float>& stored_vector(const EmbeddingStore& store, FeatureIndex c,
                                        const char* role) {
  const auto it = store.vectors.find(c);
  if (it == store.vectors.end()) {
    throw InputError(std::string("usefulness_scores: no embedding for ") + role + " feature " +
                     std::to_string(c));
  }
  return it->second;
}

}  // namespace

HashEmbedder::HashEmbedder(std::uint32_t dim) : dim_(dim) {
  if (dim_ == 0) {
    throw ConfigError("hash embedder: dim must be positive");
  }
}

std::string HashEmbedder::id() const { return "hash-" + std::to_string(dim_); }

std::uint32_t HashEmbedder::dim() const { return dim_; }

std::vector<float> HashEmbedder::embed(const std::string& text) {
  std::vector<float> out(dim_, 0.0f);
  std::uint64_t hash = 14695981039346656037ull;
  bool in_token = false;
  bool any_token = false;
  auto flush = [&]() {
    if (in_token) {
      out[hash % dim_] += 1.0f;
      hash = 14695981039346656037ull;
      in_token = false;
      any_token = true;
    }
  };
  for (unsigned char c : text) {
    if (std::isalnum(c)) {
      hash ^= std::uint64_t(std::tolower(c));
      hash *= 1099511628211ull;
      in_token = true;
    } else {
      flush();
    }
  }
  flush();
  if (!any_token) {
    throw InputError("hash embedder: no tokens in text");
  }
  double norm_sq = 0.0;
  for (float x : out) {
    norm_sq += double(x) * double(x);
  }
  const double norm = std::sqrt(norm_sq);
  for (float& x : out) {
    x = float(double(x) / norm);
  }
  return out;
}

HttpEmbedder::HttpEmbedder(std::string endpoint, std::string api_key, std::string model,
                           std::uint32_t dim, int max_retries)
    : endpoint_(std::move(endpoint)),
      api_key_(std::move(api_key)),
      model_(std::move(model)),
      dim_(dim),
      max_retries_(max_retries) {}

std::string HttpEmbedder::id() const { return "http:" + model_; }

std::uint32_t HttpEmbedder::dim() const { return dim_; }

std::vector<float> HttpEmbedder::embed(const std::string& text) {
  if (text.empty()) {
    throw InputError("embed: empty text");
  }
  const std::string key = sha256_hex(text);
  const auto cached = cache_.find(key);
  if (cached != cache_.end()) {
    return cached->second;
  }
  const nlohmann::json body = {{"input", text}, {"model", model_}};
  const std::string response = internal::post_json(endpoint_, api_key_, body.dump(), max_retries_);
  std::vector<float> vec;
  try {
    const nlohmann::json j = nlohmann::json::parse(response);
    vec = j.at("data").at(0).at("embedding").get<std::vector<float>>();
  } catch (const nlohmann::json::exception& e) {
    throw RemoteError(std::string("embedder reply not in expected shape: ") + e.what());
  }
  if (vec.size() != dim_) {
    throw RemoteError("embedder returned dim " + std::to_string(vec.size()) + ", expected " +
                      std::to_string(dim_));
  }
  if (!usable_vector(vec)) {
    throw RemoteError("embedder returned a zero or non-finite vector");
  }
  cache_[key] = vec;
  return vec;
}

EmbeddingStore embed_explanations(const std::vector<FeatureRecord>& records, Embedder& embedder) {
  EmbeddingStore store;
  store.dim = embedder.dim();
  store.embedder_id = embedder.id();
  for (const FeatureRecord& r : records) {
    if (r.explanation.empty()) {
      throw InputError("embed_explanations: empty explanation for feature " +
                       std::to_string(r.index));
    }
    std::vector<float> vec = embedder.embed(r.explanation);
    if (vec.size() != store.dim || !usable_vector(vec)) {
      throw InputError("embed_explanations: unusable embedding for feature " +
                       std::to_string(r.index));
    }
    store.vectors[r.index] = std::move(vec);
  }
  return store;
}

std::vector<UsefulnessScore> usefulness_scores(const EmbeddingStore& store,
                                               const FeatureSet& relevant, const FeatureSet& noise,
                                               const FeatureSet& candidates) {
  if (relevant.empty() || noise.empty()) {
    throw ConfigError("usefulness_scores: relevant and noise sets must be nonempty");
  }
  for (FeatureIndex c : candidates) {
    if (relevant.count(c) != 0 || noise.count(c) != 0) {
      throw InputError("usefulness_scores: candidate " + std::to_string(c) +
                       " overlaps the reference sets");
    }
  }
  std::vector<UsefulnessScore> out;
  out.reserve(candidates.size());
  for (FeatureIndex c : candidates) {
    const std::vector<float>& e_c = stored_vector(store, c, "candidate");
    double to_relevant = 0.0;
    for (FeatureIndex r : relevant) {
      to_relevant += cosine(e_c, stored_vector(store, r, "relevant"));
    }
    double to_noise = 0.0;
    for (FeatureIndex n : noise) {
      to_noise += cosine(e_c, stored_vector(store, n, "noise"));
    }
    out.push_back({c, to_relevant / double(relevant.size()) - to_noise / double(noise.size())});
  }
  return out;
}

std::vector<FeatureIndex> select_top_k(const std::vector<UsefulnessScore>& scores,
                                       std::uint32_t k) {
  std::vector<UsefulnessScore> sorted = scores;
  std::sort(sorted.begin(), sorted.end(), [](const UsefulnessScore& a, const UsefulnessScore& b) {
    if (a.score != b.score) return a.score > b.score;
    return a.index < b.index;
  });
  const std::size_t take = std::min<std::size_t>(k, sorted.size());
  std::vector<FeatureIndex> out;
  out.reserve(take);
  for (std::size_t i = 0; i < take; ++i) {
    out.push_back(sorted[i].index);
  }
  return out;
}

void save_embeddings(const EmbeddingStore& store, std::uint32_t n_features,
                     const std::string& dir) {
  ensure_dir(dir);
  std::vector<float> rows(std::size_t(n_features) * store.dim, 0.0f);
  std::vector<std::uint8_t> presence((n_features + 7) / 8, 0);
  for (const auto& [c, vec] : store.vectors) {
    if (c >= n_features) {
      throw InputError("save_embeddings: feature " + std::to_string(c) + " out of range");
    }
    if (vec.size() != store.dim || !usable_vector(vec)) {
      throw InputError("save_embeddings: unusable vector for feature " + std::to_string(c));
    }
    std::copy(vec.begin(), vec.end(), rows.begin() + std::size_t(c) * store.dim);
    presence[c / 8] |= std::uint8_t(1u << (c % 8));
  }
  const nlohmann::json manifest = {{"count", n_features},
                                   {"dim", store.dim},
                                   {"embedder_id", store.embedder_id},
                                   {"file", "embeddings.bin"},
                                   {"presence_file", "presence.bin"}};
  write_json_file(dir + "/embeddings.json", manifest);
  write_f32le(dir + "/embeddings.bin", rows);
  std::ofstream out(dir + "/presence.bin", std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(presence.data()), std::streamsize(presence.size()));
  if (!out) {
    throw InputError("cannot write " + dir + "/presence.bin");
  }
}

EmbeddingStore load_embeddings(const std::string& dir) {
  const nlohmann::json manifest = read_json_file(dir + "/embeddings.json");
  EmbeddingStore store;
  std::uint32_t count = 0;
  std::string file, presence_file;
  try {
    count = manifest.at("count").get<std::uint32_t>();
    store.dim = manifest.at("dim").get<std::uint32_t>();
    store.embedder_id = manifest.at("embedder_id").get<std::string>();
    file = manifest.at("file").get<std::string>();
    presence_file = manifest.at("presence_file").get<std::string>();
  } catch (const nlohmann::json::exception& e) {
    throw InputError("embeddings manifest " + dir + "/embeddings.json: " + e.what());
  }
  const std::vector<float> rows = read_f32le(dir + "/" + file, std::size_t(count) * store.dim);

  std::ifstream in(dir + "/" + presence_file, std::ios::binary);
  if (!in) {
    throw InputError("cannot open " + dir + "/" + presence_file);
  }
  std::vector<std::uint8_t> presence((count + 7) / 8);
  in.read(reinterpret_cast<char*>(presence.data()), std::streamsize(presence.size()));
  if (std::size_t(in.gcount()) != presence.size()) {
    throw InputError("presence bitmap truncated in " + dir);
  }

  for (std::uint32_t c = 0; c < count; ++c) {
    if ((presence[c / 8] >> (c % 8)) & 1u) {
      std::vector<float> vec(rows.begin() + std::size_t(c) * store.dim,
                             rows.begin() + std::size_t(c + 1) * store.dim);
      if (!usable_vector(vec)) {
        throw InputError("load_embeddings: zero or non-finite row for feature " +
                         std::to_string(c));
      }
      store.vectors[c] = std::move(vec);
    }
  }
  return store;
}

}  // namespace steerkit
