#include "steerkit/model.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <random>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "steerkit/io.hpp"
#include "steerkit/rng.hpp"

namespace steerkit {

namespace {

using RowMajorMatrixF =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;
using MapMat = Eigen::Map<const RowMajorMatrixF>;
using MapVec = Eigen::Map<const Eigen::VectorXf>;

constexpr float kNormEps = 1e-5f;

void check_tensor(const std::vector<float>& t, std::size_t expect, const char* name) {
  if (t.size() != expect) {
    throw ConfigError(std::string("model tensor ") + name + " has " + std::to_string(t.size()) +
                      " entries, expected " + std::to_string(expect));
  }
  for (float x : t) {
    if (!std::isfinite(x)) {
      throw InputError(std::string("model tensor ") + name + " has non-finite entries");
    }
  }
}

// Row-wise: (x - mean) / sqrt(var + eps) * w + b, population variance.
void layer_norm_rows(RowMajorMatrixF& x, const std::vector<float>& w,
                     const std::vector<float>& b) {
  const Eigen::Index d = x.cols();
  for (Eigen::Index r = 0; r < x.rows(); ++r) {
    float mean = 0.0f;
    for (Eigen::Index i = 0; i < d; ++i) {
      mean += x(r, i);
    }
    mean /= float(d);
    float var = 0.0f;
    for (Eigen::Index i = 0; i < d; ++i) {
      const float c = x(r, i) - mean;
      var += c * c;
    }
    var /= float(d);
    const float inv = 1.0f / std::sqrt(var + kNormEps);
    for (Eigen::Index i = 0; i < d; ++i) {
      x(r, i) = (x(r, i) - mean) * inv * w[std::size_t(i)] + b[std::size_t(i)];
    }
  }
}

float gelu(float x) {
  return 0.5f * x * (1.0f + std::erf(x * 0.70710678118654752440f));
}

struct ForwardOptions {
  std::optional<std::uint32_t> capture_layer;
  const InjectionConfig* injection = nullptr;
  std::uint32_t prompt_len = 0;
};

ForwardResult forward_impl(const ModelParams& model, const std::vector<std::uint32_t>& ids,
                           const ForwardOptions& opt) {
  const std::uint32_t d = model.hidden_dim;
  const std::uint32_t heads = model.n_heads;
  const std::uint32_t head_dim = d / heads;
  const Eigen::Index seq = Eigen::Index(ids.size());

  if (ids.empty()) {
    throw InputError("forward: empty token sequence");
  }
  if (ids.size() > model.max_seq_len) {
    throw InputError("forward: sequence length " + std::to_string(ids.size()) +
                     " exceeds max_seq_len " + std::to_string(model.max_seq_len));
  }
  for (std::uint32_t id : ids) {
    if (id >= model.vocab_size) {
      throw InputError("forward: token id " + std::to_string(id) + " out of range (vocab " +
                       std::to_string(model.vocab_size) + ")");
    }
  }
  if (opt.capture_layer && *opt.capture_layer >= model.n_layers) {
    throw ConfigError("forward: capture layer " + std::to_string(*opt.capture_layer) +
                      " out of range (n_layers " + std::to_string(model.n_layers) + ")");
  }
  if (opt.injection != nullptr) {
    if (opt.injection->vector.values.size() != d) {
      throw ConfigError("injection vector length " +
                        std::to_string(opt.injection->vector.values.size()) +
                        " != hidden_dim " + std::to_string(d));
    }
    if (opt.injection->layer_index >= model.n_layers) {
      throw ConfigError("injection layer " + std::to_string(opt.injection->layer_index) +
                        " out of range (n_layers " + std::to_string(model.n_layers) + ")");
    }
  }

  RowMajorMatrixF x(seq, d);
  for (Eigen::Index t = 0; t < seq; ++t) {
    const float* tok = model.tok_embedding.data() + std::size_t(ids[std::size_t(t)]) * d;
    const float* pos = model.pos_embedding.data() + std::size_t(t) * d;
    for (std::uint32_t i = 0; i < d; ++i) {
      x(t, Eigen::Index(i)) = tok[i] + pos[i];
    }
  }

  ForwardResult result;
  result.seq_len = std::uint32_t(seq);
  result.vocab_size = model.vocab_size;

  const float scale = 1.0f / std::sqrt(float(head_dim));
  for (std::uint32_t layer = 0; layer < model.n_layers; ++layer) {
    const ModelParams::Block& blk = model.blocks[layer];

    RowMajorMatrixF n = x;
    layer_norm_rows(n, blk.attn_norm_w, blk.attn_norm_b);
    RowMajorMatrixF q = n * MapMat(blk.wq.data(), d, d);
    RowMajorMatrixF k = n * MapMat(blk.wk.data(), d, d);
    RowMajorMatrixF v = n * MapMat(blk.wv.data(), d, d);
    q.rowwise() += MapVec(blk.bq.data(), d).transpose();
    k.rowwise() += MapVec(blk.bk.data(), d).transpose();
    v.rowwise() += MapVec(blk.bv.data(), d).transpose();

    RowMajorMatrixF ctx(seq, d);
    for (std::uint32_t h = 0; h < heads; ++h) {
      const Eigen::Index off = Eigen::Index(h) * head_dim;
      auto qh = q.middleCols(off, head_dim);
      auto kh = k.middleCols(off, head_dim);
      auto vh = v.middleCols(off, head_dim);
      for (Eigen::Index t = 0; t < seq; ++t) {
        // Causal attention over positions [0, t], softmax in float with the
        // usual max subtraction.
        float best = -std::numeric_limits<float>::infinity();
        Eigen::VectorXf scores(t + 1);
        for (Eigen::Index s = 0; s <= t; ++s) {
          scores[s] = qh.row(t).dot(kh.row(s)) * scale;
          best = std::max(best, scores[s]);
        }
        float denom = 0.0f;
        for (Eigen::Index s = 0; s <= t; ++s) {
          scores[s] = std::exp(scores[s] - best);
          denom += scores[s];
        }
        Eigen::RowVectorXf acc = Eigen::RowVectorXf::Zero(head_dim);
        for (Eigen::Index s = 0; s <= t; ++s) {
          acc += (scores[s] / denom) * vh.row(s);
        }
        ctx.row(t).segment(off, head_dim) = acc;
      }
    }
    RowMajorMatrixF attn_out = ctx * MapMat(blk.wo.data(), d, d);
    attn_out.rowwise() += MapVec(blk.bo.data(), d).transpose();
    x += attn_out;

    RowMajorMatrixF n2 = x;
    layer_norm_rows(n2, blk.mlp_norm_w, blk.mlp_norm_b);
    RowMajorMatrixF h1 = n2 * MapMat(blk.w1.data(), d, 4 * d);
    h1.rowwise() += MapVec(blk.b1.data(), 4 * d).transpose();
    for (Eigen::Index r = 0; r < h1.rows(); ++r) {
      for (Eigen::Index c = 0; c < h1.cols(); ++c) {
        h1(r, c) = gelu(h1(r, c));
      }
    }
    RowMajorMatrixF mlp_out = h1 * MapMat(blk.w2.data(), 4 * d, d);
    mlp_out.rowwise() += MapVec(blk.b2.data(), d).transpose();
    x += mlp_out;

    // Residual-stream edit and capture both happen after the block, with
    // the edit first so captures see the injected state.
    if (opt.injection != nullptr && opt.injection->layer_index == layer) {
      const std::vector<float>& vec = opt.injection->vector.values;
      const Eigen::Index first =
          opt.injection->positions == InjectPositions::kAllPositions
              ? 0
              : Eigen::Index(std::min<std::size_t>(opt.prompt_len, std::size_t(seq)));
      for (Eigen::Index t = first; t < seq; ++t) {
        for (std::uint32_t i = 0; i < d; ++i) {
          x(t, Eigen::Index(i)) += vec[i];
        }
      }
    }
    if (opt.capture_layer && *opt.capture_layer == layer) {
      for (Eigen::Index t = 0; t < seq; ++t) {
        HiddenState hs;
        hs.layer_index = layer;
        hs.token_position = std::uint32_t(t);
        hs.values.resize(d);
        for (std::uint32_t i = 0; i < d; ++i) {
          hs.values[i] = x(t, Eigen::Index(i));
        }
        result.captured.push_back(std::move(hs));
      }
    }
  }

  layer_norm_rows(x, model.final_norm_w, model.final_norm_b);
  RowMajorMatrixF logits = x * MapMat(model.lm_head.data(), d, model.vocab_size);
  logits.rowwise() += MapVec(model.lm_head_b.data(), model.vocab_size).transpose();
  result.logits.assign(logits.data(), logits.data() + logits.size());
  return result;
}

}  // namespace

void validate(const ModelParams& model) {
  const std::uint32_t d = model.hidden_dim;
  if (model.vocab_size == 0 || d == 0 || model.n_layers == 0 || model.n_heads == 0 ||
      model.max_seq_len == 0) {
    throw ConfigError("model: zero dimension");
  }
  if (d % model.n_heads != 0) {
    throw ConfigError("model: hidden_dim " + std::to_string(d) + " not divisible by n_heads " +
                      std::to_string(model.n_heads));
  }
  if (model.blocks.size() != model.n_layers) {
    throw ConfigError("model: block count " + std::to_string(model.blocks.size()) +
                      " != n_layers " + std::to_string(model.n_layers));
  }
  check_tensor(model.tok_embedding, std::size_t(model.vocab_size) * d, "tok_embedding");
  check_tensor(model.pos_embedding, std::size_t(model.max_seq_len) * d, "pos_embedding");
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const ModelParams::Block& b = model.blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    check_tensor(b.attn_norm_w, d, (p + "attn_norm.weight").c_str());
    check_tensor(b.attn_norm_b, d, (p + "attn_norm.bias").c_str());
    for (const auto& [t, name] : {std::pair<const std::vector<float>&, const char*>{b.wq, "wq"},
                                  {b.wk, "wk"},
                                  {b.wv, "wv"},
                                  {b.wo, "wo"}}) {
      check_tensor(t, std::size_t(d) * d, (p + "attn." + name).c_str());
    }
    for (const auto& [t, name] : {std::pair<const std::vector<float>&, const char*>{b.bq, "bq"},
                                  {b.bk, "bk"},
                                  {b.bv, "bv"},
                                  {b.bo, "bo"}}) {
      check_tensor(t, d, (p + "attn." + name).c_str());
    }
    check_tensor(b.mlp_norm_w, d, (p + "mlp_norm.weight").c_str());
    check_tensor(b.mlp_norm_b, d, (p + "mlp_norm.bias").c_str());
    check_tensor(b.w1, std::size_t(d) * 4 * d, (p + "mlp.w1").c_str());
    check_tensor(b.b1, std::size_t(4) * d, (p + "mlp.b1").c_str());
    check_tensor(b.w2, std::size_t(4) * d * d, (p + "mlp.w2").c_str());
    check_tensor(b.b2, d, (p + "mlp.b2").c_str());
  }
  check_tensor(model.final_norm_w, d, "final_norm.weight");
  check_tensor(model.final_norm_b, d, "final_norm.bias");
  check_tensor(model.lm_head, std::size_t(d) * model.vocab_size, "lm_head");
  check_tensor(model.lm_head_b, model.vocab_size, "lm_head.bias");
}

ModelParams random_model(std::uint32_t vocab_size, std::uint32_t hidden_dim,
                         std::uint32_t n_layers, std::uint32_t n_heads,
                         std::uint32_t max_seq_len, std::uint64_t seed) {
  ModelParams model;
  model.vocab_size = vocab_size;
  model.hidden_dim = hidden_dim;
  model.n_layers = n_layers;
  model.n_heads = n_heads;
  model.max_seq_len = max_seq_len;

  std::mt19937_64 g(seed);
  const auto fill = [&g](std::vector<float>& t, std::size_t n, double std_dev) {
    t.resize(n);
    for (float& x : t) {
      x = float(std_dev * rng::normal(g));
    }
  };
  const double w_std = 1.0 / std::sqrt(double(hidden_dim));

  fill(model.tok_embedding, std::size_t(vocab_size) * hidden_dim, 0.5);
  fill(model.pos_embedding, std::size_t(max_seq_len) * hidden_dim, 0.5);
  model.blocks.resize(n_layers);
  for (ModelParams::Block& b : model.blocks) {
    b.attn_norm_w.assign(hidden_dim, 1.0f);
    b.attn_norm_b.assign(hidden_dim, 0.0f);
    fill(b.wq, std::size_t(hidden_dim) * hidden_dim, w_std);
    fill(b.bq, hidden_dim, 0.01);
    fill(b.wk, std::size_t(hidden_dim) * hidden_dim, w_std);
    fill(b.bk, hidden_dim, 0.01);
    fill(b.wv, std::size_t(hidden_dim) * hidden_dim, w_std);
    fill(b.bv, hidden_dim, 0.01);
    fill(b.wo, std::size_t(hidden_dim) * hidden_dim, w_std);
    fill(b.bo, hidden_dim, 0.01);
    b.mlp_norm_w.assign(hidden_dim, 1.0f);
    b.mlp_norm_b.assign(hidden_dim, 0.0f);
    fill(b.w1, std::size_t(hidden_dim) * 4 * hidden_dim, w_std);
    fill(b.b1, std::size_t(4) * hidden_dim, 0.01);
    fill(b.w2, std::size_t(4) * hidden_dim * hidden_dim, 0.5 * w_std);
    fill(b.b2, hidden_dim, 0.01);
  }
  model.final_norm_w.assign(hidden_dim, 1.0f);
  model.final_norm_b.assign(hidden_dim, 0.0f);
  fill(model.lm_head, std::size_t(hidden_dim) * vocab_size, w_std);
  fill(model.lm_head_b, vocab_size, 0.01);
  validate(model);
  return model;
}

std::vector<std::uint32_t> tokenize_bytes(const std::string& text) {
  std::vector<std::uint32_t> ids;
  ids.reserve(text.size());
  for (unsigned char c : text) {
    ids.push_back(c);
  }
  return ids;
}

std::string detokenize_bytes(const std::vector<std::uint32_t>& ids) {
  std::string out;
  out.reserve(ids.size());
  for (std::uint32_t id : ids) {
    if (id > 255) {
      throw InputError("detokenize: id " + std::to_string(id) + " is not a byte");
    }
    out.push_back(char(static_cast<unsigned char>(id)));
  }
  return out;
}

ForwardResult forward_capture(const ModelParams& model, const std::vector<std::uint32_t>& token_ids,
                              std::uint32_t layer_index,
                              const std::optional<InjectionConfig>& injection,
                              std::uint32_t prompt_len) {
  ForwardOptions opt;
  opt.capture_layer = layer_index;
  opt.injection = injection ? &*injection : nullptr;
  opt.prompt_len = prompt_len;
  return forward_impl(model, token_ids, opt);
}

std::vector<std::uint32_t> generate_steered(const ModelParams& model,
                                            const std::vector<std::uint32_t>& prompt_ids,
                                            const std::optional<InjectionConfig>& injection,
                                            std::uint32_t max_new_tokens) {
  if (prompt_ids.empty()) {
    throw InputError("generate: empty prompt");
  }
  if (prompt_ids.size() + max_new_tokens > model.max_seq_len) {
    throw InputError("generate: prompt length " + std::to_string(prompt_ids.size()) +
                     " plus max_new_tokens " + std::to_string(max_new_tokens) +
                     " exceeds max_seq_len " + std::to_string(model.max_seq_len));
  }
  ForwardOptions opt;
  opt.injection = injection ? &*injection : nullptr;
  opt.prompt_len = std::uint32_t(prompt_ids.size());

  std::vector<std::uint32_t> ids = prompt_ids;
  std::vector<std::uint32_t> generated;
  for (std::uint32_t step = 0; step < max_new_tokens; ++step) {
    const ForwardResult r = forward_impl(model, ids, opt);
    const float* last = r.logits.data() + std::size_t(r.seq_len - 1) * r.vocab_size;
    std::uint32_t best = 0;
    for (std::uint32_t v = 1; v < r.vocab_size; ++v) {
      if (last[v] > last[best]) {
        best = v;
      }
    }
    ids.push_back(best);
    generated.push_back(best);
  }
  return generated;
}

std::pair<HiddenState, HiddenState> capture_pair_activations(const ModelParams& model,
                                                             const ContrastivePair& pair,
                                                             const PromptFormat& fmt,
                                                             std::uint32_t layer_index,
                                                             ExtractionSite site) {
  const auto capture_one = [&](Polarity polarity) {
    const std::vector<std::uint32_t> ids = tokenize_bytes(format_pair(pair, fmt, polarity));
    if (ids.size() > model.max_seq_len) {
      throw InputError("pair \"" + pair.id + "\": formatted sequence of " +
                       std::to_string(ids.size()) + " tokens exceeds max_seq_len " +
                       std::to_string(model.max_seq_len));
    }
    const ForwardResult r = forward_capture(model, ids, layer_index);
    if (site == ExtractionSite::kLastToken) {
      return r.captured.back();
    }
    HiddenState mean;
    mean.layer_index = layer_index;
    mean.token_position = 0;  // position is not meaningful for the mean site
    mean.values.assign(model.hidden_dim, 0.0f);
    for (const HiddenState& hs : r.captured) {
      for (std::size_t i = 0; i < mean.values.size(); ++i) {
        mean.values[i] += hs.values[i];
      }
    }
    for (float& x : mean.values) {
      x /= float(r.captured.size());
    }
    return mean;
  };
  return {capture_one(Polarity::kPositive), capture_one(Polarity::kNegative)};
}

namespace {

// Tensor table entries in serialization order.
struct TensorRef {
  std::string name;
  const std::vector<float>* data;
  std::vector<std::size_t> shape;
};

std::vector<TensorRef> tensor_table(const ModelParams& model) {
  const std::size_t d = model.hidden_dim;
  std::vector<TensorRef> t;
  t.push_back({"tok_embedding", &model.tok_embedding, {model.vocab_size, d}});
  t.push_back({"pos_embedding", &model.pos_embedding, {model.max_seq_len, d}});
  for (std::size_t i = 0; i < model.blocks.size(); ++i) {
    const ModelParams::Block& b = model.blocks[i];
    const std::string p = "blocks." + std::to_string(i) + ".";
    t.push_back({p + "attn_norm.weight", &b.attn_norm_w, {d}});
    t.push_back({p + "attn_norm.bias", &b.attn_norm_b, {d}});
    t.push_back({p + "attn.wq", &b.wq, {d, d}});
    t.push_back({p + "attn.bq", &b.bq, {d}});
    t.push_back({p + "attn.wk", &b.wk, {d, d}});
    t.push_back({p + "attn.bk", &b.bk, {d}});
    t.push_back({p + "attn.wv", &b.wv, {d, d}});
    t.push_back({p + "attn.bv", &b.bv, {d}});
    t.push_back({p + "attn.wo", &b.wo, {d, d}});
    t.push_back({p + "attn.bo", &b.bo, {d}});
    t.push_back({p + "mlp_norm.weight", &b.mlp_norm_w, {d}});
    t.push_back({p + "mlp_norm.bias", &b.mlp_norm_b, {d}});
    t.push_back({p + "mlp.w1", &b.w1, {d, 4 * d}});
    t.push_back({p + "mlp.b1", &b.b1, {4 * d}});
    t.push_back({p + "mlp.w2", &b.w2, {4 * d, d}});
    t.push_back({p + "mlp.b2", &b.b2, {d}});
  }
  t.push_back({"final_norm.weight", &model.final_norm_w, {d}});
  t.push_back({"final_norm.bias", &model.final_norm_b, {d}});
  t.push_back({"lm_head", &model.lm_head, {d, model.vocab_size}});
  t.push_back({"lm_head.bias", &model.lm_head_b, {model.vocab_size}});
  return t;
}

std::vector<std::vector<float>*> mutable_tensor_slots(ModelParams& model) {
  std::vector<std::vector<float>*> slots;
  slots.push_back(&model.tok_embedding);
  slots.push_back(&model.pos_embedding);
  for (ModelParams::Block& b : model.blocks) {
    for (auto* t : {&b.attn_norm_w, &b.attn_norm_b, &b.wq, &b.bq, &b.wk, &b.bk, &b.wv, &b.bv,
                    &b.wo, &b.bo, &b.mlp_norm_w, &b.mlp_norm_b, &b.w1, &b.b1, &b.w2, &b.b2}) {
      slots.push_back(t);
    }
  }
  slots.push_back(&model.final_norm_w);
  slots.push_back(&model.final_norm_b);
  slots.push_back(&model.lm_head);
  slots.push_back(&model.lm_head_b);
  return slots;
}

}  // namespace

void save_model(const ModelParams& model, const std::string& dir) {
  validate(model);
  ensure_dir(dir);
  nlohmann::json tensors = nlohmann::json::object();
  std::vector<std::uint8_t> blob;
  std::size_t offset = 0;
  for (const TensorRef& t : tensor_table(model)) {
    tensors[t.name] = {{"offset", offset}, {"shape", t.shape}};
    append_f32le(blob, t.data->data(), t.data->size());
    offset += t.data->size() * sizeof(float);
  }
  const nlohmann::json manifest = {{"vocab_size", model.vocab_size},
                                   {"hidden_dim", model.hidden_dim},
                                   {"n_layers", model.n_layers},
                                   {"n_heads", model.n_heads},
                                   {"max_seq_len", model.max_seq_len},
                                   {"dtype", "f32le"},
                                   {"file", "weights.bin"},
                                   {"tensors", tensors}};
  write_json_file(dir + "/manifest.json", manifest);
  std::ofstream out(dir + "/weights.bin", std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(blob.data()), std::streamsize(blob.size()));
  if (!out) {
    throw InputError("cannot write " + dir + "/weights.bin");
  }
}

ModelParams load_model(const std::string& dir) {
  const nlohmann::json manifest = read_json_file(dir + "/manifest.json");
  ModelParams model;
  std::string file;
  nlohmann::json tensors;
  try {
    model.vocab_size = manifest.at("vocab_size").get<std::uint32_t>();
    model.hidden_dim = manifest.at("hidden_dim").get<std::uint32_t>();
    model.n_layers = manifest.at("n_layers").get<std::uint32_t>();
    model.n_heads = manifest.at("n_heads").get<std::uint32_t>();
    model.max_seq_len = manifest.at("max_seq_len").get<std::uint32_t>();
    const std::string dtype = manifest.at("dtype").get<std::string>();
    if (dtype != "f32le") {
      throw InputError("model manifest: unsupported dtype " + dtype);
    }
    file = manifest.at("file").get<std::string>();
    tensors = manifest.at("tensors");
  } catch (const nlohmann::json::exception& e) {
    throw InputError("model manifest " + dir + "/manifest.json: " + e.what());
  }

  model.blocks.resize(model.n_layers);
  const std::vector<float> blob = read_f32le(dir + "/" + file);
  const std::vector<TensorRef> table = tensor_table(model);
  const std::vector<std::vector<float>*> slots = mutable_tensor_slots(model);
  for (std::size_t i = 0; i < table.size(); ++i) {
    const TensorRef& t = table[i];
    std::size_t offset_bytes = 0;
    std::vector<std::size_t> shape;
    try {
      const nlohmann::json& entry = tensors.at(t.name);
      offset_bytes = entry.at("offset").get<std::size_t>();
      shape = entry.at("shape").get<std::vector<std::size_t>>();
    } catch (const nlohmann::json::exception& e) {
      throw InputError("model manifest: tensor " + t.name + ": " + e.what());
    }
    if (shape != t.shape) {
      throw InputError("model manifest: tensor " + t.name + " has unexpected shape");
    }
    if (offset_bytes % sizeof(float) != 0) {
      throw InputError("model manifest: tensor " + t.name + " offset not float-aligned");
    }
    std::size_t count = 1;
    for (std::size_t s : shape) {
      count *= s;
    }
    const std::size_t begin = offset_bytes / sizeof(float);
    if (begin + count > blob.size()) {
      throw InputError("model weights: tensor " + t.name + " extends past end of file");
    }
    slots[i]->assign(blob.begin() + std::ptrdiff_t(begin),
                     blob.begin() + std::ptrdiff_t(begin + count));
  }
  validate(model);
  return model;
}

}  // namespace steerkit
