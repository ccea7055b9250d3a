#include "steerkit/sae.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "steerkit/io.hpp"

namespace steerkit {

namespace {

using RowMajorMatrix =
    Eigen::Matrix<float, Eigen::Dynamic, Eigen::Dynamic, Eigen::RowMajor>;

bool all_finite(const std::vector<float>& v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

}  // namespace

NonlinearitySpec NonlinearitySpec::topk(std::uint32_t k) {
  NonlinearitySpec s;
  s.kind = Kind::kTopKRelu;
  s.k = k;
  return s;
}

NonlinearitySpec NonlinearitySpec::jump(std::vector<float> theta) {
  NonlinearitySpec s;
  s.kind = Kind::kJumpRelu;
  s.theta = std::move(theta);
  return s;
}

float FeatureActivations::at(FeatureIndex c) const {
  auto it = std::lower_bound(
      values.begin(), values.end(), c,
      [](const std::pair<FeatureIndex, float>& p, FeatureIndex idx) { return p.first < idx; });
  if (it != values.end() && it->first == c) {
    return it->second;
  }
  return 0.0f;
}

void validate(const SaeParams& sae, std::vector<std::string>* warnings) {
  const std::size_t d = sae.input_dim;
  const std::size_t m = sae.n_features;
  if (d == 0 || m == 0) {
    throw ConfigError("sae: zero dimension (d=" + std::to_string(d) + ", m=" + std::to_string(m) + ")");
  }
  if (m < d) {
    throw ConfigError("sae: n_features (" + std::to_string(m) + ") must be >= input_dim (" +
                      std::to_string(d) + ")");
  }
  if (warnings != nullptr && m < 4 * d) {
    warnings->push_back("sae: n_features " + std::to_string(m) + " is less than 4*input_dim (" +
                        std::to_string(4 * d) + "); unusually small dictionary");
  }
  if (sae.w_enc.size() != d * m || sae.b_enc.size() != m || sae.w_dec.size() != m * d ||
      sae.b_dec.size() != d) {
    throw ConfigError("sae: weight tensor sizes inconsistent with d=" + std::to_string(d) +
                      ", m=" + std::to_string(m));
  }
  if (!all_finite(sae.w_enc) || !all_finite(sae.b_enc) || !all_finite(sae.w_dec) ||
      !all_finite(sae.b_dec)) {
    throw InputError("sae: non-finite weight entries");
  }
  switch (sae.nonlinearity.kind) {
    case NonlinearitySpec::Kind::kTopKRelu:
      if (sae.nonlinearity.k == 0 || sae.nonlinearity.k > m) {
        throw ConfigError("sae: topk k=" + std::to_string(sae.nonlinearity.k) +
                          " out of range (0, m]");
      }
      break;
    case NonlinearitySpec::Kind::kJumpRelu:
      if (sae.nonlinearity.theta.size() != m) {
        throw ConfigError("sae: jumprelu theta length != m");
      }
      for (float t : sae.nonlinearity.theta) {
        if (!(t >= 0.0f) || !std::isfinite(t)) {
          throw ConfigError("sae: jumprelu theta entries must be finite and >= 0");
        }
      }
      break;
  }
}

FeatureActivations encode(const SaeParams& sae, const std::vector<float>& z) {
  const std::size_t d = sae.input_dim;
  const std::size_t m = sae.n_features;
  if (z.size() != d) {
    throw ConfigError("encode: input length " + std::to_string(z.size()) + " != d " +
                      std::to_string(d));
  }

  Eigen::Map<const RowMajorMatrix> w(sae.w_enc.data(), Eigen::Index(d), Eigen::Index(m));
  Eigen::Map<const Eigen::VectorXf> zv(z.data(), Eigen::Index(d));
  Eigen::Map<const Eigen::VectorXf> b(sae.b_enc.data(), Eigen::Index(m));
  Eigen::VectorXf pre = w.transpose() * zv + b;

  FeatureActivations out;
  switch (sae.nonlinearity.kind) {
    case NonlinearitySpec::Kind::kTopKRelu: {
      // ReLU first, then keep the k largest positives; k-th ties go to the
      // lowest index so results are platform-independent.
      std::vector<std::pair<FeatureIndex, float>> positive;
      for (std::size_t c = 0; c < m; ++c) {
        if (pre[Eigen::Index(c)] > 0.0f) {
          positive.emplace_back(FeatureIndex(c), pre[Eigen::Index(c)]);
        }
      }
      const std::size_t k = std::min<std::size_t>(sae.nonlinearity.k, positive.size());
      std::partial_sort(positive.begin(), positive.begin() + std::ptrdiff_t(k), positive.end(),
                        [](const auto& a, const auto& b) {
                          if (a.second != b.second) return a.second > b.second;
                          return a.first < b.first;
                        });
      positive.resize(k);
      std::sort(positive.begin(), positive.end(),
                [](const auto& a, const auto& b) { return a.first < b.first; });
      out.values = std::move(positive);
      break;
    }
    case NonlinearitySpec::Kind::kJumpRelu: {
      for (std::size_t c = 0; c < m; ++c) {
        const float v = pre[Eigen::Index(c)];
        if (v > sae.nonlinearity.theta[c]) {
          out.values.emplace_back(FeatureIndex(c), v);
        }
      }
      break;
    }
  }
  return out;
}

std::vector<float> decode(const SaeParams& sae, const FeatureActivations& a) {
  const std::size_t d = sae.input_dim;
  // Accumulates in double so the result matches a dense double-precision
  // reconstruction to a final float rounding.
  std::vector<double> acc(sae.b_dec.begin(), sae.b_dec.end());
  for (const auto& [c, v] : a.values) {
    if (c >= sae.n_features) {
      throw InputError("decode: feature index " + std::to_string(c) + " out of range (m=" +
                       std::to_string(sae.n_features) + ")");
    }
    const float* row = sae.w_dec.data() + std::size_t(c) * d;
    for (std::size_t i = 0; i < d; ++i) {
      acc[i] += double(v) * double(row[i]);
    }
  }
  std::vector<float> out(d);
  for (std::size_t i = 0; i < d; ++i) {
    out[i] = float(acc[i]);
  }
  return out;
}

std::vector<float> feature_direction(const SaeParams& sae, FeatureIndex c) {
  if (c >= sae.n_features) {
    throw InputError("feature_direction: index " + std::to_string(c) + " out of range (m=" +
                     std::to_string(sae.n_features) + ")");
  }
  const std::size_t d = sae.input_dim;
  const float* row = sae.w_dec.data() + std::size_t(c) * d;
  return std::vector<float>(row, row + d);
}

void save_sae(const SaeParams& sae, const std::string& dir) {
  validate(sae);
  ensure_dir(dir);

  nlohmann::json manifest;
  manifest["d"] = sae.input_dim;
  manifest["m"] = sae.n_features;
  manifest["dtype"] = "f32le";
  switch (sae.nonlinearity.kind) {
    case NonlinearitySpec::Kind::kTopKRelu:
      manifest["nonlinearity"] = {{"kind", "topk"}, {"k", sae.nonlinearity.k}};
      break;
    case NonlinearitySpec::Kind::kJumpRelu:
      manifest["nonlinearity"] = {{"kind", "jumprelu"}, {"theta_file", "theta.bin"}};
      write_f32le(dir + "/theta.bin", sae.nonlinearity.theta);
      break;
  }
  write_json_file(dir + "/manifest.json", manifest);

  std::vector<std::uint8_t> blob;
  blob.reserve((sae.w_enc.size() + sae.b_enc.size() + sae.w_dec.size() + sae.b_dec.size()) *
               sizeof(float));
  append_f32le(blob, sae.w_enc.data(), sae.w_enc.size());
  append_f32le(blob, sae.b_enc.data(), sae.b_enc.size());
  append_f32le(blob, sae.w_dec.data(), sae.w_dec.size());
  append_f32le(blob, sae.b_dec.data(), sae.b_dec.size());
  std::ofstream out(dir + "/weights.bin", std::ios::binary | std::ios::trunc);
  out.write(reinterpret_cast<const char*>(blob.data()), std::streamsize(blob.size()));
  if (!out) {
    throw InputError("cannot write " + dir + "/weights.bin");
  }
}

SaeParams load_sae(const std::string& dir, std::vector<std::string>* warnings) {
  const nlohmann::json manifest = read_json_file(dir + "/manifest.json");
  SaeParams sae;
  try {
    sae.input_dim = manifest.at("d").get<std::uint32_t>();
    sae.n_features = manifest.at("m").get<std::uint32_t>();
    const std::string dtype = manifest.at("dtype").get<std::string>();
    if (dtype != "f32le") {
      throw InputError("sae manifest: unsupported dtype " + dtype);
    }
    const auto& nl = manifest.at("nonlinearity");
    const std::string kind = nl.at("kind").get<std::string>();
    if (kind == "topk") {
      sae.nonlinearity = NonlinearitySpec::topk(nl.at("k").get<std::uint32_t>());
    } else if (kind == "jumprelu") {
      const std::string theta_file = nl.at("theta_file").get<std::string>();
      sae.nonlinearity =
          NonlinearitySpec::jump(read_f32le(dir + "/" + theta_file, sae.n_features));
    } else {
      throw InputError("sae manifest: unknown nonlinearity kind " + kind);
    }
  } catch (const nlohmann::json::exception& e) {
    throw InputError("sae manifest " + dir + "/manifest.json: " + e.what());
  }

  const std::size_t d = sae.input_dim;
  const std::size_t m = sae.n_features;
  std::vector<float> blob = read_f32le(dir + "/weights.bin", d * m + m + m * d + d);
  auto it = blob.begin();
  sae.w_enc.assign(it, it + std::ptrdiff_t(d * m));
  it += std::ptrdiff_t(d * m);
  sae.b_enc.assign(it, it + std::ptrdiff_t(m));
  it += std::ptrdiff_t(m);
  sae.w_dec.assign(it, it + std::ptrdiff_t(m * d));
  it += std::ptrdiff_t(m * d);
  sae.b_dec.assign(it, it + std::ptrdiff_t(d));

  validate(sae, warnings);
  return sae;
}

}  // namespace steerkit
