#include "steerkit/steering.hpp"

#include <algorithm>
#include <cmath>
#include <cstdio>
#include <numeric>
#include <random>

#include <Eigen/Dense>
#include <nlohmann/json.hpp>

#include "steerkit/io.hpp"
#include "steerkit/rng.hpp"

namespace steerkit {

namespace {

std::string format_real(double x) {
  char buf[64];
  std::snprintf(buf, sizeof(buf), "%g", x);
  return buf;
}

bool finite_vec(const std::vector<float>& v) {
  return std::all_of(v.begin(), v.end(), [](float x) { return std::isfinite(x); });
}

// Rows of `data` as an n x d double matrix; dimensions must agree.
Eigen::MatrixXd to_matrix(const std::vector<HiddenState>& states, const char* what) {
  if (states.empty()) {
    throw InputError(std::string(what) + ": empty input");
  }
  const std::size_t d = states[0].values.size();
  Eigen::MatrixXd x(states.size(), d);
  for (std::size_t i = 0; i < states.size(); ++i) {
    if (states[i].values.size() != d) {
      throw InputError(std::string(what) + ": ragged dimensions (" +
                       std::to_string(states[i].values.size()) + " vs " + std::to_string(d) +
                       ")");
    }
    if (!finite_vec(states[i].values)) {
      throw InputError(std::string(what) + ": non-finite entries at sample " + std::to_string(i));
    }
    for (std::size_t j = 0; j < d; ++j) {
      x(Eigen::Index(i), Eigen::Index(j)) = states[i].values[j];
    }
  }
  return x;
}

// Leading eigenvector of a symmetric PSD matrix by power iteration with a
// fixed-seed start. Throws InputError when the matrix is (numerically) zero.
Eigen::VectorXd power_iterate(const Eigen::MatrixXd& c, const char* what) {
  const Eigen::Index d = c.rows();
  if (c.cwiseAbs().maxCoeff() < 1e-30) {
    throw InputError(std::string(what) + ": degenerate input (zero covariance)");
  }
  std::mt19937_64 g(0x9e3779b97f4a7c15ull);
  Eigen::VectorXd u(d);
  for (Eigen::Index i = 0; i < d; ++i) {
    u[i] = rng::normal(g);
  }
  u.normalize();
  for (int iter = 0; iter < 100000; ++iter) {
    Eigen::VectorXd v = c * u;
    const double norm = v.norm();
    if (norm < 1e-300) {
      // Start vector landed in the null space; nudge and continue.
      for (Eigen::Index i = 0; i < d; ++i) {
        u[i] = rng::normal(g);
      }
      u.normalize();
      continue;
    }
    v /= norm;
    if ((v - u).norm() < 1e-13) {
      u = v;
      break;
    }
    u = v;
  }
  return u;
}

// Largest-magnitude coordinate made positive; ties go to the lowest index.
void fix_sign(Eigen::VectorXd& u) {
  Eigen::Index best = 0;
  for (Eigen::Index i = 1; i < u.size(); ++i) {
    if (std::abs(u[i]) > std::abs(u[best])) {
      best = i;
    }
  }
  if (u[best] < 0.0) {
    u = -u;
  }
}

SteeringVector from_eigen(const Eigen::VectorXd& u, SteeringVector::Kind kind) {
  SteeringVector v;
  v.kind = kind;
  v.values.resize(std::size_t(u.size()));
  for (Eigen::Index i = 0; i < u.size(); ++i) {
    v.values[std::size_t(i)] = float(u[i]);
  }
  return v;
}

}  // namespace

std::string kind_to_string(SteeringVector::Kind kind) {
  switch (kind) {
    case SteeringVector::Kind::kCaa: return "caa";
    case SteeringVector::Kind::kNoise: return "noise";
    case SteeringVector::Kind::kUseful: return "useful";
    case SteeringVector::Kind::kRefined: return "refined";
    case SteeringVector::Kind::kPca: return "pca";
    case SteeringVector::Kind::kLat: return "lat";
    case SteeringVector::Kind::kProbe: return "probe";
  }
  throw InternalError("unhandled vector kind");
}

SteeringVector::Kind kind_from_string(const std::string& s) {
  if (s == "caa") return SteeringVector::Kind::kCaa;
  if (s == "noise") return SteeringVector::Kind::kNoise;
  if (s == "useful") return SteeringVector::Kind::kUseful;
  if (s == "refined") return SteeringVector::Kind::kRefined;
  if (s == "pca") return SteeringVector::Kind::kPca;
  if (s == "lat") return SteeringVector::Kind::kLat;
  if (s == "probe") return SteeringVector::Kind::kProbe;
  throw InputError("unknown vector kind: " + s);
}

SteeringVector build_caa_vector(
    const std::vector<std::pair<HiddenState, HiddenState>>& pairs) {
  if (pairs.empty()) {
    throw InputError("build_caa_vector: empty pair list");
  }
  const std::size_t d = pairs[0].first.values.size();
  std::vector<double> acc(d, 0.0);
  for (const auto& [plus, minus] : pairs) {
    if (plus.values.size() != d || minus.values.size() != d) {
      throw InputError("build_caa_vector: dimension mismatch across pairs");
    }
    for (std::size_t i = 0; i < d; ++i) {
      acc[i] += double(plus.values[i]) - double(minus.values[i]);
    }
  }
  SteeringVector v;
  v.kind = SteeringVector::Kind::kCaa;
  v.values.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    v.values[i] = float(acc[i] / double(pairs.size()));
  }
  v.provenance["pairs"] = std::to_string(pairs.size());
  return v;
}

ActivationDiff compute_activation_diff(
    const SaeParams& sae,
    const std::vector<std::pair<HiddenState, HiddenState>>& pairs) {
  if (pairs.empty()) {
    throw InputError("compute_activation_diff: empty pair list");
  }
  const std::size_t m = sae.n_features;
  std::vector<double> acc(m, 0.0);
  for (const auto& [plus, minus] : pairs) {
    for (const auto& [c, a] : encode(sae, plus.values).values) {
      acc[c] += a;
    }
    for (const auto& [c, a] : encode(sae, minus.values).values) {
      acc[c] -= a;
    }
  }
  ActivationDiff diff;
  diff.values.resize(m);
  for (std::size_t i = 0; i < m; ++i) {
    diff.values[i] = float(acc[i] / double(pairs.size()));
  }
  return diff;
}

FeatureSet seed_set(const ActivationDiff& diff) {
  FeatureSet out;
  for (std::size_t c = 0; c < diff.values.size(); ++c) {
    if (diff.values[c] > 0.0f) {
      out.insert(FeatureIndex(c));
    }
  }
  return out;
}

NoiseWeights compute_noise_weights(const FeatureSet& noise_set,
                                   const std::vector<FeatureActivations>& positives) {
  NoiseWeights w;
  if (positives.empty()) {
    throw InputError("compute_noise_weights: no positive samples");
  }
  double total = 0.0;
  for (FeatureIndex c : noise_set) {
    double sum = 0.0;
    for (const auto& acts : positives) {
      sum += acts.at(c);
    }
    const double mean = sum / double(positives.size());
    w.alpha[c] = float(mean);
    total += mean;
  }
  if (total > 0.0) {
    for (const auto& [c, a] : w.alpha) {
      w.normalized[c] = float(double(a) / total);
    }
  }
  return w;
}

SteeringVector build_noise_vector(const SaeParams& sae, const FeatureSet& noise_set,
                                  const std::vector<FeatureActivations>& positive_activations) {
  for (FeatureIndex c : noise_set) {
    if (c >= sae.n_features) {
      throw InputError("build_noise_vector: feature " + std::to_string(c) + " out of range");
    }
  }
  const NoiseWeights w = compute_noise_weights(noise_set, positive_activations);
  const std::size_t d = sae.input_dim;
  std::vector<double> acc(d, 0.0);
  for (const auto& [c, weight] : w.normalized) {
    const std::vector<float> dir = feature_direction(sae, c);
    for (std::size_t i = 0; i < d; ++i) {
      acc[i] += double(weight) * double(dir[i]);
    }
  }
  SteeringVector v;
  v.kind = SteeringVector::Kind::kNoise;
  v.values.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    v.values[i] = float(acc[i]);
  }
  v.provenance["features"] = std::to_string(noise_set.size());
  v.provenance["positives"] = std::to_string(positive_activations.size());
  return v;
}

SteeringVector build_useful_vector(const SaeParams& sae, const FeatureSet& useful_set) {
  const std::size_t d = sae.input_dim;
  std::vector<double> acc(d, 0.0);
  for (FeatureIndex c : useful_set) {
    const std::vector<float> dir = feature_direction(sae, c);
    for (std::size_t i = 0; i < d; ++i) {
      acc[i] += double(dir[i]);
    }
  }
  SteeringVector v;
  v.kind = SteeringVector::Kind::kUseful;
  v.values.resize(d);
  if (!useful_set.empty()) {
    for (std::size_t i = 0; i < d; ++i) {
      v.values[i] = float(acc[i] / double(useful_set.size()));
    }
  }
  v.provenance["features"] = std::to_string(useful_set.size());
  return v;
}

SteeringVector compose_refined(const SteeringVector& steer, const SteeringVector& noise,
                               const SteeringVector& useful, const ScalingConfig& scaling) {
  const std::size_t d = steer.dim();
  if (noise.dim() != d || useful.dim() != d) {
    throw InputError("compose_refined: dimension mismatch (" + std::to_string(d) + ", " +
                     std::to_string(noise.dim()) + ", " + std::to_string(useful.dim()) + ")");
  }
  if (scaling.alpha1 < 0.0f || scaling.alpha2 < 0.0f || scaling.alpha3 < 0.0f) {
    throw ConfigError("compose_refined: negative scaling coefficient");
  }
  SteeringVector v;
  v.kind = SteeringVector::Kind::kRefined;
  v.values.resize(d);
  for (std::size_t i = 0; i < d; ++i) {
    v.values[i] = float(double(scaling.alpha1) * double(steer.values[i]) -
                        double(scaling.alpha2) * double(noise.values[i]) +
                        double(scaling.alpha3) * double(useful.values[i]));
  }
  v.provenance["alpha1"] = format_real(scaling.alpha1);
  v.provenance["alpha2"] = format_real(scaling.alpha2);
  v.provenance["alpha3"] = format_real(scaling.alpha3);
  v.provenance["k_retrieve"] = std::to_string(scaling.k_retrieve);
  v.provenance["sources"] = kind_to_string(steer.kind) + "," + kind_to_string(noise.kind) + "," +
                            kind_to_string(useful.kind);
  return v;
}

SteeringVector pca_vector(const std::vector<HiddenState>& positives) {
  if (positives.size() < 2) {
    throw InputError("pca_vector: need at least two samples");
  }
  Eigen::MatrixXd x = to_matrix(positives, "pca_vector");
  const Eigen::RowVectorXd mean = x.colwise().mean();
  x.rowwise() -= mean;
  const Eigen::MatrixXd c = (x.transpose() * x) / double(x.rows());
  Eigen::VectorXd u = power_iterate(c, "pca_vector");
  fix_sign(u);
  SteeringVector v = from_eigen(u, SteeringVector::Kind::kPca);
  v.provenance["samples"] = std::to_string(positives.size());
  return v;
}

SteeringVector lat_vector(const std::vector<HiddenState>& positives, std::uint64_t seed) {
  if (positives.size() < 2) {
    throw InputError("lat_vector: need at least two samples");
  }
  const Eigen::MatrixXd x = to_matrix(positives, "lat_vector");
  std::vector<std::size_t> order(positives.size());
  std::iota(order.begin(), order.end(), 0);
  std::mt19937_64 g(seed);
  rng::shuffle(order, g);

  std::vector<Eigen::VectorXd> diffs;
  for (std::size_t i = 0; i + 1 < order.size(); i += 2) {
    Eigen::VectorXd d = x.row(Eigen::Index(order[i])) - x.row(Eigen::Index(order[i + 1]));
    const double norm = d.norm();
    if (norm < 1e-30) {
      continue;
    }
    diffs.push_back(d / norm);
  }
  if (diffs.empty()) {
    throw InputError("lat_vector: degenerate input (all paired differences are zero)");
  }
  // Second moment, not centered: a single difference must already define a
  // direction.
  Eigen::MatrixXd c = Eigen::MatrixXd::Zero(x.cols(), x.cols());
  for (const auto& d : diffs) {
    c += d * d.transpose();
  }
  c /= double(diffs.size());
  Eigen::VectorXd u = power_iterate(c, "lat_vector");
  fix_sign(u);
  SteeringVector v = from_eigen(u, SteeringVector::Kind::kLat);
  v.provenance["samples"] = std::to_string(positives.size());
  v.provenance["pairs"] = std::to_string(diffs.size());
  v.provenance["seed"] = std::to_string(seed);
  return v;
}

namespace {

// Shared probe plumbing: z_i = w . x_i + b, y_i in {+1, -1}.
struct ProbeData {
  Eigen::MatrixXd x;
  Eigen::VectorXd y;
};

ProbeData probe_data(const std::vector<HiddenState>& positives,
                     const std::vector<HiddenState>& negatives) {
  const Eigen::MatrixXd xp = to_matrix(positives, "probe");
  const Eigen::MatrixXd xn = to_matrix(negatives, "probe");
  if (xp.cols() != xn.cols()) {
    throw InputError("probe: positive/negative dimension mismatch");
  }
  ProbeData d;
  d.x.resize(xp.rows() + xn.rows(), xp.cols());
  d.x << xp, xn;
  d.y.resize(d.x.rows());
  d.y.head(xp.rows()).setConstant(1.0);
  d.y.tail(xn.rows()).setConstant(-1.0);
  return d;
}

double softplus(double t) {
  // log(1 + exp(t)) without overflow.
  return std::max(t, 0.0) + std::log1p(std::exp(-std::abs(t)));
}

double loss_impl(const ProbeData& d, const Eigen::VectorXd& w, double b, double l2) {
  const Eigen::VectorXd z = d.x * w;
  double sum = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    sum += softplus(-d.y[i] * (z[i] + b));
  }
  return sum / double(z.size()) + 0.5 * l2 * w.squaredNorm();
}

void grad_impl(const ProbeData& d, const Eigen::VectorXd& w, double b, double l2,
               Eigen::VectorXd& gw, double& gb) {
  const Eigen::VectorXd z = d.x * w;
  gw = Eigen::VectorXd::Zero(w.size());
  gb = 0.0;
  for (Eigen::Index i = 0; i < z.size(); ++i) {
    const double t = -d.y[i] * (z[i] + b);
    const double sigma = 1.0 / (1.0 + std::exp(-t));  // d softplus(t) / dt
    gw += (-d.y[i] * sigma) * d.x.row(i).transpose();
    gb += -d.y[i] * sigma;
  }
  gw /= double(z.size());
  gb /= double(z.size());
  gw += l2 * w;
}

}  // namespace

double probe_loss(const std::vector<double>& params, const std::vector<HiddenState>& positives,
                  const std::vector<HiddenState>& negatives, double l2) {
  const ProbeData d = probe_data(positives, negatives);
  if (params.size() != std::size_t(d.x.cols()) + 1) {
    throw InputError("probe_loss: params length != dim + 1");
  }
  Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(params.data(), d.x.cols());
  return loss_impl(d, w, params.back(), l2);
}

std::vector<double> probe_gradient(const std::vector<double>& params,
                                   const std::vector<HiddenState>& positives,
                                   const std::vector<HiddenState>& negatives, double l2) {
  const ProbeData d = probe_data(positives, negatives);
  if (params.size() != std::size_t(d.x.cols()) + 1) {
    throw InputError("probe_gradient: params length != dim + 1");
  }
  Eigen::VectorXd w = Eigen::Map<const Eigen::VectorXd>(params.data(), d.x.cols());
  Eigen::VectorXd gw;
  double gb = 0.0;
  grad_impl(d, w, params.back(), l2, gw, gb);
  std::vector<double> out(gw.data(), gw.data() + gw.size());
  out.push_back(gb);
  return out;
}

std::vector<double> probe_fit(const std::vector<HiddenState>& positives,
                              const std::vector<HiddenState>& negatives, double l2) {
  const ProbeData d = probe_data(positives, negatives);
  Eigen::VectorXd w = Eigen::VectorXd::Zero(d.x.cols());
  double b = 0.0;
  double step = 0.1;
  double cur = loss_impl(d, w, b, l2);
  for (int iter = 0; iter < 10000; ++iter) {
    Eigen::VectorXd gw;
    double gb = 0.0;
    grad_impl(d, w, b, l2, gw, gb);
    const double gnorm = std::sqrt(gw.squaredNorm() + gb * gb);
    if (gnorm < 1e-6) {
      break;
    }
    // Halve the step until the full-batch loss stops increasing.
    while (true) {
      const Eigen::VectorXd w2 = w - step * gw;
      const double b2 = b - step * gb;
      const double next = loss_impl(d, w2, b2, l2);
      if (next <= cur || step < 1e-16) {
        w = w2;
        b = b2;
        cur = next;
        break;
      }
      step *= 0.5;
    }
  }
  std::vector<double> out(w.data(), w.data() + w.size());
  out.push_back(b);
  return out;
}

SteeringVector probe_vector(const std::vector<HiddenState>& positives,
                            const std::vector<HiddenState>& negatives) {
  const std::vector<double> params = probe_fit(positives, negatives);
  const std::size_t d = params.size() - 1;
  double norm_sq = 0.0;
  for (std::size_t i = 0; i < d; ++i) {
    norm_sq += params[i] * params[i];
  }
  const double norm = std::sqrt(norm_sq);

  SteeringVector v;
  v.kind = SteeringVector::Kind::kProbe;
  v.values.resize(d);
  if (norm < 1e-8) {
    for (std::size_t i = 0; i < d; ++i) {
      v.values[i] = float(params[i]);
    }
    v.provenance["degenerate"] = "true";
  } else {
    for (std::size_t i = 0; i < d; ++i) {
      v.values[i] = float(params[i] / norm);
    }
  }
  v.provenance["positives"] = std::to_string(positives.size());
  v.provenance["negatives"] = std::to_string(negatives.size());
  return v;
}

void save_vector(const SteeringVector& v, const std::string& dir) {
  if (!finite_vec(v.values)) {
    throw InputError("save_vector: non-finite entries");
  }
  ensure_dir(dir);
  nlohmann::json manifest;
  manifest["dim"] = v.values.size();
  manifest["kind"] = kind_to_string(v.kind);
  manifest["provenance"] = v.provenance;
  manifest["dtype"] = "f32le";
  manifest["file"] = "vector.bin";
  write_json_file(dir + "/vector.json", manifest);
  write_f32le(dir + "/vector.bin", v.values);
}

SteeringVector load_vector(const std::string& dir) {
  const nlohmann::json manifest = read_json_file(dir + "/vector.json");
  SteeringVector v;
  try {
    const auto dim = manifest.at("dim").get<std::size_t>();
    v.kind = kind_from_string(manifest.at("kind").get<std::string>());
    if (manifest.contains("provenance")) {
      for (const auto& [key, value] : manifest.at("provenance").items()) {
        v.provenance[key] = value.get<std::string>();
      }
    }
    const std::string dtype = manifest.at("dtype").get<std::string>();
    if (dtype != "f32le") {
      throw InputError("vector manifest: unsupported dtype " + dtype);
    }
    v.values = read_f32le(dir + "/" + manifest.at("file").get<std::string>(), dim);
  } catch (const nlohmann::json::exception& e) {
    throw InputError("vector manifest " + dir + "/vector.json: " + e.what());
  }
  if (!finite_vec(v.values)) {
    throw InputError("load_vector: non-finite entries in " + dir);
  }
  return v;
}

}  // namespace steerkit
