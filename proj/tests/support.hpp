#pragma once

#include <atomic>
#include <cstdint>
#include <filesystem>
#include <random>
#include <string>
#include <unistd.h>
#include <vector>

#include "steerkit/common.hpp"

namespace testsupport {

// Unique scratch directory, removed on destruction.
class TempDir {
 public:
  explicit TempDir(const std::string& tag) {
    static std::atomic<std::uint64_t> counter{0};
    const auto base = std::filesystem::temp_directory_path();
    path_ = base / ("steerkit-" + tag + "-" + std::to_string(::getpid()) + "-" +
                    std::to_string(counter.fetch_add(1)));
    std::filesystem::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    std::filesystem::remove_all(path_, ec);
  }
  TempDir(const TempDir&) = delete;
  TempDir& operator=(const TempDir&) = delete;

  std::string str() const { return path_.string(); }
  std::string operator/(const std::string& rel) const { return (path_ / rel).string(); }

 private:
  std::filesystem::path path_;
};

inline steerkit::HiddenState state(std::vector<float> values, std::uint32_t layer = 0,
                                   std::uint32_t pos = 0) {
  steerkit::HiddenState h;
  h.values = std::move(values);
  h.layer_index = layer;
  h.token_position = pos;
  return h;
}

inline std::vector<float> random_vec(std::mt19937_64& g, std::size_t n, double scale = 1.0) {
  std::vector<float> v(n);
  for (float& x : v) {
    // Plain uniform in [-scale, scale); test data only, portability of the
    // stream across platforms is not needed here.
    const double u = double(g() >> 11) * 0x1.0p-53;
    x = float(scale * (2.0 * u - 1.0));
  }
  return v;
}

inline double dot(const std::vector<float>& a, const std::vector<float>& b) {
  double s = 0.0;
  for (std::size_t i = 0; i < a.size(); ++i) {
    s += double(a[i]) * double(b[i]);
  }
  return s;
}

inline double norm(const std::vector<float>& a) { return std::sqrt(dot(a, a)); }

inline double cosine(const std::vector<float>& a, const std::vector<float>& b) {
  return dot(a, b) / (norm(a) * norm(b));
}

}  // namespace testsupport
