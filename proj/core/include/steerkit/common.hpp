#pragma once

#include <cstdint>
#include <set>
#include <stdexcept>
#include <string>
#include <vector>

namespace steerkit {

using FeatureIndex = std::uint32_t;
using FeatureSet = std::set<FeatureIndex>;

// A residual-stream vector captured at (layer_index, token_position).
// values.size() equals the hidden dimension of the producing model.
struct HiddenState {
  std::vector<float> values;
  std::uint32_t layer_index = 0;
  std::uint32_t token_position = 0;
};

// Error taxonomy, mapped to CLI exit codes by tools/steerkit.
// InputError/ConfigError -> 1, RemoteError -> 2, InternalError -> 3.
struct Error : std::runtime_error {
  using std::runtime_error::runtime_error;
};

// Bad data fed to an operation: malformed files, dimension mismatches,
// out-of-range indices, empty required inputs.
struct InputError : Error {
  using Error::Error;
};

// Bad or inconsistent configuration: missing paths, invalid parameter
// combinations, layer out of range.
struct ConfigError : Error {
  using Error::Error;
};

// A remote judge or embedder endpoint failed after retries.
struct RemoteError : Error {
  using Error::Error;
};

// A postcondition or invariant the library asserts about its own state
// failed to hold.
struct InternalError : Error {
  using Error::Error;
};

}  // namespace steerkit
