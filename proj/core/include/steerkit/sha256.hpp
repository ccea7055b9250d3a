#pragma once

#include <array>
#include <cstdint>
#include <string>
#include <string_view>

namespace steerkit {

// Incremental SHA-256 (FIPS 180-4). Used for input/artifact digests in run
// manifests and for record/replay fixture keys, so digests must be stable
// across platforms.
class Sha256 {
 public:
  Sha256() { reset(); }

  void reset();
  void update(const void* data, std::size_t len);
  std::array<std::uint8_t, 32> finish();

 private:
  void process_block(const std::uint8_t* block);

  std::array<std::uint32_t, 8> state_{};
  std::array<std::uint8_t, 64> buffer_{};
  std::size_t buffer_len_ = 0;
  std::uint64_t total_len_ = 0;
};

std::string sha256_hex(std::string_view data);
std::string sha256_file_hex(const std::string& path);

}  // namespace steerkit
