#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include <nlohmann/json_fwd.hpp>

namespace steerkit {

// All binary tensor files in steerkit artifacts are raw little-endian 32-bit
// IEEE floats, row-major ("f32le"). These helpers refuse to guess: sizes are
// checked against expectations and mismatches throw InputError.

void write_f32le(const std::string& path, const float* data, std::size_t count);
void write_f32le(const std::string& path, const std::vector<float>& data);

// Reads the whole file; throws if the byte size is not a multiple of 4, or if
// expected_count is nonzero and does not match.
std::vector<float> read_f32le(const std::string& path, std::size_t expected_count = 0);

void append_f32le(std::vector<std::uint8_t>& out, const float* data, std::size_t count);

std::string read_text_file(const std::string& path);
void write_text_file(const std::string& path, const std::string& content);

nlohmann::json read_json_file(const std::string& path);
// Serialized with 2-space indent and a trailing newline; key order is
// nlohmann's sorted-map order, so reruns are byte-stable.
void write_json_file(const std::string& path, const nlohmann::json& j);

bool file_exists(const std::string& path);
void ensure_dir(const std::string& path);

}  // namespace steerkit
