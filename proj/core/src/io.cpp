#include "steerkit/io.hpp"

#include <bit>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "steerkit/common.hpp"

namespace steerkit {

static_assert(std::endian::native == std::endian::little,
              "steerkit artifact IO assumes a little-endian host");

void write_f32le(const std::string& path, const float* data, std::size_t count) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw InputError("cannot open for write: " + path);
  }
  out.write(reinterpret_cast<const char*>(data), std::streamsize(count * sizeof(float)));
  if (!out) {
    throw InputError("short write: " + path);
  }
}

void write_f32le(const std::string& path, const std::vector<float>& data) {
  write_f32le(path, data.data(), data.size());
}

std::vector<float> read_f32le(const std::string& path, std::size_t expected_count) {
  std::ifstream in(path, std::ios::binary | std::ios::ate);
  if (!in) {
    throw InputError("cannot open: " + path);
  }
  const auto bytes = std::size_t(in.tellg());
  if (bytes % sizeof(float) != 0) {
    throw InputError(path + ": size " + std::to_string(bytes) + " is not a multiple of 4");
  }
  const std::size_t count = bytes / sizeof(float);
  if (expected_count != 0 && count != expected_count) {
    throw InputError(path + ": expected " + std::to_string(expected_count) + " floats, found " +
                     std::to_string(count));
  }
  std::vector<float> data(count);
  in.seekg(0);
  in.read(reinterpret_cast<char*>(data.data()), std::streamsize(bytes));
  if (!in) {
    throw InputError("short read: " + path);
  }
  return data;
}

void append_f32le(std::vector<std::uint8_t>& out, const float* data, std::size_t count) {
  const std::size_t pos = out.size();
  out.resize(pos + count * sizeof(float));
  std::memcpy(out.data() + pos, data, count * sizeof(float));
}

std::string read_text_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    throw InputError("cannot open: " + path);
  }
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_text_file(const std::string& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) {
    throw InputError("cannot open for write: " + path);
  }
  out << content;
  if (!out) {
    throw InputError("short write: " + path);
  }
}

nlohmann::json read_json_file(const std::string& path) {
  const std::string text = read_text_file(path);
  nlohmann::json j = nlohmann::json::parse(text, nullptr, false);
  if (j.is_discarded()) {
    throw InputError("invalid JSON: " + path);
  }
  return j;
}

void write_json_file(const std::string& path, const nlohmann::json& j) {
  // replace handler: strings that are not valid UTF-8 (e.g. raw model
  // output) serialize as U+FFFD instead of throwing.
  write_text_file(path, j.dump(2, ' ', false, nlohmann::json::error_handler_t::replace) + "\n");
}

bool file_exists(const std::string& path) {
  std::error_code ec;
  return std::filesystem::exists(path, ec);
}

void ensure_dir(const std::string& path) {
  std::error_code ec;
  std::filesystem::create_directories(path, ec);
  if (ec) {
    throw InputError("cannot create directory " + path + ": " + ec.message());
  }
}

}  // namespace steerkit
