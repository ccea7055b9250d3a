#include "http_util.hpp"

#include <httplib.h>

#include "steerkit/common.hpp"

namespace steerkit::internal {

namespace {

struct SplitUrl {
  std::string base;  // scheme://host:port
  std::string path;
};

SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    throw ConfigError("endpoint url missing scheme: " + url);
  }
  if (url.compare(0, scheme_end, "http") != 0) {
    throw ConfigError("only http endpoints are supported: " + url);
  }
  const auto path_start = url.find('/', scheme_end + 3);
  SplitUrl out;
  if (path_start == std::string::npos) {
    out.base = url;
    out.path = "/";
  } else {
    out.base = url.substr(0, path_start);
    out.path = url.substr(path_start);
  }
  return out;
}

}  // namespace

std::string post_json(const std::string& url, const std::string& api_key,
                      const std::string& body, int max_retries) {
  const SplitUrl split = split_url(url);
  std::string last_error;
  for (int attempt = 0; attempt <= max_retries; ++attempt) {
    httplib::Client client(split.base);
    client.set_connection_timeout(5, 0);
    client.set_read_timeout(30, 0);
    httplib::Headers headers;
    if (!api_key.empty()) {
      headers.emplace("Authorization", "Bearer " + api_key);
    }
    httplib::Result res = client.Post(split.path, headers, body, "application/json");
    if (!res) {
      last_error = "transport failure: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status >= 500) {
      last_error = "server status " + std::to_string(res->status);
      continue;
    }
    if (res->status != 200) {
      throw RemoteError("endpoint " + url + " returned status " + std::to_string(res->status) +
                        ": " + res->body);
    }
    return res->body;
  }
  throw RemoteError("endpoint " + url + " failed after " + std::to_string(max_retries + 1) +
                    " attempts (" + last_error + ")");
}

}  // namespace steerkit::internal
