#pragma once

#include <string>

namespace steerkit::internal {

// POST a JSON body to `url` with optional bearer auth. Transport failures
// and 5xx statuses are retried up to max_retries extra attempts; other
// non-200 statuses fail immediately. Returns the response body or throws
// RemoteError. Plain http only.
std::string post_json(const std::string& url, const std::string& api_key,
                      const std::string& body, int max_retries);

}  // namespace steerkit::internal
