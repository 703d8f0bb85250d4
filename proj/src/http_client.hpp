#pragma once

#include <chrono>
#include <string>

#include <json.hpp>

namespace hidegate::http {

struct Url {
  std::string origin;  // scheme://host[:port]
  std::string path;    // starts with '/'
};

Url parse_url(const std::string& url);

struct PostOptions {
  std::string api_key;  // sent as a bearer token when non-empty
  int timeout_seconds = 60;
  int retries = 3;      // extra attempts after the first
  std::chrono::milliseconds backoff{200};  // doubled after each failure
};

// POSTs a JSON body and parses the JSON reply. Connection failures and
// 5xx/429 replies are retried with exponential backoff; anything left
// failing raises ErrorKind::transport.
nlohmann::json post_json(const std::string& url, const nlohmann::json& body,
                         const PostOptions& options);

std::string api_key_from_env();

}  // namespace hidegate::http
