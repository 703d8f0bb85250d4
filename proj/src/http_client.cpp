#include "http_client.hpp"

#include <cstdlib>
#include <thread>

#include <httplib.h>

#include "hidegate/error.hpp"

namespace hidegate::http {

Url parse_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    fail(ErrorKind::config, "URL '" + url + "' lacks a scheme");
  }
  const std::string scheme = url.substr(0, scheme_end);
  if (scheme != "http" && scheme != "https") {
    fail(ErrorKind::config, "unsupported URL scheme '" + scheme + "'");
  }
  const auto path_start = url.find('/', scheme_end + 3);
  Url out;
  out.origin = url.substr(0, path_start);
  out.path = path_start == std::string::npos ? "/" : url.substr(path_start);
  if (out.origin.size() <= scheme_end + 3) fail(ErrorKind::config, "URL '" + url + "' lacks a host");
  return out;
}

std::string api_key_from_env() {
  const char* key = std::getenv("HIDEGATE_API_KEY");
  return key ? std::string(key) : std::string();
}

nlohmann::json post_json(const std::string& url, const nlohmann::json& body,
                         const PostOptions& options) {
  const Url target = parse_url(url);
  httplib::Client client(target.origin);
  client.set_connection_timeout(options.timeout_seconds, 0);
  client.set_read_timeout(options.timeout_seconds, 0);
  client.set_write_timeout(options.timeout_seconds, 0);
  httplib::Headers headers;
  if (!options.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + options.api_key);
  }
  const std::string payload = body.dump();

  std::string last_error;
  auto delay = options.backoff;
  for (int attempt = 0; attempt <= options.retries; ++attempt) {
    if (attempt > 0) {
      std::this_thread::sleep_for(delay);
      delay *= 2;
    }
    auto res = client.Post(target.path, headers, payload, "application/json");
    if (!res) {
      last_error = "request to " + url + " failed: " + httplib::to_string(res.error());
      continue;
    }
    if (res->status == 429 || res->status >= 500) {
      last_error = url + " answered HTTP " + std::to_string(res->status);
      continue;
    }
    if (res->status < 200 || res->status >= 300) {
      fail(ErrorKind::transport, url + " answered HTTP " + std::to_string(res->status) + ": " +
                                     res->body.substr(0, 200));
    }
    try {
      return nlohmann::json::parse(res->body);
    } catch (const nlohmann::json::parse_error& e) {
      fail(ErrorKind::transport, url + " returned invalid JSON: " + e.what());
    }
  }
  fail(ErrorKind::transport, last_error);
}

}  // namespace hidegate::http
