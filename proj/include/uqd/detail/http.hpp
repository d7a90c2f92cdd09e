// Copyright 2026 The uqd Authors.
//
// Licensed under the Apache License, Version 2.0 (the "License");
// you may not use this file except in compliance with the License.
// You may obtain a copy of the License at
//
//     http://www.apache.org/licenses/LICENSE-2.0
//
// Unless required by applicable law or agreed to in writing, software
// distributed under the License is distributed on an "AS IS" BASIS,
// WITHOUT WARRANTIES OR CONDITIONS OF ANY KIND, either express or implied.
// See the License for the specific language governing permissions and
// limitations under the License.

#pragma once

#include <chrono>
#include <cstdint>
#include <functional>
#include <map>
#include <memory>
#include <random>
#include <string>
#include <thread>
#include <utility>

#include <httplib.h>

#include "uqd/detail/log.hpp"
#include "uqd/errors.hpp"

namespace uqd::detail {

struct HttpResponse {
  int status = 0;
  std::string body;
};

using HttpHeaders = std::multimap<std::string, std::string>;

// Minimal POST-only transport so request bodies can be captured in tests.
class HttpTransport {
 public:
  virtual ~HttpTransport() = default;
  // Throws TransportError when no HTTP response was obtained.
  virtual HttpResponse post(const std::string& path, const std::string& body,
                            const HttpHeaders& headers) = 0;
};

struct SplitUrl {
  std::string origin;  // scheme://host[:port]
  std::string path;    // "" or "/prefix"
};

inline SplitUrl split_url(const std::string& url) {
  const auto scheme_end = url.find("://");
  if (scheme_end == std::string::npos) throw ValidationError("URL without scheme: " + url);
  const auto path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) return {url, ""};
  std::string path = url.substr(path_start);
  while (!path.empty() && path.back() == '/') path.pop_back();
  return {url.substr(0, path_start), path};
}

class HttplibTransport final : public HttpTransport {
 public:
  explicit HttplibTransport(const std::string& origin,
                            std::chrono::seconds timeout = std::chrono::seconds(120))
      : origin_(origin), timeout_(timeout) {}

  HttpResponse post(const std::string& path, const std::string& body,
                    const HttpHeaders& headers) override {
    httplib::Client client(origin_);
    client.set_connection_timeout(timeout_);
    client.set_read_timeout(timeout_);
    client.set_write_timeout(timeout_);
    httplib::Headers h(headers.begin(), headers.end());
    auto res = client.Post(path, h, body, "application/json");
    if (!res) {
      throw TransportError("POST " + origin_ + path + " failed: " + httplib::to_string(res.error()));
    }
    return {res->status, res->body};
  }

 private:
  std::string origin_;
  std::chrono::seconds timeout_;
};

struct RetryPolicy {
  int max_attempts = 5;
  std::chrono::milliseconds base_delay{500};
  std::chrono::milliseconds max_delay{30000};
};

// Posts with exponential backoff and full jitter. Transport failures, 429 and
// 5xx are retried; any other non-2xx is surfaced at once as HttpError.
inline HttpResponse post_with_retries(HttpTransport& transport, const std::string& path,
                                      const std::string& body, const HttpHeaders& headers,
                                      const RetryPolicy& retry) {
  thread_local std::mt19937_64 jitter_rng{std::random_device{}()};
  std::string last_error;
  for (int attempt = 1; attempt <= retry.max_attempts; ++attempt) {
    bool retryable = false;
    try {
      HttpResponse res = transport.post(path, body, headers);
      if (res.status >= 200 && res.status < 300) return res;
      if (res.status == 429 || res.status >= 500) {
        retryable = true;
        last_error = "HTTP " + std::to_string(res.status) + ": " + res.body;
        if (attempt == retry.max_attempts && res.status >= 500 && res.status != 429) {
          throw HttpError(res.status, res.body);
        }
      } else {
        throw HttpError(res.status, res.body);
      }
    } catch (const TransportError& e) {
      retryable = true;
      last_error = e.what();
    }
    if (!retryable || attempt == retry.max_attempts) break;
    const auto cap = std::min<std::int64_t>(retry.max_delay.count(),
                                            retry.base_delay.count() << (attempt - 1));
    std::uniform_int_distribution<std::int64_t> dist(0, std::max<std::int64_t>(cap, 0));
    const auto delay = std::chrono::milliseconds(dist(jitter_rng));
    log().warn("event=http_retry path={} attempt={} delay_ms={} error=\"{}\"", path, attempt,
               delay.count(), last_error);
    std::this_thread::sleep_for(delay);
  }
  throw TransportError("giving up after " + std::to_string(retry.max_attempts) +
                       " attempts: " + last_error);
}

}  // namespace uqd::detail
