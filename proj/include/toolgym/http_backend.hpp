#pragma once

#include <condition_variable>
#include <memory>
#include <mutex>
#include <string>

#include "toolgym/lm_backend.hpp"

namespace toolgym {

struct HttpBackendConfig {
  // Scheme, host, port and optional path prefix, e.g.
  // "http://localhost:8000/v1". "/chat/completions" is appended.
  std::string base_url;
  std::string model;
  // Sent as a bearer token when non-empty.
  std::string api_key;
  int timeout_ms = 60000;
  // Extra attempts after the first; retries+1 attempts total.
  int retries = 2;
  // Simulation servers fall over under unbounded concurrency, so calls
  // beyond this many in flight block until a slot frees up.
  int max_in_flight = 8;
  // Sleep between attempts after a rate-limit response.
  int rate_limit_backoff_ms = 50;
};

// Chat-completions client. Timeouts, HTTP 429 and 5xx and broken response
// envelopes are retried; other 4xx are not. Exhausting the budget yields
// retries_exhausted carrying the attempt count.
class HttpBackend : public Backend {
 public:
  static Result<std::unique_ptr<HttpBackend>> create(
      const HttpBackendConfig& config);

  Result<std::string> complete(const std::vector<ChatMessage>& messages,
                               const CompletionParams& params) override;

 private:
  explicit HttpBackend(HttpBackendConfig config);

  Result<std::string> attempt_once(const std::vector<ChatMessage>& messages,
                                   const CompletionParams& params,
                                   bool& retryable);

  HttpBackendConfig config_;
  std::string host_part_;
  std::string path_prefix_;

  std::mutex slots_mutex_;
  std::condition_variable slots_cv_;
  int slots_in_use_ = 0;
};

}  // namespace toolgym
