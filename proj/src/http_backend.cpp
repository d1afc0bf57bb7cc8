#include "toolgym/http_backend.hpp"

#include <chrono>
#include <thread>

#include <httplib.h>
#include <nlohmann/json.hpp>

namespace toolgym {
namespace {

using nlohmann::json;

struct SlotGuard {
  std::mutex& mutex;
  std::condition_variable& cv;
  int& in_use;
  int cap;

  SlotGuard(std::mutex& m, std::condition_variable& c, int& n, int cap_)
      : mutex(m), cv(c), in_use(n), cap(cap_) {
    std::unique_lock<std::mutex> lock(mutex);
    cv.wait(lock, [&] { return in_use < cap; });
    ++in_use;
  }
  ~SlotGuard() {
    {
      std::lock_guard<std::mutex> lock(mutex);
      --in_use;
    }
    cv.notify_one();
  }
};

}  // namespace

HttpBackend::HttpBackend(HttpBackendConfig config)
    : config_(std::move(config)) {}

Result<std::unique_ptr<HttpBackend>> HttpBackend::create(
    const HttpBackendConfig& config) {
  if (config.retries < 0) {
    return make_error(ErrorKind::invalid_input, "retries must be >= 0");
  }
  if (config.max_in_flight < 1) {
    return make_error(ErrorKind::invalid_input, "max_in_flight must be >= 1");
  }
  const std::string& url = config.base_url;
  size_t scheme_end = url.find("://");
  if (scheme_end == std::string::npos) {
    return make_error(ErrorKind::invalid_input,
                      "base_url needs a scheme: " + url);
  }
  std::unique_ptr<HttpBackend> backend(new HttpBackend(config));
  size_t path_start = url.find('/', scheme_end + 3);
  if (path_start == std::string::npos) {
    backend->host_part_ = url;
  } else {
    backend->host_part_ = url.substr(0, path_start);
    std::string prefix = url.substr(path_start);
    while (!prefix.empty() && prefix.back() == '/') {
      prefix.pop_back();
    }
    backend->path_prefix_ = prefix;
  }
  return backend;
}

Result<std::string> HttpBackend::attempt_once(
    const std::vector<ChatMessage>& messages, const CompletionParams& params,
    bool& retryable) {
  retryable = true;
  httplib::Client client(host_part_);
  client.set_connection_timeout(0, config_.timeout_ms * 1000LL);
  client.set_read_timeout(0, config_.timeout_ms * 1000LL);
  client.set_write_timeout(0, config_.timeout_ms * 1000LL);

  json body;
  body["model"] = config_.model;
  json msgs = json::array();
  for (const ChatMessage& m : messages) {
    msgs.push_back({{"role", to_string(m.role)}, {"content", m.content}});
  }
  body["messages"] = std::move(msgs);
  body["temperature"] = params.temperature;
  body["max_tokens"] = params.max_tokens;
  if (!params.stop.empty()) {
    body["stop"] = params.stop;
  }

  httplib::Headers headers;
  if (!config_.api_key.empty()) {
    headers.emplace("Authorization", "Bearer " + config_.api_key);
  }

  auto res = client.Post(path_prefix_ + "/chat/completions", headers,
                         body.dump(), "application/json");
  if (!res) {
    auto err = res.error();
    if (err == httplib::Error::ConnectionTimeout ||
        err == httplib::Error::Read || err == httplib::Error::Write) {
      return make_error(ErrorKind::timeout,
                        "request timed out: " + httplib::to_string(err));
    }
    return make_error(ErrorKind::transport,
                      "request failed: " + httplib::to_string(err));
  }
  if (res->status == 429) {
    return make_error(ErrorKind::rate_limited, "HTTP 429");
  }
  if (res->status >= 500) {
    return make_error(ErrorKind::transport,
                      "HTTP " + std::to_string(res->status));
  }
  if (res->status != 200) {
    retryable = false;
    return make_error(ErrorKind::transport,
                      "HTTP " + std::to_string(res->status) + ": " +
                          res->body.substr(0, 200));
  }
  json envelope = json::parse(res->body, nullptr, false);
  if (envelope.is_discarded() || !envelope.contains("choices") ||
      !envelope["choices"].is_array() || envelope["choices"].empty() ||
      !envelope["choices"][0].contains("message") ||
      !envelope["choices"][0]["message"].contains("content") ||
      !envelope["choices"][0]["message"]["content"].is_string()) {
    return make_error(ErrorKind::malformed_output,
                      "response envelope missing choices[0].message.content");
  }
  return envelope["choices"][0]["message"]["content"].get<std::string>();
}

Result<std::string> HttpBackend::complete(
    const std::vector<ChatMessage>& messages, const CompletionParams& params) {
  if (messages.empty()) {
    return make_error(ErrorKind::invalid_input, "messages must be non-empty");
  }
  SlotGuard slot(slots_mutex_, slots_cv_, slots_in_use_,
                 config_.max_in_flight);
  Error last{ErrorKind::transport, "no attempts made", 0};
  int attempts = config_.retries + 1;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    bool retryable = true;
    auto result = attempt_once(messages, params, retryable);
    if (result.ok()) {
      return result;
    }
    last = result.error();
    if (!retryable) {
      last.attempts = attempt;
      return last;
    }
    if (last.kind == ErrorKind::rate_limited && attempt < attempts &&
        config_.rate_limit_backoff_ms > 0) {
      std::this_thread::sleep_for(
          std::chrono::milliseconds(config_.rate_limit_backoff_ms));
    }
  }
  return Error{ErrorKind::retries_exhausted, last.detail, attempts};
}

}  // namespace toolgym
