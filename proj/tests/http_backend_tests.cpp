#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <chrono>
#include <mutex>
#include <string>
#include <thread>
#include <vector>

#include <httplib.h>
#include <nlohmann/json.hpp>

#include "support.hpp"
#include "toolgym/http_backend.hpp"

using namespace toolgym;
using namespace toolgym::testing;
using nlohmann::json;

namespace {

std::string envelope(const std::string& content) {
  json body = {{"choices", {{{"message", {{"content", content}}}}}}};
  return body.dump();
}

// Chat-completions stand-in that replays a fixed response sequence and
// records everything it was sent. The last step repeats.
class StubLmServer {
 public:
  struct Step {
    int status = 200;
    std::string body;
    int delay_ms = 0;
  };

  struct Seen {
    std::string path;
    json body;
    std::string authorization;
  };

  explicit StubLmServer(std::vector<Step> steps) : steps_(std::move(steps)) {
    auto handler = [this](const httplib::Request& req, httplib::Response& res) {
      Step step;
      {
        std::lock_guard<std::mutex> lock(mutex_);
        Seen seen;
        seen.path = req.path;
        seen.body = json::parse(req.body, nullptr, false);
        seen.authorization = req.get_header_value("Authorization");
        requests.push_back(std::move(seen));
        size_t index = cursor_ < steps_.size() ? cursor_ : steps_.size() - 1;
        ++cursor_;
        step = steps_[index];
      }
      if (step.delay_ms > 0) {
        std::this_thread::sleep_for(std::chrono::milliseconds(step.delay_ms));
      }
      res.status = step.status;
      res.set_content(step.body, "application/json");
    };
    server_.Post("/chat/completions", handler);
    server_.Post("/v1/chat/completions", handler);
    port_ = server_.bind_to_any_port("127.0.0.1");
    thread_ = std::thread([this] { server_.listen_after_bind(); });
    server_.wait_until_ready();
  }

  ~StubLmServer() {
    server_.stop();
    if (thread_.joinable()) {
      thread_.join();
    }
  }

  std::string url(const std::string& prefix = "") const {
    return "http://127.0.0.1:" + std::to_string(port_) + prefix;
  }

  size_t hits() {
    std::lock_guard<std::mutex> lock(mutex_);
    return requests.size();
  }

  Seen request(size_t index) {
    std::lock_guard<std::mutex> lock(mutex_);
    return requests.at(index);
  }

  std::vector<Seen> requests;

 private:
  httplib::Server server_;
  std::thread thread_;
  int port_ = 0;
  std::mutex mutex_;
  std::vector<Step> steps_;
  size_t cursor_ = 0;
};

HttpBackendConfig base_config(const StubLmServer& server,
                              const std::string& prefix = "/v1") {
  HttpBackendConfig config;
  config.base_url = server.url(prefix);
  config.model = "test-model";
  config.timeout_ms = 2000;
  config.retries = 2;
  config.rate_limit_backoff_ms = 5;
  return config;
}

}  // namespace

TEST_CASE("create validates its inputs") {
  HttpBackendConfig config;
  config.base_url = "localhost:1234";
  auto no_scheme = HttpBackend::create(config);
  REQUIRE_FALSE(no_scheme.ok());
  CHECK(no_scheme.error().kind == ErrorKind::invalid_input);
  CHECK(contains(no_scheme.error().detail, "scheme"));

  config.base_url = "http://localhost:1234";
  config.retries = -1;
  CHECK_FALSE(HttpBackend::create(config).ok());

  config.retries = 0;
  config.max_in_flight = 0;
  CHECK_FALSE(HttpBackend::create(config).ok());

  config.max_in_flight = 1;
  CHECK(HttpBackend::create(config).ok());
}

TEST_CASE("success returns the message content and sends a full request") {
  StubLmServer server({{200, envelope("hello there"), 0}});
  HttpBackendConfig config = base_config(server);
  config.api_key = "sk-test";
  auto backend = HttpBackend::create(config).value();

  CompletionParams params;
  params.temperature = 0.25;
  params.max_tokens = 77;
  params.stop = {"</tool_call>"};
  std::vector<ChatMessage> messages = {{Role::system, "be brief"},
                                       {Role::user, "hi"}};
  auto out = backend->complete(messages, params);
  REQUIRE(out.ok());
  CHECK(out.value() == "hello there");

  REQUIRE(server.hits() == 1);
  auto seen = server.request(0);
  CHECK(seen.path == "/v1/chat/completions");
  CHECK(seen.authorization == "Bearer sk-test");
  CHECK(seen.body["model"] == "test-model");
  CHECK(seen.body["temperature"] == 0.25);
  CHECK(seen.body["max_tokens"] == 77);
  CHECK(seen.body["stop"][0] == "</tool_call>");
  REQUIRE(seen.body["messages"].size() == 2);
  CHECK(seen.body["messages"][0]["role"] == "system");
  CHECK(seen.body["messages"][0]["content"] == "be brief");
  CHECK(seen.body["messages"][1]["role"] == "user");
}

TEST_CASE("stop is omitted when empty and auth when no key") {
  StubLmServer server({{200, envelope("ok"), 0}});
  auto backend = HttpBackend::create(base_config(server)).value();
  REQUIRE(backend->complete({{Role::user, "q"}}, {}).ok());
  auto seen = server.request(0);
  CHECK_FALSE(seen.body.contains("stop"));
  CHECK(seen.authorization.empty());
}

TEST_CASE("base url without a path posts to /chat/completions") {
  StubLmServer server({{200, envelope("ok"), 0}});
  auto backend = HttpBackend::create(base_config(server, "")).value();
  REQUIRE(backend->complete({{Role::user, "q"}}, {}).ok());
  CHECK(server.request(0).path == "/chat/completions");
}

TEST_CASE("trailing slashes on the base url are trimmed") {
  StubLmServer server({{200, envelope("ok"), 0}});
  auto backend = HttpBackend::create(base_config(server, "/v1/")).value();
  REQUIRE(backend->complete({{Role::user, "q"}}, {}).ok());
  CHECK(server.request(0).path == "/v1/chat/completions");
}

TEST_CASE("server errors are retried until one succeeds") {
  StubLmServer server({{500, "boom", 0},
                       {500, "boom", 0},
                       {200, envelope("third time"), 0}});
  auto backend = HttpBackend::create(base_config(server)).value();
  auto out = backend->complete({{Role::user, "q"}}, {});
  REQUIRE(out.ok());
  CHECK(out.value() == "third time");
  CHECK(server.hits() == 3);
}

TEST_CASE("a persistent 500 exhausts the retry budget") {
  StubLmServer server({{500, "boom", 0}});
  auto backend = HttpBackend::create(base_config(server)).value();
  auto out = backend->complete({{Role::user, "q"}}, {});
  REQUIRE_FALSE(out.ok());
  CHECK(out.error().kind == ErrorKind::retries_exhausted);
  CHECK(out.error().attempts == 3);
  CHECK(contains(out.error().detail, "HTTP 500"));
  CHECK(server.hits() == 3);
}

TEST_CASE("rate limiting backs off and retries") {
  StubLmServer server({{429, "slow down", 0}, {200, envelope("ok now"), 0}});
  auto backend = HttpBackend::create(base_config(server)).value();
  auto out = backend->complete({{Role::user, "q"}}, {});
  REQUIRE(out.ok());
  CHECK(out.value() == "ok now");
  CHECK(server.hits() == 2);
}

TEST_CASE("client errors do not burn retries") {
  StubLmServer server({{404, "no such model", 0}});
  HttpBackendConfig config = base_config(server);
  config.retries = 5;
  auto backend = HttpBackend::create(config).value();
  auto out = backend->complete({{Role::user, "q"}}, {});
  REQUIRE_FALSE(out.ok());
  CHECK(out.error().kind == ErrorKind::transport);
  CHECK(out.error().attempts == 1);
  CHECK(contains(out.error().detail, "HTTP 404"));
  CHECK(contains(out.error().detail, "no such model"));
  CHECK(server.hits() == 1);
}

TEST_CASE("malformed envelopes are retried") {
  StubLmServer server({{200, "{\"choices\": []}", 0},
                       {200, "not json", 0},
                       {200, envelope("recovered"), 0}});
  auto backend = HttpBackend::create(base_config(server)).value();
  auto out = backend->complete({{Role::user, "q"}}, {});
  REQUIRE(out.ok());
  CHECK(out.value() == "recovered");
  CHECK(server.hits() == 3);
}

TEST_CASE("all-malformed envelopes exhaust retries with the cause kept") {
  StubLmServer server({{200, "{}", 0}});
  auto backend = HttpBackend::create(base_config(server)).value();
  auto out = backend->complete({{Role::user, "q"}}, {});
  REQUIRE_FALSE(out.ok());
  CHECK(out.error().kind == ErrorKind::retries_exhausted);
  CHECK(contains(out.error().detail, "choices[0].message.content"));
}

TEST_CASE("a stalled response times out") {
  StubLmServer server({{200, envelope("too late"), 400}});
  HttpBackendConfig config = base_config(server);
  config.timeout_ms = 100;
  config.retries = 0;
  auto backend = HttpBackend::create(config).value();
  auto start = std::chrono::steady_clock::now();
  auto out = backend->complete({{Role::user, "q"}}, {});
  auto elapsed = std::chrono::steady_clock::now() - start;
  REQUIRE_FALSE(out.ok());
  CHECK(out.error().kind == ErrorKind::retries_exhausted);
  CHECK(out.error().attempts == 1);
  CHECK(contains(out.error().detail, "timed out"));
  CHECK(std::chrono::duration_cast<std::chrono::milliseconds>(elapsed).count() <
        2000);
}

TEST_CASE("unreachable host is a transport failure") {
  HttpBackendConfig config;
  // Reserved port on localhost nothing listens on.
  config.base_url = "http://127.0.0.1:9";
  config.timeout_ms = 200;
  config.retries = 0;
  auto backend = HttpBackend::create(config).value();
  auto out = backend->complete({{Role::user, "q"}}, {});
  REQUIRE_FALSE(out.ok());
  CHECK(out.error().kind == ErrorKind::retries_exhausted);
}

TEST_CASE("empty message lists are rejected before any request") {
  StubLmServer server({{200, envelope("ok"), 0}});
  auto backend = HttpBackend::create(base_config(server)).value();
  auto out = backend->complete({}, {});
  REQUIRE_FALSE(out.ok());
  CHECK(out.error().kind == ErrorKind::invalid_input);
  CHECK(server.hits() == 0);
}

TEST_CASE("concurrent completions are capped by max_in_flight") {
  StubLmServer server({{200, envelope("ok"), 30}});
  HttpBackendConfig config = base_config(server);
  config.max_in_flight = 2;
  auto backend = HttpBackend::create(config).value();

  std::vector<std::thread> threads;
  std::atomic<int> successes{0};
  for (int i = 0; i < 6; ++i) {
    threads.emplace_back([&] {
      if (backend->complete({{Role::user, "q"}}, {}).ok()) {
        ++successes;
      }
    });
  }
  for (auto& t : threads) {
    t.join();
  }
  CHECK(successes == 6);
  CHECK(server.hits() == 6);
}
