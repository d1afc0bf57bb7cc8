#pragma once

#include <functional>
#include <map>
#include <memory>
#include <mutex>
#include <string>
#include <utility>
#include <vector>

#include <nlohmann/json.hpp>

#include "toolgym/result.hpp"

namespace toolgym {

enum class Role { system, user, assistant, tool };

const char* to_string(Role role);

struct ChatMessage {
  Role role = Role::user;
  std::string content;
};

struct CompletionParams {
  double temperature = 1.0;
  int max_tokens = 16384;
  std::vector<std::string> stop;
};

// One completion call. Implementations must be safe to share across
// rollout workers.
class Backend {
 public:
  virtual ~Backend() = default;
  virtual Result<std::string> complete(const std::vector<ChatMessage>& messages,
                                       const CompletionParams& params) = 0;
};

// Deterministic stand-in for a model: responses come from a script file.
// A script is a JSON object; the first entry (in file order) whose key is
// a substring of the derived key text answers the call. String values
// repeat forever; array values are consumed in order and the last entry
// sticks.
class ScriptedBackend : public Backend {
 public:
  // key_mode "last_message" keys on the final message's content,
  // "full_text" on the whole conversation.
  static Result<ScriptedBackend> from_file(const std::string& path,
                                           const std::string& key_mode);
  static Result<ScriptedBackend> from_json(const nlohmann::ordered_json& script,
                                           const std::string& key_mode);

  Result<std::string> complete(const std::vector<ChatMessage>& messages,
                               const CompletionParams& params) override;

 private:
  struct Entry {
    std::string key;
    std::vector<std::string> responses;
    size_t cursor = 0;
  };
  bool key_on_full_text_ = false;
  std::vector<Entry> entries_;
  // Guards the cursors; behind a pointer so the backend stays movable.
  std::unique_ptr<std::mutex> mutex_ = std::make_unique<std::mutex>();
};

// Drops <think>...</think> spans; an unterminated span is dropped to the
// end of the text.
std::string strip_think(const std::string& text);

// First complete top-level JSON value in the text, after removing think
// spans and code fence markers.
Result<nlohmann::json> extract_json(const std::string& text);

// One past the end of the balanced JSON value opening at `start` (which
// must index a '{' or '['), or npos when the text ends inside it.
size_t balanced_json_end(const std::string& text, size_t start);

struct ParsedTask {
  std::vector<std::string> expected_tool_calls;
  std::string user_intent;
  std::string user_persona;
  std::string first_user_query;
};

// Structure only: the four task keys with their types.
Result<ParsedTask> parse_task(const nlohmann::json& value);
// Structure plus the rule that every expected call names an offered tool.
Result<ParsedTask> parse_task(const nlohmann::json& value,
                              const std::vector<std::string>& offered_names);
// The membership half alone, for callers that re-prompt on mismatch.
VoidResult check_expected_tools(const ParsedTask& task,
                                const std::vector<std::string>& offered_names);

// {result, reward} with reward in {-1,0,1}.
Result<std::pair<std::string, int>> parse_tool_result(
    const nlohmann::json& value);
// {response, reward}; an empty response is the end-of-conversation signal.
Result<std::pair<std::string, int>> parse_user(const nlohmann::json& value);
// {reward, reasoning}.
Result<std::pair<int, std::string>> parse_verdict(const nlohmann::json& value);

// complete + extract_json + parse with re-prompting: a parse failure is
// retried with a fresh completion up to `retries` times (retries+1
// attempts total, then retries_exhausted). Backend errors pass through
// untouched; the backend owns transport-level retries.
template <typename T>
Result<T> complete_parsed(
    Backend& backend, const std::vector<ChatMessage>& messages,
    const CompletionParams& params, int retries,
    const std::function<Result<T>(const nlohmann::json&)>& parse) {
  Error last = Error{ErrorKind::malformed_output, "no attempts made", 0};
  int attempts = retries + 1;
  for (int attempt = 1; attempt <= attempts; ++attempt) {
    auto text = backend.complete(messages, params);
    if (!text.ok()) {
      return text.error();
    }
    auto value = extract_json(text.value());
    if (!value.ok()) {
      last = value.error();
      continue;
    }
    auto parsed = parse(value.value());
    if (parsed.ok()) {
      return parsed;
    }
    last = parsed.error();
  }
  return Error{ErrorKind::retries_exhausted, last.detail, attempts};
}

}  // namespace toolgym
