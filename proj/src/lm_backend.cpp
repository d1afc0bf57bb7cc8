#include "toolgym/lm_backend.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace toolgym {

const char* to_string(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::transport:
      return "transport";
    case ErrorKind::timeout:
      return "timeout";
    case ErrorKind::rate_limited:
      return "rate_limited";
    case ErrorKind::malformed_output:
      return "malformed_output";
    case ErrorKind::retries_exhausted:
      return "retries_exhausted";
    case ErrorKind::io_error:
      return "io_error";
    case ErrorKind::invalid_input:
      return "invalid_input";
    case ErrorKind::bad_state:
      return "bad_state";
  }
  return "unknown";
}

const char* to_string(Role role) {
  switch (role) {
    case Role::system:
      return "system";
    case Role::user:
      return "user";
    case Role::assistant:
      return "assistant";
    case Role::tool:
      return "tool";
  }
  return "user";
}

namespace {

using nlohmann::json;
using nlohmann::ordered_json;

std::string derive_key(const std::vector<ChatMessage>& messages,
                       bool full_text) {
  if (messages.empty()) {
    return "";
  }
  if (!full_text) {
    return messages.back().content;
  }
  std::string key;
  for (const ChatMessage& m : messages) {
    key += to_string(m.role);
    key += ": ";
    key += m.content;
    key += "\n";
  }
  return key;
}

}  // namespace

Result<ScriptedBackend> ScriptedBackend::from_file(const std::string& path,
                                                   const std::string& key_mode) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    return make_error(ErrorKind::io_error, "cannot open script " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  ordered_json script = ordered_json::parse(buf.str(), nullptr, false);
  if (script.is_discarded()) {
    return make_error(ErrorKind::invalid_input,
                      "script " + path + " is not valid JSON");
  }
  return from_json(script, key_mode);
}

Result<ScriptedBackend> ScriptedBackend::from_json(const ordered_json& script,
                                                   const std::string& key_mode) {
  ScriptedBackend backend;
  if (key_mode == "full_text") {
    backend.key_on_full_text_ = true;
  } else if (key_mode != "last_message") {
    return make_error(ErrorKind::invalid_input,
                      "unknown script key mode '" + key_mode + "'");
  }
  if (!script.is_object()) {
    return make_error(ErrorKind::invalid_input, "script must be a JSON object");
  }
  for (const auto& [key, value] : script.items()) {
    Entry entry;
    entry.key = key;
    if (value.is_string()) {
      entry.responses.push_back(value.get<std::string>());
    } else if (value.is_array()) {
      for (const auto& item : value) {
        if (!item.is_string()) {
          return make_error(ErrorKind::invalid_input,
                            "script entry '" + key +
                                "' has a non-string array element");
        }
        entry.responses.push_back(item.get<std::string>());
      }
      if (entry.responses.empty()) {
        return make_error(ErrorKind::invalid_input,
                          "script entry '" + key + "' is an empty array");
      }
    } else {
      return make_error(ErrorKind::invalid_input,
                        "script entry '" + key +
                            "' must be a string or string array");
    }
    backend.entries_.push_back(std::move(entry));
  }
  return backend;
}

Result<std::string> ScriptedBackend::complete(
    const std::vector<ChatMessage>& messages, const CompletionParams&) {
  std::string key = derive_key(messages, key_on_full_text_);
  std::lock_guard<std::mutex> lock(*mutex_);
  for (Entry& entry : entries_) {
    if (key.find(entry.key) == std::string::npos) {
      continue;
    }
    size_t index = entry.cursor;
    if (entry.cursor + 1 < entry.responses.size()) {
      ++entry.cursor;
    }
    return entry.responses[index];
  }
  std::string snippet = key.substr(0, 120);
  return make_error(ErrorKind::transport,
                    "no script entry matches key: " + snippet);
}

std::string strip_think(const std::string& text) {
  static const std::string open_tag = "<think>";
  static const std::string close_tag = "</think>";
  std::string out;
  size_t pos = 0;
  while (pos < text.size()) {
    size_t open = text.find(open_tag, pos);
    if (open == std::string::npos) {
      out.append(text, pos, std::string::npos);
      break;
    }
    out.append(text, pos, open - pos);
    size_t close = text.find(close_tag, open + open_tag.size());
    if (close == std::string::npos) {
      break;
    }
    pos = close + close_tag.size();
  }
  return out;
}

namespace {

// Strips ``` fence marker lines. Fences never carry braces, but cleaning
// them keeps error snippets readable.
std::string strip_fences(const std::string& text) {
  std::string out;
  size_t pos = 0;
  while (pos <= text.size()) {
    size_t eol = text.find('\n', pos);
    std::string line = text.substr(
        pos, eol == std::string::npos ? std::string::npos : eol - pos);
    size_t first = line.find_first_not_of(" \t\r");
    bool fence = first != std::string::npos && line.compare(first, 3, "```") == 0;
    if (!fence) {
      out += line;
      if (eol != std::string::npos) {
        out += '\n';
      }
    }
    if (eol == std::string::npos) {
      break;
    }
    pos = eol + 1;
  }
  return out;
}

}  // namespace

size_t balanced_json_end(const std::string& text, size_t start) {
  int depth = 0;
  bool in_string = false;
  bool escaped = false;
  for (size_t i = start; i < text.size(); ++i) {
    char c = text[i];
    if (in_string) {
      if (escaped) {
        escaped = false;
      } else if (c == '\\') {
        escaped = true;
      } else if (c == '"') {
        in_string = false;
      }
      continue;
    }
    if (c == '"') {
      in_string = true;
    } else if (c == '{' || c == '[') {
      ++depth;
    } else if (c == '}' || c == ']') {
      --depth;
      if (depth == 0) {
        return i + 1;
      }
      if (depth < 0) {
        return std::string::npos;
      }
    }
  }
  return std::string::npos;
}

Result<json> extract_json(const std::string& text) {
  std::string cleaned = strip_fences(strip_think(text));
  size_t pos = 0;
  while (pos < cleaned.size()) {
    size_t start = cleaned.find_first_of("{[", pos);
    if (start == std::string::npos) {
      break;
    }
    size_t end = balanced_json_end(cleaned, start);
    if (end != std::string::npos) {
      json value = json::parse(cleaned.substr(start, end - start), nullptr,
                               false);
      if (!value.is_discarded()) {
        return value;
      }
    }
    pos = start + 1;
  }
  return make_error(ErrorKind::malformed_output,
                    "no JSON value found in: " + cleaned.substr(0, 120));
}

namespace {

Result<std::string> string_field(const json& value, const char* key) {
  if (!value.contains(key)) {
    return make_error(ErrorKind::malformed_output,
                      std::string("missing field '") + key + "'");
  }
  if (!value[key].is_string()) {
    return make_error(ErrorKind::malformed_output,
                      std::string("field '") + key + "' is not a string");
  }
  return value[key].get<std::string>();
}

Result<int> reward_field(const json& value, const char* key) {
  if (!value.contains(key)) {
    return make_error(ErrorKind::malformed_output,
                      std::string("missing field '") + key + "'");
  }
  const json& r = value[key];
  if (!r.is_number_integer()) {
    return make_error(ErrorKind::malformed_output,
                      std::string("field '") + key + "' is not an integer");
  }
  int reward = r.get<int>();
  if (reward < -1 || reward > 1) {
    return make_error(ErrorKind::malformed_output,
                      std::string("reward out of {-1,0,1}: ") +
                          std::to_string(reward));
  }
  return reward;
}

}  // namespace

Result<ParsedTask> parse_task(const json& value) {
  if (!value.is_object()) {
    return make_error(ErrorKind::malformed_output, "task is not a JSON object");
  }
  ParsedTask task;
  if (!value.contains("expected_tool_calls") ||
      !value["expected_tool_calls"].is_array()) {
    return make_error(ErrorKind::malformed_output,
                      "missing array field 'expected_tool_calls'");
  }
  for (const auto& item : value["expected_tool_calls"]) {
    if (!item.is_string()) {
      return make_error(ErrorKind::malformed_output,
                        "'expected_tool_calls' holds a non-string entry");
    }
    task.expected_tool_calls.push_back(item.get<std::string>());
  }
  auto intent = string_field(value, "user_intent");
  if (!intent.ok()) return intent.error();
  task.user_intent = std::move(intent).value();
  auto persona = string_field(value, "user_persona");
  if (!persona.ok()) return persona.error();
  task.user_persona = std::move(persona).value();
  auto query = string_field(value, "first_user_query");
  if (!query.ok()) return query.error();
  task.first_user_query = std::move(query).value();
  if (task.first_user_query.empty()) {
    return make_error(ErrorKind::malformed_output, "empty first_user_query");
  }
  return task;
}

VoidResult check_expected_tools(const ParsedTask& task,
                                const std::vector<std::string>& offered_names) {
  std::set<std::string> offered(offered_names.begin(), offered_names.end());
  for (const std::string& name : task.expected_tool_calls) {
    if (offered.count(name) == 0) {
      return make_error(ErrorKind::malformed_output,
                        "expected_tool_calls references unknown tool '" + name +
                            "'");
    }
  }
  return Unit{};
}

Result<ParsedTask> parse_task(const json& value,
                              const std::vector<std::string>& offered_names) {
  auto task = parse_task(value);
  if (!task.ok()) {
    return task;
  }
  auto member = check_expected_tools(task.value(), offered_names);
  if (!member.ok()) {
    return member.error();
  }
  return task;
}

Result<std::pair<std::string, int>> parse_tool_result(const json& value) {
  if (!value.is_object()) {
    return make_error(ErrorKind::malformed_output,
                      "tool result is not a JSON object");
  }
  auto result = string_field(value, "result");
  if (!result.ok()) return result.error();
  auto reward = reward_field(value, "reward");
  if (!reward.ok()) return reward.error();
  return std::make_pair(std::move(result).value(), reward.value());
}

Result<std::pair<std::string, int>> parse_user(const json& value) {
  if (!value.is_object()) {
    return make_error(ErrorKind::malformed_output,
                      "user response is not a JSON object");
  }
  auto response = string_field(value, "response");
  if (!response.ok()) return response.error();
  auto reward = reward_field(value, "reward");
  if (!reward.ok()) return reward.error();
  return std::make_pair(std::move(response).value(), reward.value());
}

Result<std::pair<int, std::string>> parse_verdict(const json& value) {
  if (!value.is_object()) {
    return make_error(ErrorKind::malformed_output,
                      "verdict is not a JSON object");
  }
  auto reward = reward_field(value, "reward");
  if (!reward.ok()) return reward.error();
  auto reasoning = string_field(value, "reasoning");
  if (!reasoning.ok()) return reasoning.error();
  return std::make_pair(reward.value(), std::move(reasoning).value());
}

}  // namespace toolgym
