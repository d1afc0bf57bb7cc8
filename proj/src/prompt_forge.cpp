#include "toolgym/prompt_forge.hpp"

#include <fstream>
#include <set>
#include <sstream>

#include <nlohmann/json.hpp>

namespace toolgym {
namespace {

using nlohmann::json;

// Union of the slot names used across the four shipped templates. Leftover
// braces around anything else are treated as literal prose.
const std::set<std::string>& known_slots() {
  static const std::set<std::string> slots = {
      "tools",
      "number of expected calls",
      "persona",
      "ambiguity",
      "number of turns",
      "history",
      "tool calling",
      "user intent",
      "user query",
      "user persona",
      "agent message",
      "expected tool calls",
      "tools text",
      "interaction history text",
      "num criteria",
      "criteria text",
  };
  return slots;
}

Result<std::string> read_file(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    return make_error(ErrorKind::io_error, "cannot open " + path);
  }
  std::ostringstream buf;
  buf << in.rdbuf();
  return buf.str();
}

std::string trim_trailing_newlines(std::string s) {
  while (!s.empty() && (s.back() == '\n' || s.back() == '\r')) {
    s.pop_back();
  }
  return s;
}

const char* role_tag(TurnRole role) {
  switch (role) {
    case TurnRole::user:
      return "[USER]";
    case TurnRole::assistant:
      return "[ASSISTANT]";
    case TurnRole::tool_call:
      return "[TOOL_CALL]";
    case TurnRole::tool_result:
      return "[TOOL_RESULT]";
  }
  return "[?]";
}

Result<std::vector<std::string>> string_list(const json& j,
                                             const std::string& key,
                                             size_t want) {
  if (!j.contains(key) || !j[key].is_array()) {
    return make_error(ErrorKind::invalid_input,
                      "difficulty levels file: missing array '" + key + "'");
  }
  std::vector<std::string> out;
  for (const auto& item : j[key]) {
    if (!item.is_string()) {
      return make_error(ErrorKind::invalid_input,
                        "difficulty levels file: non-string entry in '" + key +
                            "'");
    }
    out.push_back(item.get<std::string>());
  }
  if (out.size() != want) {
    return make_error(ErrorKind::invalid_input,
                      "difficulty levels file: '" + key + "' needs " +
                          std::to_string(want) + " entries, got " +
                          std::to_string(out.size()));
  }
  return out;
}

}  // namespace

std::string render_tools(const std::vector<ToolSpec>& tools) {
  using ojson = nlohmann::ordered_json;
  std::string out;
  for (size_t i = 0; i < tools.size(); ++i) {
    const ToolSpec& tool = tools[i];
    ojson params = ojson::object();
    ojson required = ojson::array();
    for (const ParamSpec& p : tool.parameters) {
      params[p.name] = {{"type", to_string(p.kind)},
                        {"description", p.description}};
      if (p.required) {
        required.push_back(p.name);
      }
    }
    ojson spec = {{"name", tool.name},
                  {"description", tool.description},
                  {"parameters",
                   {{"type", "object"},
                    {"properties", params},
                    {"required", required}}}};
    if (i > 0) {
      out += "\n\n";
    }
    out += spec.dump(2);
  }
  return out;
}

std::string render_history(const std::vector<HistoryTurn>& turns) {
  if (turns.empty()) {
    return "(none)";
  }
  std::string out;
  for (size_t i = 0; i < turns.size(); ++i) {
    if (i > 0) {
      out += "\n\n";
    }
    out += role_tag(turns[i].role);
    out += "\n";
    out += turns[i].content;
  }
  return out;
}

Result<std::string> render_template(
    const std::string& text, const std::map<std::string, std::string>& slots) {
  std::string out;
  out.reserve(text.size());
  size_t pos = 0;
  while (pos < text.size()) {
    size_t open = text.find('{', pos);
    if (open == std::string::npos) {
      out.append(text, pos, std::string::npos);
      break;
    }
    out.append(text, pos, open - pos);
    size_t close = text.find('}', open + 1);
    if (close == std::string::npos) {
      out.append(text, open, std::string::npos);
      break;
    }
    std::string name = text.substr(open + 1, close - open - 1);
    auto it = slots.find(name);
    if (it != slots.end()) {
      out += it->second;
      pos = close + 1;
    } else if (known_slots().count(name) > 0) {
      return make_error(ErrorKind::invalid_input,
                        "template slot '" + name + "' has no value");
    } else {
      out += '{';
      pos = open + 1;
    }
  }
  return out;
}

Result<PromptLibrary> PromptLibrary::load(const std::string& dir) {
  PromptLibrary lib;
  struct Entry {
    const char* file;
    std::string* target;
  };
  const Entry templates[] = {
      {"task_generation.txt", &lib.task_template_},
      {"tool_simulation.txt", &lib.tool_template_},
      {"user_simulation.txt", &lib.user_template_},
      {"verifier.txt", &lib.verifier_template_},
      {"system_prompt_detailed.txt", &lib.system_prompts_[0]},
      {"system_prompt_concise.txt", &lib.system_prompts_[1]},
      {"system_prompt_onesentence.txt", &lib.system_prompts_[2]},
      {"system_prompt_plain.txt", &lib.system_prompts_[3]},
  };
  for (const Entry& entry : templates) {
    auto text = read_file(dir + "/" + entry.file);
    if (!text.ok()) {
      return text.error();
    }
    *entry.target = std::move(text).value();
  }
  for (std::string& prompt : lib.system_prompts_) {
    prompt = trim_trailing_newlines(std::move(prompt));
  }

  auto levels_text = read_file(dir + "/difficulty_levels.json");
  if (!levels_text.ok()) {
    return levels_text.error();
  }
  json j = json::parse(levels_text.value(), nullptr, false);
  if (j.is_discarded() || !j.is_object()) {
    return make_error(ErrorKind::invalid_input,
                      "difficulty levels file is not a JSON object");
  }
  auto turns = string_list(j, "interaction_turns", 3);
  if (!turns.ok()) return turns.error();
  lib.turns_texts_ = std::move(turns).value();
  auto persona = string_list(j, "user_persona", 3);
  if (!persona.ok()) return persona.error();
  lib.persona_texts_ = std::move(persona).value();
  auto ambiguity = string_list(j, "query_ambiguity", 3);
  if (!ambiguity.ok()) return ambiguity.error();
  lib.ambiguity_texts_ = std::move(ambiguity).value();
  auto criteria = string_list(j, "rewarding_criteria", 5);
  if (!criteria.ok()) return criteria.error();
  lib.criteria_texts_ = std::move(criteria).value();
  return lib;
}

Result<std::string> PromptLibrary::persona_text(int level) const {
  if (level < 0 || level >= static_cast<int>(persona_texts_.size())) {
    return make_error(ErrorKind::invalid_input,
                      "persona level " + std::to_string(level) +
                          " outside [0,2]");
  }
  return persona_texts_[static_cast<size_t>(level)];
}

Result<std::string> PromptLibrary::ambiguity_text(int level) const {
  if (level < 0 || level >= static_cast<int>(ambiguity_texts_.size())) {
    return make_error(ErrorKind::invalid_input,
                      "ambiguity level " + std::to_string(level) +
                          " outside [0,2]");
  }
  return ambiguity_texts_[static_cast<size_t>(level)];
}

std::string PromptLibrary::turns_text(int expected_turns) const {
  int idx = expected_turns - 1;
  if (idx < 0) idx = 0;
  int top = static_cast<int>(turns_texts_.size()) - 1;
  if (idx > top) idx = top;
  return turns_texts_[static_cast<size_t>(idx)];
}

Result<CriteriaSet> PromptLibrary::criteria_for(int level) const {
  if (level < 0 || level >= static_cast<int>(criteria_texts_.size())) {
    return make_error(ErrorKind::invalid_input,
                      "criteria level " + std::to_string(level) +
                          " outside [0,4]");
  }
  CriteriaSet set;
  set.level = level;
  set.lines.assign(criteria_texts_.begin(),
                   criteria_texts_.begin() + level + 1);
  return set;
}

Result<std::string> PromptLibrary::select_system_prompt(int level) const {
  if (level < 0 || level >= static_cast<int>(system_prompts_.size())) {
    return make_error(ErrorKind::invalid_input,
                      "system prompt level " + std::to_string(level) +
                          " outside [0,3]");
  }
  return system_prompts_[static_cast<size_t>(level)];
}

Result<std::string> PromptLibrary::render_task_prompt(
    const std::vector<ToolSpec>& tools, const AspectLevels& levels) const {
  if (tools.empty()) {
    return make_error(ErrorKind::invalid_input,
                      "task prompt needs at least one tool");
  }
  auto persona = persona_text(levels.persona_level);
  if (!persona.ok()) return persona.error();
  auto ambiguity = ambiguity_text(levels.ambiguity_level);
  if (!ambiguity.ok()) return ambiguity.error();
  std::map<std::string, std::string> slots = {
      {"tools", render_tools(tools)},
      {"number of expected calls", std::to_string(levels.expected_calls)},
      {"persona", persona.value()},
      {"ambiguity", ambiguity.value()},
      {"number of turns", turns_text(levels.expected_turns)},
  };
  return render_template(task_template_, slots);
}

Result<std::string> PromptLibrary::render_tool_prompt(
    const PromptContext& ctx, const std::string& tool_call) const {
  std::map<std::string, std::string> slots = {
      {"history", ctx.history_text},
      {"tool calling", tool_call},
      {"tools", ctx.tools_text},
      {"user intent", ctx.intent},
  };
  return render_template(tool_template_, slots);
}

Result<std::string> PromptLibrary::render_user_prompt(
    const PromptContext& ctx, const std::string& latest_agent_message) const {
  std::map<std::string, std::string> slots = {
      {"user query", ctx.first_query},
      {"user intent", ctx.intent},
      {"user persona", ctx.persona},
      {"tools", ctx.tools_text},
      {"history", ctx.history_text},
      {"agent message", latest_agent_message},
  };
  return render_template(user_template_, slots);
}

Result<std::string> PromptLibrary::render_verifier_prompt(
    const PromptContext& ctx, const CriteriaSet& criteria) const {
  if (criteria.lines.size() != static_cast<size_t>(criteria.level) + 1) {
    return make_error(ErrorKind::invalid_input,
                      "criteria set holds " +
                          std::to_string(criteria.lines.size()) +
                          " lines for level " +
                          std::to_string(criteria.level));
  }
  std::string expected;
  for (size_t i = 0; i < ctx.expected_calls.size(); ++i) {
    if (i > 0) expected += ", ";
    expected += ctx.expected_calls[i];
  }
  if (expected.empty()) {
    expected = "(none)";
  }
  std::string criteria_text;
  for (size_t i = 0; i < criteria.lines.size(); ++i) {
    if (i > 0) criteria_text += "\n";
    criteria_text += std::to_string(i + 1) + ". " + criteria.lines[i];
  }
  std::map<std::string, std::string> slots = {
      {"user query", ctx.first_query},
      {"expected tool calls", expected},
      {"user intent", ctx.intent},
      {"user persona", ctx.persona},
      {"tools text", ctx.tools_text},
      {"interaction history text", ctx.history_text},
      {"num criteria", std::to_string(criteria.lines.size())},
      {"criteria text", criteria_text},
  };
  return render_template(verifier_template_, slots);
}

}  // namespace toolgym
