#include "toolgym/rollout.hpp"

namespace toolgym {

using nlohmann::json;

const char* to_string(EventKind kind) {
  switch (kind) {
    case EventKind::user_message:
      return "user_message";
    case EventKind::agent_text:
      return "agent_text";
    case EventKind::agent_tool_call:
      return "agent_tool_call";
    case EventKind::tool_result:
      return "tool_result";
  }
  return "user_message";
}

void to_json(json& j, const Event& event) {
  j = json{{"kind", to_string(event.kind)}, {"content", event.content}};
  if (event.kind == EventKind::agent_tool_call ||
      event.kind == EventKind::tool_result) {
    j["tool_name"] = event.tool_name;
  }
  if (event.sim_reward.has_value()) {
    j["sim_reward"] = *event.sim_reward;
  }
}

const char* to_string(TrajectoryStatus status) {
  switch (status) {
    case TrajectoryStatus::completed_by_user_end:
      return "completed_by_user_end";
    case TrajectoryStatus::turn_limit:
      return "turn_limit";
    case TrajectoryStatus::length_limit:
      return "length_limit";
    case TrajectoryStatus::aborted:
      return "aborted";
  }
  return "aborted";
}

Result<TrajectoryStatus> trajectory_status_from_string(const std::string& s) {
  if (s == "completed_by_user_end")
    return TrajectoryStatus::completed_by_user_end;
  if (s == "turn_limit") return TrajectoryStatus::turn_limit;
  if (s == "length_limit") return TrajectoryStatus::length_limit;
  if (s == "aborted") return TrajectoryStatus::aborted;
  return make_error(ErrorKind::invalid_input,
                    "unknown trajectory status: " + s);
}

namespace {

Result<EventKind> event_kind_from_string(const std::string& s) {
  if (s == "user_message") return EventKind::user_message;
  if (s == "agent_text") return EventKind::agent_text;
  if (s == "agent_tool_call") return EventKind::agent_tool_call;
  if (s == "tool_result") return EventKind::tool_result;
  return make_error(ErrorKind::invalid_input, "unknown event kind: " + s);
}

}  // namespace

void from_json(const json& j, Event& event) {
  auto kind = event_kind_from_string(j.at("kind").get<std::string>());
  event.kind = kind.ok() ? kind.value() : EventKind::user_message;
  event.content = j.at("content").get<std::string>();
  event.tool_name = j.value("tool_name", std::string{});
  if (j.contains("sim_reward") && !j["sim_reward"].is_null()) {
    event.sim_reward = j["sim_reward"].get<int>();
  } else {
    event.sim_reward.reset();
  }
}

void to_json(json& j, const TaskSpec& task) {
  j = json{{"task_id", task.task_id},
           {"persona", task.persona},
           {"intent", task.intent},
           {"first_query", task.first_query},
           {"expected_calls", task.expected_calls},
           {"levels", task.levels},
           {"tools", task.tools}};
}

void from_json(const json& j, TaskSpec& task) {
  task.task_id = j.at("task_id").get<std::string>();
  task.persona = j.at("persona").get<std::string>();
  task.intent = j.at("intent").get<std::string>();
  task.first_query = j.at("first_query").get<std::string>();
  task.expected_calls = j.at("expected_calls").get<std::vector<std::string>>();
  task.levels = j.at("levels").get<AspectLevels>();
  task.tools = j.at("tools").get<std::vector<ToolSpec>>();
}

void to_json(json& j, const Trajectory& trajectory) {
  j = json{{"task_id", trajectory.task_id},
           {"events", trajectory.events},
           {"status", to_string(trajectory.status)},
           {"user_turns", trajectory.user_turns},
           {"tool_turns", trajectory.tool_turns},
           {"agent_turns", trajectory.agent_turns},
           {"token_estimate", trajectory.token_estimate}};
  if (!trajectory.abort_reason.empty()) {
    j["abort_reason"] = trajectory.abort_reason;
  }
}

void from_json(const json& j, Trajectory& trajectory) {
  trajectory.task_id = j.at("task_id").get<std::string>();
  trajectory.events = j.at("events").get<std::vector<Event>>();
  auto status = trajectory_status_from_string(j.at("status").get<std::string>());
  trajectory.status = status.ok() ? status.value() : TrajectoryStatus::aborted;
  trajectory.user_turns = j.at("user_turns").get<int>();
  trajectory.tool_turns = j.at("tool_turns").get<int>();
  trajectory.agent_turns = j.at("agent_turns").get<int>();
  trajectory.token_estimate = j.at("token_estimate").get<long>();
  trajectory.abort_reason = j.value("abort_reason", std::string{});
}

TurnCounts recount(const std::vector<Event>& events) {
  TurnCounts counts;
  for (size_t i = 0; i < events.size(); ++i) {
    switch (events[i].kind) {
      case EventKind::user_message:
        if (i > 0) {
          ++counts.user_turns;
        }
        break;
      case EventKind::tool_result:
        ++counts.tool_turns;
        break;
      case EventKind::agent_text:
      case EventKind::agent_tool_call:
        ++counts.agent_turns;
        break;
    }
  }
  return counts;
}

RolloutLimits limits_from(const AspectLevels& levels, long max_token_estimate) {
  RolloutLimits limits;
  limits.max_user_turns = levels.max_user_turns;
  limits.max_tool_turns = levels.max_tool_turns;
  limits.max_agent_turns = levels.max_agent_turns;
  limits.max_token_estimate = max_token_estimate;
  return limits;
}

std::string serialize_call(const ToolCall& call) {
  nlohmann::ordered_json j;
  j["name"] = call.name;
  j["arguments"] = call.arguments;
  return j.dump(2);
}

namespace {

std::string trim(const std::string& s) {
  size_t first = s.find_first_not_of(" \t\r\n");
  if (first == std::string::npos) {
    return "";
  }
  size_t last = s.find_last_not_of(" \t\r\n");
  return s.substr(first, last - first + 1);
}

Result<ToolCall> call_from_json(const json& value) {
  if (!value.is_object()) {
    return make_error(ErrorKind::malformed_output,
                      "tool call is not a JSON object");
  }
  if (!value.contains("name") || !value["name"].is_string()) {
    return make_error(ErrorKind::malformed_output,
                      "tool call missing string field 'name'");
  }
  ToolCall call;
  call.name = value["name"].get<std::string>();
  if (value.contains("arguments")) {
    if (!value["arguments"].is_object()) {
      return make_error(ErrorKind::malformed_output,
                        "tool call field 'arguments' is not an object");
    }
    call.arguments = value["arguments"];
  } else {
    call.arguments = json::object();
  }
  return call;
}

}  // namespace

Result<AgentAction> classify_action(const std::string& agent_text) {
  static const std::string open_tag = "<tool_call>";
  static const std::string close_tag = "</tool_call>";
  std::string stripped = strip_think(agent_text);

  std::string block_text;
  bool any_block = false;
  size_t pos = 0;
  while (true) {
    size_t open = stripped.find(open_tag, pos);
    if (open == std::string::npos) {
      break;
    }
    any_block = true;
    size_t close = stripped.find(close_tag, open + open_tag.size());
    if (close == std::string::npos) {
      return make_error(ErrorKind::malformed_output,
                        "unterminated tool_call block");
    }
    block_text +=
        stripped.substr(open + open_tag.size(), close - open - open_tag.size());
    block_text += "\n";
    pos = close + close_tag.size();
  }

  AgentAction action;
  if (!any_block) {
    action.user_text = trim(stripped);
    return action;
  }
  action.is_tool_call = true;

  size_t p = 0;
  while (p < block_text.size()) {
    size_t start = block_text.find_first_of("{[", p);
    if (start == std::string::npos) {
      break;
    }
    size_t end = balanced_json_end(block_text, start);
    if (end == std::string::npos) {
      return make_error(ErrorKind::malformed_output,
                        "unbalanced JSON in tool_call block");
    }
    json value = json::parse(block_text.substr(start, end - start), nullptr,
                             false);
    if (value.is_discarded()) {
      return make_error(ErrorKind::malformed_output,
                        "unparseable JSON in tool_call block");
    }
    if (value.is_array()) {
      for (const auto& item : value) {
        auto call = call_from_json(item);
        if (!call.ok()) {
          return call.error();
        }
        action.calls.push_back(std::move(call).value());
      }
    } else {
      auto call = call_from_json(value);
      if (!call.ok()) {
        return call.error();
      }
      action.calls.push_back(std::move(call).value());
    }
    p = end;
  }
  if (action.calls.empty()) {
    return make_error(ErrorKind::malformed_output,
                      "tool_call block holds no call objects");
  }
  return action;
}

std::vector<HistoryTurn> history_view(const std::vector<Event>& events,
                                      size_t count) {
  std::vector<HistoryTurn> turns;
  count = std::min(count, events.size());
  turns.reserve(count);
  for (size_t i = 0; i < count; ++i) {
    TurnRole role = TurnRole::user;
    switch (events[i].kind) {
      case EventKind::user_message:
        role = TurnRole::user;
        break;
      case EventKind::agent_text:
        role = TurnRole::assistant;
        break;
      case EventKind::agent_tool_call:
        role = TurnRole::tool_call;
        break;
      case EventKind::tool_result:
        role = TurnRole::tool_result;
        break;
    }
    turns.push_back({role, events[i].content});
  }
  return turns;
}

PromptContext make_context(const TaskSpec& task,
                           const std::vector<Event>& events, size_t count,
                           const std::string& tools_text) {
  PromptContext ctx;
  ctx.tools_text = tools_text;
  ctx.history_text = render_history(history_view(events, count));
  ctx.intent = task.intent;
  ctx.persona = task.persona;
  ctx.first_query = task.first_query;
  ctx.expected_calls = task.expected_calls;
  ctx.levels = task.levels;
  return ctx;
}

Session::Session(TaskSpec task, Backend& tool_sim, Backend& user_sim,
                 const PromptLibrary& library, RolloutLimits limits,
                 RolloutParams params)
    : task_(std::move(task)),
      tool_sim_(tool_sim),
      user_sim_(user_sim),
      library_(library),
      limits_(limits),
      params_(std::move(params)) {
  tools_text_ = render_tools(task_.tools);
  trajectory_.task_id = task_.task_id;
  auto system = library_.select_system_prompt(task_.levels.system_prompt_level);
  if (!system.ok()) {
    abort("system prompt: " + system.error().detail);
    return;
  }
  conversation_.push_back(
      {Role::system,
       system.value() + "\n\n# Available Tools\n\n" + tools_text_});
  append_event(Event{EventKind::user_message, task_.first_query, "", {}});
  check_limits_after_append();
}

long Session::estimate(const std::string& text) const {
  if (params_.token_counter) {
    return params_.token_counter(text);
  }
  return static_cast<long>((text.size() + 3) / 4);
}

void Session::append_event(Event event) {
  switch (event.kind) {
    case EventKind::user_message:
      conversation_.push_back({Role::user, event.content});
      if (!trajectory_.events.empty()) {
        ++trajectory_.user_turns;
      }
      break;
    case EventKind::agent_text:
      conversation_.push_back({Role::assistant, event.content});
      ++trajectory_.agent_turns;
      break;
    case EventKind::agent_tool_call:
      conversation_.push_back(
          {Role::assistant,
           "<tool_call>\n" + event.content + "\n</tool_call>"});
      ++trajectory_.agent_turns;
      break;
    case EventKind::tool_result:
      conversation_.push_back({Role::tool, event.content});
      ++trajectory_.tool_turns;
      break;
  }
  trajectory_.token_estimate += estimate(event.content);
  trajectory_.events.push_back(std::move(event));
}

bool Session::check_limits_after_append() {
  if (trajectory_.user_turns >= limits_.max_user_turns ||
      trajectory_.tool_turns >= limits_.max_tool_turns ||
      trajectory_.agent_turns >= limits_.max_agent_turns) {
    trajectory_.status = TrajectoryStatus::turn_limit;
    done_ = true;
    return true;
  }
  if (trajectory_.token_estimate > limits_.max_token_estimate) {
    trajectory_.status = TrajectoryStatus::length_limit;
    done_ = true;
    return true;
  }
  return false;
}

void Session::abort(const std::string& reason) {
  trajectory_.status = TrajectoryStatus::aborted;
  trajectory_.abort_reason = reason;
  done_ = true;
}

void Session::fail(const std::string& reason) { abort(reason); }

VoidResult Session::submit(const std::string& agent_text) {
  if (done_) {
    return make_error(ErrorKind::bad_state, "submit after session end");
  }
  auto action_result = classify_action(agent_text);
  if (!action_result.ok()) {
    ++consecutive_malformed_;
    if (consecutive_malformed_ > params_.retries) {
      abort("agent action malformed " +
            std::to_string(consecutive_malformed_) +
            " times in a row: " + action_result.error().detail);
    }
    return Unit{};
  }
  AgentAction action = std::move(action_result).value();
  if (!action.is_tool_call && action.user_text.empty()) {
    ++consecutive_malformed_;
    if (consecutive_malformed_ > params_.retries) {
      abort("agent produced an empty message " +
            std::to_string(consecutive_malformed_) + " times in a row");
    }
    return Unit{};
  }
  consecutive_malformed_ = 0;

  if (action.is_tool_call) {
    for (const ToolCall& call : action.calls) {
      std::string call_text = serialize_call(call);
      // Simulate before recording so an abort never leaves a call without
      // its result.
      PromptContext ctx = make_context(task_, trajectory_.events,
                                       trajectory_.events.size(), tools_text_);
      auto prompt = library_.render_tool_prompt(ctx, call_text);
      if (!prompt.ok()) {
        abort("tool prompt: " + prompt.error().detail);
        return Unit{};
      }
      std::vector<ChatMessage> messages{{Role::user, prompt.value()}};
      auto simulated = complete_parsed<std::pair<std::string, int>>(
          tool_sim_, messages, params_.simulator, params_.retries,
          [](const json& v) { return parse_tool_result(v); });
      if (!simulated.ok()) {
        abort("tool simulation: " + simulated.error().detail);
        return Unit{};
      }
      append_event(Event{EventKind::agent_tool_call, call_text, call.name, {}});
      append_event(Event{EventKind::tool_result, simulated.value().first,
                         call.name, simulated.value().second});
      if (check_limits_after_append()) {
        return Unit{};
      }
    }
    return Unit{};
  }

  append_event(Event{EventKind::agent_text, action.user_text, "", {}});
  if (check_limits_after_append()) {
    return Unit{};
  }
  // The latest agent message rides in its own slot, so the history the
  // user simulator sees stops just before it.
  PromptContext ctx = make_context(task_, trajectory_.events,
                                   trajectory_.events.size() - 1, tools_text_);
  auto prompt = library_.render_user_prompt(ctx, action.user_text);
  if (!prompt.ok()) {
    abort("user prompt: " + prompt.error().detail);
    return Unit{};
  }
  std::vector<ChatMessage> messages{{Role::user, prompt.value()}};
  auto simulated = complete_parsed<std::pair<std::string, int>>(
      user_sim_, messages, params_.simulator, params_.retries,
      [](const json& v) { return parse_user(v); });
  if (!simulated.ok()) {
    abort("user simulation: " + simulated.error().detail);
    return Unit{};
  }
  if (simulated.value().first.empty()) {
    trajectory_.status = TrajectoryStatus::completed_by_user_end;
    done_ = true;
    return Unit{};
  }
  append_event(Event{EventKind::user_message, simulated.value().first, "",
                     simulated.value().second});
  check_limits_after_append();
  return Unit{};
}

Result<TaskSpec> generate_task(const std::vector<ToolSpec>& tools,
                               const AspectLevels& levels, Backend& backend,
                               const PromptLibrary& library,
                               const RolloutParams& params) {
  if (tools.empty()) {
    return make_error(ErrorKind::invalid_input,
                      "task generation needs at least one tool");
  }
  auto prompt = library.render_task_prompt(tools, levels);
  if (!prompt.ok()) {
    return prompt.error();
  }
  std::vector<ChatMessage> messages{{Role::user, prompt.value()}};
  std::vector<std::string> names;
  names.reserve(tools.size());
  for (const ToolSpec& tool : tools) {
    names.push_back(tool.name);
  }
  // An expected call naming an unoffered tool earns one full re-prompt
  // round before the task is given up on.
  Error last{ErrorKind::malformed_output, "task generation not attempted", 1};
  for (int round = 0; round < 2; ++round) {
    auto parsed = complete_parsed<ParsedTask>(
        backend, messages, params.simulator, params.retries,
        [](const json& v) { return parse_task(v); });
    if (!parsed.ok()) {
      return parsed.error();
    }
    auto membership = check_expected_tools(parsed.value(), names);
    if (membership.ok()) {
      TaskSpec task;
      task.persona = parsed.value().user_persona;
      task.intent = parsed.value().user_intent;
      task.first_query = parsed.value().first_user_query;
      task.expected_calls = parsed.value().expected_tool_calls;
      task.levels = levels;
      task.tools = tools;
      return task;
    }
    last = membership.error();
  }
  return last;
}

Trajectory run_rollout(const TaskSpec& task, Backend& agent, Backend& tool_sim,
                       Backend& user_sim, const PromptLibrary& library,
                       const RolloutLimits& limits,
                       const RolloutParams& params) {
  Session session(task, tool_sim, user_sim, library, limits, params);
  while (!session.done()) {
    auto text = agent.complete(session.conversation(), params.agent);
    if (!text.ok()) {
      session.fail("agent backend: " + text.error().detail);
      break;
    }
    auto submitted = session.submit(text.value());
    if (!submitted.ok()) {
      session.fail(submitted.error().detail);
      break;
    }
  }
  return session.take_trajectory();
}

}  // namespace toolgym
