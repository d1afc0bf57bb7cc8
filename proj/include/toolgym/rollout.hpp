#pragma once

#include <functional>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "toolgym/curriculum.hpp"
#include "toolgym/lm_backend.hpp"
#include "toolgym/prompt_forge.hpp"
#include "toolgym/result.hpp"
#include "toolgym/tool_repository.hpp"

namespace toolgym {

// One generated task: who the user is, what they want, how they open,
// which tools the agent gets, and the difficulty snapshot behind it all.
struct TaskSpec {
  std::string task_id;
  std::string persona;
  std::string intent;
  std::string first_query;
  std::vector<std::string> expected_calls;
  AspectLevels levels;
  std::vector<ToolSpec> tools;

  bool operator==(const TaskSpec&) const = default;
};

void to_json(nlohmann::json& j, const TaskSpec& task);
void from_json(const nlohmann::json& j, TaskSpec& task);

enum class EventKind { user_message, agent_text, agent_tool_call, tool_result };

const char* to_string(EventKind kind);

struct Event {
  EventKind kind = EventKind::user_message;
  std::string content;
  // agent_tool_call and tool_result events only.
  std::string tool_name;
  // tool_result and simulated user_message events only.
  std::optional<int> sim_reward;

  bool operator==(const Event&) const = default;
};

void to_json(nlohmann::json& j, const Event& event);
void from_json(const nlohmann::json& j, Event& event);

enum class TrajectoryStatus {
  completed_by_user_end,
  turn_limit,
  length_limit,
  aborted,
};

const char* to_string(TrajectoryStatus status);
Result<TrajectoryStatus> trajectory_status_from_string(const std::string& s);

struct Trajectory {
  std::string task_id;
  std::vector<Event> events;
  TrajectoryStatus status = TrajectoryStatus::aborted;
  int user_turns = 0;
  int tool_turns = 0;
  int agent_turns = 0;
  long token_estimate = 0;
  // Context for status == aborted; stays out of the per-trajectory JSONL.
  std::string abort_reason;

  bool operator==(const Trajectory&) const = default;
};

void to_json(nlohmann::json& j, const Trajectory& trajectory);
void from_json(const nlohmann::json& j, Trajectory& trajectory);

struct TurnCounts {
  int user_turns = 0;
  int tool_turns = 0;
  int agent_turns = 0;
};

// Recomputes counters from events. events[0] is the scripted first query
// and never counts as a simulated user turn; every tool call counts one
// tool turn; every agent-authored event counts one agent turn.
TurnCounts recount(const std::vector<Event>& events);

struct RolloutLimits {
  int max_user_turns = 1;
  int max_tool_turns = 1;
  int max_agent_turns = 1;
  long max_token_estimate = 8192;
};

RolloutLimits limits_from(const AspectLevels& levels, long max_token_estimate);

struct ToolCall {
  std::string name;
  nlohmann::json arguments;
};

// Canonical serialization used for event content, history rendering and
// the tool simulator's {tool calling} slot.
std::string serialize_call(const ToolCall& call);

struct AgentAction {
  bool is_tool_call = false;
  std::vector<ToolCall> calls;
  // Think-stripped user-facing reply when not a tool call.
  std::string user_text;
};

// Splits an agent completion into tool calls or a user-facing reply. A
// tool_call block that yields no valid {name, arguments} objects is a
// malformed action.
Result<AgentAction> classify_action(const std::string& agent_text);

struct RolloutParams {
  CompletionParams agent;
  CompletionParams simulator;
  // Parse-retry budget per simulator call, and the consecutive-malformed
  // budget for agent actions. retries+1 attempts total.
  int retries = 2;
  // Optional exact token counter; characters/4 when unset.
  std::function<long(const std::string&)> token_counter;
};

// First event view for simulator prompts.
std::vector<HistoryTurn> history_view(const std::vector<Event>& events,
                                      size_t count);

PromptContext make_context(const TaskSpec& task,
                           const std::vector<Event>& events, size_t count,
                           const std::string& tools_text);

// One live interaction: holds the trajectory, runs the tool and user
// simulators, and exposes the conversation the agent must answer next.
// The agent itself stays outside; feed its completions through submit().
// Single-threaded use only; run concurrent sessions on separate objects.
// Tool and user simulation may ride on one backend or two.
class Session {
 public:
  Session(TaskSpec task, Backend& tool_sim, Backend& user_sim,
          const PromptLibrary& library, RolloutLimits limits,
          RolloutParams params);

  // System prompt, tool list and every event so far, as chat messages.
  const std::vector<ChatMessage>& conversation() const { return conversation_; }
  bool done() const { return done_; }
  const TaskSpec& task() const { return task_; }
  const Trajectory& trajectory() const { return trajectory_; }
  Trajectory take_trajectory() { return std::move(trajectory_); }

  // Feeds one raw agent completion. Advances tool and user simulation
  // until the agent is needed again or the trajectory terminates. A
  // malformed action burns one unit of the consecutive-malformed budget
  // and leaves the conversation unchanged. Errors only on use after
  // done().
  VoidResult submit(const std::string& agent_text);

  // Marks the trajectory aborted for failures outside the session, e.g.
  // the agent backend giving up.
  void fail(const std::string& reason);

 private:
  void append_event(Event event);
  bool check_limits_after_append();
  void abort(const std::string& reason);
  long estimate(const std::string& text) const;

  TaskSpec task_;
  Backend& tool_sim_;
  Backend& user_sim_;
  const PromptLibrary& library_;
  RolloutLimits limits_;
  RolloutParams params_;
  std::string tools_text_;
  Trajectory trajectory_;
  std::vector<ChatMessage> conversation_;
  int consecutive_malformed_ = 0;
  bool done_ = false;
};

// Renders the task prompt, queries the backend and validates the result.
// Parse failures re-prompt per the retry budget; an expected call naming
// an unoffered tool earns exactly one extra re-prompt before failing.
Result<TaskSpec> generate_task(const std::vector<ToolSpec>& tools,
                               const AspectLevels& levels, Backend& backend,
                               const PromptLibrary& library,
                               const RolloutParams& params);

// Full loop: query the agent backend, feed the session, repeat until
// termination. Agent backend failures abort the trajectory.
Trajectory run_rollout(const TaskSpec& task, Backend& agent, Backend& tool_sim,
                       Backend& user_sim, const PromptLibrary& library,
                       const RolloutLimits& limits,
                       const RolloutParams& params);

}  // namespace toolgym
