#pragma once

#include <array>
#include <map>
#include <string>
#include <vector>

#include "toolgym/curriculum.hpp"
#include "toolgym/result.hpp"
#include "toolgym/tool_repository.hpp"

namespace toolgym {

// Everything a simulator prompt can mention about the task at hand.
// tools_text and history_text arrive pre-rendered so the library stays
// independent of trajectory bookkeeping.
struct PromptContext {
  std::string tools_text;
  std::string history_text;
  std::string intent;
  std::string persona;
  std::string first_query;
  std::vector<std::string> expected_calls;
  AspectLevels levels;
};

// Cumulative judging criteria: level l carries criteria 0..l, in order.
struct CriteriaSet {
  int level = 0;
  std::vector<std::string> lines;
};

enum class TurnRole { user, assistant, tool_call, tool_result };

struct HistoryTurn {
  TurnRole role;
  std::string content;
};

// Tool list as pretty-printed JSON blocks, one per tool, blank-line
// separated. Category is internal sampling metadata and stays out.
std::string render_tools(const std::vector<ToolSpec>& tools);

// Role-tagged history blocks ("[USER] ..."), "(none)" when empty.
std::string render_history(const std::vector<HistoryTurn>& turns);

// Substitutes {slot} placeholders from `slots`. A placeholder naming a
// known slot that has no value is an error; anything else brace-shaped
// (JSON examples, "{-1, 0, 1}") passes through verbatim.
Result<std::string> render_template(
    const std::string& text, const std::map<std::string, std::string>& slots);

// Owns the template texts and per-level descriptions, loaded once from a
// directory. Immutable afterwards; rendering is pure.
class PromptLibrary {
 public:
  static Result<PromptLibrary> load(const std::string& dir);

  Result<std::string> render_task_prompt(const std::vector<ToolSpec>& tools,
                                         const AspectLevels& levels) const;
  Result<std::string> render_tool_prompt(const PromptContext& ctx,
                                         const std::string& tool_call) const;
  Result<std::string> render_user_prompt(
      const PromptContext& ctx, const std::string& latest_agent_message) const;
  Result<std::string> render_verifier_prompt(const PromptContext& ctx,
                                             const CriteriaSet& criteria) const;

  // 0 detailed, 1 concise, 2 one-sentence, 3 bare "You are a helpful
  // assistant."
  Result<std::string> select_system_prompt(int level) const;

  Result<CriteriaSet> criteria_for(int level) const;

  // Level descriptions fed into the task template.
  Result<std::string> persona_text(int level) const;
  Result<std::string> ambiguity_text(int level) const;
  // Indexed by expected turn count (1-based), saturating at the top band.
  std::string turns_text(int expected_turns) const;

  const std::string& task_template() const { return task_template_; }
  const std::string& tool_template() const { return tool_template_; }
  const std::string& user_template() const { return user_template_; }
  const std::string& verifier_template() const { return verifier_template_; }

 private:
  std::string task_template_;
  std::string tool_template_;
  std::string user_template_;
  std::string verifier_template_;
  std::array<std::string, 4> system_prompts_;
  std::vector<std::string> turns_texts_;
  std::vector<std::string> persona_texts_;
  std::vector<std::string> ambiguity_texts_;
  std::vector<std::string> criteria_texts_;
};

}  // namespace toolgym
