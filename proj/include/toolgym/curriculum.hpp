#pragma once

#include <nlohmann/json.hpp>

#include "toolgym/result.hpp"
#include "toolgym/rng.hpp"

namespace toolgym {

// Scalar task difficulty on 1..100. Every per-aspect level is a pure
// function of this value.
struct DifficultyState {
  int difficulty = 1;
  int step_index = 0;
};

struct AspectRange {
  int lo = 0;
  int hi = 0;
};

struct AspectRanges {
  AspectRange num_tools{1, 10};
  AspectRange expected_calls{1, 3};
  AspectRange expected_turns{1, 2};
  AspectRange system_prompt{0, 3};
  AspectRange persona{0, 2};
  AspectRange ambiguity{0, 2};
  AspectRange criteria{0, 4};
  AspectRange max_user_turns{1, 3};
  AspectRange max_tool_turns{1, 3};
  AspectRange max_agent_turns{1, 6};
};

struct CurriculumConfig {
  int delta = 3;
  double eta_low = 0.0;
  double eta_high = 0.5;
  double soft_epsilon = 0.5;
  // One coin flip gating all five randomizable aspects together; set to
  // true for an independent flip per aspect instead.
  bool soft_per_aspect = false;
  int initial_difficulty = 1;
  AspectRanges ranges;
};

Result<Unit> validate(const CurriculumConfig& config);

// All difficulty aspects for one task, plus the turn limits that scale
// with them.
struct AspectLevels {
  int num_tools = 1;
  int expected_calls = 1;
  int expected_turns = 1;
  int system_prompt_level = 0;
  int persona_level = 0;
  int ambiguity_level = 0;
  int criteria_level = 0;
  int max_user_turns = 1;
  int max_tool_turns = 1;
  int max_agent_turns = 1;

  bool operator==(const AspectLevels&) const = default;
};

void to_json(nlohmann::json& j, const AspectLevels& levels);
void from_json(const nlohmann::json& j, AspectLevels& levels);

// Maps difficulty onto every aspect range: lo + floor(d * (hi - lo) / 100).
AspectLevels derive_levels(const DifficultyState& state,
                           const CurriculumConfig& config);

// One evolution step from the batch mean reward: +delta above eta_high,
// -delta below eta_low, unchanged otherwise; clamped to 1..100.
DifficultyState evolve(const DifficultyState& state, double mean_reward,
                       const CurriculumConfig& config);

// Soft curriculum: with probability soft_epsilon, resample tool count,
// expected calls, expected turns, persona and ambiguity uniformly from
// [range floor, derived value]. System-prompt and criteria levels are
// never randomized. Draw order when the flip fires: num_tools,
// expected_calls, expected_turns, persona, ambiguity.
AspectLevels soft_sample(const AspectLevels& levels,
                         const CurriculumConfig& config, Rng& rng);

}  // namespace toolgym
