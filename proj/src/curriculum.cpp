#include "toolgym/curriculum.hpp"

#include <algorithm>

namespace toolgym {

using nlohmann::json;

namespace {

constexpr int kMinDifficulty = 1;
constexpr int kMaxDifficulty = 100;

int derive_one(int difficulty, AspectRange range) {
  return range.lo + (difficulty * (range.hi - range.lo)) / 100;
}

int resample_below(int floor_value, int derived, Rng& rng) {
  return rng.range(floor_value, derived);
}

}  // namespace

Result<Unit> validate(const CurriculumConfig& config) {
  if (config.delta < 1) {
    return make_error(ErrorKind::invalid_input, "curriculum delta must be >= 1");
  }
  if (!(config.eta_low < config.eta_high)) {
    return make_error(ErrorKind::invalid_input,
                      "curriculum requires eta_low < eta_high");
  }
  if (config.soft_epsilon < 0.0 || config.soft_epsilon > 1.0) {
    return make_error(ErrorKind::invalid_input,
                      "soft_epsilon must lie in [0, 1]");
  }
  if (config.initial_difficulty < kMinDifficulty ||
      config.initial_difficulty > kMaxDifficulty) {
    return make_error(ErrorKind::invalid_input,
                      "initial difficulty must lie in [1, 100]");
  }
  const AspectRange* all[] = {
      &config.ranges.num_tools,      &config.ranges.expected_calls,
      &config.ranges.expected_turns, &config.ranges.system_prompt,
      &config.ranges.persona,        &config.ranges.ambiguity,
      &config.ranges.criteria,       &config.ranges.max_user_turns,
      &config.ranges.max_tool_turns, &config.ranges.max_agent_turns};
  for (const AspectRange* r : all) {
    if (r->lo > r->hi) {
      return make_error(ErrorKind::invalid_input,
                        "aspect range has lo > hi");
    }
  }
  return Unit{};
}

AspectLevels derive_levels(const DifficultyState& state,
                           const CurriculumConfig& config) {
  const int d = std::clamp(state.difficulty, kMinDifficulty, kMaxDifficulty);
  const AspectRanges& r = config.ranges;
  AspectLevels levels;
  levels.num_tools = derive_one(d, r.num_tools);
  levels.expected_calls = derive_one(d, r.expected_calls);
  levels.expected_turns = derive_one(d, r.expected_turns);
  levels.system_prompt_level = derive_one(d, r.system_prompt);
  levels.persona_level = derive_one(d, r.persona);
  levels.ambiguity_level = derive_one(d, r.ambiguity);
  levels.criteria_level = derive_one(d, r.criteria);
  levels.max_user_turns = derive_one(d, r.max_user_turns);
  levels.max_tool_turns = derive_one(d, r.max_tool_turns);
  levels.max_agent_turns = derive_one(d, r.max_agent_turns);
  return levels;
}

DifficultyState evolve(const DifficultyState& state, double mean_reward,
                       const CurriculumConfig& config) {
  DifficultyState next = state;
  if (mean_reward > config.eta_high) {
    next.difficulty = state.difficulty + config.delta;
  } else if (mean_reward < config.eta_low) {
    next.difficulty = state.difficulty - config.delta;
  }
  next.difficulty = std::clamp(next.difficulty, kMinDifficulty, kMaxDifficulty);
  next.step_index = state.step_index + 1;
  return next;
}

AspectLevels soft_sample(const AspectLevels& levels,
                         const CurriculumConfig& config, Rng& rng) {
  const AspectRanges& r = config.ranges;
  AspectLevels out = levels;
  if (config.soft_per_aspect) {
    if (rng.uniform01() < config.soft_epsilon) {
      out.num_tools = resample_below(r.num_tools.lo, levels.num_tools, rng);
    }
    if (rng.uniform01() < config.soft_epsilon) {
      out.expected_calls =
          resample_below(r.expected_calls.lo, levels.expected_calls, rng);
    }
    if (rng.uniform01() < config.soft_epsilon) {
      out.expected_turns =
          resample_below(r.expected_turns.lo, levels.expected_turns, rng);
    }
    if (rng.uniform01() < config.soft_epsilon) {
      out.persona_level =
          resample_below(r.persona.lo, levels.persona_level, rng);
    }
    if (rng.uniform01() < config.soft_epsilon) {
      out.ambiguity_level =
          resample_below(r.ambiguity.lo, levels.ambiguity_level, rng);
    }
    return out;
  }
  if (rng.uniform01() >= config.soft_epsilon) return out;
  out.num_tools = resample_below(r.num_tools.lo, levels.num_tools, rng);
  out.expected_calls =
      resample_below(r.expected_calls.lo, levels.expected_calls, rng);
  out.expected_turns =
      resample_below(r.expected_turns.lo, levels.expected_turns, rng);
  out.persona_level = resample_below(r.persona.lo, levels.persona_level, rng);
  out.ambiguity_level =
      resample_below(r.ambiguity.lo, levels.ambiguity_level, rng);
  return out;
}

void to_json(json& j, const AspectLevels& levels) {
  j = json{{"num_tools", levels.num_tools},
           {"expected_calls", levels.expected_calls},
           {"expected_turns", levels.expected_turns},
           {"system_prompt_level", levels.system_prompt_level},
           {"persona_level", levels.persona_level},
           {"ambiguity_level", levels.ambiguity_level},
           {"criteria_level", levels.criteria_level},
           {"max_user_turns", levels.max_user_turns},
           {"max_tool_turns", levels.max_tool_turns},
           {"max_agent_turns", levels.max_agent_turns}};
}

void from_json(const json& j, AspectLevels& levels) {
  j.at("num_tools").get_to(levels.num_tools);
  j.at("expected_calls").get_to(levels.expected_calls);
  j.at("expected_turns").get_to(levels.expected_turns);
  j.at("system_prompt_level").get_to(levels.system_prompt_level);
  j.at("persona_level").get_to(levels.persona_level);
  j.at("ambiguity_level").get_to(levels.ambiguity_level);
  j.at("criteria_level").get_to(levels.criteria_level);
  j.at("max_user_turns").get_to(levels.max_user_turns);
  j.at("max_tool_turns").get_to(levels.max_tool_turns);
  j.at("max_agent_turns").get_to(levels.max_agent_turns);
}

}  // namespace toolgym
