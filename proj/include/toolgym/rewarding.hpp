#pragma once

#include <string>
#include <vector>

#include "toolgym/lm_backend.hpp"
#include "toolgym/prompt_forge.hpp"
#include "toolgym/result.hpp"
#include "toolgym/rollout.hpp"

namespace toolgym {

// Verifier verdict for one finished trajectory.
struct RewardRecord {
  std::string trajectory_id;
  int reward = 0;
  std::string reasoning;

  bool operator==(const RewardRecord&) const = default;
};

struct GroupAdvantages {
  std::vector<double> rewards;
  double mean = 0.0;
  double std_dev = 0.0;
  std::vector<double> advantages;

  bool operator==(const GroupAdvantages&) const = default;
};

struct BatchStats {
  int step_index = 0;
  int valid_trajectories = 0;
  int aborted = 0;
  // Tasks whose generation failed outright; their would-be rollouts never
  // ran and appear in no other counter.
  int failed_tasks = 0;
  double mean_reward = 0.0;
  int difficulty_used = 1;

  bool operator==(const BatchStats&) const = default;
};

void to_json(nlohmann::json& j, const RewardRecord& record);
void from_json(const nlohmann::json& j, RewardRecord& record);
void to_json(nlohmann::json& j, const GroupAdvantages& group);
void from_json(const nlohmann::json& j, GroupAdvantages& group);
void to_json(nlohmann::json& j, const BatchStats& stats);
void from_json(const nlohmann::json& j, BatchStats& stats);

// Below this the group carries no usable spread and advantages are zeroed.
inline constexpr double kStdTolerance = 1e-8;

// Asks the verifier to judge the whole trajectory against the cumulative
// criteria for `criteria_level`. The caller owns what happens on failure
// (the trajectory is reclassified aborted upstream).
Result<RewardRecord> verify(const Trajectory& trajectory, const TaskSpec& task,
                            int criteria_level, Backend& backend,
                            const PromptLibrary& library,
                            const RolloutParams& params);

// Group-relative advantages: (r - mean) / std over the group, population
// std by default, all zero under the variance tolerance.
Result<GroupAdvantages> group_advantages(const std::vector<double>& rewards,
                                         bool sample_std = false);

// Batch mean over valid trajectories only; zero valid is a batch failure.
Result<BatchStats> batch_stats(
    const std::vector<std::vector<RewardRecord>>& groups, int aborted_count,
    int failed_tasks, int step_index, int difficulty_used);

}  // namespace toolgym
