#include "toolgym/rewarding.hpp"

#include <cmath>

namespace toolgym {

using nlohmann::json;

void to_json(json& j, const RewardRecord& record) {
  j = json{{"trajectory_id", record.trajectory_id},
           {"reward", record.reward},
           {"reasoning", record.reasoning}};
}

void from_json(const json& j, RewardRecord& record) {
  record.trajectory_id = j.at("trajectory_id").get<std::string>();
  record.reward = j.at("reward").get<int>();
  record.reasoning = j.at("reasoning").get<std::string>();
}

void to_json(json& j, const GroupAdvantages& group) {
  j = json{{"rewards", group.rewards},
           {"mean", group.mean},
           {"std", group.std_dev},
           {"advantages", group.advantages}};
}

void from_json(const json& j, GroupAdvantages& group) {
  group.rewards = j.at("rewards").get<std::vector<double>>();
  group.mean = j.at("mean").get<double>();
  group.std_dev = j.at("std").get<double>();
  group.advantages = j.at("advantages").get<std::vector<double>>();
}

void to_json(json& j, const BatchStats& stats) {
  j = json{{"step_index", stats.step_index},
           {"valid_trajectories", stats.valid_trajectories},
           {"aborted", stats.aborted},
           {"failed_tasks", stats.failed_tasks},
           {"mean_reward", stats.mean_reward},
           {"difficulty_used", stats.difficulty_used}};
}

void from_json(const json& j, BatchStats& stats) {
  stats.step_index = j.at("step_index").get<int>();
  stats.valid_trajectories = j.at("valid_trajectories").get<int>();
  stats.aborted = j.at("aborted").get<int>();
  stats.failed_tasks = j.at("failed_tasks").get<int>();
  stats.mean_reward = j.at("mean_reward").get<double>();
  stats.difficulty_used = j.at("difficulty_used").get<int>();
}

Result<RewardRecord> verify(const Trajectory& trajectory, const TaskSpec& task,
                            int criteria_level, Backend& backend,
                            const PromptLibrary& library,
                            const RolloutParams& params) {
  if (trajectory.status == TrajectoryStatus::aborted) {
    return make_error(ErrorKind::invalid_input,
                      "aborted trajectories are not verified");
  }
  auto criteria = library.criteria_for(criteria_level);
  if (!criteria.ok()) {
    return criteria.error();
  }
  PromptContext ctx = make_context(task, trajectory.events,
                                   trajectory.events.size(),
                                   render_tools(task.tools));
  auto prompt = library.render_verifier_prompt(ctx, criteria.value());
  if (!prompt.ok()) {
    return prompt.error();
  }
  std::vector<ChatMessage> messages{{Role::user, prompt.value()}};
  auto verdict = complete_parsed<std::pair<int, std::string>>(
      backend, messages, params.simulator, params.retries,
      [](const nlohmann::json& v) { return parse_verdict(v); });
  if (!verdict.ok()) {
    return verdict.error();
  }
  RewardRecord record;
  record.trajectory_id = trajectory.task_id;
  record.reward = verdict.value().first;
  record.reasoning = verdict.value().second;
  return record;
}

Result<GroupAdvantages> group_advantages(const std::vector<double>& rewards,
                                         bool sample_std) {
  size_t m = rewards.size();
  if (m < 2) {
    return make_error(ErrorKind::invalid_input,
                      "advantage group needs at least 2 rewards, got " +
                          std::to_string(m));
  }
  GroupAdvantages group;
  group.rewards = rewards;
  double sum = 0.0;
  for (double r : rewards) {
    sum += r;
  }
  group.mean = sum / static_cast<double>(m);
  double sq = 0.0;
  for (double r : rewards) {
    double d = r - group.mean;
    sq += d * d;
  }
  double denom = sample_std ? static_cast<double>(m - 1) : static_cast<double>(m);
  group.std_dev = std::sqrt(sq / denom);
  group.advantages.resize(m, 0.0);
  if (group.std_dev > kStdTolerance) {
    for (size_t i = 0; i < m; ++i) {
      group.advantages[i] = (rewards[i] - group.mean) / group.std_dev;
    }
  }
  return group;
}

Result<BatchStats> batch_stats(
    const std::vector<std::vector<RewardRecord>>& groups, int aborted_count,
    int failed_tasks, int step_index, int difficulty_used) {
  BatchStats stats;
  stats.step_index = step_index;
  stats.aborted = aborted_count;
  stats.failed_tasks = failed_tasks;
  stats.difficulty_used = difficulty_used;
  double sum = 0.0;
  for (const auto& group : groups) {
    for (const RewardRecord& record : group) {
      sum += static_cast<double>(record.reward);
      ++stats.valid_trajectories;
    }
  }
  if (stats.valid_trajectories == 0) {
    return make_error(ErrorKind::bad_state,
                      "batch produced zero valid trajectories");
  }
  stats.mean_reward = sum / static_cast<double>(stats.valid_trajectories);
  return stats;
}

}  // namespace toolgym
