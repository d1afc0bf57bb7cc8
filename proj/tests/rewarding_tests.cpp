#define DOCTEST_CONFIG_IMPLEMENT_WITH_MAIN
#include <doctest.h>

#include <cmath>
#include <string>
#include <vector>

#include "support.hpp"
#include "toolgym/rewarding.hpp"
#include "toolgym/rng.hpp"

using namespace toolgym;
using namespace toolgym::testing;
using nlohmann::json;

namespace {

const PromptLibrary& library() {
  static PromptLibrary lib = [] {
    auto loaded = PromptLibrary::load("templates");
    REQUIRE(loaded.ok());
    return std::move(loaded).value();
  }();
  return lib;
}

TaskSpec small_task() {
  TaskSpec task;
  task.task_id = "verify-1";
  task.persona = "Novice: no prior knowledge.";
  task.intent = "Check the weather";
  task.first_query = "Weather in Paris?";
  task.expected_calls = {"get_current_weather"};
  ToolSpec tool;
  tool.name = "get_current_weather";
  tool.category = "weather";
  tool.description = "Current weather for a location.";
  task.tools = {tool};
  return task;
}

Trajectory small_trajectory() {
  Trajectory trajectory;
  trajectory.task_id = "verify-1";
  trajectory.events = {
      {EventKind::user_message, "Weather in Paris?", "", {}},
      {EventKind::agent_tool_call,
       "{\n  \"name\": \"get_current_weather\",\n  \"arguments\": {}\n}",
       "get_current_weather",
       {}},
      {EventKind::tool_result, "22C", "get_current_weather", 1},
      {EventKind::agent_text, "It is 22C.", "", {}},
  };
  trajectory.status = TrajectoryStatus::completed_by_user_end;
  trajectory.user_turns = 0;
  trajectory.tool_turns = 1;
  trajectory.agent_turns = 2;
  trajectory.token_estimate = 40;
  return trajectory;
}

// Plain two-pass mean and deviation, kept separate from the library math.
void oracle_stats(const std::vector<double>& rewards, bool sample_std,
                  double& mean, double& std_dev) {
  double sum = 0.0;
  for (double r : rewards) sum += r;
  mean = sum / static_cast<double>(rewards.size());
  double sq = 0.0;
  for (double r : rewards) sq += (r - mean) * (r - mean);
  double denom = sample_std ? static_cast<double>(rewards.size() - 1)
                            : static_cast<double>(rewards.size());
  std_dev = std::sqrt(sq / denom);
}

}  // namespace

TEST_CASE("verify renders the whole history and collects the verdict") {
  FnBackend backend([](const std::vector<ChatMessage>&,
                       const CompletionParams&) -> Result<std::string> {
    return std::string(
        "{\"reward\": 1, \"reasoning\": \"used the expected tool\"}");
  });
  auto record = verify(small_trajectory(), small_task(), 2, backend, library(),
                       {});
  REQUIRE(record.ok());
  CHECK(record.value().trajectory_id == "verify-1");
  CHECK(record.value().reward == 1);
  CHECK(record.value().reasoning == "used the expected tool");

  REQUIRE(backend.calls.size() == 1);
  const std::string& prompt = backend.calls[0][0].content;
  // Every event reaches the verifier, tool calls included.
  CHECK(contains(prompt, "Weather in Paris?"));
  CHECK(contains(prompt, "get_current_weather"));
  CHECK(contains(prompt, "22C"));
  CHECK(contains(prompt, "It is 22C."));
  // Cumulative criteria through level 2.
  CHECK(contains(prompt, "1. Meet the user's intent"));
  CHECK(contains(prompt, "2. Correctly use the expected tools"));
  CHECK(contains(prompt, "3. Free of hallucination"));
  CHECK_FALSE(contains(prompt, "4. No redundant"));
}

TEST_CASE("verify refuses aborted trajectories") {
  FnBackend backend([](const std::vector<ChatMessage>&,
                       const CompletionParams&) -> Result<std::string> {
    return std::string("{\"reward\": 1, \"reasoning\": \"r\"}");
  });
  Trajectory trajectory = small_trajectory();
  trajectory.status = TrajectoryStatus::aborted;
  trajectory.abort_reason = "agent backend: boom";
  auto record = verify(trajectory, small_task(), 0, backend, library(), {});
  REQUIRE_FALSE(record.ok());
  CHECK(record.error().kind == ErrorKind::invalid_input);
  CHECK(backend.calls.empty());
}

TEST_CASE("verify propagates backend failure after the retry budget") {
  FnBackend backend([](const std::vector<ChatMessage>&,
                       const CompletionParams&) -> Result<std::string> {
    return std::string("no verdict here");
  });
  RolloutParams params;
  params.retries = 2;
  auto record =
      verify(small_trajectory(), small_task(), 0, backend, library(), params);
  REQUIRE_FALSE(record.ok());
  CHECK(record.error().kind == ErrorKind::retries_exhausted);
  CHECK(record.error().attempts == 3);
  CHECK(backend.calls.size() == 3);
}

TEST_CASE("verify rejects out-of-range criteria levels") {
  FnBackend backend([](const std::vector<ChatMessage>&,
                       const CompletionParams&) -> Result<std::string> {
    return std::string("{\"reward\": 0, \"reasoning\": \"r\"}");
  });
  CHECK_FALSE(
      verify(small_trajectory(), small_task(), 5, backend, library(), {}).ok());
  CHECK_FALSE(
      verify(small_trajectory(), small_task(), -1, backend, library(), {})
          .ok());
}

TEST_CASE("group_advantages matches an independent oracle") {
  Rng rng(20260816);
  for (int trial = 0; trial < 1000; ++trial) {
    CAPTURE(trial);
    size_t m = 2 + rng.bounded(7);
    std::vector<double> rewards(m);
    for (double& r : rewards) {
      r = static_cast<double>(rng.range(-1, 1));
      if (rng.bounded(4) == 0) {
        r += rng.uniform01() - 0.5;
      }
    }
    auto group = group_advantages(rewards);
    REQUIRE(group.ok());
    double mean = 0.0;
    double std_dev = 0.0;
    oracle_stats(rewards, false, mean, std_dev);
    CHECK(std::abs(group.value().mean - mean) <= 1e-9);
    CHECK(std::abs(group.value().std_dev - std_dev) <= 1e-9);
    double sum = 0.0;
    for (size_t i = 0; i < m; ++i) {
      double expected =
          std_dev > kStdTolerance ? (rewards[i] - mean) / std_dev : 0.0;
      CHECK(std::abs(group.value().advantages[i] - expected) <= 1e-9);
      sum += group.value().advantages[i];
    }
    // Standardized scores sum to zero.
    CHECK(std::abs(sum) <= 1e-9);
  }
}

TEST_CASE("zero variance zeroes every advantage") {
  for (double level : {-1.0, 0.0, 1.0}) {
    auto group = group_advantages({level, level, level, level});
    REQUIRE(group.ok());
    CHECK(group.value().std_dev <= kStdTolerance);
    for (double a : group.value().advantages) {
      CHECK(a == 0.0);
    }
  }
  // Just-barely spread still counts as flat.
  auto tiny = group_advantages({0.0, 1e-9});
  REQUIRE(tiny.ok());
  CHECK(tiny.value().advantages == std::vector<double>{0.0, 0.0});
}

TEST_CASE("advantages keep the reward ordering and ignore shifts") {
  std::vector<double> rewards = {1.0, -1.0, 0.0, 1.0};
  auto group = group_advantages(rewards).value();
  // Largest reward keeps the largest advantage.
  CHECK(group.advantages[0] == group.advantages[3]);
  CHECK(group.advantages[0] > group.advantages[2]);
  CHECK(group.advantages[2] > group.advantages[1]);

  std::vector<double> shifted = rewards;
  for (double& r : shifted) r += 5.0;
  auto shifted_group = group_advantages(shifted).value();
  for (size_t i = 0; i < rewards.size(); ++i) {
    CHECK(std::abs(group.advantages[i] - shifted_group.advantages[i]) <= 1e-9);
  }
}

TEST_CASE("sample std uses the m-1 denominator") {
  std::vector<double> rewards = {1.0, -1.0, 0.0};
  auto population = group_advantages(rewards, false).value();
  auto sample = group_advantages(rewards, true).value();
  double mean = 0.0;
  double std_dev = 0.0;
  oracle_stats(rewards, true, mean, std_dev);
  CHECK(std::abs(sample.std_dev - std_dev) <= 1e-12);
  CHECK(sample.std_dev > population.std_dev);
}

TEST_CASE("groups under two rewards are rejected") {
  auto empty = group_advantages({});
  REQUIRE_FALSE(empty.ok());
  CHECK(empty.error().kind == ErrorKind::invalid_input);
  auto one = group_advantages({1.0});
  REQUIRE_FALSE(one.ok());
  CHECK(contains(one.error().detail, "got 1"));
}

TEST_CASE("batch_stats averages valid records only") {
  std::vector<std::vector<RewardRecord>> groups = {
      {{"a", 1, "r"}, {"b", -1, "r"}},
      {{"c", 1, "r"}},
      {},
  };
  auto stats = batch_stats(groups, 3, 2, 7, 42);
  REQUIRE(stats.ok());
  CHECK(stats.value().step_index == 7);
  CHECK(stats.value().valid_trajectories == 3);
  CHECK(stats.value().aborted == 3);
  CHECK(stats.value().failed_tasks == 2);
  CHECK(stats.value().difficulty_used == 42);
  CHECK(std::abs(stats.value().mean_reward - 1.0 / 3.0) <= 1e-12);
}

TEST_CASE("batch_stats fails on zero valid trajectories") {
  auto stats = batch_stats({{}, {}}, 8, 0, 0, 1);
  REQUIRE_FALSE(stats.ok());
  CHECK(stats.error().kind == ErrorKind::bad_state);
  CHECK(contains(stats.error().detail, "zero valid"));
}

TEST_CASE("reward structures round-trip through JSON") {
  RewardRecord record{"traj-9", -1, "hallucinated a tool"};
  RewardRecord record_back = json(record).get<RewardRecord>();
  CHECK(record_back == record);

  GroupAdvantages group = group_advantages({1.0, 0.0, -1.0}).value();
  GroupAdvantages group_back = json(group).get<GroupAdvantages>();
  CHECK(group_back == group);

  BatchStats stats;
  stats.step_index = 3;
  stats.valid_trajectories = 12;
  stats.aborted = 4;
  stats.failed_tasks = 1;
  stats.mean_reward = 0.25;
  stats.difficulty_used = 55;
  BatchStats stats_back = json(stats).get<BatchStats>();
  CHECK(stats_back == stats);
}
