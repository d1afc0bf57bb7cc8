#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include <nlohmann/json.hpp>

#include "toolgym/curriculum.hpp"
#include "toolgym/lm_backend.hpp"
#include "toolgym/prompt_forge.hpp"
#include "toolgym/result.hpp"
#include "toolgym/rewarding.hpp"
#include "toolgym/rng.hpp"
#include "toolgym/rollout.hpp"
#include "toolgym/tool_repository.hpp"

namespace toolgym {

// One model endpoint: a remote chat-completions server, a script file, or
// nothing (server mode, where the caller plays the agent).
struct BackendConfig {
  std::string kind = "scripted";  // http | scripted | none
  // http
  std::string base_url;
  std::string model;
  std::string api_key;
  int timeout_ms = 60000;
  int http_retries = 2;
  int max_in_flight = 8;
  // scripted
  std::string script_path;
  std::string key_mode = "last_message";
};

struct RunConfig {
  std::string run_id = "run";
  uint64_t seed = 0;
  int batch_size = 16;
  int group_size = 8;
  int total_steps = 200;
  // Max concurrent rollouts; simulation servers dislike more.
  int worker_cap = 16;
  // Parse-retry budget per simulator call.
  int retries = 2;
  long max_token_estimate = 8192;
  // Sample (1/(M-1)) instead of population std in advantages.
  bool sample_std = false;
  double agent_temperature = 1.0;
  int agent_max_tokens = 16384;
  double simulator_temperature = 1.0;
  int simulator_max_tokens = 16384;
  std::string tools_path = "data/example_tools.jsonl";
  std::string templates_dir = "templates";
  std::string out_dir = "runs";
  CurriculumConfig curriculum;
  BackendConfig agent;
  BackendConfig simulator;
  // Per-role endpoint overrides keyed task | tool | user | verifier;
  // absent roles share `simulator`.
  std::map<std::string, BackendConfig> simulator_overrides;
};

// Reads a JSON config file; absent keys keep RunConfig defaults.
Result<RunConfig> load_config(const std::string& path);
VoidResult validate(const RunConfig& config);

struct Backends {
  std::shared_ptr<Backend> agent;  // null when the trainer drives
  std::shared_ptr<Backend> task;
  std::shared_ptr<Backend> tool;
  std::shared_ptr<Backend> user;
  std::shared_ptr<Backend> verifier;
};

Result<Backends> make_backends(const RunConfig& config, bool need_agent);

// Everything one training step needs besides the difficulty state.
struct Env {
  RunConfig config;
  Repository repository;
  PromptLibrary library;
  Backends backends;

  RolloutParams rollout_params() const;
  std::string run_dir() const;
};

Result<Env> make_env(RunConfig config, bool need_agent);

// Stream seeds drawn per (step, task, purpose) so both execution modes
// make identical draws.
inline constexpr uint64_t kSoftSamplePurpose = 1;
inline constexpr uint64_t kToolSamplePurpose = 2;
uint64_t derive_seed(uint64_t seed, uint64_t step, uint64_t task,
                     uint64_t purpose);

struct PreparedTask {
  // Original batch position; kept when earlier generations fail so seed
  // streams stay aligned.
  int task_index = 0;
  TaskSpec task;
};

struct PreparedBatch {
  int step_index = 0;
  int difficulty_used = 1;
  AspectLevels base_levels;
  std::vector<PreparedTask> tasks;
  int failed_tasks = 0;
};

// Stage one: derive levels, soft-sample per task, sample tools, generate
// tasks. Generation failures shrink the batch and are counted.
PreparedBatch prepare_batch(const Env& env, const DifficultyState& state,
                            int step_index);

struct TaskResult {
  TaskSpec task;
  std::vector<Trajectory> trajectories;
  // Aligned with trajectories; empty slot for aborted ones.
  std::vector<std::optional<RewardRecord>> records;
  // Group statistics over the valid members in trajectory order; absent
  // when fewer than two survived.
  std::optional<GroupAdvantages> group;
  // Aligned with trajectories; set only where the group contributed.
  std::vector<std::optional<double>> advantages;

  bool operator==(const TaskResult&) const = default;
};

struct BatchArtifact {
  std::string run_id;
  int step_index = 0;
  int difficulty_before = 1;
  int difficulty_after = 1;
  AspectLevels base_levels;
  int failed_tasks = 0;
  // Zero valid trajectories: difficulty frozen, nothing to train on.
  bool failed = false;
  std::vector<TaskResult> tasks;
  BatchStats stats;

  bool operator==(const BatchArtifact&) const = default;
};

void to_json(nlohmann::json& j, const BatchArtifact& artifact);
void from_json(const nlohmann::json& j, BatchArtifact& artifact);

// Stage two, shared with the service: run every rollout of the batch
// concurrently up to worker_cap. Indexed [task][rollout].
Result<std::vector<std::vector<Trajectory>>> run_group_rollouts(
    const Env& env, const PreparedBatch& batch);

// Stage three, shared with the service: verify, group advantages, batch
// stats, difficulty evolution. Pure with respect to `state`.
BatchArtifact finalize_batch(const Env& env, const PreparedBatch& batch,
                             std::vector<std::vector<Trajectory>> trajectories,
                             const DifficultyState& state);

// step_<n>.json via write-then-rename, then the trajectory JSONL lines,
// then the trace row that commits the step.
VoidResult persist_step(const Env& env, const BatchArtifact& artifact);

// One full training step; advances `state` on success.
Result<BatchArtifact> run_step(const Env& env, DifficultyState& state);

struct TraceRow {
  int step = 0;
  int difficulty_before = 1;
  int difficulty_after = 1;
  double mean_reward = 0.0;
  int valid = 0;
  int aborted = 0;
  int failed_tasks = 0;
  bool failed = false;
};

Result<std::vector<TraceRow>> read_trace(const std::string& run_dir);

struct RunSummary {
  int steps_run = 0;
  int final_difficulty = 1;
  std::string run_dir;
};

// Sequential steps, resuming from an existing trace when the run
// directory already has one.
Result<RunSummary> run(const RunConfig& config);

// step,difficulty,mean_reward,aborted rows from the trace.
Result<std::string> inspect_csv(const std::string& run_dir);

// Pulls indices [0,count) through `fn` on up to worker_cap threads.
// Exceptions escaping fn surface as bad_state.
VoidResult parallel_for(size_t count, int worker_cap,
                        const std::function<void(size_t)>& fn);

}  // namespace toolgym
