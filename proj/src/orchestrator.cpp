#include "toolgym/orchestrator.hpp"

#include <atomic>
#include <cstdio>
#include <filesystem>
#include <fstream>
#include <mutex>
#include <sstream>
#include <thread>
#include <utility>

#include "toolgym/http_backend.hpp"

namespace toolgym {

namespace fs = std::filesystem;
using nlohmann::json;
using nlohmann::ordered_json;

namespace {

template <typename T>
void read_field(const json& j, const char* key, T& out) {
  if (auto it = j.find(key); it != j.end()) out = it->get<T>();
}

void read_backend(const json& j, BackendConfig& out) {
  read_field(j, "kind", out.kind);
  read_field(j, "base_url", out.base_url);
  read_field(j, "model", out.model);
  read_field(j, "api_key", out.api_key);
  read_field(j, "timeout_ms", out.timeout_ms);
  read_field(j, "http_retries", out.http_retries);
  read_field(j, "max_in_flight", out.max_in_flight);
  read_field(j, "script", out.script_path);
  read_field(j, "key_mode", out.key_mode);
}

void read_range(const json& j, const char* key, AspectRange& out) {
  if (auto it = j.find(key); it != j.end()) {
    out.lo = it->at(0).get<int>();
    out.hi = it->at(1).get<int>();
  }
}

void read_curriculum(const json& j, CurriculumConfig& out) {
  read_field(j, "delta", out.delta);
  read_field(j, "eta_low", out.eta_low);
  read_field(j, "eta_high", out.eta_high);
  read_field(j, "soft_epsilon", out.soft_epsilon);
  read_field(j, "soft_per_aspect", out.soft_per_aspect);
  read_field(j, "initial_difficulty", out.initial_difficulty);
  if (auto it = j.find("ranges"); it != j.end()) {
    read_range(*it, "num_tools", out.ranges.num_tools);
    read_range(*it, "expected_calls", out.ranges.expected_calls);
    read_range(*it, "expected_turns", out.ranges.expected_turns);
    read_range(*it, "system_prompt", out.ranges.system_prompt);
    read_range(*it, "persona", out.ranges.persona);
    read_range(*it, "ambiguity", out.ranges.ambiguity);
    read_range(*it, "criteria", out.ranges.criteria);
    read_range(*it, "max_user_turns", out.ranges.max_user_turns);
    read_range(*it, "max_tool_turns", out.ranges.max_tool_turns);
    read_range(*it, "max_agent_turns", out.ranges.max_agent_turns);
  }
}

VoidResult check_backend(const BackendConfig& backend, const std::string& role,
                         bool allow_none) {
  if (backend.kind == "none") {
    if (allow_none) return Unit{};
    return make_error(ErrorKind::invalid_input,
                      role + " backend: kind 'none' not allowed here");
  }
  if (backend.kind == "scripted") {
    if (backend.script_path.empty()) {
      return make_error(ErrorKind::invalid_input,
                        role + " backend: scripted kind needs a script path");
    }
    if (backend.key_mode != "last_message" && backend.key_mode != "full_text") {
      return make_error(ErrorKind::invalid_input,
                        role + " backend: unknown key_mode '" +
                            backend.key_mode + "'");
    }
    return Unit{};
  }
  if (backend.kind == "http") {
    if (backend.base_url.empty()) {
      return make_error(ErrorKind::invalid_input,
                        role + " backend: http kind needs a base_url");
    }
    return Unit{};
  }
  return make_error(ErrorKind::invalid_input,
                    role + " backend: unknown kind '" + backend.kind + "'");
}

Result<std::shared_ptr<Backend>> instantiate(const BackendConfig& backend,
                                             const std::string& role) {
  if (backend.kind == "scripted") {
    auto scripted = ScriptedBackend::from_file(backend.script_path,
                                               backend.key_mode);
    if (!scripted) {
      Error err = scripted.error();
      err.detail = role + " backend: " + err.detail;
      return err;
    }
    return std::shared_ptr<Backend>(
        std::make_shared<ScriptedBackend>(std::move(scripted.value())));
  }
  if (backend.kind == "http") {
    HttpBackendConfig http;
    http.base_url = backend.base_url;
    http.model = backend.model;
    http.api_key = backend.api_key;
    http.timeout_ms = backend.timeout_ms;
    http.retries = backend.http_retries;
    http.max_in_flight = backend.max_in_flight;
    auto created = HttpBackend::create(http);
    if (!created) {
      Error err = created.error();
      err.detail = role + " backend: " + err.detail;
      return err;
    }
    return std::shared_ptr<Backend>(std::move(created.value()));
  }
  return make_error(ErrorKind::invalid_input,
                    role + " backend: unknown kind '" + backend.kind + "'");
}

std::string format_reward(double value) {
  char buffer[32];
  std::snprintf(buffer, sizeof(buffer), "%.6g", value);
  return buffer;
}

VoidResult write_file_atomic(const fs::path& path, const std::string& text) {
  fs::path tmp = path;
  tmp += ".tmp";
  {
    std::ofstream out(tmp, std::ios::trunc | std::ios::binary);
    if (!out) {
      return make_error(ErrorKind::io_error,
                        "cannot write " + tmp.string());
    }
    out << text;
    out.flush();
    if (!out) {
      return make_error(ErrorKind::io_error,
                        "short write to " + tmp.string());
    }
  }
  std::error_code ec;
  fs::rename(tmp, path, ec);
  if (ec) {
    return make_error(ErrorKind::io_error, "cannot rename " + tmp.string() +
                                               ": " + ec.message());
  }
  return Unit{};
}

ordered_json trajectory_line(const BatchArtifact& artifact,
                             const TaskResult& task, size_t index) {
  const Trajectory& trajectory = task.trajectories[index];
  ordered_json line;
  line["run_id"] = artifact.run_id;
  line["step"] = artifact.step_index;
  line["task_id"] = task.task.task_id;
  line["difficulty"] = artifact.difficulty_before;
  line["levels"] = ordered_json(json(task.task.levels));
  ordered_json names = ordered_json::array();
  for (const ToolSpec& tool : task.task.tools) names.push_back(tool.name);
  line["tools"] = std::move(names);
  ordered_json spec;
  spec["persona"] = task.task.persona;
  spec["intent"] = task.task.intent;
  spec["first_query"] = task.task.first_query;
  spec["expected_calls"] = task.task.expected_calls;
  line["task"] = std::move(spec);
  line["events"] = ordered_json(json(trajectory.events));
  line["status"] = to_string(trajectory.status);
  if (index < task.records.size() && task.records[index].has_value()) {
    line["final_reward"] = task.records[index]->reward;
  } else {
    line["final_reward"] = nullptr;
  }
  if (index < task.advantages.size() && task.advantages[index].has_value()) {
    line["advantage"] = *task.advantages[index];
  } else {
    line["advantage"] = nullptr;
  }
  return line;
}

Result<TraceRow> parse_trace_row(const json& row) {
  if (!row.is_object()) {
    return make_error(ErrorKind::invalid_input, "trace row is not an object");
  }
  try {
    TraceRow parsed;
    parsed.step = row.at("step").get<int>();
    parsed.difficulty_before = row.at("difficulty_before").get<int>();
    parsed.difficulty_after = row.at("difficulty_after").get<int>();
    parsed.mean_reward = row.at("mean_reward").get<double>();
    parsed.valid = row.at("valid").get<int>();
    parsed.aborted = row.at("aborted").get<int>();
    parsed.failed_tasks = row.at("failed_tasks").get<int>();
    parsed.failed = row.at("failed").get<bool>();
    return parsed;
  } catch (const json::exception& e) {
    return make_error(ErrorKind::invalid_input,
                      std::string("trace row: ") + e.what());
  }
}

ordered_json trace_row_json(const TraceRow& row) {
  ordered_json out;
  out["step"] = row.step;
  out["difficulty_before"] = row.difficulty_before;
  out["difficulty_after"] = row.difficulty_after;
  out["mean_reward"] = row.mean_reward;
  out["valid"] = row.valid;
  out["aborted"] = row.aborted;
  out["failed_tasks"] = row.failed_tasks;
  out["failed"] = row.failed;
  return out;
}

// Drops trajectory lines past the last committed step. A crash between the
// JSONL append and the trace append leaves such lines behind.
VoidResult trim_trajectories(const fs::path& dir, int last_step) {
  fs::path path = dir / "trajectories.jsonl";
  if (!fs::exists(path)) return Unit{};
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    return make_error(ErrorKind::io_error, "cannot open " + path.string());
  }
  std::ostringstream kept;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json row = json::parse(line, nullptr, false);
    if (row.is_discarded() || !row.is_object()) continue;
    auto it = row.find("step");
    if (it == row.end() || !it->is_number_integer()) continue;
    if (it->get<int>() > last_step) continue;
    kept << line << "\n";
  }
  in.close();
  return write_file_atomic(path, kept.str());
}

VoidResult rewrite_trace(const fs::path& dir,
                         const std::vector<TraceRow>& rows) {
  std::ostringstream text;
  for (const TraceRow& row : rows) text << trace_row_json(row).dump() << "\n";
  return write_file_atomic(dir / "trace.jsonl", text.str());
}

}  // namespace

Result<RunConfig> load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) {
    return make_error(ErrorKind::io_error, "cannot open config: " + path);
  }
  json doc = json::parse(in, nullptr, false);
  if (doc.is_discarded() || !doc.is_object()) {
    return make_error(ErrorKind::invalid_input,
                      "config is not a JSON object: " + path);
  }
  RunConfig config;
  try {
    read_field(doc, "run_id", config.run_id);
    read_field(doc, "seed", config.seed);
    read_field(doc, "batch_size", config.batch_size);
    read_field(doc, "group_size", config.group_size);
    read_field(doc, "total_steps", config.total_steps);
    read_field(doc, "worker_cap", config.worker_cap);
    read_field(doc, "retries", config.retries);
    read_field(doc, "max_token_estimate", config.max_token_estimate);
    read_field(doc, "sample_std", config.sample_std);
    read_field(doc, "agent_temperature", config.agent_temperature);
    read_field(doc, "agent_max_tokens", config.agent_max_tokens);
    read_field(doc, "simulator_temperature", config.simulator_temperature);
    read_field(doc, "simulator_max_tokens", config.simulator_max_tokens);
    read_field(doc, "tools", config.tools_path);
    read_field(doc, "templates", config.templates_dir);
    read_field(doc, "out", config.out_dir);
    if (auto it = doc.find("curriculum"); it != doc.end()) {
      read_curriculum(*it, config.curriculum);
    }
    if (auto it = doc.find("agent"); it != doc.end()) {
      read_backend(*it, config.agent);
    }
    if (auto it = doc.find("simulator"); it != doc.end()) {
      read_backend(*it, config.simulator);
    }
    if (auto it = doc.find("simulator_overrides"); it != doc.end()) {
      for (const auto& [role, body] : it->items()) {
        BackendConfig backend = config.simulator;
        read_backend(body, backend);
        config.simulator_overrides[role] = std::move(backend);
      }
    }
  } catch (const json::exception& e) {
    return make_error(ErrorKind::invalid_input,
                      std::string("config: ") + e.what());
  }
  return config;
}

VoidResult validate(const RunConfig& config) {
  if (config.run_id.empty()) {
    return make_error(ErrorKind::invalid_input, "run_id must be non-empty");
  }
  if (config.batch_size < 1) {
    return make_error(ErrorKind::invalid_input, "batch_size must be >= 1");
  }
  if (config.group_size < 2) {
    return make_error(ErrorKind::invalid_input, "group_size must be >= 2");
  }
  if (config.total_steps < 0) {
    return make_error(ErrorKind::invalid_input, "total_steps must be >= 0");
  }
  if (config.worker_cap < 1) {
    return make_error(ErrorKind::invalid_input, "worker_cap must be >= 1");
  }
  if (config.retries < 0) {
    return make_error(ErrorKind::invalid_input, "retries must be >= 0");
  }
  if (config.max_token_estimate < 1) {
    return make_error(ErrorKind::invalid_input,
                      "max_token_estimate must be >= 1");
  }
  if (config.agent_max_tokens < 1 || config.simulator_max_tokens < 1) {
    return make_error(ErrorKind::invalid_input, "max_tokens must be >= 1");
  }
  if (auto ok = validate(config.curriculum); !ok) return ok.error();
  if (auto ok = check_backend(config.agent, "agent", true); !ok) return ok;
  if (auto ok = check_backend(config.simulator, "simulator", true); !ok) {
    return ok;
  }
  static const char* kRoles[] = {"task", "tool", "user", "verifier"};
  for (const auto& [role, backend] : config.simulator_overrides) {
    bool known = false;
    for (const char* name : kRoles) known = known || role == name;
    if (!known) {
      return make_error(ErrorKind::invalid_input,
                        "simulator_overrides: unknown role '" + role + "'");
    }
    if (auto ok = check_backend(backend, role, false); !ok) return ok;
  }
  if (config.simulator.kind == "none") {
    for (const char* name : kRoles) {
      if (config.simulator_overrides.count(name) == 0) {
        return make_error(ErrorKind::invalid_input,
                          std::string("simulator backend: kind 'none' needs "
                                      "an override for role '") +
                              name + "'");
      }
    }
  }
  return Unit{};
}

Result<Backends> make_backends(const RunConfig& config, bool need_agent) {
  Backends backends;
  if (need_agent) {
    if (config.agent.kind == "none") {
      return make_error(ErrorKind::invalid_input,
                        "agent backend: kind 'none' only works in serve mode");
    }
    auto agent = instantiate(config.agent, "agent");
    if (!agent) return agent.error();
    backends.agent = std::move(agent.value());
  }
  std::shared_ptr<Backend> shared;
  bool shared_needed = false;
  static const char* kRoles[] = {"task", "tool", "user", "verifier"};
  for (const char* role : kRoles) {
    shared_needed =
        shared_needed || config.simulator_overrides.count(role) == 0;
  }
  if (shared_needed) {
    if (config.simulator.kind == "none") {
      return make_error(ErrorKind::invalid_input,
                        "simulator backend: kind 'none' needs overrides for "
                        "every role");
    }
    auto base = instantiate(config.simulator, "simulator");
    if (!base) return base.error();
    shared = std::move(base.value());
  }
  auto assign = [&](const char* role,
                    std::shared_ptr<Backend>& out) -> VoidResult {
    auto it = config.simulator_overrides.find(role);
    if (it == config.simulator_overrides.end()) {
      out = shared;
      return Unit{};
    }
    auto made = instantiate(it->second, role);
    if (!made) return made.error();
    out = std::move(made.value());
    return Unit{};
  };
  if (auto ok = assign("task", backends.task); !ok) return ok.error();
  if (auto ok = assign("tool", backends.tool); !ok) return ok.error();
  if (auto ok = assign("user", backends.user); !ok) return ok.error();
  if (auto ok = assign("verifier", backends.verifier); !ok) return ok.error();
  return backends;
}

RolloutParams Env::rollout_params() const {
  RolloutParams params;
  params.agent.temperature = config.agent_temperature;
  params.agent.max_tokens = config.agent_max_tokens;
  params.simulator.temperature = config.simulator_temperature;
  params.simulator.max_tokens = config.simulator_max_tokens;
  params.retries = config.retries;
  return params;
}

std::string Env::run_dir() const {
  return (fs::path(config.out_dir) / config.run_id).string();
}

Result<Env> make_env(RunConfig config, bool need_agent) {
  if (auto ok = validate(config); !ok) return ok.error();
  auto repository = load_repository(config.tools_path);
  if (!repository) return repository.error();
  int ceiling = config.curriculum.ranges.num_tools.hi;
  if (static_cast<size_t>(ceiling) > repository.value().size()) {
    return make_error(ErrorKind::invalid_input,
                      "num_tools ceiling " + std::to_string(ceiling) +
                          " exceeds the " +
                          std::to_string(repository.value().size()) +
                          " tools in " + config.tools_path);
  }
  auto library = PromptLibrary::load(config.templates_dir);
  if (!library) return library.error();
  auto backends = make_backends(config, need_agent);
  if (!backends) return backends.error();
  return Env{std::move(config), std::move(repository.value()),
             std::move(library.value()), std::move(backends.value())};
}

uint64_t derive_seed(uint64_t seed, uint64_t step, uint64_t task,
                     uint64_t purpose) {
  return Rng::mix(Rng::mix(Rng::mix(seed, step), task), purpose);
}

PreparedBatch prepare_batch(const Env& env, const DifficultyState& state,
                            int step_index) {
  PreparedBatch batch;
  batch.step_index = step_index;
  batch.difficulty_used = state.difficulty;
  DifficultyState current{state.difficulty, step_index};
  batch.base_levels = derive_levels(current, env.config.curriculum);
  RolloutParams params = env.rollout_params();
  uint64_t step = static_cast<uint64_t>(step_index);
  for (int i = 0; i < env.config.batch_size; ++i) {
    uint64_t task = static_cast<uint64_t>(i);
    Rng soft_rng(derive_seed(env.config.seed, step, task, kSoftSamplePurpose));
    AspectLevels levels =
        soft_sample(batch.base_levels, env.config.curriculum, soft_rng);
    Rng tool_rng(derive_seed(env.config.seed, step, task, kToolSamplePurpose));
    auto tools = sample_tools(env.repository,
                              static_cast<size_t>(levels.num_tools), tool_rng);
    if (!tools) {
      ++batch.failed_tasks;
      continue;
    }
    auto generated = generate_task(tools.value(), levels, *env.backends.task,
                                   env.library, params);
    if (!generated) {
      ++batch.failed_tasks;
      continue;
    }
    TaskSpec spec = std::move(generated.value());
    spec.task_id = env.config.run_id + "-s" + std::to_string(step_index) +
                   "-t" + std::to_string(i);
    batch.tasks.push_back(PreparedTask{i, std::move(spec)});
  }
  return batch;
}

namespace {

void to_json_records(json& j,
                     const std::vector<std::optional<RewardRecord>>& records) {
  j = json::array();
  for (const auto& record : records) {
    if (record.has_value()) {
      j.push_back(json(*record));
    } else {
      j.push_back(nullptr);
    }
  }
}

void from_json_records(const json& j,
                       std::vector<std::optional<RewardRecord>>& records) {
  records.clear();
  for (const auto& item : j) {
    if (item.is_null()) {
      records.emplace_back(std::nullopt);
    } else {
      records.emplace_back(item.get<RewardRecord>());
    }
  }
}

}  // namespace

void to_json(json& j, const TaskResult& task) {
  j = json{{"task", task.task}, {"trajectories", task.trajectories}};
  to_json_records(j["records"], task.records);
  if (task.group.has_value()) {
    j["group"] = *task.group;
  } else {
    j["group"] = nullptr;
  }
  json advantages = json::array();
  for (const auto& advantage : task.advantages) {
    if (advantage.has_value()) {
      advantages.push_back(*advantage);
    } else {
      advantages.push_back(nullptr);
    }
  }
  j["advantages"] = std::move(advantages);
}

void from_json(const json& j, TaskResult& task) {
  j.at("task").get_to(task.task);
  j.at("trajectories").get_to(task.trajectories);
  from_json_records(j.at("records"), task.records);
  task.group.reset();
  if (!j.at("group").is_null()) task.group = j.at("group").get<GroupAdvantages>();
  task.advantages.clear();
  for (const auto& item : j.at("advantages")) {
    if (item.is_null()) {
      task.advantages.emplace_back(std::nullopt);
    } else {
      task.advantages.emplace_back(item.get<double>());
    }
  }
}

void to_json(json& j, const BatchArtifact& artifact) {
  j = json{{"run_id", artifact.run_id},
           {"step", artifact.step_index},
           {"difficulty_before", artifact.difficulty_before},
           {"difficulty_after", artifact.difficulty_after},
           {"base_levels", artifact.base_levels},
           {"failed_tasks", artifact.failed_tasks},
           {"failed", artifact.failed},
           {"tasks", artifact.tasks},
           {"stats", artifact.stats}};
}

void from_json(const json& j, BatchArtifact& artifact) {
  j.at("run_id").get_to(artifact.run_id);
  j.at("step").get_to(artifact.step_index);
  j.at("difficulty_before").get_to(artifact.difficulty_before);
  j.at("difficulty_after").get_to(artifact.difficulty_after);
  j.at("base_levels").get_to(artifact.base_levels);
  j.at("failed_tasks").get_to(artifact.failed_tasks);
  j.at("failed").get_to(artifact.failed);
  j.at("tasks").get_to(artifact.tasks);
  j.at("stats").get_to(artifact.stats);
}

Result<std::vector<std::vector<Trajectory>>> run_group_rollouts(
    const Env& env, const PreparedBatch& batch) {
  if (!env.backends.agent) {
    return make_error(ErrorKind::bad_state,
                      "agent backend not configured; use the service in "
                      "trainer-driven mode");
  }
  size_t task_count = batch.tasks.size();
  size_t group = static_cast<size_t>(env.config.group_size);
  std::vector<std::vector<Trajectory>> out(task_count,
                                           std::vector<Trajectory>(group));
  RolloutParams params = env.rollout_params();
  auto status = parallel_for(
      task_count * group, env.config.worker_cap, [&](size_t flat) {
        size_t t = flat / group;
        const TaskSpec& task = batch.tasks[t].task;
        RolloutLimits limits =
            limits_from(task.levels, env.config.max_token_estimate);
        out[t][flat % group] =
            run_rollout(task, *env.backends.agent, *env.backends.tool,
                        *env.backends.user, env.library, limits, params);
      });
  if (!status) return status.error();
  return out;
}

BatchArtifact finalize_batch(const Env& env, const PreparedBatch& batch,
                             std::vector<std::vector<Trajectory>> trajectories,
                             const DifficultyState& state) {
  BatchArtifact artifact;
  artifact.run_id = env.config.run_id;
  artifact.step_index = batch.step_index;
  artifact.difficulty_before = state.difficulty;
  artifact.base_levels = batch.base_levels;
  artifact.failed_tasks = batch.failed_tasks;
  artifact.tasks.resize(batch.tasks.size());
  RolloutParams params = env.rollout_params();
  for (size_t t = 0; t < batch.tasks.size(); ++t) {
    artifact.tasks[t].task = batch.tasks[t].task;
    artifact.tasks[t].records.resize(trajectories[t].size());
    artifact.tasks[t].advantages.resize(trajectories[t].size());
  }

  struct VerifyJob {
    size_t t;
    size_t r;
  };
  std::vector<VerifyJob> jobs;
  for (size_t t = 0; t < trajectories.size(); ++t) {
    for (size_t r = 0; r < trajectories[t].size(); ++r) {
      if (trajectories[t][r].status != TrajectoryStatus::aborted) {
        jobs.push_back(VerifyJob{t, r});
      }
    }
  }
  parallel_for(jobs.size(), env.config.worker_cap, [&](size_t i) {
    const VerifyJob& job = jobs[i];
    const TaskSpec& task = batch.tasks[job.t].task;
    auto verdict =
        verify(trajectories[job.t][job.r], task, task.levels.criteria_level,
               *env.backends.verifier, env.library, params);
    if (verdict) {
      artifact.tasks[job.t].records[job.r] = std::move(verdict.value());
    } else {
      trajectories[job.t][job.r].status = TrajectoryStatus::aborted;
      trajectories[job.t][job.r].abort_reason =
          "verification: " + verdict.error().detail;
    }
  });
  // A worker that died without reporting leaves a non-aborted trajectory
  // with no record; reclassify so the record invariant holds.
  for (size_t t = 0; t < trajectories.size(); ++t) {
    for (size_t r = 0; r < trajectories[t].size(); ++r) {
      if (trajectories[t][r].status != TrajectoryStatus::aborted &&
          !artifact.tasks[t].records[r].has_value()) {
        trajectories[t][r].status = TrajectoryStatus::aborted;
        trajectories[t][r].abort_reason = "verification: worker failed";
      }
    }
  }

  std::vector<std::vector<RewardRecord>> reward_groups;
  int aborted_count = 0;
  for (size_t t = 0; t < trajectories.size(); ++t) {
    TaskResult& result = artifact.tasks[t];
    std::vector<RewardRecord> valid_records;
    std::vector<size_t> valid_index;
    std::vector<double> rewards;
    for (size_t r = 0; r < trajectories[t].size(); ++r) {
      if (trajectories[t][r].status == TrajectoryStatus::aborted) {
        result.records[r].reset();
        ++aborted_count;
        continue;
      }
      valid_records.push_back(*result.records[r]);
      valid_index.push_back(r);
      rewards.push_back(static_cast<double>(result.records[r]->reward));
    }
    if (!valid_records.empty()) reward_groups.push_back(valid_records);
    if (rewards.size() >= 2) {
      auto group = group_advantages(rewards, env.config.sample_std);
      if (group) {
        for (size_t i = 0; i < valid_index.size(); ++i) {
          result.advantages[valid_index[i]] = group.value().advantages[i];
        }
        result.group = std::move(group.value());
      }
    }
    result.trajectories = std::move(trajectories[t]);
  }

  auto stats = batch_stats(reward_groups, aborted_count, batch.failed_tasks,
                           batch.step_index, batch.difficulty_used);
  if (!stats) {
    artifact.failed = true;
    artifact.stats = BatchStats{batch.step_index, 0, aborted_count,
                                batch.failed_tasks, 0.0, batch.difficulty_used};
    artifact.difficulty_after = artifact.difficulty_before;
    return artifact;
  }
  artifact.stats = stats.value();
  DifficultyState next =
      evolve(state, artifact.stats.mean_reward, env.config.curriculum);
  artifact.difficulty_after = next.difficulty;
  return artifact;
}

VoidResult persist_step(const Env& env, const BatchArtifact& artifact) {
  fs::path dir(env.run_dir());
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    return make_error(ErrorKind::io_error, "cannot create run dir " +
                                               dir.string() + ": " +
                                               ec.message());
  }
  json doc = artifact;
  fs::path step_path =
      dir / ("step_" + std::to_string(artifact.step_index) + ".json");
  if (auto ok = write_file_atomic(step_path, doc.dump(2) + "\n"); !ok) {
    return ok;
  }
  {
    std::ofstream out(dir / "trajectories.jsonl",
                      std::ios::app | std::ios::binary);
    if (!out) {
      return make_error(ErrorKind::io_error,
                        "cannot append " + (dir / "trajectories.jsonl").string());
    }
    for (const TaskResult& task : artifact.tasks) {
      for (size_t r = 0; r < task.trajectories.size(); ++r) {
        out << trajectory_line(artifact, task, r).dump() << "\n";
      }
    }
    out.flush();
    if (!out) {
      return make_error(ErrorKind::io_error,
                        "short write to " + (dir / "trajectories.jsonl").string());
    }
  }
  // The trace row is the commit marker; it goes last.
  {
    TraceRow row;
    row.step = artifact.step_index;
    row.difficulty_before = artifact.difficulty_before;
    row.difficulty_after = artifact.difficulty_after;
    row.mean_reward = artifact.stats.mean_reward;
    row.valid = artifact.stats.valid_trajectories;
    row.aborted = artifact.stats.aborted;
    row.failed_tasks = artifact.failed_tasks;
    row.failed = artifact.failed;
    std::ofstream out(dir / "trace.jsonl", std::ios::app | std::ios::binary);
    if (!out) {
      return make_error(ErrorKind::io_error,
                        "cannot append " + (dir / "trace.jsonl").string());
    }
    out << trace_row_json(row).dump() << "\n";
    out.flush();
    if (!out) {
      return make_error(ErrorKind::io_error,
                        "short write to " + (dir / "trace.jsonl").string());
    }
  }
  return Unit{};
}

Result<BatchArtifact> run_step(const Env& env, DifficultyState& state) {
  PreparedBatch batch = prepare_batch(env, state, state.step_index);
  auto rollouts = run_group_rollouts(env, batch);
  if (!rollouts) return rollouts.error();
  BatchArtifact artifact =
      finalize_batch(env, batch, std::move(rollouts.value()), state);
  if (auto ok = persist_step(env, artifact); !ok) return ok.error();
  state.difficulty = artifact.difficulty_after;
  state.step_index += 1;
  return artifact;
}

Result<std::vector<TraceRow>> read_trace(const std::string& run_dir) {
  fs::path path = fs::path(run_dir) / "trace.jsonl";
  std::ifstream in(path, std::ios::binary);
  if (!in) {
    return make_error(ErrorKind::io_error, "cannot open " + path.string());
  }
  std::vector<TraceRow> rows;
  std::string line;
  while (std::getline(in, line)) {
    if (line.empty()) continue;
    json row = json::parse(line, nullptr, false);
    if (row.is_discarded()) break;
    auto parsed = parse_trace_row(row);
    if (!parsed) break;
    rows.push_back(parsed.value());
  }
  return rows;
}

Result<RunSummary> run(const RunConfig& config) {
  auto env = make_env(config, true);
  if (!env) return env.error();
  DifficultyState state{env.value().config.curriculum.initial_difficulty, 0};
  fs::path dir(env.value().run_dir());
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) {
    return make_error(ErrorKind::io_error, "cannot create run dir " +
                                               dir.string() + ": " +
                                               ec.message());
  }
  if (fs::exists(dir / "trace.jsonl")) {
    auto trace = read_trace(dir.string());
    if (!trace) return trace.error();
    if (trace.value().empty()) {
      // Prior run died inside its first step; start clean.
      if (auto ok = rewrite_trace(dir, {}); !ok) return ok.error();
      if (auto ok = trim_trajectories(dir, -1); !ok) return ok.error();
    } else {
      const TraceRow& last = trace.value().back();
      state.difficulty = last.difficulty_after;
      state.step_index = last.step + 1;
      if (auto ok = rewrite_trace(dir, trace.value()); !ok) return ok.error();
      if (auto ok = trim_trajectories(dir, last.step); !ok) return ok.error();
    }
  } else {
    // Even a 0-step run leaves a readable (empty) trace behind.
    std::ofstream touch(dir / "trace.jsonl", std::ios::app | std::ios::binary);
    if (!touch) {
      return make_error(ErrorKind::io_error,
                        "cannot create " + (dir / "trace.jsonl").string());
    }
  }
  int steps_run = 0;
  while (state.step_index < env.value().config.total_steps) {
    auto artifact = run_step(env.value(), state);
    if (!artifact) return artifact.error();
    ++steps_run;
  }
  return RunSummary{steps_run, state.difficulty, dir.string()};
}

Result<std::string> inspect_csv(const std::string& run_dir) {
  auto trace = read_trace(run_dir);
  if (!trace) return trace.error();
  std::ostringstream out;
  out << "step,difficulty,mean_reward,aborted\n";
  for (const TraceRow& row : trace.value()) {
    out << row.step << "," << row.difficulty_before << ","
        << format_reward(row.mean_reward) << "," << row.aborted << "\n";
  }
  return out.str();
}

VoidResult parallel_for(size_t count, int worker_cap,
                        const std::function<void(size_t)>& fn) {
  if (count == 0) return Unit{};
  size_t workers = std::min(static_cast<size_t>(std::max(worker_cap, 1)), count);
  std::mutex error_mutex;
  std::string first_error;
  auto record = [&](const std::string& message) {
    std::lock_guard<std::mutex> lock(error_mutex);
    if (first_error.empty()) first_error = message;
  };
  auto body = [&](size_t i) {
    try {
      fn(i);
    } catch (const std::exception& e) {
      record(e.what());
    } catch (...) {
      record("unknown exception");
    }
  };
  if (workers <= 1) {
    for (size_t i = 0; i < count; ++i) body(i);
  } else {
    std::atomic<size_t> next{0};
    std::vector<std::thread> threads;
    threads.reserve(workers);
    for (size_t w = 0; w < workers; ++w) {
      threads.emplace_back([&] {
        for (;;) {
          size_t i = next.fetch_add(1);
          if (i >= count) return;
          body(i);
        }
      });
    }
    for (std::thread& thread : threads) thread.join();
  }
  if (!first_error.empty()) {
    return make_error(ErrorKind::bad_state, "worker: " + first_error);
  }
  return Unit{};
}

}  // namespace toolgym
