#include "toolgym/service.hpp"

#include <map>
#include <mutex>
#include <optional>
#include <thread>
#include <utility>
#include <vector>

#include <httplib.h>

namespace toolgym {

using nlohmann::json;

namespace {

void send_json(httplib::Response& res, int status, const json& body) {
  res.status = status;
  res.set_content(body.dump(), "application/json");
}

void send_error(httplib::Response& res, int status,
                const std::string& message) {
  send_json(res, status, json{{"error", message}});
}

json conversation_json(const std::vector<ChatMessage>& messages) {
  json out = json::array();
  for (const ChatMessage& message : messages) {
    out.push_back(
        json{{"role", to_string(message.role)}, {"content", message.content}});
  }
  return out;
}

// One trainer-driven rollout. The per-session mutex serializes acts; the
// shared_ptr keeps a session alive for an act that raced batch teardown.
struct LiveSession {
  std::string id;
  std::string task_id;
  int task_index = 0;
  int rollout_index = 0;
  std::unique_ptr<Session> session;
  std::mutex mutex;
};

struct OpenBatch {
  std::string id;
  PreparedBatch prepared;
  DifficultyState state_at_create;
  // [task][rollout] session ids aligned with prepared.tasks.
  std::vector<std::vector<std::string>> grid;
};

}  // namespace

struct EnvService::Impl {
  Env env;
  DifficultyState state;
  httplib::Server server;
  std::thread serving;
  int port = 0;

  std::mutex mutex;
  std::map<std::string, std::shared_ptr<LiveSession>> sessions;
  std::optional<OpenBatch> open;

  explicit Impl(Env e) : env(std::move(e)) {
    state.difficulty = env.config.curriculum.initial_difficulty;
    state.step_index = 0;
    route();
  }

  void route() {
    server.Post("/v1/batches",
                [this](const httplib::Request& req, httplib::Response& res) {
                  handle_create(req, res);
                });
    server.Post(R"(/v1/batches/([^/]+)/finalize)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  handle_finalize(req, res);
                });
    server.Post(R"(/v1/sessions/([^/]+)/act)",
                [this](const httplib::Request& req, httplib::Response& res) {
                  handle_act(req, res);
                });
    server.Get("/v1/curriculum",
               [this](const httplib::Request& req, httplib::Response& res) {
                 handle_curriculum(req, res);
               });
  }

  void handle_create(const httplib::Request&, httplib::Response& res) {
    std::lock_guard<std::mutex> lock(mutex);
    if (open.has_value()) {
      send_error(res, 409, "a batch is already open: " + open->id);
      return;
    }
    PreparedBatch prepared = prepare_batch(env, state, state.step_index);
    OpenBatch batch;
    batch.id = env.config.run_id + "-b" + std::to_string(prepared.step_index);
    batch.state_at_create = state;
    RolloutParams params = env.rollout_params();
    json session_rows = json::array();
    for (const PreparedTask& task : prepared.tasks) {
      std::vector<std::string> row;
      for (int r = 0; r < env.config.group_size; ++r) {
        auto live = std::make_shared<LiveSession>();
        live->id = batch.id + "-t" + std::to_string(task.task_index) + "-r" +
                   std::to_string(r);
        live->task_id = task.task.task_id;
        live->task_index = task.task_index;
        live->rollout_index = r;
        RolloutLimits limits =
            limits_from(task.task.levels, env.config.max_token_estimate);
        live->session = std::make_unique<Session>(
            task.task, *env.backends.tool, *env.backends.user, env.library,
            limits, params);
        session_rows.push_back(json{
            {"session_id", live->id},
            {"task_id", live->task_id},
            {"task_index", live->task_index},
            {"rollout_index", live->rollout_index},
            {"observation", conversation_json(live->session->conversation())},
            {"done", live->session->done()},
        });
        row.push_back(live->id);
        sessions[live->id] = std::move(live);
      }
      batch.grid.push_back(std::move(row));
    }
    json body{
        {"batch_id", batch.id},
        {"step", prepared.step_index},
        {"difficulty", prepared.difficulty_used},
        {"failed_tasks", prepared.failed_tasks},
        {"sessions", std::move(session_rows)},
    };
    batch.prepared = std::move(prepared);
    open = std::move(batch);
    send_json(res, 200, body);
  }

  void handle_act(const httplib::Request& req, httplib::Response& res) {
    std::string id = req.matches[1];
    std::shared_ptr<LiveSession> live;
    {
      std::lock_guard<std::mutex> lock(mutex);
      auto it = sessions.find(id);
      if (it == sessions.end()) {
        send_error(res, 404, "unknown session: " + id);
        return;
      }
      live = it->second;
    }
    json body = json::parse(req.body, nullptr, false);
    if (body.is_discarded() || !body.is_object() || !body.contains("text") ||
        !body["text"].is_string()) {
      send_error(res, 400, "body must be a JSON object with a string 'text'");
      return;
    }
    std::lock_guard<std::mutex> session_lock(live->mutex);
    if (live->session->done()) {
      send_error(res, 409, "session already done: " + id);
      return;
    }
    size_t before = live->session->trajectory().events.size();
    auto submitted = live->session->submit(body["text"].get<std::string>());
    if (!submitted) {
      send_error(res, 409, submitted.error().detail);
      return;
    }
    const Trajectory& trajectory = live->session->trajectory();
    json events = json::array();
    for (size_t i = before; i < trajectory.events.size(); ++i) {
      events.push_back(json(trajectory.events[i]));
    }
    json out{
        {"events", std::move(events)},
        {"done", live->session->done()},
        {"observation", conversation_json(live->session->conversation())},
    };
    if (live->session->done()) out["status"] = to_string(trajectory.status);
    send_json(res, 200, out);
  }

  void handle_finalize(const httplib::Request& req, httplib::Response& res) {
    std::string id = req.matches[1];
    std::lock_guard<std::mutex> lock(mutex);
    if (!open.has_value() || open->id != id) {
      send_error(res, 404, "unknown batch: " + id);
      return;
    }
    for (const auto& row : open->grid) {
      for (const std::string& sid : row) {
        auto it = sessions.find(sid);
        if (it == sessions.end()) continue;
        std::lock_guard<std::mutex> session_lock(it->second->mutex);
        if (!it->second->session->done()) {
          send_error(res, 409, "session not done: " + sid);
          return;
        }
      }
    }
    std::vector<std::vector<Trajectory>> trajectories;
    for (const auto& row : open->grid) {
      std::vector<Trajectory> group;
      for (const std::string& sid : row) {
        auto it = sessions.find(sid);
        std::lock_guard<std::mutex> session_lock(it->second->mutex);
        group.push_back(it->second->session->take_trajectory());
      }
      trajectories.push_back(std::move(group));
    }
    BatchArtifact artifact = finalize_batch(
        env, open->prepared, std::move(trajectories), open->state_at_create);
    if (auto ok = persist_step(env, artifact); !ok) {
      send_error(res, 500, ok.error().detail);
      return;
    }
    state.difficulty = artifact.difficulty_after;
    state.step_index = open->prepared.step_index + 1;
    for (const auto& row : open->grid) {
      for (const std::string& sid : row) sessions.erase(sid);
    }
    open.reset();
    json tasks = json::array();
    for (const TaskResult& task : artifact.tasks) {
      json rewards = json::array();
      for (const auto& record : task.records) {
        if (record.has_value()) {
          rewards.push_back(record->reward);
        } else {
          rewards.push_back(nullptr);
        }
      }
      json advantages = json::array();
      for (const auto& advantage : task.advantages) {
        if (advantage.has_value()) {
          advantages.push_back(*advantage);
        } else {
          advantages.push_back(nullptr);
        }
      }
      json statuses = json::array();
      for (const Trajectory& trajectory : task.trajectories) {
        statuses.push_back(to_string(trajectory.status));
      }
      tasks.push_back(json{
          {"task_id", task.task.task_id},
          {"rewards", std::move(rewards)},
          {"advantages", std::move(advantages)},
          {"statuses", std::move(statuses)},
          {"group", task.group.has_value() ? json(*task.group) : json()},
      });
    }
    send_json(res, 200,
              json{
                  {"batch_id", id},
                  {"step", artifact.step_index},
                  {"difficulty_before", artifact.difficulty_before},
                  {"difficulty_after", artifact.difficulty_after},
                  {"failed", artifact.failed},
                  {"failed_tasks", artifact.failed_tasks},
                  {"stats", artifact.stats},
                  {"tasks", std::move(tasks)},
              });
  }

  void handle_curriculum(const httplib::Request&, httplib::Response& res) {
    std::lock_guard<std::mutex> lock(mutex);
    AspectLevels levels = derive_levels(state, env.config.curriculum);
    send_json(res, 200,
              json{{"difficulty", state.difficulty},
                   {"step_index", state.step_index},
                   {"levels", levels}});
  }
};

EnvService::EnvService(Env env)
    : impl_(std::make_unique<Impl>(std::move(env))) {}

EnvService::~EnvService() { stop(); }

Result<int> EnvService::start(int port) {
  if (impl_->serving.joinable()) {
    return make_error(ErrorKind::bad_state, "service already started");
  }
  int bound = port;
  if (port == 0) {
    bound = impl_->server.bind_to_any_port("0.0.0.0");
    if (bound < 0) {
      return make_error(ErrorKind::io_error, "cannot bind a port");
    }
  } else if (!impl_->server.bind_to_port("0.0.0.0", port)) {
    return make_error(ErrorKind::io_error,
                      "cannot bind port " + std::to_string(port));
  }
  impl_->port = bound;
  impl_->serving = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
  return bound;
}

void EnvService::wait() {
  if (impl_->serving.joinable()) impl_->serving.join();
}

void EnvService::stop() {
  if (!impl_) return;
  if (impl_->server.is_running()) impl_->server.stop();
  if (impl_->serving.joinable()) impl_->serving.join();
}

int EnvService::port() const { return impl_->port; }

}  // namespace toolgym
