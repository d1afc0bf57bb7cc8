#pragma once

#include <memory>

#include "toolgym/orchestrator.hpp"
#include "toolgym/result.hpp"

namespace toolgym {

// HTTP face of the environment for trainer-driven rollouts. The trainer
// plays the agent: it opens a batch, reads each session's conversation,
// posts raw agent text, and finalizes once every session is done. One
// batch is open at a time; difficulty evolves at finalize exactly as in
// self-contained runs.
//
// Endpoints (JSON in, JSON out):
//   POST /v1/batches                   open a batch, returns the sessions
//   POST /v1/sessions/<id>/act         submit agent text, returns events
//   POST /v1/batches/<id>/finalize     verify, advantages, persist, evolve
//   GET  /v1/curriculum                current difficulty and levels
class EnvService {
 public:
  explicit EnvService(Env env);
  ~EnvService();

  EnvService(const EnvService&) = delete;
  EnvService& operator=(const EnvService&) = delete;

  // Binds (0 picks a free port) and serves on a background thread.
  // Returns the bound port.
  Result<int> start(int port);
  // Blocks until stop() is called from elsewhere.
  void wait();
  void stop();

  int port() const;

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
};

}  // namespace toolgym
