#pragma once

// The single-job execution service that runs on each instance.

#include <atomic>
#include <filesystem>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <thread>
#include <vector>

#include "burstq/clock.hpp"
#include "burstq/executor.hpp"
#include "burstq/transport.hpp"

namespace httplib {
class Server;
}

namespace burstq {

struct PushPolicy {
  Duration initial_delay = std::chrono::seconds(1);
  double factor = 2.0;
  Duration max_delay = std::chrono::seconds(60);
  int max_attempts = 10;
};

struct AgentOptions {
  std::filesystem::path work_root;  // empty: inputs kept in memory only
  PushPolicy push;
};

enum class ExecuteOutcome { Accepted, Busy };

class AgentCore {
 public:
  AgentCore(std::string name, Executor& executor, ResultSink& sink, Clock& clock,
            AgentOptions options);
  ~AgentCore();

  AgentCore(const AgentCore&) = delete;
  AgentCore& operator=(const AgentCore&) = delete;

  /// Accepts the job if idle. Throws Error(MalformedPayload) on a bad payload.
  ExecuteOutcome execute(DispatchPayload payload);

  AgentStatus status() const;

  /// Stops the current job without pushing results. Throws NotFound when
  /// `job_id` is not the job being executed.
  void abort(const JobId& job_id);

  /// Human-readable event log (dispatches, push attempts, faults).
  std::vector<std::string> log() const;

  const std::string& name() const { return name_; }

 private:
  void run_push(const DispatchPayload& payload, ResultBundle bundle, std::uint64_t generation);
  void finish(std::uint64_t generation);
  void append_log(std::string line);

  std::string name_;
  Executor& executor_;
  ResultSink& sink_;
  Clock& clock_;
  AgentOptions options_;
  Timestamp started_at_;

  std::atomic<bool> busy_{false};
  mutable std::mutex mu_;
  std::optional<JobId> current_job_;
  std::optional<WorkId> current_work_;
  std::uint64_t generation_ = 0;
  std::stop_source push_stop_;
  std::optional<std::string> fault_;
  std::int64_t push_attempts_ = 0;
  std::int64_t jobs_run_ = 0;
  std::vector<std::string> log_;
};

/// HTTP front for an AgentCore: POST /execute, GET /status, POST /abort.
class AgentServer {
 public:
  explicit AgentServer(AgentCore& core);
  ~AgentServer();

  /// Binds `host:port` (port 0 picks a free one) and serves in the background.
  int start(const std::string& host = "127.0.0.1", int port = 0);
  void stop();
  int port() const { return port_; }

 private:
  AgentCore& core_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

/// Parses an agent execute request body fields into a payload.
DispatchPayload payload_from_fields(const std::map<std::string, std::string>& fields,
                                    std::map<std::string, std::string> files);

}  // namespace burstq
