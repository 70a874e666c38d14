#pragma once

// Wire-level contracts between the manager and agents, and their HTTP and
// in-process implementations.

#include <map>
#include <mutex>
#include <optional>
#include <set>
#include <string>

#include "burstq/clock.hpp"
#include "burstq/model.hpp"

namespace burstq {

class AgentCore;

struct DispatchPayload {
  JobId job_id;
  JobKind kind = JobKind::Sleep;
  std::map<std::string, std::string> params;
  std::map<std::string, std::string> files;
  std::string callback_url;
  std::string token;
};

enum class DispatchOutcome { Accepted, Busy, Unreachable };
std::string_view to_string(DispatchOutcome o);

struct AgentStatus {
  bool busy = false;
  std::optional<JobId> job_id;
  double uptime_s = 0;
  std::optional<std::string> fault;
  std::int64_t push_attempts = 0;  // for the most recent job
  std::int64_t jobs_run = 0;
};

struct ResultBundle {
  JobId job_id;
  bool ok = false;
  std::map<std::string, std::string> outputs;
  std::string log_text;
};

enum class PushOutcome { Acknowledged, AuthRejected, Conflict, Unreachable };

/// Manager side of the agent protocol.
class AgentTransport {
 public:
  virtual ~AgentTransport() = default;
  /// One delivery attempt; retries are the caller's policy.
  virtual DispatchOutcome execute(const std::string& endpoint, const DispatchPayload& payload) = 0;
  virtual std::optional<AgentStatus> status(const std::string& endpoint) = 0;
  virtual bool abort(const std::string& endpoint, const JobId& job_id) = 0;
};

/// Agent side: delivers a result bundle to the manager's callback.
class ResultSink {
 public:
  virtual ~ResultSink() = default;
  virtual PushOutcome push(const std::string& callback_url, const std::string& token,
                           const ResultBundle& bundle) = 0;
};

class HttpAgentTransport final : public AgentTransport {
 public:
  explicit HttpAgentTransport(Duration timeout = std::chrono::seconds(30)) : timeout_(timeout) {}
  DispatchOutcome execute(const std::string& endpoint, const DispatchPayload& payload) override;
  std::optional<AgentStatus> status(const std::string& endpoint) override;
  bool abort(const std::string& endpoint, const JobId& job_id) override;

 private:
  Duration timeout_;
};

class HttpResultSink final : public ResultSink {
 public:
  explicit HttpResultSink(Duration timeout = std::chrono::seconds(30)) : timeout_(timeout) {}
  PushOutcome push(const std::string& callback_url, const std::string& token,
                   const ResultBundle& bundle) override;

 private:
  Duration timeout_;
};

/// Routes calls to agents living in the same process, addressed as
/// "inproc://<name>". Endpoints can be black-holed for fault injection.
class InProcessAgentTransport final : public AgentTransport {
 public:
  void attach(const std::string& endpoint, AgentCore* agent);
  void detach(const std::string& endpoint);
  void set_unreachable(const std::string& endpoint, bool unreachable);

  DispatchOutcome execute(const std::string& endpoint, const DispatchPayload& payload) override;
  std::optional<AgentStatus> status(const std::string& endpoint) override;
  bool abort(const std::string& endpoint, const JobId& job_id) override;

 private:
  AgentCore* find(const std::string& endpoint);
  std::mutex mu_;
  std::map<std::string, AgentCore*> agents_;
  std::set<std::string> black_holed_;
};

// Encoding helpers shared by HTTP client and server code.
std::string encode_status(const AgentStatus& s);
AgentStatus decode_status(const std::string& body);

}  // namespace burstq
