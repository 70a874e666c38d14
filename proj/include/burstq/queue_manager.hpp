#pragma once

// Periodic dispatch of queued cloud jobs onto idle agents.

#include <deque>
#include <mutex>
#include <string>
#include <vector>

#include <json.hpp>

#include "burstq/store.hpp"
#include "burstq/transport.hpp"
#include "burstq/vm_pool.hpp"
#include "burstq/workspace.hpp"

namespace burstq {

struct DispatchConfig {
  Duration poll_interval = std::chrono::seconds(1);
  Duration dispatch_timeout = std::chrono::seconds(30);
  int max_dispatch_retries = 2;
  std::int64_t max_attempts = 2;

  bool valid() const {
    return poll_interval.count() > 0 && max_dispatch_retries >= 0 && max_attempts >= 1;
  }
};

struct DispatchAction {
  enum class Kind { Dispatched, Busy, Unreachable, Demand, CancelledInFlight };
  Kind kind = Kind::Dispatched;
  Timestamp at{};
  JobId job;
  VmId vm;
  std::int64_t depth = 0;
  Duration oldest_wait{0};

  nlohmann::json to_json() const;
};

std::string_view to_string(DispatchAction::Kind k);

class QueueManager {
 public:
  QueueManager(Store& store, VmPool& pool, AgentTransport& transport, Workspace& workspace,
               DispatchConfig config, std::string callback_url);

  /// One scan of the cloud queue in submission order.
  std::vector<DispatchAction> tick(Timestamp now);

  /// Hands `job` to the agent on `vm`, which the caller has reserved.
  DispatchOutcome dispatch(const JobRecord& job, const VmRecord& vm, Timestamp now);

  /// A Running job lost its agent: requeue or fail it and mark the VM Lost.
  void handle_agent_failure(const JobId& job_id, const VmId& vm_id, const std::string& reason,
                            Timestamp now);

  void set_callback_url(std::string url);

  /// Most recent actions, oldest first (bounded).
  std::vector<DispatchAction> trace() const;
  std::int64_t busy_rejections() const;
  std::int64_t dispatches() const;
  const DispatchConfig& config() const { return config_; }

 private:
  void record(DispatchAction a);
  /// The agent is still delivering results for a job the store already
  /// finished; it turns idle once it sees the acknowledgement.
  bool agent_settling(const VmRecord& vm);

  Store& store_;
  VmPool& pool_;
  AgentTransport& transport_;
  Workspace& workspace_;
  DispatchConfig config_;

  mutable std::mutex mu_;
  std::mutex tick_mu_;
  std::string callback_url_;
  std::deque<DispatchAction> trace_;
  std::int64_t busy_rejections_ = 0;
  std::int64_t dispatches_ = 0;
};

}  // namespace burstq
