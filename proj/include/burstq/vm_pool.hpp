#pragma once

// The virtual machine manager: keeps a supply of single-job agents, trades
// queue wait against idle billing, and closes the cost ledger.

#include <cstdint>
#include <deque>
#include <functional>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "burstq/provider.hpp"
#include "burstq/store.hpp"
#include "burstq/transport.hpp"

namespace burstq {

struct ScalingConfig {
  std::int64_t min_vms = 0;
  std::int64_t max_vms = 4;
  Duration idle_grace = std::chrono::seconds(120);
  Duration terminate_window = std::chrono::seconds(300);
  Duration billing_period = std::chrono::seconds(3600);
  Duration boot_budget = std::chrono::seconds(90);
  Duration launch_backoff_cap = std::chrono::seconds(60);
  // A Busy VM whose agent is idle and which holds no Running job is handed
  // back to the pool after this long (a reservation that never completed).
  Duration stale_reservation = std::chrono::seconds(60);
  double unit_price = 0.10;  // per billing period
  std::string image_ref = "burstq-agent";
  std::string instance_size = "standard";

  bool valid() const {
    return min_vms >= 0 && min_vms <= max_vms && terminate_window < billing_period &&
           billing_period.count() > 0;
  }
};

/// Minimum-charge billing: every started period is paid, and a VM that was
/// launched at all pays at least one.
std::int64_t billing_periods(Duration uptime, Duration period);

/// Time left until the end of the billing period `now` falls in.
Duration time_to_billing_boundary(Timestamp anchor, Timestamp now, Duration period);

struct ScalingAction {
  enum class Kind { Launch, Terminate };
  Kind kind = Kind::Launch;
  std::optional<VmId> vm;
  std::string reason;

  bool operator==(const ScalingAction&) const = default;
};

/// Pure scaling policy over a pool snapshot.
std::vector<ScalingAction> plan_scaling(const std::vector<VmRecord>& pool,
                                        std::int64_t queue_depth, Duration oldest_wait,
                                        Timestamp now, const ScalingConfig& cfg);

struct LedgerVmEntry {
  VmId vm_id;
  std::int64_t periods_billed = 0;
  double unit_price = 0.0;
  double cost = 0.0;
  double uptime_seconds = 0.0;
  double busy_seconds = 0.0;
  bool open = false;  // still running; billed so far
};

struct LedgerJobEntry {
  JobId job_id;
  std::string owner;
  VmId vm_id;
  double runtime_seconds = 0.0;
};

struct CostLedger {
  std::vector<LedgerVmEntry> vms;
  std::vector<LedgerJobEntry> jobs;
  std::int64_t total_periods = 0;
  double total_cost = 0.0;

  nlohmann::json to_json() const;
};

CostLedger build_ledger(const StoreSnapshot& snapshot, Timestamp now, Duration billing_period);

/// Busy -> Idle bookkeeping on a record (used inside larger transactions).
/// Throws IllegalTransition unless the VM is Busy.
void release_vm(VmRecord& vm, Timestamp now);

/// 128-bit-plus random secret rendered as hex.
std::string mint_token();

class VmPool {
 public:
  using AgentLostHandler =
      std::function<void(const JobId&, const VmId&, const std::string& reason, Timestamp now)>;

  VmPool(Store& store, ProviderInterface& provider, AgentTransport& transport, Clock& clock,
         ScalingConfig config);

  /// Reserves an Idle VM for the caller by marking it Busy.
  std::optional<VmRecord> acquire_idle_vm();

  /// Busy -> Idle after a job has finished on it.
  void release(const VmId& id);

  void note_demand(std::int64_t queue_depth, Duration oldest_wait);

  /// Plans against the current pool and carries the actions out.
  std::vector<ScalingAction> scale(std::int64_t queue_depth, Duration oldest_wait, Timestamp now);

  /// Brings records in line with the provider and agents.
  void reconcile(Timestamp now);

  /// One VM-manager period: reconcile, then scale on the latest demand signal.
  void run_once(Timestamp now);

  /// Terminates every live VM (service shutdown or end of simulation).
  void terminate_all(Timestamp now, const std::string& reason);

  CostLedger accounting_report() const;

  void set_agent_lost_handler(AgentLostHandler handler) { on_agent_lost_ = std::move(handler); }

  const ScalingConfig& config() const { return config_; }
  std::int64_t launch_failures() const;
  std::int64_t launches() const;

  /// Every scaling decision with its inputs, oldest first.
  std::vector<nlohmann::json> decision_log() const;

 private:
  void launch_one(Timestamp now, const std::string& reason);
  void close_vm(const VmRecord& vm, Timestamp now, const std::string& note);
  void record_launch_failure(Timestamp now, const std::string& why);
  void log_decision(nlohmann::json entry);

  Store& store_;
  ProviderInterface& provider_;
  AgentTransport& transport_;
  Clock& clock_;
  ScalingConfig config_;
  AgentLostHandler on_agent_lost_;

  mutable std::mutex mu_;
  std::int64_t demand_depth_ = 0;
  Duration demand_oldest_wait_{0};
  std::int64_t consecutive_failures_ = 0;
  std::int64_t launch_failures_ = 0;
  std::int64_t launches_ = 0;
  std::optional<Timestamp> next_launch_at_;
  std::vector<nlohmann::json> decisions_;
};

}  // namespace burstq
