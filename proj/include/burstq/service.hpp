#pragma once

// Live composition of the manager: store, job manager with its REST API, the
// dispatch loop, the VM manager loop, and the local/grid tier, all on one
// (optionally accelerated) wall clock.

#include <memory>
#include <optional>
#include <stop_token>
#include <thread>
#include <vector>

#include "burstq/config.hpp"
#include "burstq/http_api.hpp"
#include "burstq/job_manager.hpp"
#include "burstq/local_grid.hpp"
#include "burstq/provider.hpp"
#include "burstq/queue_manager.hpp"
#include "burstq/store.hpp"
#include "burstq/vm_pool.hpp"

namespace burstq {

class Service {
 public:
  explicit Service(ServiceConfig config);
  ~Service();

  Service(const Service&) = delete;
  Service& operator=(const Service&) = delete;

  /// Opens the store, runs recovery, binds the API and starts every loop.
  void start();

  /// Stops loops and the API, terminates live VMs. Idempotent.
  void stop();

  int port() const;
  std::string callback_url() const;

  Clock& clock() { return *clock_; }
  Store& store() { return *store_; }
  JobManager& jobs() { return *jobs_; }
  QueueManager& queue() { return *queue_; }
  VmPool& pool() { return *pool_; }
  LocalGridScheduler& scheduler() { return *scheduler_; }
  SimCloud* sim_cloud() { return sim_cloud_; }
  HttpAgentHost* agent_host() { return agent_host_.get(); }
  const RecoveryReport& recovery_report() const { return recovery_; }
  const ServiceConfig& config() const { return config_; }

  /// Takes the REST listener down and back up on the same port (fault tests).
  void stop_api();
  void start_api();

 private:
  void run_loop(std::stop_token stop, Duration period, const char* name,
                const std::function<void(Timestamp)>& body);
  RecoveryReport run_recovery();

  ServiceConfig config_;
  std::unique_ptr<ScaledClock> clock_;
  std::unique_ptr<Store> store_;
  std::unique_ptr<Workspace> workspace_;
  std::unique_ptr<HttpAgentTransport> transport_;
  std::unique_ptr<HttpAgentHost> agent_host_;
  std::unique_ptr<ProviderInterface> provider_;
  SimCloud* sim_cloud_ = nullptr;
  std::unique_ptr<VmPool> pool_;
  std::unique_ptr<QueueManager> queue_;
  std::unique_ptr<ThreadExecutor> local_exec_;
  std::unique_ptr<ThreadExecutor> prepare_exec_;
  std::unique_ptr<ThreadExecutor> grid_exec_;
  std::unique_ptr<SimGrid> grid_;
  std::unique_ptr<LocalGridScheduler> scheduler_;
  std::unique_ptr<JobManager> jobs_;
  std::unique_ptr<HttpApi> api_;
  std::vector<std::jthread> loops_;
  RecoveryReport recovery_;
  int port_ = 0;
  bool started_ = false;
  bool stopped_ = false;
};

/// Timestamped line on stderr.
void log_line(const std::string& line);

}  // namespace burstq
