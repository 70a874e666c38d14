#pragma once

// Discrete-time driver for the whole stack on a virtual clock. Every periodic
// activity runs at fixed virtual instants, so a run is a pure function of the
// schedule and configuration.

#include <cstdint>
#include <vector>

#include <json.hpp>

#include "burstq/config.hpp"
#include "burstq/queue_manager.hpp"
#include "burstq/store.hpp"
#include "burstq/vm_pool.hpp"
#include "burstq/workload.hpp"

namespace burstq {

inline constexpr int kMetricsSchemaVersion = 1;

struct SimulationOptions {
  ServiceConfig config;
  Timestamp start = default_sim_epoch();
  Duration horizon = std::chrono::hours(24);
  // After the horizon, keep stepping until every job is terminal or this much
  // extra time has passed.
  Duration drain_limit = std::chrono::hours(48);
  Duration step = std::chrono::seconds(1);
  // Virtual seconds per wall second; 0 runs as fast as possible. Affects
  // pacing only, never results.
  double time_acceleration = 0.0;
};

struct BackendStats {
  std::int64_t submitted = 0;
  std::int64_t completed = 0;
  std::int64_t failed = 0;
  std::int64_t cancelled = 0;
  std::int64_t unfinished = 0;
  double mean_wait_s = 0.0;
  double p95_wait_s = 0.0;
};

struct SimMetrics {
  std::int64_t jobs_submitted = 0;
  std::int64_t jobs_rejected = 0;
  std::int64_t jobs_completed = 0;
  std::int64_t jobs_failed = 0;
  std::int64_t jobs_cancelled = 0;
  std::int64_t jobs_unfinished = 0;
  double mean_wait_s = 0.0;
  double p95_wait_s = 0.0;
  BackendStats local, grid, cloud;
  std::int64_t vms_launched = 0;
  std::int64_t launch_failures = 0;
  std::int64_t peak_vms = 0;
  double vm_busy_fraction = 0.0;
  std::int64_t billed_periods = 0;
  double total_cost = 0.0;
  std::int64_t busy_rejections = 0;
  std::int64_t single_job_violations = 0;
  std::int64_t pool_bound_violations = 0;
  std::int64_t peak_local_concurrency = 0;
  double simulated_seconds = 0.0;
  std::vector<nlohmann::json> scaling_decisions;

  nlohmann::json to_json() const;
};

struct SimulationResult {
  SimMetrics metrics;
  StoreSnapshot final_state;
  CostLedger ledger;
  std::vector<DispatchAction> dispatch_trace;
  /// Wait (start - submit) per job id; unstarted jobs censored at the end.
  std::vector<std::pair<JobId, double>> waits;
};

/// Throws Error(ConfigError) for an invalid configuration.
SimulationResult run_simulation(const std::vector<Arrival>& schedule,
                                const SimulationOptions& options);

}  // namespace burstq
