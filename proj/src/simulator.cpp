#include "burstq/simulator.hpp"

#include <algorithm>
#include <cmath>
#include <filesystem>
#include <random>
#include <thread>

#include "burstq/error.hpp"
#include "burstq/http_api.hpp"
#include "burstq/job_manager.hpp"
#include "burstq/local_grid.hpp"
#include "burstq/provider.hpp"

namespace burstq {

namespace fs = std::filesystem;

namespace {

nlohmann::json backend_json(const BackendStats& s) {
  return {{"submitted", s.submitted}, {"completed", s.completed}, {"failed", s.failed},
          {"cancelled", s.cancelled}, {"unfinished", s.unfinished},
          {"mean_wait_s", s.mean_wait_s}, {"p95_wait_s", s.p95_wait_s}};
}

void summarize_waits(std::vector<double> waits, double& mean, double& p95) {
  if (waits.empty()) {
    mean = p95 = 0.0;
    return;
  }
  double sum = 0;
  for (double w : waits) sum += w;
  mean = sum / static_cast<double>(waits.size());
  std::sort(waits.begin(), waits.end());
  const auto rank = static_cast<std::size_t>(std::ceil(0.95 * static_cast<double>(waits.size())));
  p95 = waits[std::max<std::size_t>(rank, 1) - 1];
}

bool aligned(Timestamp t, Timestamp start, Duration period) {
  return ((t - start).count() % period.count()) == 0;
}

class ScratchDir {
 public:
  ScratchDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("burstq-sim-" + std::to_string(rd()) + "-" + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~ScratchDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }

 private:
  fs::path path_;
};

}  // namespace

nlohmann::json SimMetrics::to_json() const {
  nlohmann::json j{{"schema_version", kMetricsSchemaVersion},
                   {"jobs_submitted", jobs_submitted},
                   {"jobs_rejected", jobs_rejected},
                   {"jobs_completed", jobs_completed},
                   {"jobs_failed", jobs_failed},
                   {"jobs_cancelled", jobs_cancelled},
                   {"jobs_unfinished", jobs_unfinished},
                   {"mean_wait_s", mean_wait_s},
                   {"p95_wait_s", p95_wait_s},
                   {"per_backend",
                    {{"Local", backend_json(local)}, {"Grid", backend_json(grid)},
                     {"Cloud", backend_json(cloud)}}},
                   {"vms_launched", vms_launched},
                   {"launch_failures", launch_failures},
                   {"peak_vms", peak_vms},
                   {"vm_busy_fraction", vm_busy_fraction},
                   {"billed_periods", billed_periods},
                   {"total_cost", total_cost},
                   {"busy_rejections", busy_rejections},
                   {"single_job_violations", single_job_violations},
                   {"pool_bound_violations", pool_bound_violations},
                   {"peak_local_concurrency", peak_local_concurrency},
                   {"simulated_seconds", simulated_seconds}};
  j["scaling_decisions"] = scaling_decisions;
  return j;
}

SimulationResult run_simulation(const std::vector<Arrival>& schedule,
                                const SimulationOptions& options) {
  const ServiceConfig& cfg = options.config;
  validate(cfg);
  if (options.step.count() <= 0) throw Error(ErrorCode::ConfigError, "step must be > 0");
  if (options.time_acceleration != 0.0 && options.time_acceleration < 1.0)
    throw Error(ErrorCode::ConfigError, "time acceleration must be >= 1");

  ScratchDir scratch;
  ManualClock clock(options.start);
  Store store(StoreOptions{{}, false, 0, cfg.max_attempts});
  Workspace workspace(scratch.path() / "work");
  InProcessAgentTransport transport;

  VirtualExecutor agent_exec(clock, 0);
  VirtualExecutor local_exec(clock, static_cast<std::size_t>(cfg.local.effective_local_jobs()));
  VirtualExecutor prepare_exec(clock, static_cast<std::size_t>(cfg.local.effective_prepare_pool()));
  VirtualExecutor grid_exec(clock, 0);

  JobManager jobs(store, workspace, clock,
                  JobManagerConfig{cfg.max_upload_bytes, cfg.reject_oversize, cfg.routing,
                                   cfg.scaling.billing_period});
  DirectResultSink sink(jobs);
  InProcessAgentHost host(clock, agent_exec, sink, transport, scratch.path() / "agents");
  SimCloud cloud(clock, host, cfg.sim_cloud);
  VmPool pool(store, cloud, transport, clock, cfg.scaling);
  DispatchConfig dispatch = cfg.dispatch;
  dispatch.max_attempts = cfg.max_attempts;
  QueueManager queue(store, pool, transport, workspace, dispatch, "inproc://manager");
  pool.set_agent_lost_handler([&](const JobId& j, const VmId& v, const std::string& why, Timestamp t) {
    queue.handle_agent_failure(j, v, why, t);
  });
  SimGrid grid(clock, grid_exec, scratch.path() / "grid", cfg.grid);
  LocalSchedulerConfig local_cfg = cfg.local;
  local_cfg.max_attempts = cfg.max_attempts;
  LocalGridScheduler scheduler(store, workspace, clock, local_exec, prepare_exec, grid, local_cfg);
  jobs.set_abort_hook(Backend::Cloud, [&](const JobRecord& job) {
    if (!job.assigned_vm) return;
    if (auto vm = store.get_vm(*job.assigned_vm)) transport.abort(vm->endpoint, job.id);
  });
  jobs.set_abort_hook(Backend::Local, [&](const JobRecord& job) { scheduler.abort(job); });
  jobs.set_abort_hook(Backend::Grid, [&](const JobRecord& job) { scheduler.abort(job); });

  std::vector<Arrival> arrivals = schedule;
  std::stable_sort(arrivals.begin(), arrivals.end(),
                   [](const Arrival& a, const Arrival& b) { return a.at < b.at; });

  SimMetrics m;
  std::size_t next_arrival = 0;
  const Timestamp horizon_end = options.start + options.horizon;
  const Timestamp hard_end = horizon_end + options.drain_limit;
  const auto wall_start = std::chrono::steady_clock::now();
  Timestamp t = options.start;

  auto all_terminal = [&] {
    for (const auto& j : store.list_jobs()) {
      if (!is_terminal(j.state)) return false;
    }
    return true;
  };

  for (;; t += options.step) {
    clock.set(t);
    while (next_arrival < arrivals.size() && arrivals[next_arrival].at <= t) {
      const Arrival& a = arrivals[next_arrival++];
      SubmissionEnvelope env;
      env.types = {std::string(to_string(a.spec.kind))};
      env.params = a.spec.params;
      if (a.spec.backend_override) env.backend = std::string(to_string(*a.spec.backend_override));
      env.owner = a.spec.owner;
      env.markers = a.spec.profile.max_markers;
      env.samples = a.spec.profile.sample_size;
      try {
        jobs.submit(env);
        ++m.jobs_submitted;
      } catch (const Error&) {
        ++m.jobs_rejected;
      }
    }

    agent_exec.advance(t);
    local_exec.advance(t);
    prepare_exec.advance(t);
    grid_exec.advance(t);

    if (aligned(t, options.start, cfg.scaling_interval)) pool.run_once(t);
    if (aligned(t, options.start, cfg.dispatch.poll_interval)) {
      queue.tick(t);
      scheduler.tick(t);
    }
    if (aligned(t, options.start, cfg.local.remote_poll_interval)) scheduler.remote_poll_tick(t);

    std::map<VmId, int> holders;
    for (const auto& j : store.list_jobs(JobState::Running, Backend::Cloud)) {
      if (j.assigned_vm && ++holders[*j.assigned_vm] == 2) ++m.single_job_violations;
    }
    std::int64_t live = 0;
    for (const auto& vm : store.vm_list()) live += vm.state != VmState::Terminated;
    m.peak_vms = std::max(m.peak_vms, live);
    if (live > cfg.scaling.max_vms) ++m.pool_bound_violations;

    if (options.time_acceleration > 0) {
      const auto due = wall_start + std::chrono::duration_cast<std::chrono::steady_clock::duration>(
                                        std::chrono::duration<double>(to_seconds(t - options.start) /
                                                                      options.time_acceleration));
      std::this_thread::sleep_until(due);
    }

    if (t >= horizon_end && next_arrival >= arrivals.size() && all_terminal()) break;
    if (t >= hard_end) break;
  }

  pool.terminate_all(t, "end of simulation");
  agent_exec.shutdown();
  local_exec.shutdown();
  prepare_exec.shutdown();
  grid_exec.shutdown();

  SimulationResult result;
  result.final_state = store.snapshot();
  result.ledger = build_ledger(result.final_state, t, cfg.scaling.billing_period);
  result.dispatch_trace = queue.trace();

  std::vector<double> all_waits;
  std::map<Backend, std::vector<double>> waits_by_backend;
  std::vector<const JobRecord*> ordered;
  for (const auto& [id, job] : result.final_state.jobs) ordered.push_back(&job);
  std::sort(ordered.begin(), ordered.end(),
            [](const JobRecord* a, const JobRecord* b) { return a->seq < b->seq; });
  for (const JobRecord* job : ordered) {
    BackendStats& s = job->backend == Backend::Local  ? m.local
                      : job->backend == Backend::Grid ? m.grid
                                                      : m.cloud;
    ++s.submitted;
    switch (job->state) {
      case JobState::Completed: ++s.completed; ++m.jobs_completed; break;
      case JobState::Failed: ++s.failed; ++m.jobs_failed; break;
      case JobState::Cancelled: ++s.cancelled; ++m.jobs_cancelled; break;
      default: ++s.unfinished; ++m.jobs_unfinished; break;
    }
    if (job->state == JobState::Cancelled && !job->started_at) continue;
    const Timestamp started = job->started_at.value_or(t);
    const double wait = to_seconds(started - job->submitted_at);
    all_waits.push_back(wait);
    waits_by_backend[job->backend].push_back(wait);
    result.waits.emplace_back(job->id, wait);
  }
  summarize_waits(all_waits, m.mean_wait_s, m.p95_wait_s);
  summarize_waits(waits_by_backend[Backend::Local], m.local.mean_wait_s, m.local.p95_wait_s);
  summarize_waits(waits_by_backend[Backend::Grid], m.grid.mean_wait_s, m.grid.p95_wait_s);
  summarize_waits(waits_by_backend[Backend::Cloud], m.cloud.mean_wait_s, m.cloud.p95_wait_s);

  double uptime = 0, busy = 0;
  for (const auto& v : result.ledger.vms) {
    uptime += v.uptime_seconds;
    busy += v.busy_seconds;
  }
  m.vm_busy_fraction = uptime > 0 ? std::clamp(busy / uptime, 0.0, 1.0) : 0.0;
  m.billed_periods = result.ledger.total_periods;
  m.total_cost = result.ledger.total_cost;
  m.vms_launched = pool.launches();
  m.launch_failures = pool.launch_failures();
  m.busy_rejections = queue.busy_rejections();
  m.peak_local_concurrency = static_cast<std::int64_t>(scheduler.peak_local_in_flight());
  m.simulated_seconds = to_seconds(t - options.start);
  m.scaling_decisions = pool.decision_log();
  result.metrics = std::move(m);
  return result;
}

}  // namespace burstq
