#include "burstq/service.hpp"

#include <iostream>
#include <mutex>
#include <set>

#include "burstq/error.hpp"

namespace burstq {

void log_line(const std::string& line) {
  static std::mutex mu;
  const auto now = std::chrono::time_point_cast<Duration>(std::chrono::system_clock::now());
  std::lock_guard lock(mu);
  std::cerr << format_time(now) << " " << line << "\n";
}

namespace {

Duration real_timeout(Duration virtual_timeout, double acceleration) {
  const auto ms = static_cast<std::int64_t>(static_cast<double>(virtual_timeout.count()) /
                                            std::max(1.0, acceleration));
  return Duration{std::max<std::int64_t>(ms, 1000)};
}

}  // namespace

Service::Service(ServiceConfig config) : config_(std::move(config)) { validate(config_); }

Service::~Service() { stop(); }

int Service::port() const { return port_; }

std::string Service::callback_url() const {
  if (!config_.public_url.empty()) return config_.public_url;
  const std::string host =
      config_.bind_address == "0.0.0.0" || config_.bind_address.empty() ? "127.0.0.1"
                                                                        : config_.bind_address;
  return "http://" + host + ":" + std::to_string(port_);
}

void Service::start() {
  if (started_) return;
  started_ = true;
  const auto& c = config_;
  clock_ = std::make_unique<ScaledClock>(c.time_acceleration);
  store_ = std::make_unique<Store>(
      StoreOptions{c.data_dir / "store", c.sync_writes, c.snapshot_every, c.max_attempts});
  workspace_ = std::make_unique<Workspace>(c.data_dir / "work");
  transport_ = std::make_unique<HttpAgentTransport>(
      real_timeout(c.dispatch.dispatch_timeout, c.time_acceleration));
  if (c.provider == "external-stub") {
    provider_ = std::make_unique<ExternalStubProvider>(c.external_endpoints);
  } else {
    agent_host_ = std::make_unique<HttpAgentHost>(*clock_, c.data_dir / "agents", c.push);
    auto sim = std::make_unique<SimCloud>(*clock_, *agent_host_, c.sim_cloud);
    sim_cloud_ = sim.get();
    provider_ = std::move(sim);
  }
  pool_ = std::make_unique<VmPool>(*store_, *provider_, *transport_, *clock_, c.scaling);
  DispatchConfig dispatch = c.dispatch;
  dispatch.max_attempts = c.max_attempts;
  queue_ = std::make_unique<QueueManager>(*store_, *pool_, *transport_, *workspace_, dispatch, "");
  pool_->set_agent_lost_handler(
      [this](const JobId& j, const VmId& v, const std::string& why, Timestamp t) {
        queue_->handle_agent_failure(j, v, why, t);
      });

  local_exec_ = std::make_unique<ThreadExecutor>(
      *clock_, static_cast<std::size_t>(c.local.effective_local_jobs()));
  prepare_exec_ = std::make_unique<ThreadExecutor>(
      *clock_, static_cast<std::size_t>(c.local.effective_prepare_pool()));
  grid_exec_ = std::make_unique<ThreadExecutor>(*clock_, 0);
  grid_ = std::make_unique<SimGrid>(*clock_, *grid_exec_, c.data_dir / "grid", c.grid);
  LocalSchedulerConfig local = c.local;
  local.max_attempts = c.max_attempts;
  scheduler_ = std::make_unique<LocalGridScheduler>(*store_, *workspace_, *clock_, *local_exec_,
                                                    *prepare_exec_, *grid_, local);

  jobs_ = std::make_unique<JobManager>(
      *store_, *workspace_, *clock_,
      JobManagerConfig{c.max_upload_bytes, c.reject_oversize, c.routing, c.scaling.billing_period});
  jobs_->set_abort_hook(Backend::Cloud, [this](const JobRecord& job) {
    if (!job.assigned_vm) return;
    if (auto vm = store_->get_vm(*job.assigned_vm)) transport_->abort(vm->endpoint, job.id);
  });
  jobs_->set_abort_hook(Backend::Local, [this](const JobRecord& job) { scheduler_->abort(job); });
  jobs_->set_abort_hook(Backend::Grid, [this](const JobRecord& job) { scheduler_->abort(job); });

  recovery_ = run_recovery();
  log_line("recovery: requeued=" + std::to_string(recovery_.requeued) +
           " failed=" + std::to_string(recovery_.failed) +
           " vms_marked_lost=" + std::to_string(recovery_.vms_marked_lost));

  DebugSources debug;
  debug.dispatch_trace = [this] {
    nlohmann::json out = nlohmann::json::array();
    for (const auto& a : queue_->trace()) out.push_back(a.to_json());
    return out;
  };
  debug.recovery = [this] {
    return nlohmann::json{{"requeued", recovery_.requeued},
                          {"failed", recovery_.failed},
                          {"vms_marked_lost", recovery_.vms_marked_lost}};
  };
  debug.scaling = [this] { return nlohmann::json(pool_->decision_log()); };
  api_ = std::make_unique<HttpApi>(
      *jobs_, HttpApiOptions{c.lockdown, c.max_upload_bytes, true}, std::move(debug));
  port_ = api_->start(c.bind_address, c.port);
  queue_->set_callback_url(callback_url());
  log_line("listening on " + c.bind_address + ":" + std::to_string(port_));

  loops_.emplace_back([this](std::stop_token st) {
    run_loop(st, config_.dispatch.poll_interval, "dispatch", [this](Timestamp t) { queue_->tick(t); });
  });
  loops_.emplace_back([this](std::stop_token st) {
    run_loop(st, config_.scaling_interval, "vm-manager", [this](Timestamp t) { pool_->run_once(t); });
  });
  loops_.emplace_back([this](std::stop_token st) {
    run_loop(st, config_.dispatch.poll_interval, "scheduler",
             [this](Timestamp t) { scheduler_->tick(t); });
  });
  loops_.emplace_back([this](std::stop_token st) {
    run_loop(st, config_.local.remote_poll_interval, "remote-poll",
             [this](Timestamp t) { scheduler_->remote_poll_tick(t); });
  });
}

RecoveryReport Service::run_recovery() {
  // Probe outside the store's serialization point.
  std::set<VmId> alive_vms;
  std::set<JobId> alive_jobs;
  for (const auto& vm : store_->vm_list()) {
    if (vm.state == VmState::Terminated) continue;
    const auto info = provider_->describe(vm.provider_handle);
    if (info.status != InstanceStatus::Running) continue;
    const auto st = transport_->status(vm.endpoint.empty() ? info.endpoint : vm.endpoint);
    if (!st) continue;
    alive_vms.insert(vm.id);
    if (st->job_id) alive_jobs.insert(*st->job_id);
  }
  return store_->recover([&](const VmRecord& vm) { return alive_vms.count(vm.id) > 0; },
                         [&](const JobRecord& job) { return alive_jobs.count(job.id) > 0; },
                         clock_->now());
}

void Service::run_loop(std::stop_token stop, Duration period, const char* name,
                       const std::function<void(Timestamp)>& body) {
  while (!stop.stop_requested()) {
    try {
      body(clock_->now());
    } catch (const std::exception& e) {
      log_line(std::string(name) + ": " + e.what());
    }
    if (!clock_->sleep_for(period, stop)) break;
  }
}

void Service::stop_api() {
  if (api_) api_->stop();
}

void Service::start_api() {
  if (api_) api_->start(config_.bind_address, port_);
}

void Service::stop() {
  if (!started_ || stopped_) return;
  stopped_ = true;
  for (auto& loop : loops_) loop.request_stop();
  loops_.clear();
  if (api_) api_->stop();
  local_exec_->shutdown();
  prepare_exec_->shutdown();
  grid_exec_->shutdown();
  try {
    pool_->terminate_all(clock_->now(), "service shutdown");
  } catch (const std::exception& e) {
    log_line(std::string("shutdown: ") + e.what());
  }
}

}  // namespace burstq
