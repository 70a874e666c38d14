#include "burstq/vm_pool.hpp"

#include <algorithm>
#include <random>

#include "burstq/error.hpp"

namespace burstq {

using nlohmann::json;

std::int64_t billing_periods(Duration uptime, Duration period) {
  const auto u = std::max<std::int64_t>(0, uptime.count());
  const auto p = period.count();
  return std::max<std::int64_t>(1, (u + p - 1) / p);
}

Duration time_to_billing_boundary(Timestamp anchor, Timestamp now, Duration period) {
  const Duration elapsed = now - anchor;
  if (elapsed.count() <= 0) return period - elapsed;
  return period * billing_periods(elapsed, period) - elapsed;
}

std::vector<ScalingAction> plan_scaling(const std::vector<VmRecord>& pool,
                                        std::int64_t queue_depth, Duration /*oldest_wait*/,
                                        Timestamp now, const ScalingConfig& cfg) {
  std::int64_t idle = 0, booting = 0, live = 0;
  for (const auto& vm : pool) {
    if (vm.state == VmState::Terminated) continue;
    ++live;
    if (vm.state == VmState::Idle) ++idle;
    if (vm.state == VmState::Booting) ++booting;
  }

  std::vector<ScalingAction> actions;
  const std::int64_t room = std::max<std::int64_t>(0, cfg.max_vms - live);
  std::int64_t launches = std::min(room, std::max<std::int64_t>(0, queue_depth - (idle + booting)));
  for (std::int64_t i = 0; i < launches; ++i)
    actions.push_back({ScalingAction::Kind::Launch, std::nullopt, "queue depth exceeds idle+booting"});
  const std::int64_t top_up = std::min(room - launches, cfg.min_vms - (live + launches));
  for (std::int64_t i = 0; i < top_up; ++i)
    actions.push_back({ScalingAction::Kind::Launch, std::nullopt, "below min_vms"});

  if (queue_depth > 0) return actions;
  std::int64_t remaining = live;
  for (const auto& vm : pool) {
    if (vm.state != VmState::Idle || !vm.idle_since) continue;
    if (remaining <= cfg.min_vms) break;
    if (now - *vm.idle_since < cfg.idle_grace) continue;
    const Duration to_boundary = time_to_billing_boundary(vm.billing_anchor, now, cfg.billing_period);
    if (to_boundary > cfg.terminate_window) continue;
    actions.push_back({ScalingAction::Kind::Terminate, vm.id,
                       "idle " + std::to_string(to_seconds(now - *vm.idle_since)) + "s, " +
                           std::to_string(to_seconds(to_boundary)) + "s to billing boundary"});
    --remaining;
  }
  return actions;
}

json CostLedger::to_json() const {
  json j{{"total_periods", total_periods}, {"total_cost", total_cost}};
  j["vms"] = json::array();
  for (const auto& v : vms) {
    j["vms"].push_back({{"vm_id", v.vm_id},
                        {"periods_billed", v.periods_billed},
                        {"unit_price", v.unit_price},
                        {"cost", v.cost},
                        {"uptime_seconds", v.uptime_seconds},
                        {"busy_seconds", v.busy_seconds},
                        {"open", v.open}});
  }
  j["jobs"] = json::array();
  for (const auto& e : jobs) {
    j["jobs"].push_back({{"job_id", e.job_id},
                         {"owner", e.owner},
                         {"vm_id", e.vm_id},
                         {"runtime_seconds", e.runtime_seconds}});
  }
  return j;
}

CostLedger build_ledger(const StoreSnapshot& snapshot, Timestamp now, Duration billing_period) {
  CostLedger ledger;
  for (const auto& [id, vm] : snapshot.vms) {
    LedgerVmEntry e;
    e.vm_id = id;
    e.open = vm.state != VmState::Terminated;
    const Timestamp end = vm.terminated_at.value_or(now);
    const Duration uptime = std::max(Duration{0}, end - vm.launched_at);
    e.uptime_seconds = to_seconds(uptime);
    e.periods_billed = billing_periods(uptime, billing_period);
    e.unit_price = vm.unit_price;
    e.cost = static_cast<double>(e.periods_billed) * vm.unit_price;
    std::int64_t busy = vm.busy_ms;
    if (vm.state == VmState::Busy && vm.busy_since) busy += (now - *vm.busy_since).count();
    e.busy_seconds = static_cast<double>(busy) / 1000.0;
    ledger.total_periods += e.periods_billed;
    ledger.total_cost += e.cost;
    ledger.vms.push_back(std::move(e));
  }
  std::vector<const JobRecord*> jobs;
  for (const auto& [id, job] : snapshot.jobs) jobs.push_back(&job);
  std::sort(jobs.begin(), jobs.end(),
            [](const JobRecord* a, const JobRecord* b) { return a->seq < b->seq; });
  for (const JobRecord* job : jobs) {
    if (job->backend != Backend::Cloud || !job->assigned_vm || !job->started_at ||
        !job->finished_at)
      continue;
    ledger.jobs.push_back({job->id, job->spec.owner, *job->assigned_vm,
                           to_seconds(*job->finished_at - *job->started_at)});
  }
  return ledger;
}

void release_vm(VmRecord& vm, Timestamp now) {
  if (vm.state != VmState::Busy)
    throw Error(ErrorCode::IllegalTransition,
                "release of " + vm.id + " in state " + std::string(to_string(vm.state)));
  vm.state = VmState::Idle;
  vm.jobs_executed += 1;
  if (vm.busy_since) vm.busy_ms += std::max<std::int64_t>(0, (now - *vm.busy_since).count());
  vm.busy_since.reset();
  vm.idle_since = now;
}

std::string mint_token() {
  std::random_device rd;
  static constexpr char kHex[] = "0123456789abcdef";
  std::string out;
  for (int i = 0; i < 8; ++i) {
    std::uint32_t word = rd();
    for (int b = 0; b < 8; ++b) {
      out.push_back(kHex[word & 0xF]);
      word >>= 4;
    }
  }
  return out;
}

// ---------------------------------------------------------------------------

VmPool::VmPool(Store& store, ProviderInterface& provider, AgentTransport& transport, Clock& clock,
               ScalingConfig config)
    : store_(store), provider_(provider), transport_(transport), clock_(clock), config_(config) {
  if (!config_.valid()) throw Error(ErrorCode::ConfigError, "invalid scaling configuration");
}

std::optional<VmRecord> VmPool::acquire_idle_vm() {
  const Timestamp now = clock_.now();
  return store_.transact(Actor::VmManager, "acquire idle vm", now,
                         [&](Transaction& tx) -> std::optional<VmRecord> {
                           for (const auto& vm : tx.vms()) {
                             if (vm.state != VmState::Idle) continue;
                             VmRecord& r = tx.vm(vm.id);
                             r.state = VmState::Busy;
                             r.busy_since = now;
                             r.idle_since.reset();
                             return r;
                           }
                           return std::nullopt;
                         });
}

void VmPool::release(const VmId& id) {
  const Timestamp now = clock_.now();
  store_.update_vm(id, Actor::VmManager, "release " + id, now,
                   [&](VmRecord& vm) { release_vm(vm, now); });
}

void VmPool::note_demand(std::int64_t queue_depth, Duration oldest_wait) {
  std::lock_guard lock(mu_);
  demand_depth_ = queue_depth;
  demand_oldest_wait_ = oldest_wait;
}

void VmPool::log_decision(json entry) {
  std::lock_guard lock(mu_);
  decisions_.push_back(std::move(entry));
}

std::vector<json> VmPool::decision_log() const {
  std::lock_guard lock(mu_);
  return decisions_;
}

std::int64_t VmPool::launch_failures() const {
  std::lock_guard lock(mu_);
  return launch_failures_;
}

std::int64_t VmPool::launches() const {
  std::lock_guard lock(mu_);
  return launches_;
}

void VmPool::record_launch_failure(Timestamp now, const std::string& why) {
  Duration backoff;
  {
    std::lock_guard lock(mu_);
    ++consecutive_failures_;
    ++launch_failures_;
    backoff = std::chrono::seconds(1);
    for (std::int64_t i = 1; i < consecutive_failures_ && backoff < config_.launch_backoff_cap; ++i)
      backoff *= 2;
    backoff = std::min(backoff, config_.launch_backoff_cap);
    next_launch_at_ = now + backoff;
  }
  log_decision({{"t", to_millis(now)},
                {"action", "launch-failed"},
                {"reason", why},
                {"backoff_s", to_seconds(backoff)}});
}

void VmPool::launch_one(Timestamp now, const std::string& reason) {
  std::string handle;
  try {
    handle = provider_.launch(config_.image_ref, config_.instance_size);
  } catch (const Error& e) {
    record_launch_failure(now, e.what());
    return;
  }
  const VmId id = store_.transact(Actor::VmManager, "launch", now, [&](Transaction& tx) {
    VmRecord vm;
    vm.id = tx.new_vm_id();
    vm.provider_handle = handle;
    vm.state = VmState::Booting;
    vm.launched_at = now;
    vm.billing_anchor = now;
    vm.token = mint_token();
    vm.token_issued_at = now;
    vm.unit_price = config_.unit_price;
    const auto id = vm.id;
    tx.put_vm(std::move(vm));
    return id;
  });
  {
    std::lock_guard lock(mu_);
    ++launches_;
  }
  log_decision({{"t", to_millis(now)}, {"action", "launch"}, {"vm", id}, {"reason", reason}});
}

void VmPool::close_vm(const VmRecord& vm, Timestamp now, const std::string& note) {
  store_.update_vm(vm.id, Actor::VmManager, "terminated " + vm.id, now, [&](VmRecord& r) {
    if (r.state == VmState::Busy && r.busy_since)
      r.busy_ms += std::max<std::int64_t>(0, (now - *r.busy_since).count());
    r.busy_since.reset();
    r.state = VmState::Terminated;
    r.terminated_at = now;
    r.note = note;
  });
}

std::vector<ScalingAction> VmPool::scale(std::int64_t queue_depth, Duration oldest_wait,
                                         Timestamp now) {
  const auto pool = store_.vm_list();
  auto actions = plan_scaling(pool, queue_depth, oldest_wait, now, config_);
  bool backing_off;
  {
    std::lock_guard lock(mu_);
    backing_off = next_launch_at_ && now < *next_launch_at_;
  }
  std::vector<ScalingAction> taken;
  for (const auto& a : actions) {
    if (a.kind == ScalingAction::Kind::Launch) {
      if (backing_off) continue;
      launch_one(now, a.reason);
      taken.push_back(a);
      continue;
    }
    const bool claimed =
        store_.transact(Actor::VmManager, "terminate " + *a.vm, now, [&](Transaction& tx) {
          VmRecord& vm = tx.vm(*a.vm);
          if (vm.state != VmState::Idle) return false;
          vm.state = VmState::Terminating;
          return true;
        });
    if (!claimed) continue;
    auto vm = store_.get_vm(*a.vm);
    provider_.terminate(vm->provider_handle);
    close_vm(*vm, now, "scaled down: " + a.reason);
    log_decision({{"t", to_millis(now)},
                  {"action", "terminate"},
                  {"vm", *a.vm},
                  {"reason", a.reason},
                  {"periods_billed",
                   billing_periods(now - vm->launched_at, config_.billing_period)}});
    taken.push_back(a);
  }
  if (!taken.empty()) {
    log_decision({{"t", to_millis(now)},
                  {"action", "scale"},
                  {"queue_depth", queue_depth},
                  {"oldest_wait_s", to_seconds(oldest_wait)},
                  {"actions", taken.size()},
                  {"max_vms", config_.max_vms},
                  {"min_vms", config_.min_vms},
                  {"idle_grace_s", to_seconds(config_.idle_grace)},
                  {"terminate_window_s", to_seconds(config_.terminate_window)},
                  {"billing_period_s", to_seconds(config_.billing_period)}});
  }
  return taken;
}

void VmPool::reconcile(Timestamp now) {
  auto handle_lost = [&](const VmRecord& vm, const std::string& reason) {
    if (vm.state != VmState::Lost) {
      store_.update_vm(vm.id, Actor::VmManager, "lost " + vm.id, now, [&](VmRecord& r) {
        r.state = VmState::Lost;
        r.note = reason;
      });
    }
    for (const auto& job : store_.list_jobs(JobState::Running, Backend::Cloud)) {
      if (job.assigned_vm == vm.id && on_agent_lost_) on_agent_lost_(job.id, vm.id, reason, now);
    }
    provider_.terminate(vm.provider_handle);
    close_vm(vm, now, reason);
    log_decision({{"t", to_millis(now)}, {"action", "lost"}, {"vm", vm.id}, {"reason", reason}});
  };

  for (const auto& vm : store_.vm_list()) {
    switch (vm.state) {
      case VmState::Terminated:
        break;
      case VmState::Booting: {
        const auto info = provider_.describe(vm.provider_handle);
        const bool over_budget = now - vm.launched_at > config_.boot_budget;
        if (info.status == InstanceStatus::Running) {
          if (transport_.status(info.endpoint)) {
            store_.update_vm(vm.id, Actor::VmManager, "booted " + vm.id, now, [&](VmRecord& r) {
              r.state = VmState::Idle;
              r.endpoint = info.endpoint;
              r.idle_since = now;
            });
            std::lock_guard lock(mu_);
            consecutive_failures_ = 0;
            next_launch_at_.reset();
          } else if (over_budget) {
            provider_.terminate(vm.provider_handle);
            close_vm(vm, now, "agent never answered within boot budget");
            record_launch_failure(now, "agent never answered on " + vm.id);
          }
        } else if (info.status == InstanceStatus::Pending) {
          if (over_budget) {
            provider_.terminate(vm.provider_handle);
            close_vm(vm, now, "boot budget exceeded");
            record_launch_failure(now, "boot budget exceeded on " + vm.id);
          }
        } else {
          provider_.terminate(vm.provider_handle);
          close_vm(vm, now, "launch failed");
          record_launch_failure(now, "provider reported " + std::string(to_string(info.status)) +
                                         " for " + vm.id);
        }
        break;
      }
      case VmState::Idle:
      case VmState::Busy: {
        const auto info = provider_.describe(vm.provider_handle);
        if (info.status != InstanceStatus::Running) {
          handle_lost(vm, "instance " + std::string(to_string(info.status)));
          break;
        }
        const auto st = transport_.status(vm.endpoint);
        if (!st) {
          handle_lost(vm, "agent unreachable");
          break;
        }
        if (vm.state == VmState::Busy && !st->busy && vm.busy_since &&
            now - *vm.busy_since > config_.stale_reservation) {
          bool holds_job = false;
          for (const auto& job : store_.list_jobs(JobState::Running, Backend::Cloud))
            holds_job = holds_job || job.assigned_vm == vm.id;
          if (!holds_job) {
            store_.update_vm(vm.id, Actor::VmManager, "reclaim stale reservation " + vm.id, now,
                             [&](VmRecord& r) {
                               if (r.state == VmState::Busy) release_vm(r, now);
                             });
          }
        }
        break;
      }
      case VmState::Lost:
        handle_lost(vm, vm.note.value_or("lost"));
        break;
      case VmState::Terminating:
        provider_.terminate(vm.provider_handle);
        close_vm(vm, now, vm.note.value_or("terminated"));
        break;
    }
  }
}

void VmPool::run_once(Timestamp now) {
  reconcile(now);
  std::int64_t depth;
  Duration wait;
  {
    std::lock_guard lock(mu_);
    depth = demand_depth_;
    wait = demand_oldest_wait_;
  }
  scale(depth, wait, now);
}

void VmPool::terminate_all(Timestamp now, const std::string& reason) {
  for (const auto& vm : store_.vm_list()) {
    if (vm.state == VmState::Terminated) continue;
    provider_.terminate(vm.provider_handle);
    close_vm(vm, now, reason);
  }
}

CostLedger VmPool::accounting_report() const {
  return build_ledger(store_.snapshot(), clock_.now(), config_.billing_period);
}

}  // namespace burstq
