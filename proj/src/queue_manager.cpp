#include "burstq/queue_manager.hpp"

#include "burstq/error.hpp"

namespace burstq {

namespace {
constexpr std::size_t kTraceLimit = 100000;
}

std::string_view to_string(DispatchAction::Kind k) {
  switch (k) {
    case DispatchAction::Kind::Dispatched: return "dispatched";
    case DispatchAction::Kind::Busy: return "busy";
    case DispatchAction::Kind::Unreachable: return "unreachable";
    case DispatchAction::Kind::Demand: return "demand";
    case DispatchAction::Kind::CancelledInFlight: return "cancelled-in-flight";
  }
  return "?";
}

nlohmann::json DispatchAction::to_json() const {
  nlohmann::json j{{"kind", to_string(kind)}, {"at", to_millis(at)}};
  if (!job.empty()) j["job"] = job;
  if (!vm.empty()) j["vm"] = vm;
  if (kind == Kind::Demand) {
    j["depth"] = depth;
    j["oldest_wait_s"] = to_seconds(oldest_wait);
  }
  return j;
}

QueueManager::QueueManager(Store& store, VmPool& pool, AgentTransport& transport,
                           Workspace& workspace, DispatchConfig config, std::string callback_url)
    : store_(store),
      pool_(pool),
      transport_(transport),
      workspace_(workspace),
      config_(config),
      callback_url_(std::move(callback_url)) {
  if (!config_.valid()) throw Error(ErrorCode::ConfigError, "invalid dispatch configuration");
}

void QueueManager::set_callback_url(std::string url) {
  std::lock_guard lock(mu_);
  callback_url_ = std::move(url);
}

void QueueManager::record(DispatchAction a) {
  std::lock_guard lock(mu_);
  if (a.kind == DispatchAction::Kind::Busy) ++busy_rejections_;
  if (a.kind == DispatchAction::Kind::Dispatched) ++dispatches_;
  trace_.push_back(std::move(a));
  if (trace_.size() > kTraceLimit) trace_.pop_front();
}

std::vector<DispatchAction> QueueManager::trace() const {
  std::lock_guard lock(mu_);
  return {trace_.begin(), trace_.end()};
}

std::int64_t QueueManager::busy_rejections() const {
  std::lock_guard lock(mu_);
  return busy_rejections_;
}

std::int64_t QueueManager::dispatches() const {
  std::lock_guard lock(mu_);
  return dispatches_;
}

std::vector<DispatchAction> QueueManager::tick(Timestamp now) {
  std::lock_guard tick_lock(tick_mu_);
  std::vector<DispatchAction> actions;
  const auto queued = store_.list_jobs(JobState::Queued, Backend::Cloud);
  std::size_t i = 0;
  while (i < queued.size()) {
    // The job may have been cancelled since the listing.
    const auto job = store_.get_job(queued[i].id);
    if (!job || job->state != JobState::Queued) {
      ++i;
      continue;
    }
    auto vm = pool_.acquire_idle_vm();
    if (!vm) {
      DispatchAction demand{DispatchAction::Kind::Demand, now, {}, {},
                            static_cast<std::int64_t>(queued.size() - i),
                            now - job->queued_at.value_or(job->submitted_at)};
      pool_.note_demand(demand.depth, demand.oldest_wait);
      actions.push_back(demand);
      record(demand);
      return actions;
    }
    if (agent_settling(*vm)) {
      pool_.release(vm->id);
      pool_.note_demand(static_cast<std::int64_t>(queued.size() - i),
                        now - job->queued_at.value_or(job->submitted_at));
      return actions;
    }
    const DispatchOutcome outcome = dispatch(*job, *vm, now);
    DispatchAction a{DispatchAction::Kind::Dispatched, now, job->id, vm->id, 0, Duration{0}};
    if (outcome == DispatchOutcome::Busy) a.kind = DispatchAction::Kind::Busy;
    if (outcome == DispatchOutcome::Unreachable) a.kind = DispatchAction::Kind::Unreachable;
    if (outcome == DispatchOutcome::Accepted) {
      const auto after = store_.get_job(job->id);
      if (after && after->state == JobState::Cancelled) a.kind = DispatchAction::Kind::CancelledInFlight;
      ++i;
    }
    actions.push_back(a);
    record(a);
  }
  pool_.note_demand(0, Duration{0});
  return actions;
}

bool QueueManager::agent_settling(const VmRecord& vm) {
  std::optional<AgentStatus> st;
  try {
    st = transport_.status(vm.endpoint);
  } catch (const Error&) {
    return false;
  }
  if (!st || !st->busy || !st->job_id) return false;
  const auto previous = store_.get_job(*st->job_id);
  return previous && is_terminal(previous->state);
}

DispatchOutcome QueueManager::dispatch(const JobRecord& job, const VmRecord& vm, Timestamp now) {
  DispatchPayload payload;
  payload.job_id = job.id;
  payload.kind = job.spec.kind;
  payload.params = job.spec.params;
  payload.files = workspace_.load_inputs(job.workspace);
  {
    std::lock_guard lock(mu_);
    payload.callback_url = callback_url_;
  }
  payload.token = vm.token;

  // Running is committed before the call so a result push that beats the
  // execute reply finds the job started.
  const bool claimed = store_.transact(
      Actor::QueueManager, "dispatch " + job.id + " to " + vm.id, now, [&](Transaction& tx) {
        JobRecord& j = tx.job(job.id);
        if (j.state != JobState::Queued) return false;
        j.state = transition(j.state, JobEvent::Dispatch);
        // `now` is taken at the start of the tick; the reservation may be later.
        j.started_at = std::max(now, vm.busy_since.value_or(now));
        j.assigned_vm = vm.id;
        return true;
      });
  if (!claimed) {
    pool_.release(vm.id);
    return DispatchOutcome::Accepted;
  }

  DispatchOutcome outcome = DispatchOutcome::Unreachable;
  for (int attempt = 0; attempt <= config_.max_dispatch_retries; ++attempt) {
    try {
      outcome = transport_.execute(vm.endpoint, payload);
    } catch (const Error&) {
      outcome = DispatchOutcome::Unreachable;
    }
    if (outcome != DispatchOutcome::Unreachable) break;
  }

  auto roll_back = [&](JobRecord& j) {
    if (j.state != JobState::Running || j.assigned_vm != vm.id) return false;
    j.state = requeue(j.state);
    j.started_at.reset();
    j.assigned_vm.reset();
    return true;
  };
  switch (outcome) {
    case DispatchOutcome::Accepted: {
      const auto after = store_.get_job(job.id);
      if (after && after->state == JobState::Cancelled) {
        try {
          transport_.abort(vm.endpoint, job.id);
        } catch (const Error&) {
        }
      }
      break;
    }
    case DispatchOutcome::Busy:
      // The reservation from acquire keeps the VM Busy; the pool reclaims it
      // once the agent reports idle.
      store_.transact(Actor::QueueManager, "agent on " + vm.id + " rejected " + job.id + " as busy", now,
                      [&](Transaction& tx) { roll_back(tx.job(job.id)); });
      break;
    case DispatchOutcome::Unreachable:
      store_.transact(Actor::QueueManager, "dispatch of " + job.id + " to " + vm.id + " unreachable",
                      now, [&](Transaction& tx) {
                        VmRecord& v = tx.vm(vm.id);
                        if (v.state != VmState::Terminated) {
                          v.state = VmState::Lost;
                          v.note = "unreachable at dispatch";
                        }
                        JobRecord& j = tx.job(job.id);
                        if (roll_back(j)) j.attempt_count += 1;
                      });
      break;
  }
  return outcome;
}

void QueueManager::handle_agent_failure(const JobId& job_id, const VmId& vm_id,
                                        const std::string& reason, Timestamp now) {
  const bool applied = store_.transact(
      Actor::QueueManager, "agent failure for " + job_id + " on " + vm_id + ": " + reason, now,
      [&](Transaction& tx) {
        JobRecord& j = tx.job(job_id);
        if (j.state != JobState::Running || j.assigned_vm != vm_id) return false;
        j.attempt_count += 1;
        if (j.attempt_count < config_.max_attempts) {
          j.state = requeue(j.state);
          j.queued_at = now;
          j.started_at.reset();
          j.assigned_vm.reset();
        } else {
          j.state = transition(j.state, JobEvent::Fail);
          j.finished_at = now;
          j.error = reason;
        }
        if (const VmRecord* v = tx.find_vm(vm_id); v && v->state != VmState::Terminated) {
          VmRecord& vm = tx.vm(vm_id);
          if (vm.busy_since) vm.busy_ms += std::max<std::int64_t>(0, (now - *vm.busy_since).count());
          vm.busy_since.reset();
          vm.state = VmState::Lost;
          vm.note = reason;
        }
        return true;
      });
  if (!applied)
    store_.note(Actor::QueueManager, "late failure report for " + job_id + " ignored", now);
}

}  // namespace burstq
