#include "burstq/local_grid.hpp"

#include <algorithm>
#include <fstream>

#include "burstq/error.hpp"
#include "burstq/kernels.hpp"

namespace burstq {

namespace fs = std::filesystem;

std::int64_t LocalSchedulerConfig::effective_local_jobs() const {
  const std::int64_t upper = std::max<std::int64_t>(1, cores - 1);
  return std::clamp<std::int64_t>(max_local_jobs, 1, upper);
}

std::int64_t LocalSchedulerConfig::effective_prepare_pool() const {
  return prepare_pool_size > 0 ? prepare_pool_size : effective_local_jobs();
}

std::string_view to_string(GridStatus s) {
  switch (s) {
    case GridStatus::Queued: return "queued";
    case GridStatus::Running: return "running";
    case GridStatus::Finished: return "finished";
    case GridStatus::Cancelled: return "cancelled";
    case GridStatus::Failed: return "failed";
  }
  return "?";
}

// ---------------------------------------------------------------------------

SimGrid::SimGrid(Clock& clock, Executor& executor, fs::path work_root, SimGridConfig config)
    : clock_(clock),
      executor_(executor),
      work_root_(std::move(work_root)),
      config_(config),
      rng_(config.seed) {}

std::uint64_t SimGrid::begin_submission() {
  std::lock_guard lock(mu_);
  const std::uint64_t ticket = next_ticket_++;
  bool doomed = false;
  if (forced_timeouts_ > 0) {
    --forced_timeouts_;
    doomed = true;
  }
  if (config_.max_concurrent_submissions > 0 &&
      static_cast<std::int64_t>(submissions_.size()) >= config_.max_concurrent_submissions)
    doomed = true;
  submissions_[ticket] = doomed;
  return ticket;
}

bool SimGrid::end_submission(std::uint64_t ticket) {
  std::lock_guard lock(mu_);
  auto it = submissions_.find(ticket);
  if (it == submissions_.end()) return true;
  const bool doomed = it->second;
  submissions_.erase(it);
  return doomed;
}

void SimGrid::fail_next_submissions(int n) {
  std::lock_guard lock(mu_);
  forced_timeouts_ += n;
}

std::string SimGrid::submit(const JobRecord& job,
                            const std::map<std::string, std::string>& inputs) {
  std::string remote_id;
  Duration wait{0};
  {
    std::lock_guard lock(mu_);
    remote_id = "grid-" + std::to_string(next_remote_++);
    if (config_.queue_wait_max > config_.queue_wait_min) {
      std::uniform_int_distribution<std::int64_t> d(config_.queue_wait_min.count(),
                                                    config_.queue_wait_max.count());
      wait = Duration{d(rng_)};
    } else {
      wait = config_.queue_wait_min;
    }
    Remote r;
    r.handle = {remote_id, clock_.now(), GridStatus::Queued};
    r.start_at = clock_.now() + wait;
    remotes_[remote_id] = std::move(r);
  }

  const fs::path workdir = work_root_ / remote_id;
  fs::create_directories(workdir);
  for (const auto& [name, body] : inputs) {
    std::ofstream out(workdir / name, std::ios::binary | std::ios::trunc);
    out.write(body.data(), static_cast<std::streamsize>(body.size()));
  }

  const JobKind kind = job.spec.kind;
  const Params params = job.spec.params;
  const JobId job_id = job.id;
  auto work = executor_.try_submit([this, kind, params, workdir, wait, remote_id,
                                    job_id](WorkContext& ctx) -> Effect {
    if (!ctx.wait(wait)) return nullptr;
    KernelResult result = run_kernel(kind, params, workdir, ctx);
    if (ctx.cancelled()) return nullptr;
    ResultBundle bundle{job_id, result.ok, std::move(result.outputs), result.log_text};
    return [this, remote_id, workdir, bundle = std::move(bundle)]() mutable {
      std::error_code ec;
      fs::remove_all(workdir, ec);
      std::lock_guard lock(mu_);
      auto it = remotes_.find(remote_id);
      if (it == remotes_.end() || it->second.handle.status == GridStatus::Cancelled) return;
      it->second.handle.status = bundle.ok ? GridStatus::Finished : GridStatus::Failed;
      it->second.finished_at = clock_.now();
      it->second.result = std::move(bundle);
      it->second.work.reset();
    };
  });
  std::lock_guard lock(mu_);
  if (!work) {
    remotes_[remote_id].handle.status = GridStatus::Failed;
    remotes_[remote_id].finished_at = clock_.now();
  } else if (auto it = remotes_.find(remote_id); it != remotes_.end() && it->second.result) {
    // Already finished (zero-length work applied inline).
  } else {
    remotes_[remote_id].work = *work;
  }
  return remote_id;
}

GridJobHandle SimGrid::handle(const std::string& remote_id) const {
  std::lock_guard lock(mu_);
  auto it = remotes_.find(remote_id);
  if (it == remotes_.end()) throw Error(ErrorCode::NotFound, "no grid job " + remote_id);
  GridJobHandle h = it->second.handle;
  if (h.status == GridStatus::Queued && clock_.now() >= it->second.start_at)
    h.status = GridStatus::Running;
  return h;
}

std::optional<ResultBundle> SimGrid::download(const std::string& remote_id) const {
  std::lock_guard lock(mu_);
  auto it = remotes_.find(remote_id);
  if (it == remotes_.end()) return std::nullopt;
  return it->second.result;
}

std::optional<Timestamp> SimGrid::finished_at(const std::string& remote_id) const {
  std::lock_guard lock(mu_);
  auto it = remotes_.find(remote_id);
  if (it == remotes_.end()) return std::nullopt;
  return it->second.finished_at;
}

void SimGrid::cancel(const std::string& remote_id) {
  std::optional<WorkId> work;
  {
    std::lock_guard lock(mu_);
    auto it = remotes_.find(remote_id);
    if (it == remotes_.end()) return;
    auto& r = it->second;
    if (r.handle.status == GridStatus::Finished || r.handle.status == GridStatus::Failed ||
        r.handle.status == GridStatus::Cancelled)
      return;
    r.handle.status = GridStatus::Cancelled;
    r.finished_at = clock_.now();
    work = r.work;
    r.work.reset();
  }
  if (work) executor_.cancel(*work);
  std::error_code ec;
  fs::remove_all(work_root_ / remote_id, ec);
}

void SimGrid::forget(const std::string& remote_id) {
  std::lock_guard lock(mu_);
  remotes_.erase(remote_id);
}

// ---------------------------------------------------------------------------

std::string_view to_string(SchedulerAction::Kind k) {
  using K = SchedulerAction::Kind;
  switch (k) {
    case K::LocalStart: return "local-start";
    case K::LocalFinish: return "local-finish";
    case K::PrepareStart: return "prepare-start";
    case K::RemoteSubmitted: return "remote-submitted";
    case K::SubmitTimeout: return "submit-timeout";
    case K::RemoteFinished: return "remote-finished";
    case K::RemoteFailed: return "remote-failed";
    case K::RemoteCancelled: return "remote-cancelled";
  }
  return "?";
}

nlohmann::json SchedulerAction::to_json() const {
  nlohmann::json j{{"kind", to_string(kind)}, {"at", to_millis(at)}, {"job", job}};
  if (!detail.empty()) j["detail"] = detail;
  return j;
}

LocalGridScheduler::LocalGridScheduler(Store& store, Workspace& workspace, Clock& clock,
                                       Executor& local_pool, Executor& prepare_pool, SimGrid& grid,
                                       LocalSchedulerConfig config)
    : store_(store),
      workspace_(workspace),
      clock_(clock),
      local_pool_(local_pool),
      prepare_pool_(prepare_pool),
      grid_(grid),
      config_(config) {
  if (config_.cores < 1 || config_.remote_poll_interval.count() <= 0)
    throw Error(ErrorCode::ConfigError, "invalid local scheduler configuration");
}

void LocalGridScheduler::record(SchedulerAction a) {
  std::lock_guard lock(mu_);
  trace_.push_back(std::move(a));
}

std::vector<SchedulerAction> LocalGridScheduler::trace() const {
  std::lock_guard lock(mu_);
  return trace_;
}

std::vector<std::pair<Timestamp, Timestamp>> LocalGridScheduler::local_intervals() const {
  std::lock_guard lock(mu_);
  return local_intervals_;
}

std::size_t LocalGridScheduler::peak_local_in_flight() const {
  std::lock_guard lock(mu_);
  return peak_local_;
}

std::vector<SchedulerAction> LocalGridScheduler::tick(Timestamp now) {
  std::lock_guard tick_lock(tick_mu_);
  const std::size_t before = trace().size();
  for (const auto& job : store_.list_jobs(JobState::Queued, Backend::Local)) {
    if (!local_pool_.has_free_slot()) break;
    run_local(job, now);
  }
  for (const auto& job : store_.list_jobs(JobState::Queued, Backend::Grid)) {
    if (!prepare_pool_.has_free_slot()) break;
    prepare_and_submit_remote(job, now);
  }
  const auto all = trace();
  return {all.begin() + static_cast<std::ptrdiff_t>(std::min(before, all.size())), all.end()};
}

void LocalGridScheduler::run_local(const JobRecord& job, Timestamp now) {
  const bool started =
      store_.transact(Actor::Scheduler, "start local " + job.id, now, [&](Transaction& tx) {
        JobRecord& j = tx.job(job.id);
        if (j.state != JobState::Queued) return false;
        j.state = transition(j.state, JobEvent::Dispatch);
        j.started_at = now;
        return true;
      });
  if (!started) return;
  {
    std::lock_guard lock(mu_);
    local_started_[job.id] = now;
  }
  record({SchedulerAction::Kind::LocalStart, now, job.id, {}});

  const JobId id = job.id;
  const JobKind kind = job.spec.kind;
  const Params params = job.spec.params;
  const fs::path workdir = workspace_.input_dir(job.workspace);
  auto work = local_pool_.try_submit([this, id, kind, params, workdir](WorkContext& ctx) -> Effect {
    KernelResult result = run_kernel(kind, params, workdir, ctx);
    if (ctx.cancelled()) return nullptr;
    ResultBundle bundle{id, result.ok, std::move(result.outputs),
                        result.ok || !result.log_text.empty() ? result.log_text : "error"};
    return [this, bundle = std::move(bundle)]() {
      const Timestamp end = clock_.now();
      {
        std::lock_guard lock(mu_);
        local_work_.erase(bundle.job_id);
        auto it = local_started_.find(bundle.job_id);
        if (it != local_started_.end()) {
          local_intervals_.emplace_back(it->second, end);
          local_started_.erase(it);
        }
      }
      const auto current = store_.get_job(bundle.job_id);
      if (!current || current->state != JobState::Running) return;
      const std::string ref = workspace_.write_results(bundle);
      store_.transact(Actor::Scheduler, "local result for " + bundle.job_id, end,
                      [&](Transaction& tx) {
                        JobRecord& j = tx.job(bundle.job_id);
                        if (j.state != JobState::Running) return;
                        j.state = transition(j.state, bundle.ok ? JobEvent::ResultsReceived
                                                                : JobEvent::Fail);
                        j.finished_at = end;
                        j.result_ref = ref;
                        if (!bundle.ok) j.error = bundle.log_text;
                      });
      record({SchedulerAction::Kind::LocalFinish, end, bundle.job_id, bundle.ok ? "ok" : "error"});
    };
  });
  std::lock_guard lock(mu_);
  if (work) {
    local_work_[id] = *work;
    peak_local_ = std::max(peak_local_, local_pool_.in_flight());
  }
}

void LocalGridScheduler::prepare_and_submit_remote(const JobRecord& job, Timestamp now) {
  const bool preparing =
      store_.transact(Actor::Scheduler, "prepare remote " + job.id, now, [&](Transaction& tx) {
        JobRecord& j = tx.job(job.id);
        if (j.state != JobState::Queued) return false;
        j.state = transition(j.state, JobEvent::PrepareRemote);
        return true;
      });
  if (!preparing) return;
  const Duration latency = config_.latency.latency_for(job.spec.profile.input_bytes);
  record({SchedulerAction::Kind::PrepareStart, now, job.id,
          "latency " + std::to_string(to_seconds(latency)) + "s"});
  const JobId id = job.id;
  auto work = prepare_pool_.try_submit([this, id, latency](WorkContext& ctx) -> Effect {
    const std::uint64_t ticket = grid_.begin_submission();
    if (!ctx.wait(latency)) {
      grid_.end_submission(ticket);
      return nullptr;
    }
    return [this, id, ticket]() { finish_prepare(id, ticket); };
  });
  if (!work) {
    store_.update_job(id, Actor::Scheduler, "no preparation slot for " + id, now,
                      [&](JobRecord& j) {
                        j.state = requeue(j.state);
                        j.queued_at = now;
                      });
  }
}

void LocalGridScheduler::finish_prepare(const JobId& id, std::uint64_t ticket) {
  const Timestamp now = clock_.now();
  const bool timed_out = grid_.end_submission(ticket);
  const auto job = store_.get_job(id);
  if (!job || job->state != JobState::Preparing) return;

  if (timed_out) {
    store_.update_job(id, Actor::Scheduler, "grid submission of " + id + " timed out", now,
                      [&](JobRecord& j) {
                        if (j.state != JobState::Preparing) return;
                        j.attempt_count += 1;
                        if (j.attempt_count < config_.max_attempts) {
                          j.state = requeue(j.state);
                          j.queued_at = now;
                        } else {
                          j.state = transition(j.state, JobEvent::Fail);
                          j.finished_at = now;
                          j.error = "grid submission timed out";
                        }
                      });
    record({SchedulerAction::Kind::SubmitTimeout, now, id, {}});
    return;
  }

  const std::string remote_id = grid_.submit(*job, workspace_.load_inputs(job->workspace));
  const bool running =
      store_.transact(Actor::Scheduler, "submitted " + id + " as " + remote_id, now,
                      [&](Transaction& tx) {
                        JobRecord& j = tx.job(id);
                        if (j.state != JobState::Preparing) return false;
                        j.state = transition(j.state, JobEvent::Dispatch);
                        j.started_at = now;
                        j.remote_id = remote_id;
                        return true;
                      });
  if (!running) {
    grid_.cancel(remote_id);
    grid_.forget(remote_id);
    return;
  }
  record({SchedulerAction::Kind::RemoteSubmitted, now, id, remote_id});
}

std::vector<SchedulerAction> LocalGridScheduler::remote_poll_tick(Timestamp now) {
  std::lock_guard poll_lock(poll_mu_);
  std::vector<SchedulerAction> actions;
  for (const auto& job : store_.list_jobs(JobState::Running, Backend::Grid)) {
    if (!job.remote_id) continue;
    GridJobHandle h;
    try {
      h = grid_.handle(*job.remote_id);
    } catch (const Error&) {
      h.status = GridStatus::Failed;
    }
    SchedulerAction a{SchedulerAction::Kind::RemoteFinished, now, job.id, *job.remote_id};
    if (h.status == GridStatus::Finished) {
      const auto bundle = grid_.download(*job.remote_id);
      if (!bundle) continue;
      ResultBundle b = *bundle;
      b.job_id = job.id;
      const std::string ref = workspace_.write_results(b);
      store_.update_job(job.id, Actor::Scheduler, "grid result for " + job.id, now,
                        [&](JobRecord& j) {
                          j.state = transition(j.state, JobEvent::ResultsReceived);
                          j.finished_at = now;
                          j.result_ref = ref;
                        });
    } else if (h.status == GridStatus::Failed) {
      a.kind = SchedulerAction::Kind::RemoteFailed;
      const auto bundle = grid_.download(*job.remote_id);
      store_.update_job(job.id, Actor::Scheduler, "grid failure for " + job.id, now,
                        [&](JobRecord& j) {
                          j.state = transition(j.state, JobEvent::Fail);
                          j.finished_at = now;
                          j.error = bundle ? bundle->log_text : "grid job failed";
                        });
    } else if (h.status == GridStatus::Cancelled) {
      a.kind = SchedulerAction::Kind::RemoteCancelled;
      store_.update_job(job.id, Actor::Scheduler, "grid cancellation of " + job.id, now,
                        [&](JobRecord& j) {
                          j.state = transition(j.state, JobEvent::Cancel);
                          j.finished_at = now;
                        });
    } else {
      continue;
    }
    grid_.forget(*job.remote_id);
    actions.push_back(a);
    record(a);
  }
  return actions;
}

void LocalGridScheduler::abort(const JobRecord& job) {
  if (job.backend == Backend::Local) {
    std::optional<WorkId> work;
    {
      std::lock_guard lock(mu_);
      auto it = local_work_.find(job.id);
      if (it != local_work_.end()) work = it->second;
      local_work_.erase(job.id);
      auto started = local_started_.find(job.id);
      if (started != local_started_.end()) {
        local_intervals_.emplace_back(started->second, clock_.now());
        local_started_.erase(started);
      }
    }
    if (work) local_pool_.cancel(*work);
  } else if (job.backend == Backend::Grid && job.remote_id) {
    grid_.cancel(*job.remote_id);
  }
}

}  // namespace burstq
