#include "burstq/job_manager.hpp"

#include <set>

#include "burstq/archive.hpp"
#include "burstq/codec.hpp"
#include "burstq/error.hpp"
#include "burstq/kernels.hpp"

namespace burstq {

namespace {

nlohmann::json time_or_null(const std::optional<Timestamp>& t) {
  return t ? nlohmann::json(format_time(*t)) : nlohmann::json(nullptr);
}

bool tokens_equal(const std::string& a, const std::string& b) {
  if (a.size() != b.size()) return false;
  unsigned char diff = 0;
  for (std::size_t i = 0; i < a.size(); ++i)
    diff |= static_cast<unsigned char>(a[i] ^ b[i]);
  return diff == 0;
}

}  // namespace

nlohmann::json status_document(const JobRecord& job) {
  nlohmann::json j{{"id", job.id},
                   {"kind", to_string(job.spec.kind)},
                   {"state", to_string(job.state)},
                   {"backend", to_string(job.backend)},
                   {"color", display_color(job.state, job.backend)},
                   {"owner", job.spec.owner},
                   {"submitted_at", format_time(job.submitted_at)},
                   {"started_at", time_or_null(job.started_at)},
                   {"finished_at", time_or_null(job.finished_at)},
                   {"error", job.error ? nlohmann::json(*job.error) : nlohmann::json(nullptr)},
                   {"attempt_count", job.attempt_count},
                   {"max_markers", job.spec.profile.max_markers},
                   {"est_memory_gb", job.est_memory_gb},
                   {"core_group", job.core_group}};
  if (job.assigned_vm) j["assigned_vm"] = *job.assigned_vm;
  if (job.spec.derive_from) j["derive_from"] = *job.spec.derive_from;
  return j;
}

JobManager::JobManager(Store& store, Workspace& workspace, Clock& clock, JobManagerConfig config)
    : store_(store), workspace_(workspace), clock_(clock), config_(std::move(config)) {
  if (!config_.routing.valid()) throw Error(ErrorCode::ConfigError, "invalid routing configuration");
}

void JobManager::set_abort_hook(Backend backend, AbortHook hook) {
  abort_hooks_[backend] = std::move(hook);
}

JobId JobManager::submit(const SubmissionEnvelope& env) {
  if (env.types.size() != 1)
    throw Error(ErrorCode::ValidationError, "exactly one 'type' field is required");
  const auto kind = parse_job_kind(env.types.front());
  if (!kind) throw Error(ErrorCode::ValidationError, "unknown job type '" + env.types.front() + "'");

  std::optional<Backend> override_backend;
  if (env.backend && !env.backend->empty() && *env.backend != "auto") {
    override_backend = parse_backend(*env.backend);
    if (!override_backend)
      throw Error(ErrorCode::ValidationError, "unknown backend '" + *env.backend + "'");
  }

  std::map<std::string, std::string> files;
  std::int64_t total = 0;
  std::set<std::string> uploaded;
  for (const auto& f : env.files) {
    if (!is_safe_file_name(f.name))
      throw Error(ErrorCode::ValidationError, "bad input file name '" + f.name + "'");
    if (!uploaded.insert(f.name).second)
      throw Error(ErrorCode::ValidationError, "duplicate input file '" + f.name + "'");
    total += static_cast<std::int64_t>(f.content.size());
    files[f.name] = f.content;
  }
  if (total > config_.max_upload_bytes)
    throw Error(ErrorCode::PayloadTooLarge, "upload of " + std::to_string(total) +
                                                " bytes exceeds max_upload_bytes");

  if (env.derive_from) {
    const auto source = store_.get_job(*env.derive_from);
    if (!source)
      throw Error(ErrorCode::ValidationError, "derive_from names unknown job " + *env.derive_from);
    if (source->state != JobState::Completed)
      throw Error(ErrorCode::DeriveSourceNotReady,
                  *env.derive_from + " is " + std::string(to_string(source->state)) +
                      "; only completed results can be reused");
    const auto results = workspace_.read_results(source->id);
    if (results) {
      for (const auto& [name, body] : results->outputs) files.emplace(name, body);
    }
  }

  DatasetProfile profile = validate_inputs(*kind, env.params, files);
  if (env.markers) profile.max_markers = *env.markers;
  if (env.samples) profile.sample_size = *env.samples;
  if (!profile.valid()) throw Error(ErrorCode::ValidationError, "invalid dataset profile");

  const RoutingDecision decision = route(profile, override_backend, config_.routing);
  if (decision.oversize && config_.reject_oversize)
    throw Error(ErrorCode::OversizeRejected,
                std::to_string(profile.max_markers) + " markers exceeds the capacity bound of " +
                    std::to_string(config_.routing.max_marker_capacity) +
                    " markers per chromosome");

  const Timestamp now = clock_.now();
  JobRecord rec;
  rec.spec.kind = *kind;
  rec.spec.params = env.params;
  for (const auto& [name, body] : files) rec.spec.inputs.push_back(name);
  rec.spec.profile = profile;
  rec.spec.backend_override = override_backend;
  rec.spec.derive_from = env.derive_from;
  rec.spec.owner = env.owner;
  rec.state = JobState::Queued;
  rec.backend = decision.backend;
  rec.submitted_at = now;
  rec.est_memory_gb = decision.est_memory_gb;
  rec.core_group = decision.core_group;
  const std::string key = workspace_.stage_inputs(files);
  rec.workspace = key;
  try {
    return store_.enqueue(std::move(rec), now);
  } catch (...) {
    workspace_.discard_inputs(key);
    throw;
  }
}

nlohmann::json JobManager::get_status(const JobId& id) const {
  const auto job = store_.get_job(id);
  if (!job) throw Error(ErrorCode::NotFound, "no job " + id);
  return status_document(*job);
}

bool JobManager::receive_results(const JobId& id, const std::string& token,
                                 const ResultBundle& bundle) {
  std::lock_guard lock(results_mu_);
  const auto job = store_.get_job(id);
  if (!job) throw Error(ErrorCode::NotFound, "no job " + id);
  const auto vm = job->assigned_vm ? store_.get_vm(*job->assigned_vm) : std::nullopt;
  if (!vm || vm->token.empty() || !tokens_equal(vm->token, token))
    throw Error(ErrorCode::AuthFailure, "token does not match the VM assigned to " + id);
  for (const auto& [name, body] : bundle.outputs) {
    if (!is_safe_file_name(name))
      throw Error(ErrorCode::MalformedPayload, "bad output file name '" + name + "'");
  }

  ResultBundle normalized = bundle;
  normalized.job_id = id;
  if (!normalized.ok && normalized.log_text.empty()) normalized.log_text = "error";

  const Timestamp now = clock_.now();
  if (is_terminal(job->state)) {
    const auto stored = workspace_.read_results(id);
    if (job->state != JobState::Cancelled && stored && same_results(*stored, normalized)) {
      store_.note(Actor::JobManager, "duplicate result push for " + id + " acknowledged", now);
      return false;
    }
    throw Error(ErrorCode::ConflictingResults,
                id + " is already " + std::string(to_string(job->state)));
  }
  if (job->state != JobState::Running)
    throw Error(ErrorCode::ConflictingResults, id + " is not running");

  const std::string ref = workspace_.write_results(normalized);
  store_.transact(Actor::JobManager, "results for " + id, now, [&](Transaction& tx) {
    JobRecord& j = tx.job(id);
    if (j.state != JobState::Running)
      throw Error(ErrorCode::ConflictingResults, id + " is " + std::string(to_string(j.state)));
    j.state = transition(j.state, normalized.ok ? JobEvent::ResultsReceived : JobEvent::Fail);
    j.finished_at = now;
    j.result_ref = ref;
    if (!normalized.ok) j.error = normalized.log_text;
    VmRecord& v = tx.vm(*j.assigned_vm);
    if (v.state == VmState::Busy) release_vm(v, now);
  });
  return true;
}

std::string JobManager::fetch_results(const JobId& id) const {
  const auto job = store_.get_job(id);
  if (!job) throw Error(ErrorCode::NotFound, "no job " + id);
  if (!is_terminal(job->state))
    throw Error(ErrorCode::NotReady, id + " is " + std::string(to_string(job->state)));
  if (job->state != JobState::Completed)
    throw Error(ErrorCode::NoResults, id + " is " + std::string(to_string(job->state)));
  const auto results = workspace_.read_results(id);
  if (!results) throw Error(ErrorCode::NoResults, "results for " + id + " are missing");
  ArchiveEntries entries(results->outputs.begin(), results->outputs.end());
  return write_tar(entries);
}

JobState JobManager::cancel(const JobId& id) {
  auto job = store_.get_job(id);
  if (!job) throw Error(ErrorCode::NotFound, "no job " + id);
  if (is_terminal(job->state)) return job->state;

  if (job->state == JobState::Running) {
    auto hook = abort_hooks_.find(job->backend);
    if (hook != abort_hooks_.end() && hook->second) {
      try {
        hook->second(*job);
      } catch (const std::exception&) {
        // Best effort: the job is cancelled regardless.
      }
    }
  }

  const Timestamp now = clock_.now();
  return store_.transact(Actor::JobManager, "cancel " + id, now, [&](Transaction& tx) {
    JobRecord& j = tx.job(id);
    if (is_terminal(j.state)) return j.state;
    j.state = transition(j.state, JobEvent::Cancel);
    j.finished_at = now;
    if (j.backend == Backend::Cloud && j.assigned_vm) {
      if (const VmRecord* v = tx.find_vm(*j.assigned_vm); v && v->state == VmState::Busy)
        release_vm(tx.vm(*j.assigned_vm), now);
    }
    return j.state;
  });
}

nlohmann::json JobManager::list_jobs(std::optional<JobState> state,
                                     std::optional<Backend> backend) const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& job : store_.list_jobs(state, backend)) out.push_back(status_document(job));
  return out;
}

nlohmann::json JobManager::list_vms() const {
  nlohmann::json out = nlohmann::json::array();
  for (const auto& vm : store_.vm_list()) out.push_back(public_view(vm));
  return out;
}

CostLedger JobManager::accounting() const {
  return build_ledger(store_.snapshot(), clock_.now(), config_.billing_period);
}

}  // namespace burstq
