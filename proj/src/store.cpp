#include "burstq/store.hpp"

#include <fcntl.h>
#include <sys/stat.h>
#include <unistd.h>

#include <algorithm>
#include <cerrno>
#include <cstring>
#include <fstream>
#include <sstream>

#include "burstq/codec.hpp"
#include "burstq/error.hpp"

namespace burstq {
namespace {

using nlohmann::json;

constexpr int kFormatVersion = 1;
constexpr const char* kJournalName = "journal.log";
constexpr const char* kSnapshotName = "snapshot";

std::string journal_header() {
  return json{{"format", "burstq-journal"}, {"version", kFormatVersion}}.dump();
}

[[noreturn]] void storage_failure(const std::string& what) {
  throw Error(ErrorCode::StorageFailure, what);
}

std::string errno_text() { return std::strerror(errno); }

struct JournalEntry {
  AuditEntry audit;
  std::vector<JobRecord> jobs;
  std::vector<VmRecord> vms;
};

JournalEntry parse_entry(const json& j) {
  JournalEntry e;
  e.audit.revision = j.at("rev").get<std::int64_t>();
  auto actor = parse_actor(j.at("actor").get<std::string>());
  if (!actor) storage_failure("journal: unknown actor");
  e.audit.actor = *actor;
  e.audit.description = j.value("desc", std::string{});
  e.audit.timestamp = from_millis(j.at("ts").get<std::int64_t>());
  for (const auto& r : j.value("jobs", json::array())) e.jobs.push_back(r.get<JobRecord>());
  for (const auto& r : j.value("vms", json::array())) e.vms.push_back(r.get<VmRecord>());
  return e;
}

/// Reads all well-formed entries. A torn final line (crash mid-append) is
/// reported through `good_bytes` so the caller can cut it off.
std::vector<JournalEntry> read_journal(const std::filesystem::path& path, std::uintmax_t* good_bytes) {
  std::vector<JournalEntry> out;
  std::ifstream in(path, std::ios::binary);
  if (!in) storage_failure("cannot open " + path.string());
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::size_t pos = 0;
  std::size_t good = 0;
  bool header_seen = false;
  while (pos < contents.size()) {
    const auto nl = contents.find('\n', pos);
    if (nl == std::string::npos) break;  // torn tail
    const std::string line = contents.substr(pos, nl - pos);
    json j;
    try {
      j = json::parse(line);
    } catch (const json::parse_error&) {
      if (contents.find('\n', nl + 1) == std::string::npos) break;
      storage_failure("journal corrupt at byte " + std::to_string(pos));
    }
    if (!header_seen) {
      if (j.value("format", "") != "burstq-journal") storage_failure("journal: bad header");
      if (j.value("version", 0) != kFormatVersion) storage_failure("journal: unsupported version");
      header_seen = true;
    } else {
      out.push_back(parse_entry(j));
    }
    pos = nl + 1;
    good = pos;
  }
  if (good_bytes) *good_bytes = good;
  return out;
}

void apply_entry(StoreSnapshot& s, const JournalEntry& e) {
  for (const auto& j : e.jobs) s.jobs[j.id] = j;
  for (const auto& v : e.vms) s.vms[v.id] = v;
  s.revision = e.audit.revision;
}

void write_all(int fd, const std::string& data) {
  std::size_t off = 0;
  while (off < data.size()) {
    const auto n = ::write(fd, data.data() + off, data.size() - off);
    if (n < 0) {
      if (errno == EINTR) continue;
      storage_failure("write: " + errno_text());
    }
    off += static_cast<std::size_t>(n);
  }
}

}  // namespace

std::string_view to_string(Actor a) {
  switch (a) {
    case Actor::JobManager: return "JobManager";
    case Actor::QueueManager: return "QueueManager";
    case Actor::VmManager: return "VmManager";
    case Actor::Scheduler: return "Scheduler";
    case Actor::Recovery: return "Recovery";
  }
  return "?";
}

std::optional<Actor> parse_actor(std::string_view s) {
  for (Actor a : {Actor::JobManager, Actor::QueueManager, Actor::VmManager, Actor::Scheduler,
                  Actor::Recovery}) {
    if (s == to_string(a)) return a;
  }
  return std::nullopt;
}

nlohmann::json StoreSnapshot::to_json() const {
  json j{{"format", "burstq-snapshot"}, {"version", kFormatVersion}, {"revision", revision}};
  j["jobs"] = json::array();
  for (const auto& [id, r] : jobs) j["jobs"].push_back(r);
  j["vms"] = json::array();
  for (const auto& [id, r] : vms) j["vms"].push_back(r);
  return j;
}

// ---------------------------------------------------------------------------
// Transaction

const JobRecord* Transaction::find_job(const JobId& id) const {
  if (auto it = staged_jobs_.find(id); it != staged_jobs_.end()) return &it->second;
  if (auto it = base_.jobs.find(id); it != base_.jobs.end()) return &it->second;
  return nullptr;
}

const VmRecord* Transaction::find_vm(const VmId& id) const {
  if (auto it = staged_vms_.find(id); it != staged_vms_.end()) return &it->second;
  if (auto it = base_.vms.find(id); it != base_.vms.end()) return &it->second;
  return nullptr;
}

JobRecord& Transaction::job(const JobId& id) {
  if (auto it = staged_jobs_.find(id); it != staged_jobs_.end()) return it->second;
  auto it = base_.jobs.find(id);
  if (it == base_.jobs.end()) throw Error(ErrorCode::NotFound, "no such job: " + id);
  return staged_jobs_.emplace(id, it->second).first->second;
}

VmRecord& Transaction::vm(const VmId& id) {
  if (auto it = staged_vms_.find(id); it != staged_vms_.end()) return it->second;
  auto it = base_.vms.find(id);
  if (it == base_.vms.end()) throw Error(ErrorCode::NotFound, "no such vm: " + id);
  return staged_vms_.emplace(id, it->second).first->second;
}

void Transaction::prune_unchanged() {
  std::erase_if(staged_jobs_, [&](const auto& kv) {
    auto it = base_.jobs.find(kv.first);
    return it != base_.jobs.end() && it->second == kv.second;
  });
  std::erase_if(staged_vms_, [&](const auto& kv) {
    auto it = base_.vms.find(kv.first);
    return it != base_.vms.end() && it->second == kv.second;
  });
}

void Transaction::put_job(JobRecord r) {
  auto id = r.id;
  staged_jobs_.insert_or_assign(std::move(id), std::move(r));
}

void Transaction::put_vm(VmRecord r) {
  auto id = r.id;
  staged_vms_.insert_or_assign(std::move(id), std::move(r));
}

std::vector<JobRecord> Transaction::jobs() const {
  std::map<JobId, JobRecord> merged = base_.jobs;
  for (const auto& [id, r] : staged_jobs_) merged[id] = r;
  std::vector<JobRecord> out;
  out.reserve(merged.size());
  for (auto& [id, r] : merged) out.push_back(std::move(r));
  std::sort(out.begin(), out.end(),
            [](const JobRecord& a, const JobRecord& b) { return a.seq < b.seq; });
  return out;
}

std::vector<VmRecord> Transaction::vms() const {
  std::map<VmId, VmRecord> merged = base_.vms;
  for (const auto& [id, r] : staged_vms_) merged[id] = r;
  std::vector<VmRecord> out;
  for (auto& [id, r] : merged) out.push_back(std::move(r));
  return out;
}

JobId Transaction::new_job_id() {
  char buf[32];
  std::snprintf(buf, sizeof buf, "job-%08lld", static_cast<long long>(next_seq_));
  ++next_seq_;
  return buf;
}

VmId Transaction::new_vm_id() {
  char buf[32];
  std::snprintf(buf, sizeof buf, "vm-%05lld", static_cast<long long>(next_vm_));
  ++next_vm_;
  return buf;
}

// ---------------------------------------------------------------------------
// Store

Store::Store(StoreOptions options) : options_(std::move(options)) { load(); }

Store::~Store() {
  if (journal_fd_ >= 0) ::close(journal_fd_);
}

void Store::load() {
  if (options_.data_dir.empty()) return;
  std::error_code ec;
  std::filesystem::create_directories(options_.data_dir, ec);
  if (ec) storage_failure("cannot create " + options_.data_dir.string() + ": " + ec.message());

  const auto snap_path = options_.data_dir / kSnapshotName;
  const auto journal_path = options_.data_dir / kJournalName;

  if (std::filesystem::exists(snap_path)) {
    std::ifstream in(snap_path);
    json j;
    try {
      j = json::parse(in);
    } catch (const json::parse_error& e) {
      storage_failure(std::string("snapshot unreadable: ") + e.what());
    }
    if (j.value("format", "") != "burstq-snapshot" || j.value("version", 0) != kFormatVersion)
      storage_failure("snapshot: bad header");
    state_.revision = j.at("revision").get<std::int64_t>();
    for (const auto& r : j.at("jobs")) {
      auto rec = r.get<JobRecord>();
      state_.jobs[rec.id] = rec;
    }
    for (const auto& r : j.at("vms")) {
      auto rec = r.get<VmRecord>();
      state_.vms[rec.id] = rec;
    }
  }

  if (std::filesystem::exists(journal_path)) {
    std::uintmax_t good = 0;
    auto entries = read_journal(journal_path, &good);
    if (good < std::filesystem::file_size(journal_path)) {
      std::filesystem::resize_file(journal_path, good);
    }
    std::int64_t prev = 0;
    for (const auto& e : entries) {
      if (e.audit.revision != prev + 1) storage_failure("journal: revision gap");
      prev = e.audit.revision;
      audit_.push_back(e.audit);
      if (e.audit.revision > state_.revision) apply_entry(state_, e);
    }
    if (good == 0) {
      // Header itself was torn.
      std::ofstream out(journal_path, std::ios::trunc | std::ios::binary);
      out << journal_header() << '\n';
    }
  } else {
    std::ofstream out(journal_path, std::ios::binary);
    out << journal_header() << '\n';
    if (!out) storage_failure("cannot create journal");
  }

  journal_fd_ = ::open(journal_path.c_str(), O_WRONLY | O_APPEND | O_CLOEXEC);
  if (journal_fd_ < 0) storage_failure("open journal: " + errno_text());

  for (const auto& [id, r] : state_.jobs) {
    order_.push_back(id);
    next_seq_ = std::max(next_seq_, r.seq + 1);
  }
  std::sort(order_.begin(), order_.end(), [this](const JobId& a, const JobId& b) {
    return state_.jobs.at(a).seq < state_.jobs.at(b).seq;
  });
}

void Store::append_line_locked(const std::string& line) {
  if (journal_fd_ < 0) return;
  const off_t before = ::lseek(journal_fd_, 0, SEEK_END);
  try {
    write_all(journal_fd_, line);
    if (options_.sync_writes && ::fdatasync(journal_fd_) != 0)
      storage_failure("fdatasync: " + errno_text());
  } catch (...) {
    if (before >= 0 && ::ftruncate(journal_fd_, before) != 0) {
      // Nothing more can be done; load() discards a torn tail.
    }
    throw;
  }
}

void Store::commit_locked(Actor actor, std::string description, Timestamp now, Transaction& tx) {
  if (write_fault_) storage_failure("simulated write failure (disk full)");

  const std::int64_t rev = state_.revision + 1;
  json line{{"rev", rev}, {"actor", to_string(actor)}, {"desc", description}, {"ts", to_millis(now)}};
  line["jobs"] = json::array();
  for (const auto& [id, r] : tx.staged_jobs_) line["jobs"].push_back(r);
  line["vms"] = json::array();
  for (const auto& [id, r] : tx.staged_vms_) line["vms"].push_back(r);
  append_line_locked(line.dump() + "\n");

  for (auto& [id, r] : tx.staged_jobs_) {
    if (!state_.jobs.contains(id)) order_.push_back(id);
    next_seq_ = std::max(next_seq_, r.seq + 1);
    state_.jobs[id] = std::move(r);
  }
  for (auto& [id, r] : tx.staged_vms_) state_.vms[id] = std::move(r);
  state_.revision = rev;
  audit_.push_back(AuditEntry{rev, actor, std::move(description), now});

  if (options_.snapshot_every > 0 && ++commits_since_snapshot_ >= options_.snapshot_every) {
    try {
      write_snapshot_locked();
    } catch (const Error&) {
      // The journal alone is authoritative; a failed compaction is retried later.
    }
  }
}

void Store::write_snapshot_locked() {
  commits_since_snapshot_ = 0;
  if (options_.data_dir.empty()) return;
  const auto tmp = options_.data_dir / "snapshot.tmp";
  const std::string body = state_.to_json().dump() + "\n";
  const int fd = ::open(tmp.c_str(), O_WRONLY | O_CREAT | O_TRUNC | O_CLOEXEC, 0644);
  if (fd < 0) storage_failure("open snapshot: " + errno_text());
  try {
    write_all(fd, body);
    if (options_.sync_writes && ::fsync(fd) != 0) storage_failure("fsync: " + errno_text());
  } catch (...) {
    ::close(fd);
    throw;
  }
  ::close(fd);
  std::error_code ec;
  std::filesystem::rename(tmp, options_.data_dir / kSnapshotName, ec);
  if (ec) storage_failure("rename snapshot: " + ec.message());
}

void Store::compact() {
  std::lock_guard lock(mu_);
  write_snapshot_locked();
}

void Store::set_write_fault(bool on) {
  std::lock_guard lock(mu_);
  write_fault_ = on;
}

void Store::note(Actor actor, std::string description, Timestamp now) {
  std::lock_guard lock(mu_);
  Transaction tx(state_, next_seq_, static_cast<std::int64_t>(state_.vms.size()) + 1);
  commit_locked(actor, std::move(description), now, tx);
}

JobId Store::enqueue(JobRecord record, Timestamp now, Actor actor) {
  if (record.state != JobState::Queued)
    throw Error(ErrorCode::IllegalTransition, "enqueue requires a Queued record");
  return transact(actor, "enqueue", now, [&](Transaction& tx) {
    if (record.id.empty()) {
      record.seq = tx.next_seq();
      record.id = tx.new_job_id();
    } else if (tx.find_job(record.id)) {
      throw Error(ErrorCode::ValidationError, "duplicate job id " + record.id);
    } else if (record.seq == 0) {
      record.seq = tx.next_seq();
    }
    if (!record.queued_at) record.queued_at = record.submitted_at;
    const auto id = record.id;
    tx.put_job(std::move(record));
    return id;
  });
}

std::optional<JobRecord> Store::next_queued(std::optional<Backend> backend_filter) const {
  std::lock_guard lock(mu_);
  for (const auto& id : order_) {
    const auto& r = state_.jobs.at(id);
    if (r.state != JobState::Queued) continue;
    if (backend_filter && r.backend != *backend_filter) continue;
    return r;
  }
  return std::nullopt;
}

JobRecord Store::update_job(const JobId& id, Actor actor, std::string description, Timestamp now,
                            const std::function<void(JobRecord&)>& mutation) {
  return transact(actor, std::move(description), now, [&](Transaction& tx) {
    JobRecord& r = tx.job(id);
    mutation(r);
    return r;
  });
}

std::optional<JobRecord> Store::get_job(const JobId& id) const {
  std::lock_guard lock(mu_);
  auto it = state_.jobs.find(id);
  if (it == state_.jobs.end()) return std::nullopt;
  return it->second;
}

std::vector<JobRecord> Store::list_jobs(std::optional<JobState> state,
                                        std::optional<Backend> backend) const {
  std::lock_guard lock(mu_);
  std::vector<JobRecord> out;
  for (const auto& id : order_) {
    const auto& r = state_.jobs.at(id);
    if (state && r.state != *state) continue;
    if (backend && r.backend != *backend) continue;
    out.push_back(r);
  }
  return out;
}

void Store::vm_upsert(const VmRecord& record, Actor actor, Timestamp now) {
  transact(actor, "vm upsert " + record.id, now, [&](Transaction& tx) { tx.put_vm(record); });
}

VmRecord Store::update_vm(const VmId& id, Actor actor, std::string description, Timestamp now,
                          const std::function<void(VmRecord&)>& mutation) {
  return transact(actor, std::move(description), now, [&](Transaction& tx) {
    VmRecord& r = tx.vm(id);
    mutation(r);
    return r;
  });
}

std::optional<VmRecord> Store::get_vm(const VmId& id) const {
  std::lock_guard lock(mu_);
  auto it = state_.vms.find(id);
  if (it == state_.vms.end()) return std::nullopt;
  return it->second;
}

std::vector<VmRecord> Store::vm_list(std::optional<VmState> state_filter) const {
  std::lock_guard lock(mu_);
  std::vector<VmRecord> out;
  for (const auto& [id, r] : state_.vms) {
    if (state_filter && r.state != *state_filter) continue;
    out.push_back(r);
  }
  return out;
}

RecoveryReport Store::recover(const std::function<bool(const VmRecord&)>& vm_alive,
                              const std::function<bool(const JobRecord&)>& job_alive,
                              Timestamp now) {
  RecoveryReport report;
  transact(Actor::Recovery, "recover", now, [&](Transaction& tx) {
    std::map<VmId, bool> alive;
    for (auto vm : tx.vms()) {
      if (vm.state == VmState::Terminated) continue;
      const bool ok = vm_alive(vm);
      alive[vm.id] = ok;
      if (!ok) {
        vm.state = VmState::Terminated;
        vm.terminated_at = now;
        vm.note = "agent not found at recovery";
        tx.put_vm(std::move(vm));
        ++report.vms_marked_lost;
      }
    }
    for (auto job : tx.jobs()) {
      if (job.state == JobState::Preparing) {
        job.state = requeue(job.state);
        job.queued_at = now;
        job.remote_id.reset();
        tx.put_job(std::move(job));
        ++report.requeued;
        continue;
      }
      if (job.state != JobState::Running) continue;
      bool survived = false;
      if (job.backend == Backend::Cloud && job.assigned_vm) {
        auto it = alive.find(*job.assigned_vm);
        survived = it != alive.end() && it->second && job_alive(job);
      } else {
        survived = job_alive(job);
      }
      if (survived) continue;
      job.attempt_count += 1;
      if (job.attempt_count <= options_.max_attempts) {
        job.state = requeue(job.state);
        job.queued_at = now;
        job.started_at.reset();
        job.assigned_vm.reset();
        job.remote_id.reset();
        ++report.requeued;
      } else {
        job.state = transition(job.state, JobEvent::Fail);
        job.finished_at = now;
        job.error = "executor lost across restart; attempts exhausted";
        ++report.failed;
      }
      tx.put_job(std::move(job));
    }
  });
  return report;
}

StoreSnapshot Store::snapshot() const {
  std::lock_guard lock(mu_);
  return state_;
}

std::vector<AuditEntry> Store::audit() const {
  std::lock_guard lock(mu_);
  return audit_;
}

std::int64_t Store::revision() const {
  std::lock_guard lock(mu_);
  return state_.revision;
}

StoreSnapshot Store::replay_journal(const std::filesystem::path& data_dir) {
  StoreSnapshot s;
  for (const auto& e : read_journal(data_dir / kJournalName, nullptr)) apply_entry(s, e);
  return s;
}

}  // namespace burstq
