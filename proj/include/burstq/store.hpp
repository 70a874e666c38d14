#pragma once

// The job and VM database. Every read and write goes through one mutex; every
// committed mutation is one journal line carrying the post-images of the
// records it touched, fsync'd before it becomes visible in memory.
//
// On-disk layout (see docs/storage.md):
//   <data_dir>/journal.log  header line + one JSON object per revision
//   <data_dir>/snapshot     compacted state at some revision (atomic rename)

#include <cstdint>
#include <filesystem>
#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <type_traits>
#include <vector>

#include <json.hpp>

#include "burstq/model.hpp"

namespace burstq {

enum class Actor { JobManager, QueueManager, VmManager, Scheduler, Recovery };

std::string_view to_string(Actor a);
std::optional<Actor> parse_actor(std::string_view s);

struct AuditEntry {
  std::int64_t revision = 0;
  Actor actor = Actor::JobManager;
  std::string description;
  Timestamp timestamp{};
};

struct StoreSnapshot {
  std::map<JobId, JobRecord> jobs;
  std::map<VmId, VmRecord> vms;
  std::int64_t revision = 0;

  /// Canonical encoding; two snapshots are equal iff their dumps are equal.
  nlohmann::json to_json() const;
};

struct RecoveryReport {
  std::int64_t requeued = 0;
  std::int64_t failed = 0;
  std::int64_t vms_marked_lost = 0;

  bool operator==(const RecoveryReport&) const = default;
};

struct StoreOptions {
  std::filesystem::path data_dir;  // empty: in-memory only
  bool sync_writes = true;
  std::int64_t snapshot_every = 500;  // commits between compactions; 0 disables
  std::int64_t max_attempts = 2;
};

class Store;

/// Staged view handed to mutation callbacks. Reads see committed state
/// overlaid with this transaction's own writes.
class Transaction {
 public:
  const JobRecord* find_job(const JobId& id) const;
  const VmRecord* find_vm(const VmId& id) const;

  /// Mutable staged copy; throws NotFound.
  JobRecord& job(const JobId& id);
  VmRecord& vm(const VmId& id);

  void put_job(JobRecord r);
  void put_vm(VmRecord r);

  /// Jobs in submission order / VMs in id order, including staged writes.
  std::vector<JobRecord> jobs() const;
  std::vector<VmRecord> vms() const;

  JobId new_job_id();
  std::int64_t next_seq() const { return next_seq_; }
  VmId new_vm_id();

  bool dirty() const { return !staged_jobs_.empty() || !staged_vms_.empty(); }

 private:
  friend class Store;
  /// Drops staged copies identical to the committed record.
  void prune_unchanged();
  explicit Transaction(const StoreSnapshot& base, std::int64_t next_seq, std::int64_t next_vm)
      : base_(base), next_seq_(next_seq), next_vm_(next_vm) {}

  const StoreSnapshot& base_;
  std::map<JobId, JobRecord> staged_jobs_;
  std::map<VmId, VmRecord> staged_vms_;
  std::int64_t next_seq_;
  std::int64_t next_vm_;
};

class Store {
 public:
  explicit Store(StoreOptions options);
  ~Store();

  Store(const Store&) = delete;
  Store& operator=(const Store&) = delete;

  /// Runs `fn` against a staged view and commits whatever it staged as one
  /// revision. Exceptions from `fn` abort without side effects. A callback
  /// that stages nothing commits nothing.
  template <typename F>
  auto transact(Actor actor, std::string description, Timestamp now, F&& fn)
      -> std::invoke_result_t<F, Transaction&>;

  /// Commits an audit-only entry (no record changes).
  void note(Actor actor, std::string description, Timestamp now);

  // --- job queue -----------------------------------------------------------

  /// Commits a Queued job, assigning id and sequence if unset.
  JobId enqueue(JobRecord record, Timestamp now, Actor actor = Actor::JobManager);

  /// Oldest Queued job matching the filter, not removed.
  std::optional<JobRecord> next_queued(std::optional<Backend> backend_filter = {}) const;

  JobRecord update_job(const JobId& id, Actor actor, std::string description, Timestamp now,
                       const std::function<void(JobRecord&)>& mutation);

  std::optional<JobRecord> get_job(const JobId& id) const;
  std::vector<JobRecord> list_jobs(std::optional<JobState> state = {},
                                   std::optional<Backend> backend = {}) const;

  // --- VMs -----------------------------------------------------------------

  void vm_upsert(const VmRecord& record, Actor actor, Timestamp now);
  VmRecord update_vm(const VmId& id, Actor actor, std::string description, Timestamp now,
                     const std::function<void(VmRecord&)>& mutation);
  std::optional<VmRecord> get_vm(const VmId& id) const;
  std::vector<VmRecord> vm_list(std::optional<VmState> state_filter = {}) const;

  // --- recovery and introspection -----------------------------------------

  /// Start-of-service repair. `vm_alive` answers whether a VM's agent is
  /// still reachable; `job_alive` whether a Running job's executor survived.
  RecoveryReport recover(const std::function<bool(const VmRecord&)>& vm_alive,
                         const std::function<bool(const JobRecord&)>& job_alive, Timestamp now);

  StoreSnapshot snapshot() const;
  std::vector<AuditEntry> audit() const;
  std::int64_t revision() const;
  const StoreOptions& options() const { return options_; }

  /// Writes a compacted snapshot now.
  void compact();

  /// Test hook: while set, every commit fails with StorageFailure before
  /// touching the journal (simulated full disk).
  void set_write_fault(bool on);

  /// Rebuilds state by applying every journal entry of `data_dir` to an empty
  /// store, ignoring the snapshot.
  static StoreSnapshot replay_journal(const std::filesystem::path& data_dir);

 private:
  struct Staged {
    std::vector<JobRecord> jobs;
    std::vector<VmRecord> vms;
  };

  void load();
  void commit_locked(Actor actor, std::string description, Timestamp now, Transaction& tx);
  void append_line_locked(const std::string& line);
  void write_snapshot_locked();

  StoreOptions options_;
  mutable std::mutex mu_;
  StoreSnapshot state_;
  std::vector<AuditEntry> audit_;
  std::vector<JobId> order_;  // job ids in submission order
  std::int64_t next_seq_ = 1;
  std::int64_t commits_since_snapshot_ = 0;
  bool write_fault_ = false;
  int journal_fd_ = -1;
};

template <typename F>
auto Store::transact(Actor actor, std::string description, Timestamp now, F&& fn)
    -> std::invoke_result_t<F, Transaction&> {
  using R = std::invoke_result_t<F, Transaction&>;
  std::lock_guard lock(mu_);
  Transaction tx(state_, next_seq_, static_cast<std::int64_t>(state_.vms.size()) + 1);
  if constexpr (std::is_void_v<R>) {
    fn(tx);
    tx.prune_unchanged();
    if (tx.dirty()) commit_locked(actor, std::move(description), now, tx);
  } else {
    R result = fn(tx);
    tx.prune_unchanged();
    if (tx.dirty()) commit_locked(actor, std::move(description), now, tx);
    return result;
  }
}

}  // namespace burstq
