#pragma once

// The legacy tier: a capped local run pool, a remote-preparation pool whose
// slow submissions never block anything else, and a polling loop over a
// simulated grid.

#include <cstdint>
#include <map>
#include <mutex>
#include <optional>
#include <random>
#include <string>
#include <vector>

#include <json.hpp>

#include "burstq/executor.hpp"
#include "burstq/store.hpp"
#include "burstq/workspace.hpp"

namespace burstq {

struct GridLatencyModel {
  Duration small = std::chrono::seconds(1);
  Duration large = std::chrono::seconds(10);
  std::int64_t size_cutoff_bytes = 1024 * 1024;

  Duration latency_for(std::int64_t input_bytes) const {
    return input_bytes >= size_cutoff_bytes ? large : small;
  }
};

struct LocalSchedulerConfig {
  std::int64_t cores = 8;
  std::int64_t max_local_jobs = 1;
  std::int64_t prepare_pool_size = 0;  // 0: same as max_local_jobs
  Duration remote_poll_interval = std::chrono::seconds(30);
  GridLatencyModel latency;
  std::int64_t max_attempts = 2;

  /// max_local_jobs clamped into [1, cores-1].
  std::int64_t effective_local_jobs() const;
  std::int64_t effective_prepare_pool() const;
};

enum class GridStatus { Queued, Running, Finished, Cancelled, Failed };
std::string_view to_string(GridStatus s);

struct GridJobHandle {
  std::string remote_id;
  Timestamp submitted_at{};
  GridStatus status = GridStatus::Queued;
};

struct SimGridConfig {
  Duration queue_wait_min{0};
  Duration queue_wait_max{0};
  // Submissions in flight beyond this many time out (0: unlimited).
  std::int64_t max_concurrent_submissions = 0;
  std::uint64_t seed = 1;
};

/// In-process stand-in for a batch grid. Jobs wait in a remote queue, then
/// run the real kernel on the grid executor.
class SimGrid {
 public:
  SimGrid(Clock& clock, Executor& executor, std::filesystem::path work_root, SimGridConfig config);

  /// Bracket a slow submission; end_submission reports whether it timed out.
  std::uint64_t begin_submission();
  bool end_submission(std::uint64_t ticket);

  std::string submit(const JobRecord& job, const std::map<std::string, std::string>& inputs);
  GridJobHandle handle(const std::string& remote_id) const;
  std::optional<ResultBundle> download(const std::string& remote_id) const;
  void cancel(const std::string& remote_id);
  void forget(const std::string& remote_id);
  std::optional<Timestamp> finished_at(const std::string& remote_id) const;

  /// Test hook: the next `n` submissions time out.
  void fail_next_submissions(int n);

 private:
  struct Remote {
    GridJobHandle handle;
    Timestamp start_at{};
    std::optional<WorkId> work;
    std::optional<ResultBundle> result;
    std::optional<Timestamp> finished_at;
  };
  Clock& clock_;
  Executor& executor_;
  std::filesystem::path work_root_;
  SimGridConfig config_;
  mutable std::mutex mu_;
  std::mt19937_64 rng_;
  std::map<std::string, Remote> remotes_;
  std::map<std::uint64_t, bool> submissions_;  // ticket -> doomed
  std::uint64_t next_ticket_ = 1;
  std::int64_t next_remote_ = 1;
  int forced_timeouts_ = 0;
};

struct SchedulerAction {
  enum class Kind {
    LocalStart,
    LocalFinish,
    PrepareStart,
    RemoteSubmitted,
    SubmitTimeout,
    RemoteFinished,
    RemoteFailed,
    RemoteCancelled
  };
  Kind kind = Kind::LocalStart;
  Timestamp at{};
  JobId job;
  std::string detail;

  nlohmann::json to_json() const;
};

std::string_view to_string(SchedulerAction::Kind k);

class LocalGridScheduler {
 public:
  LocalGridScheduler(Store& store, Workspace& workspace, Clock& clock, Executor& local_pool,
                     Executor& prepare_pool, SimGrid& grid, LocalSchedulerConfig config);

  /// Admits queued Local jobs to the run pool and queued Grid jobs to the
  /// preparation pool, in submission order, while slots are free.
  std::vector<SchedulerAction> tick(Timestamp now);

  /// Refreshes every remote handle and finalizes terminal ones.
  std::vector<SchedulerAction> remote_poll_tick(Timestamp now);

  /// Best-effort stop of a Running job's executor (cancel hook).
  void abort(const JobRecord& job);

  /// Local execution intervals (start, end) recorded so far.
  std::vector<std::pair<Timestamp, Timestamp>> local_intervals() const;
  std::size_t peak_local_in_flight() const;
  std::vector<SchedulerAction> trace() const;
  const LocalSchedulerConfig& config() const { return config_; }

 private:
  void run_local(const JobRecord& job, Timestamp now);
  void prepare_and_submit_remote(const JobRecord& job, Timestamp now);
  void finish_prepare(const JobId& id, std::uint64_t ticket);
  void record(SchedulerAction a);

  Store& store_;
  Workspace& workspace_;
  Clock& clock_;
  Executor& local_pool_;
  Executor& prepare_pool_;
  SimGrid& grid_;
  LocalSchedulerConfig config_;

  mutable std::mutex mu_;
  std::mutex tick_mu_;
  std::mutex poll_mu_;
  std::map<JobId, WorkId> local_work_;
  std::map<JobId, Timestamp> local_started_;
  std::vector<std::pair<Timestamp, Timestamp>> local_intervals_;
  std::size_t peak_local_ = 0;
  std::vector<SchedulerAction> trace_;
};

}  // namespace burstq
