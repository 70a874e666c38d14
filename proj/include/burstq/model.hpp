#pragma once

// Domain vocabulary shared by every component: job and VM records, the job
// lifecycle state machine, and size-based routing between execution tiers.

#include <cstdint>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

#include "burstq/clock.hpp"

namespace burstq {

using JobId = std::string;
using VmId = std::string;

enum class JobKind { Sleep, RegressionScan };
enum class Backend { Local, Grid, Cloud };
enum class JobState { Queued, Preparing, Running, Completed, Failed, Cancelled };
enum class JobEvent { PrepareRemote, Dispatch, ResultsReceived, Fail, Cancel };
enum class VmState { Booting, Idle, Busy, Lost, Terminating, Terminated };

std::string_view to_string(JobKind v);
std::string_view to_string(Backend v);
std::string_view to_string(JobState v);
std::string_view to_string(JobEvent v);
std::string_view to_string(VmState v);

// Parsers accept the canonical spelling produced by to_string, case-insensitively.
std::optional<JobKind> parse_job_kind(std::string_view s);
std::optional<Backend> parse_backend(std::string_view s);
std::optional<JobState> parse_job_state(std::string_view s);
std::optional<VmState> parse_vm_state(std::string_view s);

inline constexpr JobState kAllJobStates[] = {JobState::Queued,    JobState::Preparing,
                                             JobState::Running,   JobState::Completed,
                                             JobState::Failed,    JobState::Cancelled};
inline constexpr JobEvent kAllJobEvents[] = {JobEvent::PrepareRemote, JobEvent::Dispatch,
                                             JobEvent::ResultsReceived, JobEvent::Fail,
                                             JobEvent::Cancel};

inline bool is_terminal(JobState s) {
  return s == JobState::Completed || s == JobState::Failed || s == JobState::Cancelled;
}

struct DatasetProfile {
  std::int64_t max_markers = 1;
  std::int64_t sample_size = 1;
  std::int64_t input_bytes = 0;

  bool valid() const { return max_markers >= 1 && sample_size >= 1 && input_bytes >= 0; }
  bool operator==(const DatasetProfile&) const = default;
};

struct InputFile {
  std::string name;
  std::string content;
  bool operator==(const InputFile&) const = default;
};

struct JobSpec {
  JobKind kind = JobKind::Sleep;
  std::map<std::string, std::string> params;
  // Names only; file bodies live in the job workspace once staged.
  std::vector<std::string> inputs;
  DatasetProfile profile;
  std::optional<Backend> backend_override;
  std::optional<JobId> derive_from;
  std::string owner;

  bool operator==(const JobSpec&) const = default;
};

struct JobRecord {
  JobId id;
  std::int64_t seq = 0;  // submission order
  JobSpec spec;
  JobState state = JobState::Queued;
  Backend backend = Backend::Local;
  std::optional<VmId> assigned_vm;
  std::optional<std::string> remote_id;  // grid handle while on the remote list
  std::string workspace;                 // staged-inputs key
  Timestamp submitted_at{};
  std::optional<Timestamp> queued_at;  // last (re)entry into Queued
  std::optional<Timestamp> started_at;
  std::optional<Timestamp> finished_at;
  std::optional<std::string> result_ref;
  std::optional<std::string> error;
  std::int64_t attempt_count = 0;
  double est_memory_gb = 0.0;
  std::int64_t core_group = 1;

  bool operator==(const JobRecord&) const = default;
};

struct VmRecord {
  VmId id;
  std::string provider_handle;
  std::string endpoint;
  VmState state = VmState::Booting;
  Timestamp launched_at{};
  Timestamp billing_anchor{};
  std::optional<Timestamp> idle_since;
  std::optional<Timestamp> busy_since;
  std::optional<Timestamp> terminated_at;
  std::int64_t busy_ms = 0;  // accumulated time spent holding jobs
  std::int64_t jobs_executed = 0;
  std::string token;  // push-back secret; never leaves the manager except in dispatch
  Timestamp token_issued_at{};
  double unit_price = 0.0;
  std::optional<std::string> note;

  bool operator==(const VmRecord&) const = default;
};

// ---------------------------------------------------------------------------
// Lifecycle

/// Successor of `state` under `event`; throws Error(IllegalTransition) for any
/// pair outside the legal table. Terminal states accept no event.
JobState transition(JobState state, JobEvent event);

/// Returns a job to the queue after an infrastructure failure (lost VM, crash
/// recovery, grid submission timeout). Legal only from Preparing or Running.
JobState requeue(JobState state);

// ---------------------------------------------------------------------------
// Routing

struct RoutingConfig {
  std::int64_t local_marker_threshold = 100;
  std::int64_t big_memory_marker_threshold = 1200;
  std::int64_t max_marker_capacity = 5000;
  double gb_per_core = 4.0;
  double gb_at_threshold = 4.0;
  bool cloud_enabled = true;

  bool valid() const {
    return local_marker_threshold < big_memory_marker_threshold &&
           big_memory_marker_threshold < max_marker_capacity && gb_per_core > 0;
  }
};

struct RoutingDecision {
  Backend backend = Backend::Local;
  double est_memory_gb = 0.0;
  std::int64_t core_group = 1;
  bool oversize = false;
};

/// Memory grows with the square of the largest per-chromosome marker count,
/// anchored so that `big_memory_marker_threshold` markers need `gb_at_threshold`.
double estimate_memory_gb(std::int64_t max_markers, const RoutingConfig& cfg);

std::int64_t core_group_size(double est_memory_gb, const RoutingConfig& cfg);

RoutingDecision route(const DatasetProfile& profile, std::optional<Backend> override_backend,
                      const RoutingConfig& cfg);

/// Input and output file names: [A-Za-z0-9._-]+, not "." or "..".
bool is_safe_file_name(std::string_view name);

/// Viewer legend colour for a job.
std::string_view display_color(JobState state, Backend backend);

}  // namespace burstq
