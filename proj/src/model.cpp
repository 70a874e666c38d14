#include "burstq/model.hpp"

#include <algorithm>
#include <cctype>
#include <cmath>

#include "burstq/error.hpp"

namespace burstq {
namespace {

bool iequals(std::string_view a, std::string_view b) {
  return a.size() == b.size() &&
         std::equal(a.begin(), a.end(), b.begin(), [](char x, char y) {
           return std::tolower(static_cast<unsigned char>(x)) ==
                  std::tolower(static_cast<unsigned char>(y));
         });
}

template <typename Enum, std::size_t N>
std::optional<Enum> parse_enum(std::string_view s, const Enum (&values)[N]) {
  for (Enum v : values) {
    if (iequals(s, to_string(v))) return v;
  }
  return std::nullopt;
}

}  // namespace

std::string_view to_string(JobKind v) {
  switch (v) {
    case JobKind::Sleep: return "sleep";
    case JobKind::RegressionScan: return "regression-scan";
  }
  return "?";
}

std::string_view to_string(Backend v) {
  switch (v) {
    case Backend::Local: return "Local";
    case Backend::Grid: return "Grid";
    case Backend::Cloud: return "Cloud";
  }
  return "?";
}

std::string_view to_string(JobState v) {
  switch (v) {
    case JobState::Queued: return "Queued";
    case JobState::Preparing: return "Preparing";
    case JobState::Running: return "Running";
    case JobState::Completed: return "Completed";
    case JobState::Failed: return "Failed";
    case JobState::Cancelled: return "Cancelled";
  }
  return "?";
}

std::string_view to_string(JobEvent v) {
  switch (v) {
    case JobEvent::PrepareRemote: return "PrepareRemote";
    case JobEvent::Dispatch: return "Dispatch";
    case JobEvent::ResultsReceived: return "ResultsReceived";
    case JobEvent::Fail: return "Fail";
    case JobEvent::Cancel: return "Cancel";
  }
  return "?";
}

std::string_view to_string(VmState v) {
  switch (v) {
    case VmState::Booting: return "Booting";
    case VmState::Idle: return "Idle";
    case VmState::Busy: return "Busy";
    case VmState::Lost: return "Lost";
    case VmState::Terminating: return "Terminating";
    case VmState::Terminated: return "Terminated";
  }
  return "?";
}

std::optional<JobKind> parse_job_kind(std::string_view s) {
  static constexpr JobKind kinds[] = {JobKind::Sleep, JobKind::RegressionScan};
  return parse_enum(s, kinds);
}

std::optional<Backend> parse_backend(std::string_view s) {
  static constexpr Backend backends[] = {Backend::Local, Backend::Grid, Backend::Cloud};
  return parse_enum(s, backends);
}

std::optional<JobState> parse_job_state(std::string_view s) {
  return parse_enum(s, kAllJobStates);
}

std::optional<VmState> parse_vm_state(std::string_view s) {
  static constexpr VmState states[] = {VmState::Booting,     VmState::Idle,
                                       VmState::Busy,        VmState::Lost,
                                       VmState::Terminating, VmState::Terminated};
  return parse_enum(s, states);
}

JobState transition(JobState state, JobEvent event) {
  using S = JobState;
  using E = JobEvent;
  switch (state) {
    case S::Queued:
      switch (event) {
        case E::PrepareRemote: return S::Preparing;
        case E::Dispatch: return S::Running;
        case E::Fail: return S::Failed;
        case E::Cancel: return S::Cancelled;
        default: break;
      }
      break;
    case S::Preparing:
      switch (event) {
        case E::Dispatch: return S::Running;
        case E::Fail: return S::Failed;
        case E::Cancel: return S::Cancelled;
        default: break;
      }
      break;
    case S::Running:
      switch (event) {
        case E::ResultsReceived: return S::Completed;
        case E::Fail: return S::Failed;
        case E::Cancel: return S::Cancelled;
        default: break;
      }
      break;
    case S::Completed:
    case S::Failed:
    case S::Cancelled:
      break;
  }
  throw Error(ErrorCode::IllegalTransition, "illegal transition: " + std::string(to_string(state)) +
                                                " on " + std::string(to_string(event)));
}

JobState requeue(JobState state) {
  if (state == JobState::Preparing || state == JobState::Running) return JobState::Queued;
  throw Error(ErrorCode::IllegalTransition,
              "cannot requeue a job in state " + std::string(to_string(state)));
}

double estimate_memory_gb(std::int64_t max_markers, const RoutingConfig& cfg) {
  const double ratio =
      static_cast<double>(max_markers) / static_cast<double>(cfg.big_memory_marker_threshold);
  return cfg.gb_at_threshold * ratio * ratio;
}

std::int64_t core_group_size(double est_memory_gb, const RoutingConfig& cfg) {
  const auto cores = static_cast<std::int64_t>(std::ceil(est_memory_gb / cfg.gb_per_core));
  return std::max<std::int64_t>(1, cores);
}

RoutingDecision route(const DatasetProfile& profile, std::optional<Backend> override_backend,
                      const RoutingConfig& cfg) {
  RoutingDecision d;
  const auto markers = profile.max_markers;
  d.est_memory_gb = estimate_memory_gb(markers, cfg);
  d.core_group = core_group_size(d.est_memory_gb, cfg);
  d.oversize = markers > cfg.max_marker_capacity;

  const Backend remote = cfg.cloud_enabled ? Backend::Cloud : Backend::Grid;
  if (override_backend) {
    d.backend = *override_backend;
  } else if (markers <= cfg.local_marker_threshold) {
    d.backend = Backend::Local;
  } else {
    d.backend = remote;
  }
  return d;
}

bool is_safe_file_name(std::string_view name) {
  if (name.empty() || name.size() > 128 || name == "." || name == "..") return false;
  return std::all_of(name.begin(), name.end(), [](char c) {
    return std::isalnum(static_cast<unsigned char>(c)) || c == '.' || c == '_' || c == '-';
  });
}

std::string_view display_color(JobState state, Backend backend) {
  switch (state) {
    case JobState::Queued:
    case JobState::Preparing:
      return "pink";
    case JobState::Running:
      return "orange";
    case JobState::Completed:
      switch (backend) {
        case Backend::Local: return "blue";
        case Backend::Grid: return "green";
        case Backend::Cloud: return "teal";
      }
      break;
    case JobState::Failed:
      return "red";
    case JobState::Cancelled:
      return "gray";
  }
  return "red";
}

}  // namespace burstq
