#pragma once

// Synthetic arrivals following the daily load profile: a piecewise-constant
// hourly rate lifted inside working hours and in seasonal months, with job
// sizes drawn from a local/remote marker mixture.

#include <cstdint>
#include <set>
#include <string_view>
#include <vector>

#include "burstq/model.hpp"

namespace burstq {

struct WorkloadProfile {
  double base_jobs_per_day = 60.0;
  double remote_fraction = 40.0 / 60.0;
  double working_hours_multiplier = 1.5;
  int working_hours_start = 9;  // UTC, inclusive
  int working_hours_end = 17;   // UTC, exclusive
  double seasonal_multiplier = 2.0;
  std::set<unsigned> seasonal_months = {7, 11};

  // Marker mixture: local share uniform on [1, local_max_markers], remote
  // share log-uniform on [remote_min_markers, remote_max_markers].
  std::int64_t local_max_markers = 100;
  std::int64_t remote_min_markers = 101;
  std::int64_t remote_max_markers = 3000;
  std::int64_t sample_size = 200;

  // Synthetic run time: log-normal around the median, clamped.
  Duration duration_median = std::chrono::minutes(10);
  double duration_sigma = 1.0;
  Duration duration_min = std::chrono::seconds(30);
  Duration duration_max = std::chrono::hours(24);

  bool valid() const;
};

struct Arrival {
  Timestamp at{};
  JobSpec spec;
};

/// Applies one `workload.*` key (without the prefix). Throws ConfigError.
void apply_workload_entry(WorkloadProfile& p, std::string_view key, std::string_view value);

/// Expected daily arrivals on the date containing `t`.
double daily_total(const WorkloadProfile& p, Timestamp t);

/// Arrival rate (jobs per hour) in effect at `t`. Integrates to daily_total
/// over each UTC day.
double hourly_rate(const WorkloadProfile& p, Timestamp t);

/// Deterministic in (profile, start, horizon, seed). Specs are sleep jobs
/// carrying duration_ms and a declared marker count.
std::vector<Arrival> generate_workload(const WorkloadProfile& p, Timestamp start, Duration horizon,
                                       std::uint64_t seed);

/// 2025-01-06T00:00:00Z, a Monday outside the seasonal months.
Timestamp default_sim_epoch();

}  // namespace burstq
