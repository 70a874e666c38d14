#include "burstq/workload.hpp"

#include <algorithm>
#include <cmath>
#include <random>
#include <sstream>
#include <string>

#include "burstq/error.hpp"

namespace burstq {

namespace {

int hour_of_day(Timestamp t) {
  const auto day = std::chrono::floor<std::chrono::days>(t);
  return static_cast<int>(std::chrono::duration_cast<std::chrono::hours>(t - day).count());
}

double real_value(std::string_view key, std::string_view v) {
  try {
    std::size_t used = 0;
    const std::string s(v);
    const double d = std::stod(s, &used);
    if (used == s.size()) return d;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::ConfigError, "bad value for workload." + std::string(key));
}

}  // namespace

bool WorkloadProfile::valid() const {
  return base_jobs_per_day >= 0 && remote_fraction >= 0 && remote_fraction <= 1 &&
         working_hours_multiplier >= 1 && seasonal_multiplier >= 1 && working_hours_start >= 0 &&
         working_hours_start <= working_hours_end && working_hours_end <= 24 &&
         local_max_markers >= 1 && remote_min_markers >= 1 &&
         remote_min_markers <= remote_max_markers && duration_min <= duration_max &&
         duration_median.count() > 0 && sample_size >= 1;
}

void apply_workload_entry(WorkloadProfile& p, std::string_view key, std::string_view value) {
  auto num = [&] { return real_value(key, value); };
  auto secs = [&] { return seconds(num()); };
  if (key == "base_jobs_per_day") p.base_jobs_per_day = num();
  else if (key == "remote_fraction") p.remote_fraction = num();
  else if (key == "working_hours_multiplier") p.working_hours_multiplier = num();
  else if (key == "working_hours_start") p.working_hours_start = static_cast<int>(num());
  else if (key == "working_hours_end") p.working_hours_end = static_cast<int>(num());
  else if (key == "seasonal_multiplier") p.seasonal_multiplier = num();
  else if (key == "seasonal_months") {
    p.seasonal_months.clear();
    std::stringstream ss{std::string(value)};
    std::string item;
    while (std::getline(ss, item, ',')) {
      if (item.empty()) continue;
      const double m = real_value(key, item);
      if (m < 1 || m > 12) throw Error(ErrorCode::ConfigError, "seasonal month out of range");
      p.seasonal_months.insert(static_cast<unsigned>(m));
    }
  } else if (key == "local_max_markers") p.local_max_markers = static_cast<std::int64_t>(num());
  else if (key == "remote_min_markers") p.remote_min_markers = static_cast<std::int64_t>(num());
  else if (key == "remote_max_markers") p.remote_max_markers = static_cast<std::int64_t>(num());
  else if (key == "sample_size") p.sample_size = static_cast<std::int64_t>(num());
  else if (key == "duration_median_s") p.duration_median = secs();
  else if (key == "duration_sigma") p.duration_sigma = num();
  else if (key == "duration_min_s") p.duration_min = secs();
  else if (key == "duration_max_s") p.duration_max = secs();
  else throw Error(ErrorCode::ConfigError, "unknown workload key " + std::string(key));
}

double daily_total(const WorkloadProfile& p, Timestamp t) {
  const std::chrono::year_month_day ymd{std::chrono::floor<std::chrono::days>(t)};
  const bool seasonal = p.seasonal_months.count(static_cast<unsigned>(ymd.month())) > 0;
  return p.base_jobs_per_day * (seasonal ? p.seasonal_multiplier : 1.0);
}

double hourly_rate(const WorkloadProfile& p, Timestamp t) {
  const int in_hours = p.working_hours_end - p.working_hours_start;
  const double weight_sum = (24 - in_hours) + p.working_hours_multiplier * in_hours;
  const int h = hour_of_day(t);
  const bool inside = h >= p.working_hours_start && h < p.working_hours_end;
  return daily_total(p, t) * (inside ? p.working_hours_multiplier : 1.0) / weight_sum;
}

std::vector<Arrival> generate_workload(const WorkloadProfile& p, Timestamp start, Duration horizon,
                                       std::uint64_t seed) {
  if (!p.valid()) throw Error(ErrorCode::ConfigError, "invalid workload profile");
  std::vector<Arrival> out;
  if (horizon.count() <= 0) return out;

  std::mt19937_64 rng(seed);
  std::uniform_real_distribution<double> unit(0.0, 1.0);
  std::normal_distribution<double> normal(0.0, 1.0);
  const Timestamp end = start + horizon;

  Timestamp seg = start;
  while (seg < end) {
    const auto hour_start = std::chrono::floor<std::chrono::hours>(seg);
    const Timestamp seg_end = std::min<Timestamp>(hour_start + std::chrono::hours(1), end);
    const double hours = to_seconds(seg_end - seg) / 3600.0;
    std::poisson_distribution<std::int64_t> count(hourly_rate(p, seg) * hours);
    const std::int64_t n = hours > 0 ? count(rng) : 0;
    std::vector<Timestamp> times;
    for (std::int64_t i = 0; i < n; ++i) {
      const auto offset = static_cast<std::int64_t>(unit(rng) * static_cast<double>((seg_end - seg).count()));
      times.push_back(seg + Duration{offset});
    }
    std::sort(times.begin(), times.end());
    for (const Timestamp at : times) {
      Arrival a;
      a.at = at;
      std::int64_t markers;
      if (unit(rng) < p.remote_fraction) {
        const double lo = std::log(static_cast<double>(p.remote_min_markers));
        const double hi = std::log(static_cast<double>(p.remote_max_markers));
        markers = static_cast<std::int64_t>(std::floor(std::exp(lo + unit(rng) * (hi - lo))));
        markers = std::clamp(markers, p.remote_min_markers, p.remote_max_markers);
      } else {
        markers = 1 + static_cast<std::int64_t>(unit(rng) * static_cast<double>(p.local_max_markers));
        markers = std::min(markers, p.local_max_markers);
      }
      const double median_ms = static_cast<double>(p.duration_median.count());
      auto ms = static_cast<std::int64_t>(median_ms * std::exp(p.duration_sigma * normal(rng)));
      ms = std::clamp(ms, p.duration_min.count(), p.duration_max.count());
      a.spec.kind = JobKind::Sleep;
      a.spec.params["duration_ms"] = std::to_string(ms);
      a.spec.profile.max_markers = markers;
      a.spec.profile.sample_size = p.sample_size;
      a.spec.owner = "synthetic";
      out.push_back(std::move(a));
    }
    seg = seg_end;
  }
  return out;
}

Timestamp default_sim_epoch() {
  using namespace std::chrono;
  return Timestamp{sys_days{year{2025} / January / 6}.time_since_epoch()};
}

}  // namespace burstq
