#include <gtest/gtest.h>

#include <chrono>
#include <fstream>

#include "burstq/config.hpp"
#include "burstq/error.hpp"
#include "burstq/simulator.hpp"
#include "burstq/workload.hpp"
#include "support.hpp"

using namespace burstq;
using namespace burstq::testing;
using std::chrono::hours;

namespace {

int utc_hour(Timestamp t) {
  const auto day = std::chrono::floor<std::chrono::days>(t);
  return static_cast<int>(std::chrono::duration_cast<hours>(t - day).count());
}

std::vector<Arrival> steady_cloud_jobs(int count, Duration gap, Duration length) {
  std::vector<Arrival> out;
  for (int i = 0; i < count; ++i) {
    Arrival a;
    a.at = default_sim_epoch() + gap * i;
    a.spec.kind = JobKind::Sleep;
    a.spec.params["duration_ms"] = std::to_string(length.count());
    a.spec.profile = DatasetProfile{500, 10, 0};
    a.spec.backend_override = Backend::Cloud;
    a.spec.owner = "steady";
    out.push_back(a);
  }
  return out;
}

}  // namespace

TEST(Workload, ZeroHorizonIsEmpty) {
  EXPECT_TRUE(generate_workload(WorkloadProfile{}, default_sim_epoch(), Duration{0}, 1).empty());
}

TEST(Workload, PureFunctionOfSeed) {
  WorkloadProfile p;
  const auto a = generate_workload(p, default_sim_epoch(), hours(72), 7);
  const auto b = generate_workload(p, default_sim_epoch(), hours(72), 7);
  const auto c = generate_workload(p, default_sim_epoch(), hours(72), 8);
  ASSERT_EQ(a.size(), b.size());
  for (std::size_t i = 0; i < a.size(); ++i) {
    EXPECT_EQ(a[i].at, b[i].at);
    EXPECT_EQ(a[i].spec, b[i].spec);
  }
  EXPECT_FALSE(a.size() == c.size() && std::equal(a.begin(), a.end(), c.begin(), [](auto& x, auto& y) {
    return x.at == y.at;
  }));
}

TEST(Workload, RateRatioIsExactlyOnePointFive) {
  WorkloadProfile p;
  const auto day = default_sim_epoch();
  EXPECT_DOUBLE_EQ(hourly_rate(p, day + hours(10)) / hourly_rate(p, day + hours(3)), 1.5);
}

TEST(Workload, DailyIntegralEqualsDailyTotal) {
  WorkloadProfile p;
  for (Timestamp day : {default_sim_epoch(), default_sim_epoch() + hours(24 * 200)}) {
    double integral = 0;
    for (int h = 0; h < 24; ++h) integral += hourly_rate(p, day + hours(h));
    EXPECT_NEAR(integral, daily_total(p, day), 1e-9);
  }
}

TEST(Workload, SeasonalMonthsDouble) {
  WorkloadProfile p;
  using namespace std::chrono;
  const Timestamp july = sys_days{year{2025} / July / 10};
  const Timestamp june = sys_days{year{2025} / June / 10};
  const Timestamp november = sys_days{year{2025} / November / 3};
  EXPECT_DOUBLE_EQ(daily_total(p, june), 60.0);
  EXPECT_DOUBLE_EQ(daily_total(p, july), 120.0);
  EXPECT_DOUBLE_EQ(daily_total(p, november), 120.0);
}

TEST(Workload, MixtureCalibration) {
  WorkloadProfile p;
  const auto schedule = generate_workload(p, default_sim_epoch(), hours(24 * 60), 3);
  std::int64_t local = 0;
  for (const auto& a : schedule) {
    EXPECT_GE(a.spec.profile.max_markers, 1);
    EXPECT_LE(a.spec.profile.max_markers, 3000);
    const auto ms = std::stoll(a.spec.params.at("duration_ms"));
    EXPECT_GE(ms, 30'000);
    EXPECT_LE(ms, 24LL * 3600 * 1000);
    local += a.spec.profile.max_markers <= 100;
  }
  const double share = static_cast<double>(local) / static_cast<double>(schedule.size());
  EXPECT_NEAR(share, 1.0 / 3.0, 0.05);
}

TEST(Workload, ProfileKeys) {
  WorkloadProfile p;
  apply_workload_entry(p, "base_jobs_per_day", "30");
  apply_workload_entry(p, "seasonal_months", "1,2");
  EXPECT_DOUBLE_EQ(p.base_jobs_per_day, 30.0);
  EXPECT_EQ(p.seasonal_months, (std::set<unsigned>{1, 2}));
  EXPECT_THROW(apply_workload_entry(p, "nonsense", "1"), Error);
}

TEST(Config, ParsesEveryDocumentedKeyFamily) {
  const auto cfg = parse_config(R"(
    # comment
    port = 9000
    lockdown = false
    scaling.max_vms = 6
    scaling.idle_grace_s = 30
    dispatch.poll_interval_s = 0.5
    routing.cloud_enabled = false
    local.max_local_jobs = 3
    grid.latency_large_s = 12
    sim.boot_delay_s = 2
    push.max_attempts = 4
    store.snapshot_every = 10
    max_attempts = 3
  )");
  EXPECT_EQ(cfg.port, 9000);
  EXPECT_FALSE(cfg.lockdown);
  EXPECT_EQ(cfg.scaling.max_vms, 6);
  EXPECT_EQ(cfg.scaling.idle_grace, seconds(30));
  EXPECT_EQ(cfg.dispatch.poll_interval, Duration{500});
  EXPECT_FALSE(cfg.routing.cloud_enabled);
  EXPECT_EQ(cfg.local.max_local_jobs, 3);
  EXPECT_EQ(cfg.local.latency.large, seconds(12));
  EXPECT_EQ(cfg.sim_cloud.boot_delay, seconds(2));
  EXPECT_EQ(cfg.push.max_attempts, 4);
  EXPECT_EQ(cfg.snapshot_every, 10);
  EXPECT_EQ(cfg.max_attempts, 3);
}

TEST(Config, UnknownKeyAndBadValuesRejected) {
  auto code = [](const std::string& text) {
    try {
      validate(parse_config(text));
    } catch (const Error& e) {
      return e.code();
    }
    return ErrorCode::Unavailable;
  };
  EXPECT_EQ(code("nope = 1"), ErrorCode::ConfigError);
  EXPECT_EQ(code("port = banana"), ErrorCode::ConfigError);
  EXPECT_EQ(code("scaling.min_vms = 5\nscaling.max_vms = 2"), ErrorCode::ConfigError);
  EXPECT_EQ(code("scaling.terminate_window_s = 4000"), ErrorCode::ConfigError);
}

TEST(Config, KeysAreDocumented) {
  std::ifstream in(std::string(BURSTQ_SOURCE_DIR) + "/docs/configuration.md");
  ASSERT_TRUE(in.good());
  const std::string doc((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
  for (const auto& key : config_keys()) EXPECT_NE(doc.find("`" + key + "`"), std::string::npos) << key;
}

TEST(Config, EnvFallback) {
  ::setenv("BURSTQ_CONFIG", "/tmp/from-env.conf", 1);
  EXPECT_EQ(resolve_config_path(std::nullopt), std::filesystem::path("/tmp/from-env.conf"));
  EXPECT_EQ(resolve_config_path(std::string("x.conf")), std::filesystem::path("x.conf"));
  ::unsetenv("BURSTQ_CONFIG");
  EXPECT_FALSE(resolve_config_path(std::nullopt).has_value());
}

TEST(Simulator, PaperDailyDayMeetsWaitTarget) {
  SimulationOptions opts;
  const auto schedule = generate_workload(WorkloadProfile{}, opts.start, opts.horizon, 11);
  const auto r = run_simulation(schedule, opts);
  EXPECT_EQ(r.metrics.jobs_unfinished, 0);
  EXPECT_EQ(r.metrics.jobs_submitted, static_cast<std::int64_t>(schedule.size()));
  EXPECT_LT(r.metrics.cloud.mean_wait_s, 300.0);
  EXPECT_EQ(r.metrics.single_job_violations, 0);
  EXPECT_EQ(r.metrics.pool_bound_violations, 0);
  EXPECT_LE(r.metrics.jobs_completed + r.metrics.jobs_failed + r.metrics.jobs_cancelled,
            r.metrics.jobs_submitted);
  EXPECT_GE(r.metrics.vm_busy_fraction, 0.0);
  EXPECT_LE(r.metrics.vm_busy_fraction, 1.0);
  EXPECT_EQ(r.metrics.to_json()["schema_version"], kMetricsSchemaVersion);
}

TEST(Simulator, DeterministicAndAccelerationInvariant) {
  SimulationOptions opts;
  opts.horizon = hours(6);
  const auto schedule = generate_workload(WorkloadProfile{}, opts.start, opts.horizon, 7);
  const auto a = run_simulation(schedule, opts).metrics.to_json().dump();
  const auto b = run_simulation(schedule, opts).metrics.to_json().dump();
  EXPECT_EQ(a, b);
  SimulationOptions paced = opts;
  paced.horizon = hours(1);
  SimulationOptions unpaced = paced;
  paced.time_acceleration = 36000.0;
  const auto short_schedule = generate_workload(WorkloadProfile{}, opts.start, paced.horizon, 7);
  EXPECT_EQ(run_simulation(short_schedule, paced).metrics.to_json().dump(),
            run_simulation(short_schedule, unpaced).metrics.to_json().dump());
}

TEST(Simulator, NoCloudCapacityStarvesMonotonically) {
  SimulationOptions opts;
  opts.config.scaling.max_vms = 0;
  opts.drain_limit = Duration{0};
  const auto schedule = steady_cloud_jobs(5, seconds(600), seconds(60));
  double prev = -1;
  for (int h = 1; h <= 4; ++h) {
    opts.horizon = hours(h);
    const auto r = run_simulation(schedule, opts);
    EXPECT_EQ(r.metrics.cloud.completed, 0);
    EXPECT_EQ(r.metrics.cloud.unfinished, 5);
    EXPECT_GT(r.metrics.cloud.mean_wait_s, prev);
    prev = r.metrics.cloud.mean_wait_s;
  }
}

TEST(Simulator, RejectsBadConfig) {
  SimulationOptions opts;
  opts.config.scaling.min_vms = 9;
  EXPECT_THROW(run_simulation({}, opts), Error);
  SimulationOptions slow;
  slow.time_acceleration = 0.5;
  EXPECT_THROW(run_simulation({}, slow), Error);
}

TEST(Simulator, ReuseNeverWorseThanLaunchPerJob) {
  for (int gap_s : {150, 400, 900, 2000}) {
    SimulationOptions opts;
    opts.config.sim_cloud.boot_delay = Duration{0};
    opts.horizon = hours(3);
    const auto schedule = steady_cloud_jobs(3 * 3600 / gap_s, seconds(gap_s), seconds(100));
    const auto r = run_simulation(schedule, opts);
    EXPECT_EQ(r.metrics.cloud.completed, static_cast<std::int64_t>(schedule.size()));
    EXPECT_LE(r.metrics.billed_periods, static_cast<std::int64_t>(schedule.size())) << gap_s;
  }
}
