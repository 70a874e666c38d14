#include <gtest/gtest.h>

#include "burstq/error.hpp"
#include "burstq/local_grid.hpp"
#include "support.hpp"

using namespace burstq;
using namespace burstq::testing;

namespace {

struct GridStack {
  explicit GridStack(LocalSchedulerConfig cfg = {}, SimGridConfig grid_cfg = {})
      : clock(t0()),
        store(StoreOptions{}),
        workspace(dir / "work"),
        local_exec(clock, static_cast<std::size_t>(cfg.effective_local_jobs())),
        prepare_exec(clock, static_cast<std::size_t>(cfg.effective_prepare_pool())),
        grid_exec(clock, 0),
        grid(clock, grid_exec, dir / "grid", grid_cfg),
        scheduler(store, workspace, clock, local_exec, prepare_exec, grid, cfg),
        jobs(store, workspace, clock, JobManagerConfig{}) {
    jobs.set_abort_hook(Backend::Local, [this](const JobRecord& j) { scheduler.abort(j); });
    jobs.set_abort_hook(Backend::Grid, [this](const JobRecord& j) { scheduler.abort(j); });
  }

  void step(bool poll) {
    clock.advance(seconds(1));
    const auto now = clock.now();
    local_exec.advance(now);
    prepare_exec.advance(now);
    grid_exec.advance(now);
    scheduler.tick(now);
    for (const auto& j : store.list_jobs(JobState::Running, Backend::Grid)) {
      if (!j.remote_id) continue;
      if (auto done = grid.finished_at(*j.remote_id)) grid_done[j.id] = *done;
    }
    if (poll) scheduler.remote_poll_tick(now);
  }

  /// Steps `n` seconds, polling every `poll_every` seconds.
  void run(int n, int poll_every = 30) {
    for (int i = 0; i < n; ++i) {
      ++elapsed;
      step(elapsed % poll_every == 0);
    }
  }

  JobState state(const JobId& id) { return store.get_job(id)->state; }

  TempDir dir;
  ManualClock clock;
  Store store;
  Workspace workspace;
  VirtualExecutor local_exec;
  VirtualExecutor prepare_exec;
  VirtualExecutor grid_exec;
  SimGrid grid;
  LocalGridScheduler scheduler;
  JobManager jobs;
  int elapsed = 0;
  std::map<JobId, Timestamp> grid_done;  // SimGrid completion times seen before polling
};

SubmissionEnvelope grid_job(std::int64_t ms, std::size_t bytes = 0) {
  auto env = sleep_job(ms, "Grid");
  if (bytes) env.files = {{"blob.bin", std::string(bytes, 'x')}};
  return env;
}

}  // namespace

TEST(LocalConfig, ClampsToCores) {
  LocalSchedulerConfig cfg;
  cfg.cores = 8;
  cfg.max_local_jobs = 12;
  EXPECT_EQ(cfg.effective_local_jobs(), 7);
  cfg.max_local_jobs = 0;
  EXPECT_EQ(cfg.effective_local_jobs(), 1);
  cfg.max_local_jobs = 3;
  EXPECT_EQ(cfg.effective_prepare_pool(), 3);
  cfg.prepare_pool_size = 2;
  EXPECT_EQ(cfg.effective_prepare_pool(), 2);
}

TEST(LatencyModel, SmallAndLarge) {
  GridLatencyModel m;
  EXPECT_EQ(m.latency_for(10), seconds(1));
  EXPECT_EQ(m.latency_for(1024 * 1024), seconds(10));
}

TEST(LocalRun, SingleJobCompletesBlue) {
  GridStack g;
  const auto id = g.jobs.submit(sleep_job(3000));
  g.run(5);
  EXPECT_EQ(g.state(id), JobState::Completed);
  EXPECT_EQ(g.jobs.get_status(id)["color"], "blue");
  EXPECT_NO_THROW(g.jobs.fetch_results(id));
}

TEST(LocalRun, CapOfOneSerializes) {
  GridStack g;
  const auto a = g.jobs.submit(sleep_job(5000));
  const auto b = g.jobs.submit(sleep_job(5000));
  g.run(3);
  EXPECT_EQ(g.state(a), JobState::Running);
  EXPECT_EQ(g.state(b), JobState::Queued);
  g.run(10);
  EXPECT_EQ(g.state(b), JobState::Completed);
  const auto iv = g.scheduler.local_intervals();
  ASSERT_EQ(iv.size(), 2u);
  EXPECT_GE(iv[1].first, iv[0].second);
  EXPECT_EQ(g.scheduler.peak_local_in_flight(), 1u);
}

TEST(LocalRun, SevenConcurrentOnEightCores) {
  LocalSchedulerConfig cfg;
  cfg.cores = 8;
  cfg.max_local_jobs = 7;
  GridStack g(cfg);
  std::vector<JobId> ids;
  for (int i = 0; i < 9; ++i) ids.push_back(g.jobs.submit(sleep_job(10'000)));
  g.run(2);
  int running = 0;
  for (const auto& id : ids) running += g.state(id) == JobState::Running;
  EXPECT_EQ(running, 7);
  g.run(30);
  for (const auto& id : ids) EXPECT_EQ(g.state(id), JobState::Completed);
  EXPECT_EQ(g.scheduler.peak_local_in_flight(), 7u);
}

TEST(LocalRun, CapHoldsAtEveryInstant) {
  LocalSchedulerConfig cfg;
  cfg.max_local_jobs = 3;
  GridStack g(cfg);
  for (int i = 0; i < 20; ++i) g.jobs.submit(sleep_job(1000 * (1 + i % 5)));
  for (int t = 0; t < 60; ++t) {
    g.run(1);
    EXPECT_LE(g.store.list_jobs(JobState::Running, Backend::Local).size(), 3u);
  }
  // Interval sweep over the recorded trace.
  std::vector<std::pair<Timestamp, int>> events;
  for (const auto& [s, e] : g.scheduler.local_intervals()) {
    events.push_back({s, +1});
    events.push_back({e, -1});
  }
  std::sort(events.begin(), events.end(), [](auto& x, auto& y) {
    return x.first != y.first ? x.first < y.first : x.second < y.second;
  });
  int live = 0;
  for (const auto& ev : events) {
    live += ev.second;
    EXPECT_LE(live, 3);
  }
}

TEST(LocalRun, KernelFailureFailsJob) {
  GridStack g;
  auto env = sleep_job(0);
  env.params["fail"] = "1";
  const auto id = g.jobs.submit(env);
  g.run(3);
  EXPECT_EQ(g.state(id), JobState::Failed);
}

TEST(LocalRun, CancelRunningLocalJob) {
  GridStack g;
  const auto id = g.jobs.submit(sleep_job(60'000));
  g.run(2);
  ASSERT_EQ(g.state(id), JobState::Running);
  EXPECT_EQ(g.jobs.cancel(id), JobState::Cancelled);
  g.run(70);
  EXPECT_EQ(g.state(id), JobState::Cancelled);
  EXPECT_EQ(g.local_exec.in_flight(), 0u);
}

TEST(GridPrepare, LargeJobTakesTenSeconds) {
  GridStack g;
  const auto id = g.jobs.submit(grid_job(1000, 2 * 1024 * 1024));
  g.run(1);
  EXPECT_EQ(g.state(id), JobState::Preparing);
  g.run(8);
  EXPECT_EQ(g.state(id), JobState::Preparing);
  g.run(2);
  EXPECT_EQ(g.state(id), JobState::Running);
  EXPECT_TRUE(g.store.get_job(id)->remote_id.has_value());
}

TEST(GridPrepare, SmallJobTakesSmallLatency) {
  GridStack g;
  const auto id = g.jobs.submit(grid_job(1000));
  g.run(1);
  EXPECT_EQ(g.state(id), JobState::Preparing);
  g.run(1);
  EXPECT_EQ(g.state(id), JobState::Running);
}

TEST(GridPrepare, PreparationDoesNotBlockLocalRuns) {
  GridStack g;
  g.jobs.submit(grid_job(1000, 2 * 1024 * 1024));
  const auto local = g.jobs.submit(sleep_job(1000));
  g.run(3);
  EXPECT_EQ(g.state(local), JobState::Completed);
}

TEST(GridPrepare, TimeoutRequeuesThenFails) {
  GridStack g;
  g.grid.fail_next_submissions(2);
  const auto id = g.jobs.submit(grid_job(1000));
  g.run(2);
  auto j = g.store.get_job(id);
  EXPECT_EQ(j->attempt_count, 1);
  EXPECT_NE(j->state, JobState::Failed);
  EXPECT_FALSE(j->remote_id.has_value());
  g.run(3);
  j = g.store.get_job(id);
  EXPECT_EQ(j->attempt_count, 2);
  EXPECT_EQ(j->state, JobState::Failed);
}

TEST(GridPoll, FinishedBetweenTicksCompletesGreenOnNextTick) {
  GridStack g;
  const auto id = g.jobs.submit(grid_job(5000));
  g.run(29);
  EXPECT_EQ(g.state(id), JobState::Running);
  g.run(1);  // poll at t=30
  EXPECT_EQ(g.state(id), JobState::Completed);
  EXPECT_EQ(g.jobs.get_status(id)["color"], "green");
  ASSERT_TRUE(g.grid_done.count(id));
  EXPECT_LE(*g.store.get_job(id)->finished_at - g.grid_done[id], seconds(60));
}

TEST(GridPoll, CancelledOnNextTick) {
  GridStack g;
  const auto id = g.jobs.submit(grid_job(600'000));
  g.run(5);
  ASSERT_EQ(g.state(id), JobState::Running);
  EXPECT_EQ(g.jobs.cancel(id), JobState::Cancelled);
  g.run(30);
  EXPECT_EQ(g.state(id), JobState::Cancelled);
}

TEST(GridPoll, NoRemoteJobsNoActions) {
  GridStack g;
  EXPECT_TRUE(g.scheduler.remote_poll_tick(g.clock.now()).empty());
}

TEST(GridPoll, JobNeverInBothQueues) {
  GridStack g;
  for (int i = 0; i < 6; ++i) g.jobs.submit(grid_job(2000 + 1000 * i));
  for (int t = 0; t < 120; ++t) {
    g.run(1);
    for (const auto& j : g.store.list_jobs()) {
      if (j.state == JobState::Queued) EXPECT_FALSE(j.remote_id.has_value()) << j.id;
    }
  }
  for (const auto& j : g.store.list_jobs()) EXPECT_EQ(j.state, JobState::Completed);
}

TEST(GridPoll, FinalizedWithinTwoPollIntervals) {
  SimGridConfig gc;
  gc.queue_wait_min = seconds(3);
  gc.queue_wait_max = seconds(40);
  gc.seed = 5;
  GridStack g({}, gc);
  std::vector<JobId> ids;
  for (int i = 0; i < 8; ++i) ids.push_back(g.jobs.submit(grid_job(1000 * (i + 1))));
  g.run(400);
  for (const auto& id : ids) {
    const auto j = g.store.get_job(id);
    ASSERT_EQ(j->state, JobState::Completed);
    ASSERT_TRUE(g.grid_done.count(id));
    EXPECT_LE(*j->finished_at - g.grid_done[id], seconds(60));
  }
}
