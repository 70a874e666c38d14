#include <gtest/gtest.h>

#include <fstream>
#include <random>
#include <set>
#include <thread>

#include "burstq/error.hpp"
#include "burstq/store.hpp"
#include "support.hpp"

using namespace burstq;
using burstq::testing::t0;
using burstq::testing::TempDir;

namespace {

JobRecord queued(Backend backend = Backend::Cloud) {
  JobRecord r;
  r.state = JobState::Queued;
  r.backend = backend;
  r.submitted_at = t0();
  r.queued_at = t0();
  return r;
}

VmRecord vm(const std::string& id, VmState state) {
  VmRecord v;
  v.id = id;
  v.state = state;
  v.endpoint = "inproc://" + id;
  v.launched_at = t0();
  v.billing_anchor = t0();
  return v;
}

StoreOptions durable(const TempDir& dir, std::int64_t snapshot_every = 500) {
  return StoreOptions{dir.path() / "store", true, snapshot_every, 2};
}

void expect_same(const StoreSnapshot& a, const StoreSnapshot& b) {
  EXPECT_EQ(a.to_json().dump(), b.to_json().dump());
}

}  // namespace

TEST(StoreQueue, EmptyStoreHasNoQueuedJob) {
  Store s(StoreOptions{});
  EXPECT_FALSE(s.next_queued().has_value());
}

TEST(StoreQueue, SingletonAndFifo) {
  Store s(StoreOptions{});
  const auto a = s.enqueue(queued(), t0());
  EXPECT_EQ(s.next_queued()->id, a);
  const auto b = s.enqueue(queued(), t0());
  EXPECT_EQ(s.next_queued()->id, a);
  s.update_job(a, Actor::QueueManager, "dispatch", t0(),
               [](JobRecord& r) { r.state = transition(r.state, JobEvent::Dispatch); });
  EXPECT_EQ(s.next_queued()->id, b);
}

TEST(StoreQueue, FifoPropertyOverRandomInterleavings) {
  std::mt19937_64 rng(5);
  for (int round = 0; round < 20; ++round) {
    Store s(StoreOptions{});
    std::vector<JobId> order;
    std::set<JobId> removed;
    for (int i = 0; i < 40; ++i) {
      if (order.size() > removed.size() && rng() % 3 == 0) {
        const auto head = s.next_queued();
        ASSERT_TRUE(head.has_value());
        for (const auto& id : order) {
          if (!removed.count(id)) {
            EXPECT_EQ(head->id, id);
            break;
          }
        }
        s.update_job(head->id, Actor::QueueManager, "run", t0(),
                     [](JobRecord& r) { r.state = JobState::Running; });
        removed.insert(head->id);
      } else {
        order.push_back(s.enqueue(queued(), t0()));
      }
    }
  }
}

TEST(StoreQueue, FilterByBackend) {
  Store s(StoreOptions{});
  s.enqueue(queued(Backend::Grid), t0());
  EXPECT_FALSE(s.next_queued(Backend::Cloud).has_value());
  EXPECT_TRUE(s.next_queued(Backend::Grid).has_value());
}

TEST(StoreQueue, RunningJobIsSkipped) {
  Store s(StoreOptions{});
  auto a = s.enqueue(queued(), t0());
  auto b = s.enqueue(queued(), t0());
  s.update_job(a, Actor::QueueManager, "run", t0(),
               [](JobRecord& r) { r.state = transition(r.state, JobEvent::Dispatch); });
  EXPECT_EQ(s.next_queued()->id, b);
}

TEST(StoreUpdate, RevisionAdvancesByOneWithAudit) {
  Store s(StoreOptions{});
  auto a = s.enqueue(queued(), t0());
  const auto before = s.revision();
  s.update_job(a, Actor::QueueManager, "dispatch", t0(),
               [](JobRecord& r) { r.state = transition(r.state, JobEvent::Dispatch); });
  EXPECT_EQ(s.revision(), before + 1);
  EXPECT_EQ(s.audit().back().revision, before + 1);
  EXPECT_EQ(s.audit().back().actor, Actor::QueueManager);
}

TEST(StoreUpdate, UnknownIdIsNotFound) {
  Store s(StoreOptions{});
  try {
    s.update_job("job-nope", Actor::JobManager, "x", t0(), [](JobRecord&) {});
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::NotFound);
  }
}

TEST(StoreUpdate, IllegalTransitionLeavesStateUntouched) {
  Store s(StoreOptions{});
  auto a = s.enqueue(queued(), t0());
  s.update_job(a, Actor::JobManager, "cancel", t0(),
               [](JobRecord& r) { r.state = transition(r.state, JobEvent::Cancel); });
  const auto rev = s.revision();
  EXPECT_THROW(s.update_job(a, Actor::JobManager, "cancel", t0(),
                            [](JobRecord& r) { r.state = transition(r.state, JobEvent::Cancel); }),
               Error);
  EXPECT_EQ(s.revision(), rev);
  EXPECT_EQ(s.get_job(a)->state, JobState::Cancelled);
}

TEST(StoreUpdate, ConcurrentMutationsAreLinearizable) {
  Store s(StoreOptions{});
  auto a = s.enqueue(queued(), t0());
  const auto start_rev = s.revision();
  constexpr int kThreads = 8, kPerThread = 200;
  std::vector<std::thread> threads;
  for (int t = 0; t < kThreads; ++t) {
    threads.emplace_back([&, t] {
      for (int i = 0; i < kPerThread; ++i) {
        s.update_job(a, Actor::JobManager, "bump " + std::to_string(t), t0(),
                     [](JobRecord& r) { r.attempt_count += 1; });
      }
    });
  }
  for (auto& th : threads) th.join();
  EXPECT_EQ(s.get_job(a)->attempt_count, kThreads * kPerThread);
  EXPECT_EQ(s.revision(), start_rev + kThreads * kPerThread);
  const auto audit = s.audit();
  for (std::size_t i = 0; i < audit.size(); ++i) EXPECT_EQ(audit[i].revision, static_cast<std::int64_t>(i + 1));
}

TEST(StoreVm, UpsertAndFilter) {
  Store s(StoreOptions{});
  s.vm_upsert(vm("vm-00001", VmState::Idle), Actor::VmManager, t0());
  s.vm_upsert(vm("vm-00002", VmState::Busy), Actor::VmManager, t0());
  EXPECT_EQ(s.vm_list().size(), 2u);
  EXPECT_EQ(s.vm_list(VmState::Idle).size(), 1u);
  auto v = vm("vm-00001", VmState::Idle);
  v.jobs_executed = 7;
  s.vm_upsert(v, Actor::VmManager, t0());
  EXPECT_EQ(s.vm_list().size(), 2u);
  EXPECT_EQ(s.get_vm("vm-00001")->jobs_executed, 7);
}

TEST(StoreTransact, AbortedCallbackCommitsNothing) {
  Store s(StoreOptions{});
  auto a = s.enqueue(queued(), t0());
  const auto rev = s.revision();
  EXPECT_THROW(s.transact(Actor::JobManager, "x", t0(),
                          [&](Transaction& tx) {
                            tx.job(a).attempt_count = 9;
                            throw Error(ErrorCode::ValidationError, "no");
                          }),
               Error);
  EXPECT_EQ(s.revision(), rev);
  EXPECT_EQ(s.get_job(a)->attempt_count, 0);
  s.transact(Actor::JobManager, "read only", t0(), [&](Transaction& tx) { (void)tx.find_job(a); });
  EXPECT_EQ(s.revision(), rev);
}

TEST(StoreFault, DiskFullRaisesStorageFailureAndKeepsSnapshot) {
  TempDir dir;
  Store s(durable(dir));
  s.enqueue(queued(), t0());
  const auto before = s.snapshot();
  s.set_write_fault(true);
  try {
    s.enqueue(queued(), t0());
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::StorageFailure);
  }
  expect_same(s.snapshot(), before);
  s.set_write_fault(false);
  s.enqueue(queued(), t0());
  EXPECT_EQ(s.list_jobs().size(), 2u);
}

TEST(StoreDurability, ReopenRestoresCommittedState) {
  TempDir dir;
  StoreSnapshot expected;
  {
    Store s(durable(dir, 7));
    for (int i = 0; i < 30; ++i) {
      auto id = s.enqueue(queued(i % 2 ? Backend::Cloud : Backend::Grid), t0());
      if (i % 3 == 0) {
        s.update_job(id, Actor::QueueManager, "run", t0(),
                     [](JobRecord& r) { r.state = JobState::Running; });
      }
    }
    s.vm_upsert(vm("vm-00001", VmState::Idle), Actor::VmManager, t0());
    expected = s.snapshot();
  }
  Store reopened(durable(dir, 7));
  expect_same(reopened.snapshot(), expected);
  const auto next = reopened.enqueue(queued(), t0());
  EXPECT_EQ(reopened.get_job(next)->seq, 31);
}

TEST(StoreDurability, JournalReplayEqualsSnapshot) {
  TempDir dir;
  Store s(durable(dir, 5));
  std::mt19937_64 rng(9);
  std::vector<JobId> ids;
  for (int i = 0; i < 60; ++i) {
    if (ids.empty() || rng() % 2) {
      ids.push_back(s.enqueue(queued(), t0()));
    } else {
      const auto& id = ids[rng() % ids.size()];
      s.update_job(id, Actor::QueueManager, "touch", t0(), [](JobRecord& r) { r.attempt_count++; });
    }
    if (i % 10 == 0) s.note(Actor::VmManager, "audit only", t0());
  }
  expect_same(Store::replay_journal(dir.path() / "store"), s.snapshot());
}

TEST(StoreDurability, TornTailIsDiscarded) {
  TempDir dir;
  StoreSnapshot committed;
  {
    Store s(durable(dir, 0));
    s.enqueue(queued(), t0());
    s.enqueue(queued(), t0());
    committed = s.snapshot();
  }
  {
    std::ofstream out(dir.path() / "store" / "journal.log", std::ios::app | std::ios::binary);
    out << R"({"revision":3,"actor":"JobManager","jobs":[{"id":"job-0)";
  }
  Store reopened(durable(dir, 0));
  expect_same(reopened.snapshot(), committed);
  reopened.enqueue(queued(), t0());
  Store again(durable(dir, 0));
  EXPECT_EQ(again.list_jobs().size(), 3u);
}

TEST(StoreDurability, UncommittedJobIsAbsentAfterCrash) {
  TempDir dir;
  {
    Store s(durable(dir));
    s.enqueue(queued(), t0());
    s.set_write_fault(true);
    EXPECT_THROW(s.enqueue(queued(), t0()), Error);
  }
  Store reopened(durable(dir));
  EXPECT_EQ(reopened.list_jobs().size(), 1u);
}

TEST(StoreRecovery, CleanShutdownReportsZeros) {
  Store s(StoreOptions{});
  auto a = s.enqueue(queued(), t0());
  s.update_job(a, Actor::JobManager, "cancel", t0(), [](JobRecord& r) { r.state = JobState::Cancelled; });
  const auto rev = s.revision();
  const auto report = s.recover([](const VmRecord&) { return true; },
                                [](const JobRecord&) { return true; }, t0());
  EXPECT_EQ(report, RecoveryReport{});
  EXPECT_EQ(s.revision(), rev);
}

TEST(StoreRecovery, RunningOnDeadVmsAreRequeued) {
  Store s(StoreOptions{});
  s.vm_upsert(vm("vm-00001", VmState::Busy), Actor::VmManager, t0());
  s.vm_upsert(vm("vm-00002", VmState::Busy), Actor::VmManager, t0());
  for (int i = 0; i < 3; ++i) s.enqueue(queued(), t0());
  for (int i = 0; i < 2; ++i) {
    auto id = s.enqueue(queued(), t0());
    const std::string v = "vm-0000" + std::to_string(i + 1);
    s.update_job(id, Actor::QueueManager, "run", t0(), [&](JobRecord& r) {
      r.state = JobState::Running;
      r.assigned_vm = v;
      r.started_at = t0();
    });
  }
  const auto report = s.recover([](const VmRecord&) { return false; },
                                [](const JobRecord&) { return false; }, t0());
  EXPECT_EQ(report.requeued, 2);
  EXPECT_EQ(report.failed, 0);
  EXPECT_EQ(report.vms_marked_lost, 2);
  EXPECT_EQ(s.list_jobs(JobState::Queued).size(), 5u);
  for (const auto& j : s.list_jobs()) {
    EXPECT_FALSE(j.assigned_vm.has_value());
    EXPECT_LE(j.attempt_count, 1);
  }
  EXPECT_EQ(s.vm_list(VmState::Terminated).size(), 2u);
}

TEST(StoreRecovery, ExhaustedAttemptsFail) {
  Store s(StoreOptions{{}, false, 0, 2});
  auto id = s.enqueue(queued(Backend::Local), t0());
  s.update_job(id, Actor::Scheduler, "run", t0(), [](JobRecord& r) {
    r.state = JobState::Running;
    r.attempt_count = 2;
  });
  const auto report = s.recover([](const VmRecord&) { return true; },
                                [](const JobRecord&) { return false; }, t0());
  EXPECT_EQ(report.failed, 1);
  EXPECT_EQ(s.get_job(id)->state, JobState::Failed);
}

TEST(StoreRecovery, PreparingReturnsToQueueAndLiveJobsSurvive) {
  Store s(StoreOptions{});
  auto prep = s.enqueue(queued(Backend::Grid), t0());
  s.update_job(prep, Actor::Scheduler, "prep", t0(), [](JobRecord& r) { r.state = JobState::Preparing; });
  s.vm_upsert(vm("vm-00001", VmState::Busy), Actor::VmManager, t0());
  auto live = s.enqueue(queued(), t0());
  s.update_job(live, Actor::QueueManager, "run", t0(), [](JobRecord& r) {
    r.state = JobState::Running;
    r.assigned_vm = "vm-00001";
  });
  const auto report = s.recover([](const VmRecord&) { return true; },
                                [](const JobRecord&) { return true; }, t0());
  EXPECT_EQ(report.requeued, 1);
  EXPECT_EQ(s.get_job(prep)->state, JobState::Queued);
  EXPECT_EQ(s.get_job(live)->state, JobState::Running);
}
