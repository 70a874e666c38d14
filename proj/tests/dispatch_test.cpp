#include <gtest/gtest.h>

#include "burstq/archive.hpp"
#include "burstq/error.hpp"
#include "burstq/kernels.hpp"
#include "support.hpp"

using namespace burstq;
using namespace burstq::testing;

namespace {

ErrorCode code_of(const std::function<void()>& fn) {
  try {
    fn();
  } catch (const Error& e) {
    return e.code();
  }
  ADD_FAILURE() << "expected an Error";
  return ErrorCode::Unavailable;
}

/// One booted idle VM, returned.
VmRecord boot_one(CloudStack& s) {
  s.pool.scale(1, Duration{0}, s.clock.now());
  s.pool.reconcile(s.clock.now());
  return s.store.vm_list(VmState::Idle).front();
}

std::size_t count_kind(const std::vector<DispatchAction>& actions, DispatchAction::Kind k) {
  return static_cast<std::size_t>(
      std::count_if(actions.begin(), actions.end(), [&](const auto& a) { return a.kind == k; }));
}

SubmissionEnvelope scan_job(const ScanData& d, std::optional<std::string> backend = "Cloud") {
  SubmissionEnvelope env;
  env.types = {"regression-scan"};
  env.files = {{"geno.csv", d.geno_csv}, {"pheno.csv", d.pheno_csv}};
  env.backend = std::move(backend);
  return env;
}

}  // namespace

// --- queue manager ---------------------------------------------------------

TEST(QueueManager, EmptyQueueNoActions) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  EXPECT_TRUE(s.queue.tick(s.clock.now()).empty());
}

TEST(QueueManager, OneJobOneIdleVmDispatches) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  const auto vm = boot_one(s);
  const auto id = s.jobs.submit(sleep_job(1000, "Cloud"));
  const auto actions = s.queue.tick(s.clock.now());
  ASSERT_EQ(count_kind(actions, DispatchAction::Kind::Dispatched), 1u);
  const auto job = s.store.get_job(id);
  EXPECT_EQ(job->state, JobState::Running);
  EXPECT_EQ(job->assigned_vm, vm.id);
  EXPECT_EQ(s.store.get_vm(vm.id)->state, VmState::Busy);
}

TEST(QueueManager, NoVmsSignalsDemandOfFullDepth) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  for (int i = 0; i < 3; ++i) s.jobs.submit(sleep_job(1000, "Cloud"));
  const auto actions = s.queue.tick(s.clock.now());
  ASSERT_EQ(actions.size(), 1u);
  EXPECT_EQ(actions[0].kind, DispatchAction::Kind::Demand);
  EXPECT_EQ(actions[0].depth, 3);
}

TEST(QueueManager, BusyAgentLeavesJobQueued) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  const auto vm = boot_one(s);
  // Occupy the agent behind the manager's back.
  DispatchPayload p;
  p.job_id = "job-other";
  p.kind = JobKind::Sleep;
  p.params["duration_ms"] = "60000";
  p.callback_url = "inproc://manager";
  s.host.find(vm.endpoint)->execute(p);
  const auto id = s.jobs.submit(sleep_job(1000, "Cloud"));
  const auto actions = s.queue.tick(s.clock.now());
  EXPECT_EQ(count_kind(actions, DispatchAction::Kind::Busy), 1u);
  EXPECT_EQ(s.state(id), JobState::Queued);
  EXPECT_EQ(s.store.get_vm(vm.id)->state, VmState::Busy);
  EXPECT_EQ(s.queue.busy_rejections(), 1);
}

/// Delivers the job's results before returning from execute, as a fast
/// kernel on a live agent can.
class RacingTransport final : public AgentTransport {
 public:
  explicit RacingTransport(JobManager& jobs) : jobs_(jobs) {}
  DispatchOutcome execute(const std::string&, const DispatchPayload& p) override {
    ResultBundle b;
    b.job_id = p.job_id;
    b.ok = true;
    b.outputs["done.txt"] = "ok";
    push_error = std::nullopt;
    try {
      jobs_.receive_results(p.job_id, p.token, b);
    } catch (const Error& e) {
      push_error = e.code();
    }
    return DispatchOutcome::Accepted;
  }
  std::optional<AgentStatus> status(const std::string&) override { return AgentStatus{}; }
  bool abort(const std::string&, const JobId&) override { return false; }
  std::optional<ErrorCode> push_error;

 private:
  JobManager& jobs_;
};

TEST(QueueManager, PushBeforeExecuteReplyCompletesJob) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  boot_one(s);
  RacingTransport racing(s.jobs);
  QueueManager q(s.store, s.pool, racing, s.workspace, DispatchConfig{}, "inproc://manager");
  const auto id = s.jobs.submit(sleep_job(1000, "Cloud"));
  const auto actions = q.tick(s.clock.now());
  EXPECT_EQ(count_kind(actions, DispatchAction::Kind::Dispatched), 1u);
  EXPECT_FALSE(racing.push_error.has_value());
  EXPECT_EQ(s.state(id), JobState::Completed);
  EXPECT_EQ(s.store.vm_list(VmState::Idle).size(), 1u);
}

TEST(QueueManager, BlackHoledAgentIsUnreachable) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  const auto vm = boot_one(s);
  const auto id = s.jobs.submit(sleep_job(1000, "Cloud"));
  s.transport.set_unreachable(vm.endpoint, true);
  const auto actions = s.queue.tick(s.clock.now());
  EXPECT_EQ(count_kind(actions, DispatchAction::Kind::Unreachable), 1u);
  const auto job = s.store.get_job(id);
  EXPECT_EQ(job->state, JobState::Queued);
  EXPECT_EQ(job->attempt_count, 1);
  EXPECT_EQ(s.store.get_vm(vm.id)->state, VmState::Lost);
}

TEST(QueueManager, DispatchOrderIsSubmissionOrder) {
  ScalingConfig cfg;
  cfg.max_vms = 3;
  CloudStack s(cfg, SimCloudConfig{Duration{0}});
  std::vector<JobId> submitted;
  for (int i = 0; i < 12; ++i) submitted.push_back(s.jobs.submit(sleep_job(7000 + 1000 * (i % 4), "Cloud")));
  s.run_for(seconds(120));
  std::vector<JobId> dispatched;
  for (const auto& a : s.queue.trace())
    if (a.kind == DispatchAction::Kind::Dispatched) dispatched.push_back(a.job);
  EXPECT_EQ(dispatched, submitted);
  for (const auto& id : submitted) EXPECT_EQ(s.state(id), JobState::Completed);
  EXPECT_EQ(s.queue.busy_rejections(), 0);
}

TEST(QueueManager, LivenessWithinTwoPolls) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  boot_one(s);
  const auto id = s.jobs.submit(sleep_job(1000, "Cloud"));
  s.step();
  s.step();
  EXPECT_NE(s.state(id), JobState::Queued);
}

TEST(QueueManager, AgentFailureRequeuesThenFails) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  const auto id = s.jobs.submit(sleep_job(600'000, "Cloud"));
  for (int attempt = 1; attempt <= 2; ++attempt) {
    ASSERT_TRUE(eventually([&] {
      s.step();
      return s.state(id) == JobState::Running;
    }, seconds(5), std::chrono::milliseconds(0)));
    const auto vm = s.store.get_vm(*s.store.get_job(id)->assigned_vm);
    s.cloud.kill_instance(vm->provider_handle);
    s.step();
    const auto job = s.store.get_job(id);
    EXPECT_EQ(job->attempt_count, attempt);
    EXPECT_EQ(job->state, attempt == 1 ? JobState::Queued : JobState::Failed);
  }
}

TEST(QueueManager, LateFailureForCompletedJobIsIgnored) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  const auto id = s.jobs.submit(sleep_job(1000, "Cloud"));
  s.run_for(seconds(10));
  ASSERT_EQ(s.state(id), JobState::Completed);
  const auto rev = s.store.revision();
  s.queue.handle_agent_failure(id, "vm-00001", "late", s.clock.now());
  EXPECT_EQ(s.state(id), JobState::Completed);
  EXPECT_EQ(s.store.revision(), rev + 1);  // audit note only
  EXPECT_EQ(code_of([&] { s.queue.handle_agent_failure("job-nope", "vm-00001", "x", s.clock.now()); }),
            ErrorCode::NotFound);
}

// --- job manager -------------------------------------------------------------

TEST(JobManager, SubmitScanIsQueuedPink) {
  CloudStack s;
  const auto d = make_scan_data(12, 5, 2);
  const auto id = s.jobs.submit(scan_job(d, std::nullopt));
  const auto doc = s.jobs.get_status(id);
  EXPECT_EQ(doc["state"], "Queued");
  EXPECT_EQ(doc["color"], "pink");
  EXPECT_EQ(doc["backend"], "Local");
  EXPECT_EQ(doc["max_markers"], 5);
}

TEST(JobManager, SubmitValidation) {
  CloudStack s;
  SubmissionEnvelope env;
  EXPECT_EQ(code_of([&] { s.jobs.submit(env); }), ErrorCode::ValidationError);
  env.types = {"sleep", "sleep"};
  EXPECT_EQ(code_of([&] { s.jobs.submit(env); }), ErrorCode::ValidationError);
  env.types = {"teleport"};
  EXPECT_EQ(code_of([&] { s.jobs.submit(env); }), ErrorCode::ValidationError);
  env = sleep_job(0);
  env.files = {{"a", "1"}, {"a", "2"}};
  EXPECT_EQ(code_of([&] { s.jobs.submit(env); }), ErrorCode::ValidationError);
  env.files = {{"../a", "1"}};
  EXPECT_EQ(code_of([&] { s.jobs.submit(env); }), ErrorCode::ValidationError);
  env = sleep_job(0);
  env.backend = "mainframe";
  EXPECT_EQ(code_of([&] { s.jobs.submit(env); }), ErrorCode::ValidationError);
  EXPECT_TRUE(s.store.list_jobs().empty());
}

TEST(JobManager, OversizeRejected) {
  CloudStack s;
  EXPECT_EQ(code_of([&] { s.jobs.submit(sleep_job(0, std::nullopt, 5001)); }),
            ErrorCode::OversizeRejected);
  EXPECT_NO_THROW(s.jobs.submit(sleep_job(0, std::nullopt, 5000)));
}

TEST(JobManager, UploadLimit) {
  TempDir dir;
  ManualClock clock(t0());
  Store store(StoreOptions{});
  Workspace ws(dir.path());
  JobManagerConfig cfg;
  cfg.max_upload_bytes = 10;
  JobManager jobs(store, ws, clock, cfg);
  auto env = sleep_job(0);
  env.files = {{"big.bin", std::string(11, 'x')}};
  EXPECT_EQ(code_of([&] { jobs.submit(env); }), ErrorCode::PayloadTooLarge);
}

TEST(JobManager, StatusOfUnknownIsNotFound) {
  CloudStack s;
  EXPECT_EQ(code_of([&] { s.jobs.get_status("job-nope"); }), ErrorCode::NotFound);
}

TEST(JobManager, CloudScanCompletesTealAndFetchesOracleProfile) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  const auto d = make_scan_data(12, 5, 99);
  const auto id = s.jobs.submit(scan_job(d));
  s.run_for(seconds(5));
  const auto doc = s.jobs.get_status(id);
  EXPECT_EQ(doc["state"], "Completed");
  EXPECT_EQ(doc["color"], "teal");
  const auto files = read_tar(s.jobs.fetch_results(id));
  std::map<std::string, std::string> by_name(files.begin(), files.end());
  ASSERT_TRUE(by_name.count("fprofile.tsv"));
  const auto got = parse_fprofile(by_name["fprofile.tsv"]);
  const auto want = f_oracle(d.geno, d.pheno);
  ASSERT_EQ(got.size(), want.size());
  for (std::size_t j = 0; j < got.size(); ++j)
    EXPECT_NEAR(got[j], static_cast<double>(want[j]), 1e-9 * std::max(1.0, std::fabs(got[j])));
  EXPECT_EQ(s.store.vm_list(VmState::Idle).size(), 1u);
}

TEST(JobManager, ReceiveResultsAuthIdempotencyConflict) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  const auto vm = boot_one(s);
  // The agent's own push never fires: its executor is not advanced.
  const auto id = s.jobs.submit(sleep_job(600'000, "Cloud"));
  s.queue.tick(s.clock.now());
  ASSERT_EQ(s.state(id), JobState::Running);
  const auto token = s.store.get_vm(vm.id)->token;
  ResultBundle bundle{id, true, {{"out.txt", std::string("\0\x01\xff", 3)}}, "ok"};

  const auto rev = s.store.revision();
  EXPECT_EQ(code_of([&] { s.jobs.receive_results(id, "wrong", bundle); }), ErrorCode::AuthFailure);
  EXPECT_EQ(s.state(id), JobState::Running);
  EXPECT_EQ(s.store.revision(), rev);

  EXPECT_TRUE(s.jobs.receive_results(id, token, bundle));
  EXPECT_EQ(s.state(id), JobState::Completed);
  EXPECT_EQ(s.store.get_vm(vm.id)->state, VmState::Idle);
  const auto after = s.store.revision();
  EXPECT_FALSE(s.jobs.receive_results(id, token, bundle));
  EXPECT_EQ(s.store.revision(), after + 1);
  EXPECT_EQ(s.state(id), JobState::Completed);

  ResultBundle different = bundle;
  different.outputs["out.txt"] = "changed";
  EXPECT_EQ(code_of([&] { s.jobs.receive_results(id, token, different); }),
            ErrorCode::ConflictingResults);
  EXPECT_EQ(code_of([&] { s.jobs.receive_results("job-nope", token, bundle); }), ErrorCode::NotFound);

  // Byte-identical round trip.
  const auto files = read_tar(s.jobs.fetch_results(id));
  ASSERT_EQ(files.size(), 1u);
  EXPECT_EQ(files[0].second, std::string("\0\x01\xff", 3));
  s.host.find(vm.endpoint)->abort(id);
}

TEST(JobManager, ErrorBundleFailsJob) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  auto env = sleep_job(0, "Cloud");
  env.params["fail"] = "true";
  const auto id = s.jobs.submit(env);
  s.run_for(seconds(5));
  EXPECT_EQ(s.state(id), JobState::Failed);
  EXPECT_EQ(s.jobs.get_status(id)["color"], "red");
  EXPECT_EQ(code_of([&] { s.jobs.fetch_results(id); }), ErrorCode::NoResults);
}

TEST(JobManager, FetchErrors) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  const auto id = s.jobs.submit(sleep_job(600'000, "Cloud"));
  EXPECT_EQ(code_of([&] { s.jobs.fetch_results(id); }), ErrorCode::NotReady);
  s.run_for(seconds(3));
  ASSERT_EQ(s.state(id), JobState::Running);
  EXPECT_EQ(code_of([&] { s.jobs.fetch_results(id); }), ErrorCode::NotReady);
  EXPECT_EQ(code_of([&] { s.jobs.fetch_results("job-nope"); }), ErrorCode::NotFound);
}

TEST(JobManager, CancelQueuedNeverDispatches) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  const auto id = s.jobs.submit(sleep_job(1000, "Cloud"));
  EXPECT_EQ(s.jobs.cancel(id), JobState::Cancelled);
  s.run_for(seconds(10));
  EXPECT_EQ(s.state(id), JobState::Cancelled);
  for (const auto& a : s.queue.trace()) EXPECT_NE(a.kind, DispatchAction::Kind::Dispatched);
  EXPECT_EQ(code_of([&] { s.jobs.fetch_results(id); }), ErrorCode::NoResults);
}

TEST(JobManager, CancelRunningCloudJobAbortsAndReleases) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  const auto id = s.jobs.submit(sleep_job(600'000, "Cloud"));
  s.run_for(seconds(3));
  ASSERT_EQ(s.state(id), JobState::Running);
  const auto vm_id = *s.store.get_job(id)->assigned_vm;
  const auto token = s.store.get_vm(vm_id)->token;
  EXPECT_EQ(s.jobs.cancel(id), JobState::Cancelled);
  EXPECT_EQ(s.store.get_vm(vm_id)->state, VmState::Idle);
  EXPECT_FALSE(s.host.find(s.store.get_vm(vm_id)->endpoint)->status().busy);
  // A late push is refused.
  EXPECT_EQ(code_of([&] { s.jobs.receive_results(id, token, ResultBundle{id, true, {}, "ok"}); }),
            ErrorCode::ConflictingResults);
}

TEST(JobManager, CancelTerminalIsNoop) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  const auto id = s.jobs.submit(sleep_job(0, "Cloud"));
  s.run_for(seconds(5));
  ASSERT_EQ(s.state(id), JobState::Completed);
  EXPECT_EQ(s.jobs.cancel(id), JobState::Completed);
  EXPECT_EQ(code_of([&] { s.jobs.cancel("job-nope"); }), ErrorCode::NotFound);
}

TEST(JobManager, DeriveFromCompletedStagesOutputs) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  const auto first = s.jobs.submit(sleep_job(600'000, "Cloud"));
  EXPECT_EQ(code_of([&] {
              auto env = sleep_job(0, "Cloud");
              env.derive_from = first;
              s.jobs.submit(env);
            }),
            ErrorCode::DeriveSourceNotReady);
  EXPECT_EQ(code_of([&] {
              auto env = sleep_job(0, "Cloud");
              env.derive_from = "job-nope";
              s.jobs.submit(env);
            }),
            ErrorCode::ValidationError);
  s.run_for(seconds(605));
  ASSERT_EQ(s.state(first), JobState::Completed);
  auto env = sleep_job(0, "Cloud");
  env.derive_from = first;
  const auto second = s.jobs.submit(env);
  const auto rec = s.store.get_job(second);
  EXPECT_EQ(rec->spec.derive_from, first);
  EXPECT_TRUE(s.workspace.load_inputs(rec->workspace).count("done.txt"));
}

TEST(JobManager, ListsInSubmissionOrder) {
  CloudStack s({}, SimCloudConfig{Duration{0}});
  EXPECT_TRUE(s.jobs.list_jobs().empty());
  EXPECT_TRUE(s.jobs.list_vms().empty());
  std::vector<JobId> ids;
  for (int i = 0; i < 3; ++i) ids.push_back(s.jobs.submit(sleep_job(0, "Cloud")));
  const auto list = s.jobs.list_jobs();
  ASSERT_EQ(list.size(), 3u);
  for (int i = 0; i < 3; ++i) EXPECT_EQ(list[i]["id"], ids[i]);
  s.step();  // dispatch reports demand
  s.step();  // VM manager launches
  EXPECT_EQ(s.jobs.list_vms().size(), 3u);  // one per queued job
  EXPECT_FALSE(s.jobs.list_vms()[0].contains("token"));
}
