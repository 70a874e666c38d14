#include <gtest/gtest.h>

#include <atomic>
#include <deque>
#include <thread>

#include "burstq/agent.hpp"
#include "burstq/error.hpp"
#include "support.hpp"

using namespace burstq;
using namespace burstq::testing;

namespace {

class RecordingSink : public ResultSink {
 public:
  PushOutcome push(const std::string&, const std::string& token, const ResultBundle& bundle) override {
    std::lock_guard lock(mu);
    pushes.push_back({token, bundle});
    if (!script.empty()) {
      const auto o = script.front();
      script.pop_front();
      return o;
    }
    return PushOutcome::Acknowledged;
  }
  std::size_t count() {
    std::lock_guard lock(mu);
    return pushes.size();
  }
  std::mutex mu;
  std::deque<PushOutcome> script;
  std::vector<std::pair<std::string, ResultBundle>> pushes;
};

DispatchPayload sleep_payload(const std::string& id, std::int64_t ms) {
  DispatchPayload p;
  p.job_id = id;
  p.kind = JobKind::Sleep;
  p.params["duration_ms"] = std::to_string(ms);
  p.callback_url = "http://manager";
  p.token = "secret";
  return p;
}

struct LiveAgent {
  explicit LiveAgent(double accel = 1.0, PushPolicy push = {})
      : clock(accel), executor(clock, 1), core("a1", executor, sink, clock, AgentOptions{dir.path(), push}) {}
  ~LiveAgent() { executor.shutdown(); }
  bool idle() { return !core.status().busy; }

  TempDir dir;
  ScaledClock clock;
  ThreadExecutor executor;
  RecordingSink sink;
  AgentCore core;
};

}  // namespace

TEST(Agent, ExecuteOnIdleIsAcceptedAndPushesOnce) {
  LiveAgent a;
  EXPECT_EQ(a.core.execute(sleep_payload("job-1", 0)), ExecuteOutcome::Accepted);
  ASSERT_TRUE(eventually([&] { return a.idle(); }));
  ASSERT_EQ(a.sink.count(), 1u);
  EXPECT_EQ(a.sink.pushes[0].first, "secret");
  EXPECT_TRUE(a.sink.pushes[0].second.ok);
  EXPECT_EQ(a.core.status().jobs_run, 1);
  EXPECT_FALSE(a.core.status().fault.has_value());
}

TEST(Agent, SecondExecuteWhileBusyIsRejected) {
  LiveAgent a;
  EXPECT_EQ(a.core.execute(sleep_payload("job-1", 300)), ExecuteOutcome::Accepted);
  EXPECT_EQ(a.core.execute(sleep_payload("job-2", 0)), ExecuteOutcome::Busy);
  const auto st = a.core.status();
  EXPECT_TRUE(st.busy);
  EXPECT_EQ(st.job_id, "job-1");
  ASSERT_TRUE(eventually([&] { return a.idle(); }));
  EXPECT_EQ(a.sink.count(), 1u);
}

TEST(Agent, MalformedPayload) {
  LiveAgent a;
  auto p = sleep_payload("", 0);
  try {
    a.core.execute(p);
    FAIL();
  } catch (const Error& e) {
    EXPECT_EQ(e.code(), ErrorCode::MalformedPayload);
  }
  p = sleep_payload("job-1", 0);
  p.files["../evil"] = "x";
  EXPECT_THROW(a.core.execute(p), Error);
  EXPECT_TRUE(a.idle());
}

TEST(Agent, SleepKernelTakesAtLeastItsDuration) {
  LiveAgent a;
  const auto start = std::chrono::steady_clock::now();
  a.core.execute(sleep_payload("job-1", 100));
  ASSERT_TRUE(eventually([&] { return a.sink.count() == 1; }));
  EXPECT_GE(std::chrono::steady_clock::now() - start, std::chrono::milliseconds(100));
}

TEST(Agent, ConcurrentBarrageAcceptsExactlyOne) {
  for (int round = 0; round < 20; ++round) {
    LiveAgent a;
    std::atomic<int> accepted{0}, busy{0};
    std::vector<std::thread> threads;
    for (int t = 0; t < 16; ++t) {
      threads.emplace_back([&, t] {
        const auto o = a.core.execute(sleep_payload("job-" + std::to_string(t), 50));
        (o == ExecuteOutcome::Accepted ? accepted : busy)++;
      });
    }
    for (auto& th : threads) th.join();
    EXPECT_EQ(accepted.load(), 1);
    EXPECT_EQ(busy.load(), 15);
    ASSERT_TRUE(eventually([&] { return a.idle(); }));
  }
}

TEST(Agent, PushRetriesWithBackoffUntilAcknowledged) {
  LiveAgent a(100.0);
  a.sink.script = {PushOutcome::Unreachable, PushOutcome::Unreachable, PushOutcome::Unreachable};
  a.core.execute(sleep_payload("job-1", 0));
  ASSERT_TRUE(eventually([&] { return a.idle(); }));
  EXPECT_EQ(a.sink.count(), 4u);
  EXPECT_EQ(a.core.status().push_attempts, 4);
  EXPECT_FALSE(a.core.status().fault.has_value());
  bool logged = false;
  for (const auto& line : a.core.log()) logged = logged || line.find("push attempt 4") != std::string::npos;
  EXPECT_TRUE(logged);
}

TEST(Agent, AuthRejectionStopsRetrying) {
  LiveAgent a(100.0);
  a.sink.script = {PushOutcome::AuthRejected};
  a.core.execute(sleep_payload("job-1", 0));
  ASSERT_TRUE(eventually([&] { return a.idle(); }));
  std::this_thread::sleep_for(std::chrono::milliseconds(50));
  EXPECT_EQ(a.sink.count(), 1u);
  ASSERT_TRUE(a.core.status().fault.has_value());
}

TEST(Agent, ExhaustedDeliveryFaultsAndGoesIdle) {
  PushPolicy push;
  push.max_attempts = 3;
  LiveAgent a(1000.0, push);
  a.sink.script = {PushOutcome::Unreachable, PushOutcome::Unreachable, PushOutcome::Unreachable};
  a.core.execute(sleep_payload("job-1", 0));
  ASSERT_TRUE(eventually([&] { return a.idle(); }));
  EXPECT_EQ(a.sink.count(), 3u);
  EXPECT_TRUE(a.core.status().fault.has_value());
}

TEST(Agent, AbortStopsWithoutPush) {
  LiveAgent a;
  a.core.execute(sleep_payload("job-1", 5000));
  EXPECT_THROW(a.core.abort("job-2"), Error);
  a.core.abort("job-1");
  EXPECT_TRUE(a.idle());
  std::this_thread::sleep_for(std::chrono::milliseconds(100));
  EXPECT_EQ(a.sink.count(), 0u);
  EXPECT_EQ(a.core.execute(sleep_payload("job-3", 0)), ExecuteOutcome::Accepted);
  ASSERT_TRUE(eventually([&] { return a.sink.count() == 1; }));
  EXPECT_EQ(a.sink.pushes[0].second.job_id, "job-3");
}

TEST(Agent, ScanKernelProducesRequiredOutputs) {
  LiveAgent a;
  const auto d = make_scan_data(12, 5, 8);
  DispatchPayload p;
  p.job_id = "job-scan";
  p.kind = JobKind::RegressionScan;
  p.files = {{"geno.csv", d.geno_csv}, {"pheno.csv", d.pheno_csv}};
  p.callback_url = "http://manager";
  p.token = "t";
  a.core.execute(p);
  ASSERT_TRUE(eventually([&] { return a.sink.count() == 1; }));
  const auto& bundle = a.sink.pushes[0].second;
  EXPECT_TRUE(bundle.ok);
  EXPECT_TRUE(bundle.outputs.count("fprofile.tsv"));
  EXPECT_TRUE(bundle.outputs.count("peak.json"));
}

TEST(Agent, HttpFrontMatchesCore) {
  LiveAgent a;
  AgentServer server(a.core);
  const int port = server.start();
  HttpAgentTransport transport(std::chrono::seconds(5));
  const std::string ep = "http://127.0.0.1:" + std::to_string(port);
  auto st = transport.status(ep);
  ASSERT_TRUE(st.has_value());
  EXPECT_FALSE(st->busy);
  EXPECT_EQ(transport.execute(ep, sleep_payload("job-1", 500)), DispatchOutcome::Accepted);
  EXPECT_EQ(transport.execute(ep, sleep_payload("job-2", 0)), DispatchOutcome::Busy);
  st = transport.status(ep);
  ASSERT_TRUE(st.has_value());
  EXPECT_TRUE(st->busy);
  EXPECT_EQ(st->job_id, "job-1");
  EXPECT_TRUE(transport.abort(ep, "job-1"));
  EXPECT_FALSE(transport.status(ep)->busy);
  server.stop();
  EXPECT_FALSE(transport.status(ep).has_value());
  EXPECT_EQ(transport.execute(ep, sleep_payload("job-3", 0)), DispatchOutcome::Unreachable);
}
