#pragma once

// Shared fixtures and independent oracles for the test suites.

#include <chrono>
#include <cmath>
#include <filesystem>
#include <functional>
#include <memory>
#include <random>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include "burstq/http_api.hpp"
#include "burstq/job_manager.hpp"
#include "burstq/local_grid.hpp"
#include "burstq/provider.hpp"
#include "burstq/queue_manager.hpp"
#include "burstq/store.hpp"
#include "burstq/vm_pool.hpp"
#include "burstq/workspace.hpp"

namespace burstq::testing {

namespace fs = std::filesystem;

class TempDir {
 public:
  TempDir() {
    std::random_device rd;
    path_ = fs::temp_directory_path() /
            ("burstq-test-" + std::to_string(rd()) + std::to_string(rd()));
    fs::create_directories(path_);
  }
  ~TempDir() {
    std::error_code ec;
    fs::remove_all(path_, ec);
  }
  const fs::path& path() const { return path_; }
  fs::path operator/(const std::string& s) const { return path_ / s; }

 private:
  fs::path path_;
};

inline Timestamp t0() { return from_millis(1'736'121'600'000); }  // 2025-01-06T00:00:00Z

/// Naive minimum-charge billing: count started periods one by one.
inline std::int64_t billing_loop_oracle(std::int64_t uptime_ms, std::int64_t period_ms) {
  std::int64_t periods = 1;
  std::int64_t covered = period_ms;
  while (covered < uptime_ms) {
    ++periods;
    covered += period_ms;
  }
  return periods;
}

/// Per-marker F statistic by solving the 2x2 normal equations with Cramer's
/// rule in extended precision, independent of the production formula.
inline std::vector<long double> f_oracle(const std::vector<std::vector<int>>& g,
                                         const std::vector<double>& y) {
  const std::size_t n = y.size();
  const std::size_t m = g.front().size();
  std::vector<long double> out(m, 0.0L);
  for (std::size_t j = 0; j < m; ++j) {
    long double s1 = n, sx = 0, sxx = 0, sy = 0, sxy = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const long double x = g[i][j];
      sx += x;
      sxx += x * x;
      sy += y[i];
      sxy += x * y[i];
    }
    const long double det = s1 * sxx - sx * sx;
    if (std::fabs(det) < 1e-18L) continue;
    const long double a = (sy * sxx - sx * sxy) / det;
    const long double b = (s1 * sxy - sx * sy) / det;
    long double ybar = sy / s1, sst = 0, sse = 0;
    for (std::size_t i = 0; i < n; ++i) {
      const long double r = y[i] - a - b * g[i][j];
      sse += r * r;
      sst += (y[i] - ybar) * (y[i] - ybar);
    }
    const long double ssr = sst - sse;
    out[j] = ssr / (sse / static_cast<long double>(n - 2));
  }
  return out;
}

struct ScanData {
  std::vector<std::vector<int>> geno;
  std::vector<double> pheno;
  std::string geno_csv;
  std::string pheno_csv;
};

/// Random n x m genotype matrix with a phenotype driven by marker `causal`
/// plus noise. Columns are never constant.
inline ScanData make_scan_data(std::size_t n, std::size_t m, std::uint64_t seed,
                               std::size_t causal = 0) {
  std::mt19937_64 rng(seed);
  std::uniform_int_distribution<int> code(0, 2);
  std::normal_distribution<double> noise(0.0, 1.0);
  ScanData d;
  d.geno.assign(n, std::vector<int>(m));
  for (std::size_t j = 0; j < m; ++j) {
    for (std::size_t i = 0; i < n; ++i) d.geno[i][j] = code(rng);
    d.geno[0][j] = 0;
    d.geno[1][j] = 2;
  }
  std::ostringstream g, p;
  p.precision(17);
  for (std::size_t i = 0; i < n; ++i) {
    for (std::size_t j = 0; j < m; ++j) g << (j ? "," : "") << d.geno[i][j];
    g << "\n";
    const double y = 1.5 * d.geno[i][causal] + noise(rng);
    d.pheno.push_back(y);
    p << y << "\n";
  }
  d.geno_csv = g.str();
  d.pheno_csv = p.str();
  return d;
}

/// Polls `pred` until true or `timeout` of wall time passes.
inline bool eventually(const std::function<bool()>& pred,
                       std::chrono::milliseconds timeout = std::chrono::seconds(10),
                       std::chrono::milliseconds step = std::chrono::milliseconds(10)) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  while (std::chrono::steady_clock::now() < deadline) {
    if (pred()) return true;
    std::this_thread::sleep_for(step);
  }
  return pred();
}

inline SubmissionEnvelope sleep_job(std::int64_t ms, std::optional<std::string> backend = {},
                                    std::int64_t markers = 1) {
  SubmissionEnvelope env;
  env.types = {"sleep"};
  env.params["duration_ms"] = std::to_string(ms);
  env.backend = std::move(backend);
  env.markers = markers;
  env.samples = 10;
  env.owner = "tester";
  return env;
}

/// The cloud half of the stack on a manual clock with virtual executors,
/// stepped explicitly by the test.
struct CloudStack {
  explicit CloudStack(ScalingConfig scaling = {}, SimCloudConfig cloud_cfg = {},
                      DispatchConfig dispatch_cfg = {})
      : clock(t0()),
        store(StoreOptions{{}, false, 0, 2}),
        workspace(dir / "work"),
        agent_exec(clock, 0),
        jobs(store, workspace, clock, JobManagerConfig{}),
        sink(jobs),
        host(clock, agent_exec, sink, transport, dir / "agents"),
        cloud(clock, host, cloud_cfg),
        pool(store, cloud, transport, clock, scaling),
        queue(store, pool, transport, workspace, dispatch_cfg, "inproc://manager") {
    pool.set_agent_lost_handler(
        [this](const JobId& j, const VmId& v, const std::string& why, Timestamp t) {
          queue.handle_agent_failure(j, v, why, t);
        });
    jobs.set_abort_hook(Backend::Cloud, [this](const JobRecord& job) {
      if (!job.assigned_vm) return;
      if (auto vm = store.get_vm(*job.assigned_vm)) transport.abort(vm->endpoint, job.id);
    });
  }

  /// Advances one second: effects, VM manager, dispatch.
  void step(Duration dt = std::chrono::seconds(1)) {
    clock.advance(dt);
    const auto now = clock.now();
    agent_exec.advance(now);
    pool.run_once(now);
    queue.tick(now);
  }

  void run_for(Duration d) {
    for (Duration e{0}; e < d; e += std::chrono::seconds(1)) step();
  }

  JobState state(const JobId& id) { return store.get_job(id)->state; }

  TempDir dir;
  ManualClock clock;
  Store store;
  Workspace workspace;
  InProcessAgentTransport transport;
  VirtualExecutor agent_exec;
  JobManager jobs;
  DirectResultSink sink;
  InProcessAgentHost host;
  SimCloud cloud;
  VmPool pool;
  QueueManager queue;
};

}  // namespace burstq::testing
