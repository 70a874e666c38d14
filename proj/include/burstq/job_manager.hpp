#pragma once

// Client-facing job operations and the result push-back endpoint logic.
// HTTP binding lives in http_api.hpp.

#include <functional>
#include <map>
#include <mutex>
#include <optional>
#include <string>
#include <vector>

#include <json.hpp>

#include "burstq/store.hpp"
#include "burstq/transport.hpp"
#include "burstq/vm_pool.hpp"
#include "burstq/workspace.hpp"

namespace burstq {

struct JobManagerConfig {
  std::int64_t max_upload_bytes = 256LL * 1024 * 1024;
  bool reject_oversize = true;
  RoutingConfig routing;
  Duration billing_period = std::chrono::seconds(3600);
};

struct SubmissionEnvelope {
  std::vector<std::string> types;  // every "type" field seen
  std::map<std::string, std::string> params;
  std::vector<InputFile> files;
  std::optional<std::string> backend;
  std::optional<JobId> derive_from;
  std::string owner;
  // Declared dataset size for kinds whose inputs do not reveal it.
  std::optional<std::int64_t> markers;
  std::optional<std::int64_t> samples;
};

class JobManager {
 public:
  /// Invoked with a Running job being cancelled, before it is marked Cancelled.
  using AbortHook = std::function<void(const JobRecord&)>;

  JobManager(Store& store, Workspace& workspace, Clock& clock, JobManagerConfig config);

  JobId submit(const SubmissionEnvelope& envelope);
  nlohmann::json get_status(const JobId& id) const;

  /// Returns true for a fresh completion, false for an idempotent replay.
  bool receive_results(const JobId& id, const std::string& token, const ResultBundle& bundle);

  /// Tar archive of the job's output files.
  std::string fetch_results(const JobId& id) const;

  JobState cancel(const JobId& id);

  nlohmann::json list_jobs(std::optional<JobState> state = {},
                           std::optional<Backend> backend = {}) const;
  nlohmann::json list_vms() const;
  CostLedger accounting() const;

  void set_abort_hook(Backend backend, AbortHook hook);

  const JobManagerConfig& config() const { return config_; }

 private:
  Store& store_;
  Workspace& workspace_;
  Clock& clock_;
  JobManagerConfig config_;
  std::mutex results_mu_;
  std::map<Backend, AbortHook> abort_hooks_;
};

nlohmann::json status_document(const JobRecord& job);

}  // namespace burstq
