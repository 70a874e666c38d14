#pragma once

// REST binding of the job manager.
//
//   POST   /jobs                 multipart submission        -> 201 {"id"}
//   GET    /jobs[?state=&backend=]                           -> [status]
//   GET    /jobs/{id}                                        -> status
//   DELETE /jobs/{id}            cancel                      -> {"id","state"}
//   GET    /jobs/{id}/results    ustar archive of outputs
//   POST   /jobs/{id}/results    agent push-back (bearer token)
//   GET    /vms, /accounting, /debug/dispatch-trace, /debug/recovery,
//          /debug/scaling, /healthz

#include <functional>
#include <memory>
#include <string>
#include <thread>

#include <json.hpp>

#include "burstq/job_manager.hpp"

namespace httplib {
class Server;
}

namespace burstq {

struct HttpApiOptions {
  bool lockdown = true;  // loopback-only, except result push-back
  std::int64_t max_upload_bytes = 256LL * 1024 * 1024;
  bool debug_endpoints = true;
};

struct DebugSources {
  std::function<nlohmann::json()> dispatch_trace;
  std::function<nlohmann::json()> recovery;
  std::function<nlohmann::json()> scaling;
};

class HttpApi {
 public:
  HttpApi(JobManager& jobs, HttpApiOptions options, DebugSources debug = {});
  ~HttpApi();

  /// Binds and serves in the background; port 0 picks a free port.
  int start(const std::string& host, int port);
  void stop();
  int port() const { return port_; }

 private:
  void install_routes(httplib::Server& server);

  JobManager& jobs_;
  HttpApiOptions options_;
  DebugSources debug_;
  std::unique_ptr<httplib::Server> server_;
  std::thread thread_;
  int port_ = 0;
};

/// Loopback peer addresses (IPv4, IPv6 and v4-mapped forms).
bool is_loopback_address(const std::string& addr);

/// ResultSink that calls the job manager in-process (simulation).
class DirectResultSink final : public ResultSink {
 public:
  explicit DirectResultSink(JobManager& jobs) : jobs_(jobs) {}
  PushOutcome push(const std::string& callback_url, const std::string& token,
                   const ResultBundle& bundle) override;

 private:
  JobManager& jobs_;
};

}  // namespace burstq
