#include "burstq/transport.hpp"

#include <httplib.h>

#include <json.hpp>

#include "burstq/agent.hpp"
#include "burstq/error.hpp"

namespace burstq {
namespace {

using nlohmann::json;

void configure(httplib::Client& cli, Duration timeout) {
  const auto secs = std::chrono::duration_cast<std::chrono::seconds>(timeout).count();
  const auto usecs =
      std::chrono::duration_cast<std::chrono::microseconds>(timeout).count() % 1000000;
  cli.set_connection_timeout(secs, usecs);
  cli.set_read_timeout(secs, usecs);
  cli.set_write_timeout(secs, usecs);
}

}  // namespace

std::string_view to_string(DispatchOutcome o) {
  switch (o) {
    case DispatchOutcome::Accepted: return "accepted";
    case DispatchOutcome::Busy: return "busy";
    case DispatchOutcome::Unreachable: return "unreachable";
  }
  return "?";
}

std::string encode_status(const AgentStatus& s) {
  json j{{"mode", s.busy ? "Busy" : "Idle"},
         {"uptime_s", s.uptime_s},
         {"push_attempts", s.push_attempts},
         {"jobs_run", s.jobs_run}};
  if (s.job_id) j["job_id"] = *s.job_id;
  if (s.fault) j["fault"] = *s.fault;
  return j.dump();
}

AgentStatus decode_status(const std::string& body) {
  const auto j = json::parse(body);
  AgentStatus s;
  s.busy = j.at("mode").get<std::string>() == "Busy";
  s.uptime_s = j.value("uptime_s", 0.0);
  s.push_attempts = j.value("push_attempts", std::int64_t{0});
  s.jobs_run = j.value("jobs_run", std::int64_t{0});
  if (j.contains("job_id")) s.job_id = j["job_id"].get<std::string>();
  if (j.contains("fault")) s.fault = j["fault"].get<std::string>();
  return s;
}

// ---------------------------------------------------------------------------

DispatchOutcome HttpAgentTransport::execute(const std::string& endpoint,
                                            const DispatchPayload& p) {
  httplib::Client cli(endpoint);
  configure(cli, timeout_);
  httplib::MultipartFormDataItems items{
      {"job_id", p.job_id, "", ""},
      {"kind", std::string(to_string(p.kind)), "", ""},
      {"params", json(p.params).dump(), "", "application/json"},
      {"callback_url", p.callback_url, "", ""},
      {"token", p.token, "", ""},
  };
  for (const auto& [name, body] : p.files)
    items.push_back({name, body, name, "application/octet-stream"});
  auto res = cli.Post("/execute", items);
  if (!res) return DispatchOutcome::Unreachable;
  if (res->status == 200 || res->status == 202) return DispatchOutcome::Accepted;
  if (res->status == 409) return DispatchOutcome::Busy;
  return DispatchOutcome::Unreachable;
}

std::optional<AgentStatus> HttpAgentTransport::status(const std::string& endpoint) {
  httplib::Client cli(endpoint);
  configure(cli, std::min<Duration>(timeout_, std::chrono::seconds(5)));
  auto res = cli.Get("/status");
  if (!res || res->status != 200) return std::nullopt;
  try {
    return decode_status(res->body);
  } catch (const std::exception&) {
    return std::nullopt;
  }
}

bool HttpAgentTransport::abort(const std::string& endpoint, const JobId& job_id) {
  httplib::Client cli(endpoint);
  configure(cli, std::min<Duration>(timeout_, std::chrono::seconds(5)));
  auto res = cli.Post("/abort", json{{"job_id", job_id}}.dump(), "application/json");
  return res && res->status == 200;
}

PushOutcome HttpResultSink::push(const std::string& callback_url, const std::string& token,
                                 const ResultBundle& bundle) {
  httplib::Client cli(callback_url);
  configure(cli, timeout_);
  httplib::Headers headers{{"Authorization", "Bearer " + token}};
  httplib::MultipartFormDataItems items{
      {"exit_status", bundle.ok ? "ok" : "error", "", ""},
      {"log", bundle.log_text, "", "text/plain"},
  };
  for (const auto& [name, body] : bundle.outputs)
    items.push_back({name, body, name, "application/octet-stream"});
  auto res = cli.Post("/jobs/" + bundle.job_id + "/results", headers, items);
  if (!res) return PushOutcome::Unreachable;
  if (res->status == 200) return PushOutcome::Acknowledged;
  if (res->status == 401 || res->status == 403) return PushOutcome::AuthRejected;
  if (res->status == 404 || res->status == 409) return PushOutcome::Conflict;
  return PushOutcome::Unreachable;
}

// ---------------------------------------------------------------------------

void InProcessAgentTransport::attach(const std::string& endpoint, AgentCore* agent) {
  std::lock_guard lock(mu_);
  agents_[endpoint] = agent;
}

void InProcessAgentTransport::detach(const std::string& endpoint) {
  std::lock_guard lock(mu_);
  agents_.erase(endpoint);
}

void InProcessAgentTransport::set_unreachable(const std::string& endpoint, bool unreachable) {
  std::lock_guard lock(mu_);
  if (unreachable) {
    black_holed_.insert(endpoint);
  } else {
    black_holed_.erase(endpoint);
  }
}

AgentCore* InProcessAgentTransport::find(const std::string& endpoint) {
  std::lock_guard lock(mu_);
  if (black_holed_.contains(endpoint)) return nullptr;
  auto it = agents_.find(endpoint);
  return it == agents_.end() ? nullptr : it->second;
}

DispatchOutcome InProcessAgentTransport::execute(const std::string& endpoint,
                                                 const DispatchPayload& payload) {
  AgentCore* agent = find(endpoint);
  if (!agent) return DispatchOutcome::Unreachable;
  try {
    return agent->execute(payload) == ExecuteOutcome::Accepted ? DispatchOutcome::Accepted
                                                               : DispatchOutcome::Busy;
  } catch (const Error&) {
    return DispatchOutcome::Unreachable;
  }
}

std::optional<AgentStatus> InProcessAgentTransport::status(const std::string& endpoint) {
  AgentCore* agent = find(endpoint);
  if (!agent) return std::nullopt;
  return agent->status();
}

bool InProcessAgentTransport::abort(const std::string& endpoint, const JobId& job_id) {
  AgentCore* agent = find(endpoint);
  if (!agent) return false;
  try {
    agent->abort(job_id);
    return true;
  } catch (const Error&) {
    return false;
  }
}

}  // namespace burstq
