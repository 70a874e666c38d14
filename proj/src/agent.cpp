#include "burstq/agent.hpp"

#include <httplib.h>

#include <fstream>
#include <json.hpp>

#include "burstq/error.hpp"
#include "burstq/kernels.hpp"

namespace burstq {

namespace fs = std::filesystem;

AgentCore::AgentCore(std::string name, Executor& executor, ResultSink& sink, Clock& clock,
                     AgentOptions options)
    : name_(std::move(name)),
      executor_(executor),
      sink_(sink),
      clock_(clock),
      options_(std::move(options)),
      started_at_(clock.now()) {
  if (options_.work_root.empty())
    options_.work_root = fs::temp_directory_path() / ("burstq-agent-" + name_);
}

AgentCore::~AgentCore() {
  std::lock_guard lock(mu_);
  ++generation_;
  push_stop_.request_stop();
}

void AgentCore::append_log(std::string line) {
  log_.push_back(format_time(clock_.now()) + " " + std::move(line));
}

ExecuteOutcome AgentCore::execute(DispatchPayload payload) {
  if (payload.job_id.empty() || !is_safe_file_name(payload.job_id))
    throw Error(ErrorCode::MalformedPayload, "payload missing job_id");
  if (payload.callback_url.empty())
    throw Error(ErrorCode::MalformedPayload, "payload missing callback_url");
  for (const auto& [name, body] : payload.files) {
    if (!is_safe_file_name(name))
      throw Error(ErrorCode::MalformedPayload, "bad input file name '" + name + "'");
  }

  bool expected = false;
  if (!busy_.compare_exchange_strong(expected, true)) {
    std::lock_guard lock(mu_);
    append_log("rejected " + payload.job_id + ": busy");
    return ExecuteOutcome::Busy;
  }

  const fs::path workdir = options_.work_root / payload.job_id;
  std::uint64_t gen;
  {
    std::lock_guard lock(mu_);
    gen = ++generation_;
    current_job_ = payload.job_id;
    current_work_.reset();
    fault_.reset();
    push_attempts_ = 0;
    push_stop_ = std::stop_source{};
    append_log("accepted " + payload.job_id + " (" + std::string(to_string(payload.kind)) + ")");
  }

  try {
    fs::create_directories(workdir);
    for (const auto& [name, body] : payload.files) {
      std::ofstream out(workdir / name, std::ios::binary | std::ios::trunc);
      out.write(body.data(), static_cast<std::streamsize>(body.size()));
      if (!out) throw std::runtime_error("cannot stage " + name);
    }
  } catch (const std::exception& e) {
    std::lock_guard lock(mu_);
    append_log(std::string("staging failed: ") + e.what());
    // The kernel will report the missing input as an error result.
  }

  auto shared = std::make_shared<DispatchPayload>(std::move(payload));
  auto work = executor_.try_submit([this, shared, workdir, gen](WorkContext& ctx) -> Effect {
    KernelResult result = run_kernel(shared->kind, shared->params, workdir, ctx);
    if (ctx.cancelled()) return nullptr;
    ResultBundle bundle{shared->job_id, result.ok, std::move(result.outputs),
                        result.ok ? result.log_text
                                  : (result.log_text.empty() ? "error" : result.log_text)};
    return [this, shared, bundle = std::move(bundle), gen]() mutable {
      run_push(*shared, std::move(bundle), gen);
    };
  });

  std::lock_guard lock(mu_);
  if (!work) {
    append_log("no execution slot for " + shared->job_id);
    if (generation_ == gen) {
      current_job_.reset();
      busy_ = false;
    }
    return ExecuteOutcome::Busy;
  }
  if (generation_ == gen && current_job_) current_work_ = *work;
  return ExecuteOutcome::Accepted;
}

void AgentCore::run_push(const DispatchPayload& payload, ResultBundle bundle,
                         std::uint64_t generation) {
  Duration delay = options_.push.initial_delay;
  for (int attempt = 1; attempt <= options_.push.max_attempts; ++attempt) {
    std::stop_token stop;
    {
      std::lock_guard lock(mu_);
      if (generation != generation_) return;
      ++push_attempts_;
      stop = push_stop_.get_token();
    }
    const PushOutcome outcome = sink_.push(payload.callback_url, payload.token, bundle);
    {
      std::lock_guard lock(mu_);
      if (generation != generation_) return;
      const char* what = outcome == PushOutcome::Acknowledged   ? "acknowledged"
                         : outcome == PushOutcome::AuthRejected ? "auth rejected"
                         : outcome == PushOutcome::Conflict     ? "conflict"
                                                                : "unreachable";
      append_log("push attempt " + std::to_string(attempt) + " for " + payload.job_id + ": " +
                 what);
      if (outcome == PushOutcome::AuthRejected) {
        fault_ = "result push rejected: bad token";
        break;
      }
      if (outcome == PushOutcome::Acknowledged || outcome == PushOutcome::Conflict) break;
      if (attempt == options_.push.max_attempts) {
        fault_ = "result delivery exhausted after " + std::to_string(attempt) + " attempts";
        break;
      }
    }
    if (!clock_.sleep_for(delay, stop)) return;
    delay = std::min<Duration>(
        options_.push.max_delay,
        Duration{static_cast<std::int64_t>(static_cast<double>(delay.count()) *
                                           options_.push.factor)});
  }
  finish(generation);
}

void AgentCore::finish(std::uint64_t generation) {
  std::lock_guard lock(mu_);
  if (generation != generation_) return;
  if (current_job_) {
    std::error_code ec;
    fs::remove_all(options_.work_root / *current_job_, ec);
  }
  current_job_.reset();
  current_work_.reset();
  ++jobs_run_;
  busy_ = false;
}

AgentStatus AgentCore::status() const {
  std::lock_guard lock(mu_);
  AgentStatus s;
  s.busy = busy_.load();
  s.job_id = current_job_;
  s.uptime_s = to_seconds(clock_.now() - started_at_);
  s.fault = fault_;
  s.push_attempts = push_attempts_;
  s.jobs_run = jobs_run_;
  return s;
}

void AgentCore::abort(const JobId& job_id) {
  std::lock_guard lock(mu_);
  if (!current_job_ || *current_job_ != job_id)
    throw Error(ErrorCode::NotFound, "not executing " + job_id);
  ++generation_;
  push_stop_.request_stop();
  if (current_work_) executor_.cancel(*current_work_);
  std::error_code ec;
  fs::remove_all(options_.work_root / job_id, ec);
  append_log("aborted " + job_id);
  current_job_.reset();
  current_work_.reset();
  busy_ = false;
}

std::vector<std::string> AgentCore::log() const {
  std::lock_guard lock(mu_);
  return log_;
}

// ---------------------------------------------------------------------------

DispatchPayload payload_from_fields(const std::map<std::string, std::string>& fields,
                                    std::map<std::string, std::string> files) {
  auto get = [&](const char* key) -> std::string {
    auto it = fields.find(key);
    return it == fields.end() ? std::string{} : it->second;
  };
  DispatchPayload p;
  p.job_id = get("job_id");
  if (p.job_id.empty()) throw Error(ErrorCode::MalformedPayload, "missing job_id");
  auto kind = parse_job_kind(get("kind"));
  if (!kind) throw Error(ErrorCode::MalformedPayload, "missing or unknown kind");
  p.kind = *kind;
  const auto params = get("params");
  if (!params.empty()) {
    try {
      p.params = nlohmann::json::parse(params).get<std::map<std::string, std::string>>();
    } catch (const std::exception&) {
      throw Error(ErrorCode::MalformedPayload, "params must be a JSON object of strings");
    }
  }
  p.callback_url = get("callback_url");
  if (p.callback_url.empty()) throw Error(ErrorCode::MalformedPayload, "missing callback_url");
  p.token = get("token");
  p.files = std::move(files);
  return p;
}

AgentServer::AgentServer(AgentCore& core) : core_(core), server_(std::make_unique<httplib::Server>()) {
  using nlohmann::json;
  auto error_reply = [](httplib::Response& res, const Error& e) {
    res.status = http_status(e.code());
    res.set_content(json{{"error", to_string(e.code())}, {"message", e.what()}}.dump(),
                    "application/json");
  };

  server_->Post("/execute", [this, error_reply](const httplib::Request& req, httplib::Response& res) {
    try {
      std::map<std::string, std::string> fields;
      std::map<std::string, std::string> files;
      for (const auto& [name, part] : req.files) {
        if (part.filename.empty()) {
          fields[name] = part.content;
        } else {
          files[name] = part.content;
        }
      }
      auto payload = payload_from_fields(fields, std::move(files));
      if (core_.execute(std::move(payload)) == ExecuteOutcome::Accepted) {
        res.status = 202;
        res.set_content(R"({"accepted":true})", "application/json");
      } else {
        res.status = 409;
        res.set_content(R"({"error":"busy"})", "application/json");
      }
    } catch (const Error& e) {
      error_reply(res, e);
    }
  });

  server_->Get("/status", [this](const httplib::Request&, httplib::Response& res) {
    res.set_content(encode_status(core_.status()), "application/json");
  });

  server_->Post("/abort", [this, error_reply](const httplib::Request& req, httplib::Response& res) {
    try {
      std::string job_id;
      try {
        job_id = json::parse(req.body).at("job_id").get<std::string>();
      } catch (const std::exception&) {
        throw Error(ErrorCode::MalformedPayload, "body must be {\"job_id\": ...}");
      }
      core_.abort(job_id);
      res.set_content(R"({"aborted":true})", "application/json");
    } catch (const Error& e) {
      error_reply(res, e);
    }
  });
}

AgentServer::~AgentServer() { stop(); }

int AgentServer::start(const std::string& host, int port) {
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else {
    port_ = server_->bind_to_port(host, port) ? port : -1;
  }
  if (port_ <= 0) throw Error(ErrorCode::Unavailable, "agent cannot bind " + host);
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  return port_;
}

void AgentServer::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace burstq
