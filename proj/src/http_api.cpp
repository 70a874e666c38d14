#include "burstq/http_api.hpp"

#include <httplib.h>

#include "burstq/error.hpp"

namespace burstq {

using nlohmann::json;

namespace {

void error_reply(httplib::Response& res, ErrorCode code, const std::string& message) {
  res.status = http_status(code);
  res.set_content(json{{"error", to_string(code)}, {"message", message}}.dump(),
                  "application/json");
}

template <typename F>
void guarded(httplib::Response& res, F&& body) {
  try {
    body();
  } catch (const Error& e) {
    error_reply(res, e.code(), e.what());
  } catch (const std::exception& e) {
    error_reply(res, ErrorCode::StorageFailure, e.what());
  }
}

std::map<std::string, std::string> parse_params(const std::string& text) {
  std::map<std::string, std::string> params;
  if (text.empty()) return params;
  json j;
  try {
    j = json::parse(text);
  } catch (const json::exception&) {
    throw Error(ErrorCode::ValidationError, "params must be a JSON object");
  }
  if (!j.is_object()) throw Error(ErrorCode::ValidationError, "params must be a JSON object");
  for (const auto& [k, v] : j.items()) params[k] = v.is_string() ? v.get<std::string>() : v.dump();
  return params;
}

std::int64_t parse_count(const std::string& field, const std::string& text) {
  try {
    std::size_t used = 0;
    const auto v = std::stoll(text, &used);
    if (used == text.size()) return v;
  } catch (const std::exception&) {
  }
  throw Error(ErrorCode::ValidationError, field + " must be an integer");
}

}  // namespace

bool is_loopback_address(const std::string& addr) {
  return addr == "::1" || addr.rfind("127.", 0) == 0 || addr.rfind("::ffff:127.", 0) == 0;
}

HttpApi::HttpApi(JobManager& jobs, HttpApiOptions options, DebugSources debug)
    : jobs_(jobs), options_(options), debug_(std::move(debug)) {}

HttpApi::~HttpApi() { stop(); }

void HttpApi::install_routes(httplib::Server& server) {
  server.set_payload_max_length(static_cast<std::size_t>(options_.max_upload_bytes) + (1 << 20));

  server.set_pre_routing_handler([this](const httplib::Request& req, httplib::Response& res) {
    if (!options_.lockdown || is_loopback_address(req.remote_addr))
      return httplib::Server::HandlerResponse::Unhandled;
    const bool push_back = req.method == "POST" && req.path.rfind("/jobs/", 0) == 0 &&
                           req.path.size() > 8 &&
                           req.path.compare(req.path.size() - 8, 8, "/results") == 0;
    if (push_back) return httplib::Server::HandlerResponse::Unhandled;
    error_reply(res, ErrorCode::Forbidden, "this endpoint only accepts loopback clients");
    return httplib::Server::HandlerResponse::Handled;
  });

  server.Post("/jobs", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      if (!req.is_multipart_form_data())
        throw Error(ErrorCode::ValidationError, "submission must be multipart/form-data");
      SubmissionEnvelope env;
      for (const auto& [name, part] : req.files) {
        if (!part.filename.empty()) {
          env.files.push_back({name, part.content});
        } else if (name == "type") {
          env.types.push_back(part.content);
        } else if (name == "params") {
          env.params = parse_params(part.content);
        } else if (name == "backend") {
          env.backend = part.content;
        } else if (name == "derive_from") {
          if (!part.content.empty()) env.derive_from = part.content;
        } else if (name == "owner") {
          env.owner = part.content;
        } else if (name == "markers") {
          env.markers = parse_count("markers", part.content);
        } else if (name == "samples") {
          env.samples = parse_count("samples", part.content);
        } else {
          throw Error(ErrorCode::ValidationError, "unexpected field '" + name + "'");
        }
      }
      const JobId id = jobs_.submit(env);
      res.status = 201;
      res.set_content(json{{"id", id}}.dump(), "application/json");
    });
  });

  server.Get("/jobs", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      std::optional<JobState> state;
      std::optional<Backend> backend;
      if (req.has_param("state")) {
        state = parse_job_state(req.get_param_value("state"));
        if (!state) throw Error(ErrorCode::ValidationError, "unknown state filter");
      }
      if (req.has_param("backend")) {
        backend = parse_backend(req.get_param_value("backend"));
        if (!backend) throw Error(ErrorCode::ValidationError, "unknown backend filter");
      }
      res.set_content(jobs_.list_jobs(state, backend).dump(), "application/json");
    });
  });

  server.Get(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] { res.set_content(jobs_.get_status(req.matches[1]).dump(), "application/json"); });
  });

  server.Delete(R"(/jobs/([^/]+))", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      const JobState state = jobs_.cancel(id);
      res.set_content(json{{"id", id}, {"state", to_string(state)}}.dump(), "application/json");
    });
  });

  server.Get(R"(/jobs/([^/]+)/results)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      res.set_content(jobs_.fetch_results(id), "application/x-tar");
      res.set_header("Content-Disposition", "attachment; filename=\"" + id + ".tar\"");
    });
  });

  server.Post(R"(/jobs/([^/]+)/results)", [this](const httplib::Request& req, httplib::Response& res) {
    guarded(res, [&] {
      const std::string id = req.matches[1];
      const std::string auth = req.get_header_value("Authorization");
      const std::string prefix = "Bearer ";
      if (auth.rfind(prefix, 0) != 0) throw Error(ErrorCode::AuthFailure, "bearer token required");
      if (!req.is_multipart_form_data())
        throw Error(ErrorCode::MalformedPayload, "result push must be multipart/form-data");
      ResultBundle bundle;
      bundle.job_id = id;
      std::optional<std::string> exit_status;
      for (const auto& [name, part] : req.files) {
        if (!part.filename.empty()) {
          bundle.outputs[name] = part.content;
        } else if (name == "exit_status") {
          exit_status = part.content;
        } else if (name == "log") {
          bundle.log_text = part.content;
        }
      }
      if (!exit_status || (*exit_status != "ok" && *exit_status != "error"))
        throw Error(ErrorCode::MalformedPayload, "exit_status must be ok or error");
      bundle.ok = *exit_status == "ok";
      const bool fresh = jobs_.receive_results(id, auth.substr(prefix.size()), bundle);
      res.set_content(json{{"acknowledged", true}, {"duplicate", !fresh}}.dump(),
                      "application/json");
    });
  });

  server.Get("/vms", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { res.set_content(jobs_.list_vms().dump(), "application/json"); });
  });

  server.Get("/accounting", [this](const httplib::Request&, httplib::Response& res) {
    guarded(res, [&] { res.set_content(jobs_.accounting().to_json().dump(), "application/json"); });
  });

  server.Get("/healthz", [](const httplib::Request&, httplib::Response& res) {
    res.set_content(R"({"ok":true})", "application/json");
  });

  if (!options_.debug_endpoints) return;
  auto debug_route = [&server](const std::string& path, std::function<json()> source) {
    server.Get(path, [source](const httplib::Request&, httplib::Response& res) {
      guarded(res, [&] {
        if (!source) throw Error(ErrorCode::NotFound, "not available");
        res.set_content(source().dump(), "application/json");
      });
    });
  };
  debug_route("/debug/dispatch-trace", debug_.dispatch_trace);
  debug_route("/debug/recovery", debug_.recovery);
  debug_route("/debug/scaling", debug_.scaling);
}

int HttpApi::start(const std::string& host, int port) {
  stop();
  server_ = std::make_unique<httplib::Server>();
  install_routes(*server_);
  if (port == 0) {
    port_ = server_->bind_to_any_port(host);
  } else {
    port_ = server_->bind_to_port(host, port) ? port : -1;
  }
  if (port_ <= 0)
    throw Error(ErrorCode::Unavailable, "cannot bind " + host + ":" + std::to_string(port));
  thread_ = std::thread([this] { server_->listen_after_bind(); });
  server_->wait_until_ready();
  return port_;
}

void HttpApi::stop() {
  if (server_) server_->stop();
  if (thread_.joinable()) thread_.join();
  server_.reset();
}

PushOutcome DirectResultSink::push(const std::string&, const std::string& token,
                                   const ResultBundle& bundle) {
  try {
    jobs_.receive_results(bundle.job_id, token, bundle);
    return PushOutcome::Acknowledged;
  } catch (const Error& e) {
    switch (e.code()) {
      case ErrorCode::AuthFailure: return PushOutcome::AuthRejected;
      case ErrorCode::ConflictingResults:
      case ErrorCode::NotFound: return PushOutcome::Conflict;
      default: return PushOutcome::Unreachable;
    }
  }
}

}  // namespace burstq
