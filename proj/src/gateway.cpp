#include "edif/gateway.hpp"

#include <charconv>

#include "edif/error.hpp"
#include "edif/wire.hpp"
#include "httplib.h"

namespace edif {

using nlohmann::json;

std::vector<ApiToken> parse_tokens(std::string_view json_text, std::string_view source) {
  json j;
  try {
    j = json_util::parse(json_text);
  } catch (const Error& e) {
    throw Error(ErrorCode::kBadConfig, std::string(source) + ": " + e.message());
  }
  if (!j.is_array()) throw Error(ErrorCode::kBadConfig, std::string(source) + ": expected an array of tokens");
  std::vector<ApiToken> out;
  for (std::size_t i = 0; i < j.size(); ++i) {
    const std::string where = std::string(source) + ": token " + std::to_string(i);
    try {
      json_util::require_keys(j[i], {"owner", "token", "quota"}, {"revoked"}, where);
      ApiToken t;
      t.owner = json_util::get_string(j[i], "owner");
      t.token = json_util::get_string(j[i], "token");
      t.daily_job_quota = json_util::get_int(j[i], "quota");
      if (j[i].contains("revoked")) {
        if (!j[i].at("revoked").is_boolean()) throw Error(ErrorCode::kBadConfig, "revoked must be a boolean");
        t.revoked = j[i].at("revoked").get<bool>();
      }
      if (t.token.empty() || t.owner.empty() || t.daily_job_quota < 1) {
        throw Error(ErrorCode::kBadConfig, "token and owner must be non-empty and quota positive");
      }
      out.push_back(std::move(t));
    } catch (const Error& e) {
      throw Error(ErrorCode::kBadConfig, where + ": " + e.message());
    }
  }
  return out;
}

int http_status(ErrorCode code) {
  switch (code) {
    case ErrorCode::kAuth: return 401;
    case ErrorCode::kForbidden: return 403;
    case ErrorCode::kQuota:
    case ErrorCode::kQueueFull: return 429;
    case ErrorCode::kValidation: return 422;
    case ErrorCode::kUnknownJob:
    case ErrorCode::kUnknownBlob:
    case ErrorCode::kUnknownModel: return 404;
    case ErrorCode::kNotReady:
    case ErrorCode::kFailedJob: return 409;
    case ErrorCode::kBadRange: return 416;
    case ErrorCode::kOversize: return 413;
    case ErrorCode::kStoreFull:
    case ErrorCode::kIo:
    case ErrorCode::kWorkerFault:
    case ErrorCode::kEngineFault: return 500;
    default: return 400;
  }
}

Gateway::Gateway(Scheduler& scheduler, ResultStore& store, Telemetry& telemetry, const Clock& clock,
                 std::vector<ApiToken> tokens)
    : scheduler_(scheduler), store_(store), telemetry_(telemetry), clock_(clock) {
  for (auto& t : tokens) {
    const std::string key = t.token;
    if (!tokens_.emplace(key, std::move(t)).second) {
      throw Error(ErrorCode::kBadConfig, "duplicate api token for owner " + tokens_.at(key).owner);
    }
  }
}

ApiToken Gateway::authenticate(std::string_view token) const {
  std::lock_guard lock(mutex_);
  auto it = tokens_.find(token);
  if (token.empty() || it == tokens_.end()) throw Error(ErrorCode::kAuth, "unknown api token");
  if (it->second.revoked) throw Error(ErrorCode::kAuth, "api token is revoked");
  return it->second;
}

void Gateway::revoke(std::string_view token) {
  std::lock_guard lock(mutex_);
  auto it = tokens_.find(token);
  if (it == tokens_.end()) throw Error(ErrorCode::kAuth, "unknown api token");
  it->second.revoked = true;
}

std::int64_t Gateway::accepted_today(std::string_view token) const {
  std::lock_guard lock(mutex_);
  auto it = usage_.find({std::string(token), day_index(clock_.now_ms())});
  return it == usage_.end() ? 0 : it->second;
}

EnqueueResult Gateway::submit(std::string_view request_body) {
  JobRequest request = decode_request(request_body);
  const ApiToken token = authenticate(request.api_token);

  const ModelCatalog catalog = scheduler_.catalog();
  if (catalog.contains(request.model_id)) {
    const auto violations = validate(request.graph, catalog);
    if (!violations.empty()) {
      json detail = json::array();
      for (const auto& v : violations) {
        detail.push_back({{"kind", to_string(v.kind)}, {"node_id", v.node_id}, {"message", v.message}});
      }
      throw DetailedError(ErrorCode::kValidation, violations.front().message, json{{"violations", detail}});
    }
  }

  const std::pair<std::string, std::int64_t> key{token.token, day_index(clock_.now_ms())};
  {
    std::lock_guard lock(mutex_);
    std::int64_t& used = usage_[key];
    if (used >= token.daily_job_quota) {
      throw Error(ErrorCode::kQuota, "daily quota of " + std::to_string(token.daily_job_quota) +
                                         " jobs reached for " + token.owner);
    }
    ++used;
  }
  EnqueueResult result;
  try {
    result = scheduler_.enqueue(std::move(request), token.owner);
  } catch (...) {
    std::lock_guard lock(mutex_);
    --usage_[key];
    throw;
  }
  if (result.status.state == JobState::kFailed) {
    // Rejected at enqueue (unknown model, full queue): not an accepted job.
    std::lock_guard lock(mutex_);
    --usage_[key];
  }
  return result;
}

JobStatus Gateway::poll(std::string_view token, std::string_view job_id) const {
  const ApiToken t = authenticate(token);
  if (scheduler_.job_owner(job_id) != t.owner) throw Error(ErrorCode::kForbidden, "job belongs to another owner");
  return scheduler_.job_status(job_id);
}

ResultManifest Gateway::fetch_manifest(std::string_view token, std::string_view job_id) const {
  const JobStatus status = poll(token, job_id);
  if (!is_terminal(status.state)) {
    throw Error(ErrorCode::kNotReady, "job " + std::string(job_id) + " is " + std::string(to_string(status.state)));
  }
  if (status.state == JobState::kFailed) {
    const std::string code(to_string(status.failure->code));
    throw DetailedError(ErrorCode::kFailedJob, code + ": " + status.failure->message,
                        json{{"code", code}, {"message", status.failure->message}});
  }
  auto manifest = scheduler_.job_result(job_id);
  if (!manifest) throw Error(ErrorCode::kIo, "completed job has no result manifest");
  return *manifest;
}

std::vector<std::uint8_t> Gateway::fetch_range(std::string_view token, std::string_view hash, std::uint64_t offset,
                                               std::uint64_t length) const {
  authenticate(token);
  return store_.get_chunk(hash, offset, std::min(length, kMaxChunkBytes));
}

std::vector<DeploymentSummary> Gateway::list_models() const { return scheduler_.deployments(); }

std::string Gateway::metrics() const { return telemetry_.export_text(); }

std::string Gateway::bearer(std::string_view header) {
  constexpr std::string_view kPrefix = "Bearer ";
  if (header.substr(0, kPrefix.size()) != kPrefix) return {};
  return std::string(header.substr(kPrefix.size()));
}

namespace {

HttpResponse json_response(int status, std::string body) {
  HttpResponse r;
  r.status = status;
  r.body = std::move(body);
  return r;
}

HttpResponse error_response(ErrorCode code, std::string_view message, const json& detail = json::object()) {
  return json_response(http_status(code), encode_error(code, message, detail));
}

std::uint64_t query_u64(const std::map<std::string, std::string>& query, const std::string& key,
                        std::uint64_t fallback) {
  auto it = query.find(key);
  if (it == query.end()) return fallback;
  std::uint64_t value = 0;
  const auto* first = it->second.data();
  const auto* last = first + it->second.size();
  auto [ptr, ec] = std::from_chars(first, last, value);
  if (ec != std::errc() || ptr != last) {
    throw Error(ErrorCode::kMalformed, "query parameter " + key + " must be a non-negative integer");
  }
  return value;
}

json summary_to_json(const DeploymentSummary& d) {
  return json{{"model_id", d.model_id},          {"required_slots", d.required_slots},
              {"slot_ids", d.slot_ids},          {"queue_depth", d.queue_depth},
              {"running", d.running},            {"max_concurrent_jobs", d.max_concurrent_jobs},
              {"state", d.state}};
}

}  // namespace

HttpResponse Gateway::handle(const HttpRequest& req) {
  try {
    const std::string& path = req.path;
    if (req.method == "POST" && path == "/v1/jobs") {
      if (req.body.size() > kMaxRequestBytes) {
        throw Error(ErrorCode::kOversize, "request of " + std::to_string(req.body.size()) + " bytes exceeds limit");
      }
      const EnqueueResult r = submit(req.body);
      return json_response(
          202, canonical_dump(json{{"version", kProtocolVersion}, {"job_id", r.job_id}, {"status", status_to_json(r.status)}}));
    }
    if (req.method != "GET") return error_response(ErrorCode::kMalformed, "unsupported method " + req.method);
    if (path == "/v1/models") {
      json models = json::array();
      for (const auto& d : list_models()) models.push_back(summary_to_json(d));
      return json_response(200, canonical_dump(json{{"version", kProtocolVersion}, {"models", models}}));
    }
    if (path == "/metrics") {
      HttpResponse r = json_response(200, metrics());
      r.content_type = "text/plain; version=0.0.4";
      return r;
    }
    constexpr std::string_view kJobs = "/v1/jobs/";
    constexpr std::string_view kBlobs = "/v1/blobs/";
    constexpr std::string_view kResults = "/results";
    const std::string token = bearer(req.authorization);
    if (path.starts_with(kJobs)) {
      std::string_view rest = std::string_view(path).substr(kJobs.size());
      if (rest.ends_with(kResults)) {
        rest.remove_suffix(kResults.size());
        return json_response(200, canonical_dump(manifest_to_json(fetch_manifest(token, rest))));
      }
      if (rest.empty() || rest.find('/') != std::string_view::npos) {
        return error_response(ErrorCode::kMalformed, "no route for " + path);
      }
      return json_response(200, encode_status(poll(token, rest)));
    }
    if (path.starts_with(kBlobs)) {
      const std::string hash = path.substr(kBlobs.size());
      const std::uint64_t offset = query_u64(req.query, "offset", 0);
      const std::uint64_t length = query_u64(req.query, "length", kDefaultChunkBytes);
      auto bytes = fetch_range(token, hash, offset, length);
      const BlobMeta meta = store_.blob_meta(hash);
      HttpResponse r;
      r.content_type = "application/octet-stream";
      r.body.assign(bytes.begin(), bytes.end());
      r.headers["X-Blob-Size"] = std::to_string(meta.size);
      r.headers["X-Blob-Encoding"] = std::string(to_string(meta.encoding));
      r.headers["X-Chunk-Offset"] = std::to_string(offset);
      return r;
    }
    return error_response(ErrorCode::kMalformed, "no route for " + path);
  } catch (const DetailedError& e) {
    return error_response(e.code(), e.message(), e.detail());
  } catch (const Error& e) {
    return error_response(e.code(), e.message());
  } catch (const std::exception& e) {
    return error_response(ErrorCode::kIo, e.what());
  }
}

std::pair<std::string, int> split_address(std::string_view address) {
  const auto colon = address.rfind(':');
  const std::string host = colon == std::string_view::npos ? "127.0.0.1" : std::string(address.substr(0, colon));
  const std::string_view port_text = colon == std::string_view::npos ? address : address.substr(colon + 1);
  int port = -1;
  auto [ptr, ec] = std::from_chars(port_text.data(), port_text.data() + port_text.size(), port);
  if (ec != std::errc() || ptr != port_text.data() + port_text.size() || port < 0 || port > 65535) {
    throw Error(ErrorCode::kBadConfig, "bad bind address '" + std::string(address) + "'");
  }
  return {host.empty() ? "0.0.0.0" : host, port};
}

struct HttpServer::Impl {
  httplib::Server server;
};

HttpServer::HttpServer(Gateway& gateway) : impl_(std::make_unique<Impl>()) {
  auto adapt = [&gateway](const httplib::Request& in, httplib::Response& out) {
    HttpRequest req;
    req.method = in.method;
    req.path = in.path;
    for (const auto& [k, v] : in.params) req.query.emplace(k, v);
    req.authorization = in.get_header_value("Authorization");
    req.body = in.body;
    HttpResponse res = gateway.handle(req);
    out.status = res.status;
    for (const auto& [k, v] : res.headers) out.set_header(k, v);
    out.set_content(std::move(res.body), res.content_type);
  };
  impl_->server.set_payload_max_length(kMaxRequestBytes + 1);
  impl_->server.Post(R"(/v1/jobs)", adapt);
  impl_->server.Get(R"(/.*)", adapt);
  impl_->server.set_error_handler([](const httplib::Request&, httplib::Response& res) {
    if (res.status == 413) {
      res.set_content(encode_error(ErrorCode::kOversize, "request body exceeds 8 MiB"), "application/json");
    } else if (res.body.empty()) {
      res.set_content(encode_error(ErrorCode::kMalformed, "no route"), "application/json");
    }
  });
}

HttpServer::~HttpServer() { stop(); }

int HttpServer::bind(const std::string& address) {
  auto [host, port] = split_address(address);
  if (port == 0) {
    port_ = impl_->server.bind_to_any_port(host);
  } else {
    port_ = impl_->server.bind_to_port(host, port) ? port : -1;
  }
  if (port_ <= 0) throw Error(ErrorCode::kBindFailed, "cannot bind " + address);
  return port_;
}

void HttpServer::start() {
  thread_ = std::thread([this] { impl_->server.listen_after_bind(); });
  impl_->server.wait_until_ready();
}

void HttpServer::run() { impl_->server.listen_after_bind(); }

void HttpServer::stop() {
  impl_->server.stop();
  if (thread_.joinable()) thread_.join();
}

}  // namespace edif
