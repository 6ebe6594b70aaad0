#pragma once

// Authenticated request handling for the fabric's HTTP surface.
//
// Gateway holds the transport-independent logic (auth, quotas, ownership,
// error envelopes) and maps requests onto the scheduler and result store.
// HttpServer binds it to cpp-httplib:
//
//   POST /v1/jobs                      submit (api_token in the body)
//   GET  /v1/jobs/{id}                 poll
//   GET  /v1/jobs/{id}/results         result manifest
//   GET  /v1/blobs/{hash}?offset&length  raw stored bytes
//   GET  /v1/models                    deployments (no auth)
//   GET  /metrics                      telemetry export (no auth)
//
// GET endpoints other than models/metrics take "Authorization: Bearer <token>".

#include <atomic>
#include <cstdint>
#include <map>
#include <memory>
#include <mutex>
#include <optional>
#include <string>
#include <string_view>
#include <thread>
#include <vector>

#include "edif/clock.hpp"
#include "edif/result_store.hpp"
#include "edif/scheduler.hpp"
#include "edif/telemetry.hpp"

namespace edif {

struct ApiToken {
  std::string token;
  std::string owner;
  std::int64_t daily_job_quota = 1;
  bool revoked = false;
};

// tokens.json: [{"owner": ..., "token": ..., "quota": n, "revoked": bool?}]
std::vector<ApiToken> parse_tokens(std::string_view json_text, std::string_view source);

inline constexpr std::uint64_t kDefaultChunkBytes = 1u << 20;
inline constexpr std::uint64_t kMaxChunkBytes = 16u << 20;

// An Error whose envelope carries a structured `detail` object.
class DetailedError : public Error {
 public:
  DetailedError(ErrorCode code, std::string message, nlohmann::json detail)
      : Error(code, std::move(message)), detail_(std::move(detail)) {}
  const nlohmann::json& detail() const { return detail_; }

 private:
  nlohmann::json detail_;
};

// HTTP status for an error code.
int http_status(ErrorCode code);

struct HttpRequest {
  std::string method;
  std::string path;
  std::map<std::string, std::string> query;
  std::string authorization;  // raw header value
  std::string body;
};

struct HttpResponse {
  int status = 200;
  std::string content_type = "application/json";
  std::string body;
  std::map<std::string, std::string> headers;
};

class Gateway {
 public:
  Gateway(Scheduler& scheduler, ResultStore& store, Telemetry& telemetry, const Clock& clock,
          std::vector<ApiToken> tokens);

  // Each of these throws Error with the code the client sees.
  EnqueueResult submit(std::string_view request_body);
  JobStatus poll(std::string_view token, std::string_view job_id) const;
  ResultManifest fetch_manifest(std::string_view token, std::string_view job_id) const;
  std::vector<std::uint8_t> fetch_range(std::string_view token, std::string_view hash, std::uint64_t offset,
                                        std::uint64_t length) const;
  std::vector<DeploymentSummary> list_models() const;
  std::string metrics() const;

  void revoke(std::string_view token);
  // Jobs accepted for `token` on the current simulated day.
  std::int64_t accepted_today(std::string_view token) const;

  // Routes one request; never throws.
  HttpResponse handle(const HttpRequest& request);

 private:
  ApiToken authenticate(std::string_view token) const;
  static std::string bearer(std::string_view header);

  Scheduler& scheduler_;
  ResultStore& store_;
  Telemetry& telemetry_;
  const Clock& clock_;

  mutable std::mutex mutex_;
  std::map<std::string, ApiToken, std::less<>> tokens_;
  std::map<std::pair<std::string, std::int64_t>, std::int64_t> usage_;  // (token, day) -> accepted
};

class HttpServer {
 public:
  explicit HttpServer(Gateway& gateway);
  ~HttpServer();
  HttpServer(const HttpServer&) = delete;
  HttpServer& operator=(const HttpServer&) = delete;

  // "host:port"; port 0 picks a free port. Throws kBindFailed.
  int bind(const std::string& address);
  // Serves on a background thread until stop().
  void start();
  // Serves on the calling thread until stop() is called elsewhere.
  void run();
  void stop();
  int port() const { return port_; }

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  int port_ = 0;
  std::thread thread_;
};

// Splits "host:port"; a bare port binds 127.0.0.1.
std::pair<std::string, int> split_address(std::string_view address);

}  // namespace edif
