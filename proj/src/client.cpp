#include "edif/client.hpp"

#include <thread>

#include "httplib.h"

namespace edif {

using nlohmann::json;

struct Client::Impl {
  explicit Impl(const std::string& base_url) : http(base_url) {
    http.set_connection_timeout(5);
    http.set_read_timeout(60);
    http.set_write_timeout(60);
  }
  httplib::Client http;
};

namespace {

[[noreturn]] void raise_envelope(const httplib::Result& res, const std::string& what) {
  if (!res) {
    throw Error(ErrorCode::kIo, what + ": " + httplib::to_string(res.error()));
  }
  ErrorCode code = ErrorCode::kIo;
  std::string message = "HTTP " + std::to_string(res->status);
  try {
    const json j = json::parse(res->body);
    code = error_code_from_string(j.at("code").get<std::string>());
    message = j.at("message").get<std::string>();
  } catch (const std::exception&) {
  }
  throw Error(code, message);
}

const httplib::Result& expect(const httplib::Result& res, int status, const std::string& what) {
  if (!res || res->status != status) raise_envelope(res, what);
  return res;
}


}  // namespace

Client::Client(std::string base_url, std::string token)
    : impl_(std::make_unique<Impl>(base_url)), token_(std::move(token)) {}

Client::~Client() = default;

EnqueueResult Client::submit(const InterventionGraph& graph, std::optional<std::string> client_tag) {
  return submit_raw(encode_request(JobRequest{token_, graph.model_id, graph, std::move(client_tag)}));
}

EnqueueResult Client::submit_raw(const std::string& body) {
  auto res = impl_->http.Post("/v1/jobs", body, "application/json");
  expect(res, 202, "submit");
  const json j = json_util::parse(res->body);
  return {j.at("job_id").get<std::string>(), status_from_json(j.at("status"))};
}

JobStatus Client::poll(const std::string& job_id) {
  auto res = impl_->http.Get("/v1/jobs/" + job_id, {{"Authorization", "Bearer " + token_}});
  expect(res, 200, "poll");
  return decode_status(res->body);
}

JobStatus Client::wait(const std::string& job_id, std::chrono::milliseconds poll_interval,
                       std::chrono::milliseconds timeout) {
  const auto deadline = std::chrono::steady_clock::now() + timeout;
  for (;;) {
    JobStatus s = poll(job_id);
    if (is_terminal(s.state)) return s;
    if (std::chrono::steady_clock::now() >= deadline) {
      throw Error(ErrorCode::kTimeout, "job " + job_id + " still " + std::string(to_string(s.state)));
    }
    std::this_thread::sleep_for(poll_interval);
  }
}

ResultManifest Client::fetch_manifest(const std::string& job_id) {
  auto res = impl_->http.Get("/v1/jobs/" + job_id + "/results", {{"Authorization", "Bearer " + token_}});
  expect(res, 200, "fetch results");
  return manifest_from_json(json_util::parse(res->body));
}

std::vector<std::uint8_t> Client::fetch_range(const std::string& hash, std::uint64_t offset, std::uint64_t length) {
  const std::string path =
      "/v1/blobs/" + hash + "?offset=" + std::to_string(offset) + "&length=" + std::to_string(length);
  auto res = impl_->http.Get(path, {{"Authorization", "Bearer " + token_}});
  expect(res, 200, "fetch blob");
  return {res->body.begin(), res->body.end()};
}

std::vector<std::uint8_t> Client::download(const BlobRef& ref, std::uint64_t chunk_bytes) {
  std::vector<std::uint8_t> out;
  out.reserve(ref.size);
  Sha256 hash;
  while (out.size() < ref.size) {
    auto chunk = fetch_range(ref.hash, out.size(), chunk_bytes);
    if (chunk.empty()) throw Error(ErrorCode::kIo, "empty chunk at offset " + std::to_string(out.size()));
    hash.update(chunk);
    out.insert(out.end(), chunk.begin(), chunk.end());
  }
  const std::string actual = hash.hex_digest();
  if (actual != ref.hash) throw Error(ErrorCode::kHashMismatch, "downloaded bytes hash to " + actual);
  return out;
}

std::map<std::string, Tensor> Client::fetch_bundle(const ResultManifest& manifest) {
  std::map<std::string, Tensor> out;
  for (const auto& e : manifest.entries) {
    out.emplace(e.save_name, tensor_from_blob(download(e.blob), e.blob.encoding));
  }
  return out;
}

std::vector<DeploymentSummary> Client::list_models() {
  auto res = impl_->http.Get("/v1/models");
  expect(res, 200, "list models");
  std::vector<DeploymentSummary> out;
  const json body = json_util::parse(res->body);
  for (const auto& m : body.at("models")) {
    DeploymentSummary d;
    d.model_id = m.at("model_id").get<std::string>();
    d.required_slots = m.at("required_slots").get<int>();
    d.slot_ids = m.at("slot_ids").get<std::vector<int>>();
    d.queue_depth = m.at("queue_depth").get<std::size_t>();
    d.running = m.at("running").get<int>();
    d.max_concurrent_jobs = m.at("max_concurrent_jobs").get<int>();
    d.state = m.at("state").get<std::string>();
    out.push_back(std::move(d));
  }
  return out;
}

std::string Client::metrics() {
  auto res = impl_->http.Get("/metrics");
  expect(res, 200, "metrics");
  return res->body;
}

std::map<std::string, Tensor> Client::run(const InterventionGraph& graph, std::chrono::milliseconds timeout) {
  const EnqueueResult r = submit(graph);
  const JobStatus s = wait(r.job_id, std::chrono::milliseconds(20), timeout);
  if (s.state == JobState::kFailed) {
    throw Error(ErrorCode::kFailedJob, std::string(to_string(s.failure->code)) + ": " + s.failure->message);
  }
  return fetch_bundle(fetch_manifest(r.job_id));
}

}  // namespace edif
