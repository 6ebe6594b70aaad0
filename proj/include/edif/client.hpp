#pragma once

// Blocking HTTP client for the gateway, used by the CLI and the tests.
// Server error envelopes are rethrown as Error with the server's code.

#include <chrono>
#include <cstdint>
#include <map>
#include <memory>
#include <optional>
#include <string>
#include <vector>

#include "edif/gateway.hpp"
#include "edif/graph.hpp"
#include "edif/result_store.hpp"
#include "edif/wire.hpp"

namespace edif {

class Client {
 public:
  // base_url like "http://127.0.0.1:8080".
  Client(std::string base_url, std::string token);
  ~Client();

  EnqueueResult submit(const InterventionGraph& graph, std::optional<std::string> client_tag = std::nullopt);
  // Sends a pre-encoded body verbatim.
  EnqueueResult submit_raw(const std::string& body);
  JobStatus poll(const std::string& job_id);
  // Polls until terminal; throws kTimeout if `timeout` passes first.
  JobStatus wait(const std::string& job_id, std::chrono::milliseconds poll_interval,
                 std::chrono::milliseconds timeout);
  ResultManifest fetch_manifest(const std::string& job_id);
  std::vector<std::uint8_t> fetch_range(const std::string& hash, std::uint64_t offset, std::uint64_t length);
  // Sequential range fetches; verifies SHA-256 (kHashMismatch).
  std::vector<std::uint8_t> download(const BlobRef& ref, std::uint64_t chunk_bytes = kDefaultChunkBytes);
  std::map<std::string, Tensor> fetch_bundle(const ResultManifest& manifest);
  std::vector<DeploymentSummary> list_models();
  std::string metrics();

  // Submit, wait, download. Throws Error(kFailedJob) carrying the job's
  // failure code in the message when the job fails.
  std::map<std::string, Tensor> run(const InterventionGraph& graph,
                                    std::chrono::milliseconds timeout = std::chrono::minutes(5));

 private:
  struct Impl;
  std::unique_ptr<Impl> impl_;
  std::string token_;
};

}  // namespace edif
